//! Runs one configured scenario end to end: validate, integrate, verify.

use serde::Serialize;

use crate::analysis::{
    self, check_h2_uniqueness, check_monotone, classify_terminal, estimate_limits,
    predict_omega_limit, sandwich_check, AnalysisError, Bucket, LimitEstimate, LyapunovSpec,
    OmegaKind, OmegaPrediction,
};
use crate::config::{CheckFlags, ScenarioConfig};
use crate::integrator::{
    evolve_exploratory, solve_characteristic, IntegratorError, StepControl, Termination,
    TrajectoryRecord,
};
use crate::measure::{build_ensemble, validate_hypothesis, Ensemble, Hypothesis, HypothesisClass};

/// `|mass(t) − mass(0)| ≤ MASS_TOL · (1 + |mass(0)|)`.
pub const MASS_TOL: f64 = 1e-8;
/// Inflation of `I_i` for value and λ containment.
pub const INTERVAL_SLACK: f64 = 1e-9;
/// Atoms above 1 (below 0) must stay above `1 − SIGN_SLACK` (below `SIGN_SLACK`).
pub const SIGN_SLACK: f64 = 1e-12;
/// Monotonicity slack is `LYAPUNOV_SLACK · (1 + |E(0)|)`.
pub const LYAPUNOV_SLACK: f64 = 1e-7;
/// `max |y(end) − predicted level|`.
pub const OMEGA_TOL: f64 = 1e-5;
/// `|λ(end) − λ∞|`, and the margin in the sign facts `λ∞ > 1`, `λ∞ < 0`.
pub const LAMBDA_TOL: f64 = 1e-6;
/// `|l_f / l_g − λ(end)|` when `|l_g|` exceeds [`RATIO_FLOOR`].
pub const RATIO_TOL: f64 = 1e-8;
pub const RATIO_FLOOR: f64 = 1e-6;
/// Bound on `min_t |∫g(u)|` and `min_t |∫f(u)|` in the no-atom H2 regime.
pub const H2_VANISHING_TOL: f64 = 1e-4;
/// Sup-norm gap between coupled atoms and re-solved characteristics.
pub const CHARACTERISTIC_TOL: f64 = 1e-5;
/// Characteristics are compared up to `min(t_end, CHARACTERISTIC_HORIZON)`.
pub const CHARACTERISTIC_HORIZON: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    /// The statement being tested.
    pub claim: &'static str,
    pub status: Status,
    pub detail: String,
    /// Measured quantity compared against `tolerance`, when there is one.
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
}

impl CheckResult {
    fn new(check: impl Into<String>, claim: &'static str, ok: bool, detail: String) -> Self {
        Self {
            check: check.into(),
            claim,
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
            measured: None,
            tolerance: None,
        }
    }

    fn measured(
        check: impl Into<String>,
        claim: &'static str,
        measured: f64,
        tolerance: f64,
        detail: String,
    ) -> Self {
        Self {
            measured: Some(measured),
            tolerance: Some(tolerance),
            ..Self::new(check, claim, measured <= tolerance, detail)
        }
    }

    fn skipped(check: impl Into<String>, claim: &'static str, detail: String) -> Self {
        Self {
            status: Status::Skipped,
            ..Self::new(check, claim, true, detail)
        }
    }

    pub fn ok(&self) -> bool {
        self.status != Status::Fail
    }
}

mod claims {
    pub const HYPOTHESIS: &str = "u0 satisfies one of H1 (u0 >= 1, u0 != 1), H2 (0 <= u0 <= 1, u0(1-u0) != 0), H3 (u0 <= 0, u0 != 0)";
    pub const INTEGRATION: &str = "the solution exists on the simulated time interval";
    pub const MASS: &str = "mass conservation: int u(t) = int u0";
    pub const INTERVAL: &str = "invariant interval: u(x,t) stays in I_i";
    pub const LAMBDA: &str = "lambda(t) stays in I_i";
    pub const SIGN: &str = "level sets {u0 > 1} (H1) and {u0 < 0} (H3) are invariant";
    pub const EQUILIBRIA: &str = "level sets {u0 = 0} and {u0 = 1} are invariant";
    pub const LYAPUNOV: &str = "E_i(u) = (-1)^(i+1) int Phi(u) is non-increasing when Phi' is non-decreasing on I_i";
    pub const OMEGA_H1: &str = "H1: u -> 1 on {u0 = 1} and -> lambda_inf on {u0 > 1}, with |{u0=1}| + lambda_inf |{u0>1}| = int u0 and lambda_inf > 1";
    pub const OMEGA_H3: &str = "H3: u -> lambda_inf on {u0 < 0} and stays 0 elsewhere, with lambda_inf |{u0<0}| = int u0 and lambda_inf < 0";
    pub const OMEGA_H2: &str = "H2 without atoms in (0,1): int g(u) -> 0 and int f(u) -> 0, so u -> {0, 1}";
    pub const OMEGA_H2_ATOMIC: &str = "H2 with atoms in (0,1): each characteristic tends to 0, 1 or lambda_inf (reported, not predicted)";
    pub const LIMITS: &str = "l_g = lim int g(u), l_f = lim int f(u) exist and l_f / l_g = lambda_inf";
    pub const CHARACTERISTIC: &str = "u(x,t) = Y(t; u0(x)) where Y solves the characteristic ODE with the same lambda";
    pub const SANDWICH: &str = "comparison principle: alpha <= Y <= beta after lambda settles within eps";
    pub const H2_UNIQUENESS: &str = "H2: at most one initial value is attracted to an interior lambda_inf";
}

/// Everything `run_scenario` produces apart from the trajectory itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub hypothesis: Option<HypothesisClass>,
    pub error: Option<String>,
    pub termination: Option<Termination>,
    pub end_time: Option<f64>,
    pub accepted_steps: Option<usize>,
    pub atoms: usize,
    pub mass_initial: Option<f64>,
    pub prediction: Option<OmegaPrediction>,
    pub lambda_final: Option<f64>,
    /// How `lambda_final` should be read.
    pub lambda_final_label: Option<&'static str>,
    pub limits: Option<LimitEstimate>,
    pub buckets: Option<Vec<Bucket>>,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ScenarioReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.ok())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub record: Option<TrajectoryRecord>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed
    }
}

fn empty_report(cfg: &ScenarioConfig) -> ScenarioReport {
    ScenarioReport {
        name: cfg.name.clone(),
        hypothesis: None,
        error: None,
        termination: None,
        end_time: None,
        accepted_steps: None,
        atoms: 0,
        mass_initial: None,
        prediction: None,
        lambda_final: None,
        lambda_final_label: None,
        limits: None,
        buckets: None,
        checks: Vec::new(),
        passed: false,
    }
}

/// Prediction only: build the ensemble, classify it and evaluate the
/// closed-form limit.
pub fn predict_scenario(cfg: &ScenarioConfig) -> ScenarioReport {
    let mut report = empty_report(cfg);
    let e0 = match build_ensemble(&cfg.datum_spec()) {
        Ok(e) => e,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    report.atoms = e0.len();
    report.mass_initial = Some(crate::measure::mass(&e0));
    match validate_hypothesis(&e0) {
        Ok(hyp) => {
            report.hypothesis = Some(hyp);
            match predict_omega_limit(&e0, &hyp) {
                Ok(p) => report.prediction = Some(p),
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report.passed = report.error.is_none();
    report
}

/// Runs validation, integration and every enabled check.
pub fn run_scenario(cfg: &ScenarioConfig) -> ScenarioOutcome {
    run_scenario_with(cfg, cfg.checks)
}

pub fn run_scenario_with(cfg: &ScenarioConfig, flags: CheckFlags) -> ScenarioOutcome {
    let mut report = empty_report(cfg);
    let e0 = match build_ensemble(&cfg.datum_spec()) {
        Ok(e) => e,
        Err(e) => {
            report.error = Some(e.to_string());
            report
                .checks
                .push(CheckResult::new("initial_datum", claims::HYPOTHESIS, false, e.to_string()));
            return ScenarioOutcome {
                report,
                record: None,
            };
        }
    };
    report.atoms = e0.len();
    report.mass_initial = Some(crate::measure::mass(&e0));

    let hyp = match validate_hypothesis(&e0) {
        Ok(h) => {
            report.checks.push(CheckResult::new(
                "hypothesis",
                claims::HYPOTHESIS,
                true,
                format!("{} with I = [{}, {}]", h.tag, h.interval_lo, h.interval_hi),
            ));
            Some(h)
        }
        Err(e) if cfg.exploratory => {
            report.checks.push(CheckResult::skipped(
                "hypothesis",
                claims::HYPOTHESIS,
                format!("exploratory run: {e}"),
            ));
            None
        }
        Err(e) => {
            report.error = Some(e.to_string());
            report
                .checks
                .push(CheckResult::new("hypothesis", claims::HYPOTHESIS, false, e.to_string()));
            return ScenarioOutcome {
                report,
                record: None,
            };
        }
    };
    report.hypothesis = hyp;

    let specs: Vec<LyapunovSpec> = match hyp {
        Some(h) => cfg
            .lyapunov
            .iter()
            .map(|&c| LyapunovSpec::from_catalog(c, h.tag))
            .collect(),
        None => Vec::new(),
    };

    let record = match evolve_exploratory(&e0, &cfg.control, &specs) {
        Ok(r) => r,
        Err(e) => {
            report.error = Some(e.to_string());
            report
                .checks
                .push(CheckResult::new("integration", claims::INTEGRATION, false, e.to_string()));
            return ScenarioOutcome {
                report,
                record: None,
            };
        }
    };
    report.termination = Some(record.termination);
    report.end_time = Some(record.end_time());
    report.accepted_steps = Some(record.extrema.accepted_steps);
    report.lambda_final = Some(record.final_lambda());
    report.limits = Some(estimate_limits(&record));

    let ctx = Context {
        cfg,
        e0: &e0,
        hyp,
        specs: &specs,
        record: &record,
    };
    if flags.mass {
        report.checks.push(ctx.mass_check());
    }
    if flags.interval {
        report.checks.extend(ctx.interval_checks());
    }
    if flags.lyapunov {
        report.checks.extend(ctx.lyapunov_checks());
    }
    if flags.omega_limit || flags.h2_uniqueness {
        let omega = ctx.omega(flags);
        report.prediction = omega.prediction;
        report.lambda_final_label = omega.label;
        report.buckets = omega.buckets;
        report.checks.extend(omega.checks);
    }
    if flags.characteristic {
        report.checks.push(ctx.characteristic_check());
    }
    if flags.sandwich {
        report.checks.extend(ctx.sandwich_checks());
    }

    report.passed = report.error.is_none() && report.checks.iter().all(CheckResult::ok);
    ScenarioOutcome {
        report,
        record: Some(record),
    }
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    e0: &'a Ensemble,
    hyp: Option<HypothesisClass>,
    specs: &'a [LyapunovSpec],
    record: &'a TrajectoryRecord,
}

struct OmegaOutput {
    prediction: Option<OmegaPrediction>,
    label: Option<&'static str>,
    buckets: Option<Vec<Bucket>>,
    checks: Vec<CheckResult>,
}

fn fmt_g(x: f64) -> String {
    format!("{x:.3e}")
}

impl Context<'_> {
    fn mass_check(&self) -> CheckResult {
        let m0 = self.record.mass_series[0];
        let drift = self
            .record
            .mass_series
            .iter()
            .map(|m| (m - m0).abs())
            .fold(0.0, f64::max);
        let tol = MASS_TOL * (1.0 + m0.abs());
        CheckResult::measured(
            "mass",
            claims::MASS,
            drift,
            tol,
            format!("mass(0) = {m0}, max drift {}", fmt_g(drift)),
        )
    }

    fn interval_checks(&self) -> Vec<CheckResult> {
        let mut out = Vec::new();
        let x = &self.record.extrema;
        match self.hyp {
            Some(h) => {
                let excess = (h.interval_lo - x.value_min).max(x.value_max - h.interval_hi).max(0.0);
                out.push(CheckResult::measured(
                    "interval",
                    claims::INTERVAL,
                    excess,
                    INTERVAL_SLACK,
                    format!(
                        "values in [{}, {}] over {} accepted steps, I = [{}, {}]",
                        x.value_min, x.value_max, x.accepted_steps, h.interval_lo, h.interval_hi
                    ),
                ));
                let lam_excess = (h.interval_lo - x.lambda_min)
                    .max(x.lambda_max - h.interval_hi)
                    .max(0.0);
                out.push(CheckResult::measured(
                    "lambda_containment",
                    claims::LAMBDA,
                    lam_excess,
                    INTERVAL_SLACK,
                    format!("lambda in [{}, {}]", x.lambda_min, x.lambda_max),
                ));
                out.push(self.sign_check(h.tag));
            }
            None => {
                out.push(CheckResult::skipped(
                    "interval",
                    claims::INTERVAL,
                    "no hypothesis class".into(),
                ));
            }
        }
        out.push(self.equilibrium_check());
        out
    }

    fn sign_check(&self, tag: Hypothesis) -> CheckResult {
        let (select, bound): (fn(f64) -> bool, f64) = match tag {
            Hypothesis::H1 => (|s| s > 1.0, 1.0 - SIGN_SLACK),
            Hypothesis::H3 => (|s| s < 0.0, SIGN_SLACK),
            Hypothesis::H2 => {
                return CheckResult::skipped(
                    "sign_preservation",
                    claims::SIGN,
                    "applies to H1 and H3".into(),
                )
            }
        };
        let idx: Vec<usize> = (0..self.e0.len())
            .filter(|&i| select(self.e0.atoms()[i].value()))
            .collect();
        let mut worst: f64 = 0.0;
        for s in &self.record.snapshots {
            for &i in &idx {
                let v = s.atoms()[i].value();
                let crossing = match tag {
                    Hypothesis::H1 => bound - v,
                    _ => v - bound,
                };
                worst = worst.max(crossing);
            }
        }
        let ok = worst <= 0.0;
        CheckResult::new(
            "sign_preservation",
            claims::SIGN,
            ok,
            if ok {
                format!("{} atoms stay strictly on their side", idx.len())
            } else {
                format!("an atom crossed the bound by {}", fmt_g(worst))
            },
        )
    }

    fn equilibrium_check(&self) -> CheckResult {
        let idx: Vec<usize> = (0..self.e0.len())
            .filter(|&i| matches!(self.e0.atoms()[i].value(), v if v == 0.0 || v == 1.0))
            .collect();
        if idx.is_empty() {
            return CheckResult::skipped(
                "equilibrium_atoms",
                claims::EQUILIBRIA,
                "no atom starts at 0 or 1".into(),
            );
        }
        let moved = self.record.snapshots.iter().any(|s| {
            idx.iter()
                .any(|&i| s.atoms()[i].value().to_bits() != self.e0.atoms()[i].value().to_bits())
        });
        CheckResult::new(
            "equilibrium_atoms",
            claims::EQUILIBRIA,
            !moved,
            format!(
                "{} atoms at 0 or 1 {} bit-identical at all {} recorded times",
                idx.len(),
                if moved { "are not" } else { "are" },
                self.record.len()
            ),
        )
    }

    fn lyapunov_checks(&self) -> Vec<CheckResult> {
        let Some(h) = self.hyp else {
            return vec![CheckResult::skipped(
                "lyapunov",
                claims::LYAPUNOV,
                "no hypothesis class".into(),
            )];
        };
        self.specs
            .iter()
            .map(|spec| {
                let name = format!("lyapunov:{}", spec.name());
                if let Err(e) = spec.validate_on(&h) {
                    return CheckResult::skipped(name, claims::LYAPUNOV, e.to_string());
                }
                let series = self
                    .record
                    .lyapunov(spec.name())
                    .expect("series recorded for every spec");
                let slack = LYAPUNOV_SLACK * (1.0 + series[0].abs());
                let rep = check_monotone(&self.record.times, series, slack);
                let worst = rep.worst_violation.max(0.0);
                let mut c = CheckResult::measured(
                    name,
                    claims::LYAPUNOV,
                    worst,
                    slack,
                    format!(
                        "sign {:+}, E(0) = {}, E(end) = {}, largest increase {}",
                        spec.sign(),
                        series[0],
                        series[series.len() - 1],
                        if rep.worst_violation.is_finite() {
                            fmt_g(rep.worst_violation)
                        } else {
                            "none (single sample)".into()
                        }
                    ),
                );
                c.status = if rep.ok { Status::Pass } else { Status::Fail };
                c
            })
            .collect()
    }

    fn omega(&self, flags: CheckFlags) -> OmegaOutput {
        let mut out = OmegaOutput {
            prediction: None,
            label: None,
            buckets: None,
            checks: Vec::new(),
        };
        let Some(h) = self.hyp else {
            if flags.omega_limit {
                out.checks.push(CheckResult::skipped(
                    "omega_limit",
                    claims::OMEGA_H1,
                    "no hypothesis class".into(),
                ));
            }
            return out;
        };
        let prediction = match predict_omega_limit(self.e0, &h) {
            Ok(p) => p,
            Err(e) => {
                out.checks
                    .push(CheckResult::new("omega_limit", claims::OMEGA_H1, false, e.to_string()));
                return out;
            }
        };
        let last = self.record.last();
        let lambda_end = self.record.final_lambda();
        let limits = estimate_limits(self.record);
        let tol = self.cfg.bucket_tol;

        match prediction.kind {
            OmegaKind::H1Step | OmegaKind::H3Step => {
                let lambda_inf = prediction.lambda_infinity.expect("closed form under H1/H3");
                out.label = Some("limit");
                let buckets = classify_terminal(last, Some(lambda_inf), tol);
                if flags.omega_limit {
                    out.checks
                        .extend(self.step_limit_checks(&prediction, lambda_inf, &buckets, limits));
                }
                if flags.h2_uniqueness {
                    out.checks.push(CheckResult::skipped(
                        "h2_uniqueness",
                        claims::H2_UNIQUENESS,
                        format!("applies to H2, data are {}", h.tag),
                    ));
                }
                out.buckets = Some(buckets);
            }
            OmegaKind::H2Partial => {
                out.label = Some("trace value, no convergence claim");
                let buckets = classify_terminal(last, Some(lambda_end), tol);
                if flags.omega_limit {
                    out.checks.push(self.h2_limit_check(&buckets));
                }
                if flags.h2_uniqueness {
                    out.checks.push(self.h2_uniqueness_check(&buckets, lambda_end));
                }
                out.buckets = Some(buckets);
            }
        }
        out.prediction = Some(prediction);
        out
    }

    fn step_limit_checks(
        &self,
        prediction: &OmegaPrediction,
        lambda_inf: f64,
        buckets: &[Bucket],
        limits: LimitEstimate,
    ) -> Vec<CheckResult> {
        let h1 = prediction.kind == OmegaKind::H1Step;
        let claim = if h1 { claims::OMEGA_H1 } else { claims::OMEGA_H3 };
        let mut out = Vec::new();
        let steady = self.record.termination == Termination::SteadyState;
        out.push(CheckResult::new(
            "steady_state",
            claim,
            steady,
            format!(
                "terminated {:?} at t = {}",
                self.record.termination,
                self.record.end_time()
            ),
        ));

        let gap = analysis::omega_limit_gap(self.e0, self.record.last(), prediction);
        out.push(CheckResult::measured(
            "omega_limit",
            claim,
            gap,
            OMEGA_TOL,
            format!("predicted lambda_inf = {lambda_inf}, max atom gap {}", fmt_g(gap)),
        ));

        let lambda_end = self.record.final_lambda();
        let lam_gap = (lambda_end - lambda_inf).abs();
        let sign_ok = if h1 {
            lambda_end > 1.0 + LAMBDA_TOL
        } else {
            lambda_end < -LAMBDA_TOL
        };
        let mut c = CheckResult::measured(
            "lambda_limit",
            claim,
            lam_gap,
            LAMBDA_TOL,
            format!(
                "lambda(end) = {lambda_end}, predicted {lambda_inf}, required {}",
                if h1 { "> 1 + 1e-6" } else { "< -1e-6" }
            ),
        );
        if !sign_ok {
            c.status = Status::Fail;
        }
        out.push(c);

        let allowed: [Bucket; 2] = if h1 {
            [Bucket::One, Bucket::LambdaInf]
        } else {
            [Bucket::Zero, Bucket::LambdaInf]
        };
        let expected_ok = self.e0.values().zip(buckets).all(|(s, b)| {
            let expected = if h1 && s == 1.0 {
                Bucket::One
            } else if !h1 && s == 0.0 {
                Bucket::Zero
            } else {
                Bucket::LambdaInf
            };
            *b == expected
        });
        out.push(CheckResult::new(
            "terminal_buckets",
            claim,
            expected_ok && buckets.iter().all(|b| allowed.contains(b)),
            format!("buckets {buckets:?}"),
        ));

        // sign facts on the limits: l_g < 0 under H1 and H3, l_f > 0 under H3
        let signs_ok = limits.l_g < 0.0 && (h1 || limits.l_f > 0.0);
        let ratio_detail = match limits.ratio(RATIO_FLOOR) {
            Some(r) => {
                let d = (r - lambda_end).abs();
                let ok = d <= RATIO_TOL && signs_ok;
                let mut c = CheckResult::measured(
                    "limits",
                    claims::LIMITS,
                    d,
                    RATIO_TOL,
                    format!(
                        "l_g = {}, l_f = {}, l_f/l_g = {r}, converged = {}",
                        limits.l_g, limits.l_f, limits.converged
                    ),
                );
                if !ok {
                    c.status = Status::Fail;
                }
                c
            }
            None => CheckResult::new(
                "limits",
                claims::LIMITS,
                false,
                format!("|l_g| = {} is too small to form the ratio", limits.l_g.abs()),
            ),
        };
        out.push(ratio_detail);
        out
    }

    fn h2_limit_check(&self, buckets: &[Bucket]) -> CheckResult {
        if !self.cfg.datum_spec().is_sampled() {
            return CheckResult::new(
                "omega_limit",
                claims::OMEGA_H2_ATOMIC,
                true,
                format!(
                    "atomic H2 datum, terminated {:?}; buckets {buckets:?}",
                    self.record.termination
                ),
            );
        }
        let (gs, fs) = analysis::denominator_numerator_series(self.record);
        let min_g = gs.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let min_f = fs.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let buckets_ok = buckets
            .iter()
            .all(|b| matches!(b, Bucket::Zero | Bucket::One | Bucket::Ambiguous));
        let ambiguous = buckets.iter().filter(|b| **b == Bucket::Ambiguous).count();
        let measured = min_g.max(min_f);
        let mut c = CheckResult::measured(
            "omega_limit",
            claims::OMEGA_H2,
            measured,
            H2_VANISHING_TOL,
            format!(
                "min |int g| = {}, min |int f| = {}, terminated {:?}; {} of {} atoms ambiguous",
                fmt_g(min_g),
                fmt_g(min_f),
                self.record.termination,
                ambiguous,
                buckets.len()
            ),
        );
        if !buckets_ok {
            c.status = Status::Fail;
            c.detail.push_str(&format!("; buckets {buckets:?}"));
        }
        c
    }

    fn h2_uniqueness_check(&self, buckets: &[Bucket], lambda_trace: f64) -> CheckResult {
        match check_h2_uniqueness(self.e0, buckets, lambda_trace) {
            Ok(rep) => CheckResult::new(
                "h2_uniqueness",
                claims::H2_UNIQUENESS,
                rep.ok,
                if rep.ok {
                    format!("lambda trace {lambda_trace}")
                } else {
                    format!("initial values {:?} all end at {lambda_trace}", rep.offending_values)
                },
            ),
            Err(AnalysisError::Precondition(msg)) => {
                CheckResult::skipped("h2_uniqueness", claims::H2_UNIQUENESS, msg)
            }
            Err(e) => CheckResult::new("h2_uniqueness", claims::H2_UNIQUENESS, false, e.to_string()),
        }
    }

    fn characteristic_check(&self) -> CheckResult {
        match characteristic_gap(self.record, &self.cfg.control) {
            Ok((gap, horizon)) => CheckResult::measured(
                "characteristic",
                claims::CHARACTERISTIC,
                gap,
                CHARACTERISTIC_TOL,
                format!(
                    "sup gap {} up to t = {horizon} (record_every = {})",
                    fmt_g(gap),
                    self.cfg.control.record_every
                ),
            ),
            Err(e) => CheckResult::new("characteristic", claims::CHARACTERISTIC, false, e.to_string()),
        }
    }

    fn sandwich_checks(&self) -> Vec<CheckResult> {
        let tag = self.hyp.map(|h| h.tag);
        let select: fn(f64) -> bool = match tag {
            Some(Hypothesis::H1) => |s| s > 1.0,
            Some(Hypothesis::H3) => |s| s < 0.0,
            _ => {
                return vec![CheckResult::skipped(
                    "sandwich",
                    claims::SANDWICH,
                    "applies to atoms above 1 (H1) or below 0 (H3)".into(),
                )]
            }
        };
        let mut out = Vec::new();
        let mut seen: Vec<f64> = Vec::new();
        for (i, a) in self.e0.atoms().iter().enumerate() {
            let s = a.value();
            if !select(s) || seen.contains(&s) {
                continue;
            }
            seen.push(s);
            let traj = crate::integrator::ScalarTrajectory {
                times: self.record.times.clone(),
                values: self.record.atom_series(i),
            };
            let name = format!("sandwich:atom{i}");
            match sandwich_check(
                &traj,
                &self.record.lambda_series,
                self.cfg.sandwich_eps,
                &self.cfg.control,
            ) {
                Ok(rep) => out.push(CheckResult::new(
                    name,
                    claims::SANDWICH,
                    rep.ok,
                    format!(
                        "t_eps = {}, margins (Y - alpha, beta - Y) >= ({}, {}), alpha(end) = {}, beta(end) = {}",
                        rep.t_eps,
                        fmt_g(rep.lower_margin),
                        fmt_g(rep.upper_margin),
                        rep.alpha_end,
                        rep.beta_end
                    ),
                )),
                Err(e) => out.push(CheckResult::new(name, claims::SANDWICH, false, e.to_string())),
            }
        }
        out
    }
}

/// Environment variable capping the number of scenarios run at once.
pub const THREADS_ENV: &str = "NONLOCAL_FLOW_THREADS";

/// Reads [`THREADS_ENV`]; unset, empty, zero or unparsable means no cap.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs every scenario, in parallel when allowed. Results come back in
/// config order and do not depend on the thread count.
pub fn run_batch(
    cfgs: &[ScenarioConfig],
    flags: Option<CheckFlags>,
    threads: Option<usize>,
) -> Vec<ScenarioOutcome> {
    use rayon::prelude::*;
    let run = |c: &ScenarioConfig| run_scenario_with(c, flags.unwrap_or(c.checks));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| cfgs.par_iter().map(run).collect()),
        Err(_) => cfgs.iter().map(run).collect(),
    }
}

/// Re-solves each distinct initial value against the recorded λ and returns
/// the sup-norm gap to the coupled atoms over `t ≤ min(t_end, 50)`.
pub fn characteristic_gap(
    record: &TrajectoryRecord,
    ctrl: &StepControl,
) -> Result<(f64, f64), IntegratorError> {
    let horizon = record.end_time().min(CHARACTERISTIC_HORIZON);
    let lambda = record.lambda_interpolant();
    let e0 = record.initial();
    let mut seen: Vec<f64> = Vec::new();
    let mut gap: f64 = 0.0;
    for (i, a) in e0.atoms().iter().enumerate() {
        let s = a.value();
        if seen.contains(&s) {
            continue;
        }
        seen.push(s);
        let y = solve_characteristic(s, &lambda, ctrl)?;
        for ((t, ys), snap) in y.times.iter().zip(&y.values).zip(&record.snapshots) {
            if *t > horizon {
                break;
            }
            gap = gap.max((ys - snap.atoms()[i].value()).abs());
        }
    }
    Ok((gap, horizon))
}
