//! Executable versions of the long-time results: Lyapunov functionals,
//! limits of `∫g(u)` and `∫f(u)`, the closed-form ω-limits under H1/H3,
//! terminal classification under H2, and the comparison-principle sandwich.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{reaction_f, reaction_g, velocity};
use crate::integrator::{self, IntegratorError, ScalarTrajectory, StepControl, TrajectoryRecord};
use crate::measure::{mass, Ensemble, Hypothesis, HypothesisClass};
use crate::sum::compensated_sum;

/// Slack on `Φ′` monotonicity when sampling `I_i`.
pub const PHI_PRIME_SLACK: f64 = 1e-12;
/// Number of equispaced points used to check `Φ′` on `I_i`.
pub const PHI_PRIME_SAMPLES: usize = 1000;
/// Default bucket tolerance for [`classify_terminal`].
pub const DEFAULT_BUCKET_TOL: f64 = 1e-4;
/// Allowed crossing in [`sandwich_check`].
pub const SANDWICH_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{set} has measure zero; the ensemble does not satisfy its hypothesis")]
    DegenerateSupport { set: &'static str },
    #[error("λ does not settle within ε = {eps} before the end of the record")]
    NoSettlingTime { eps: f64 },
    #[error("Φ = {name}: Φ′ is not non-decreasing on [{lo}, {hi}] (drop of {drop:e} at z = {at})")]
    NotLyapunov {
        name: String,
        lo: f64,
        hi: f64,
        drop: f64,
        at: f64,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Built-in choices of `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovCatalog {
    /// `Φ(z) = z`; the functional is ± mass and stays constant.
    Linear,
    Square,
    /// `Φ(z) = z³`; `Φ′` is only non-decreasing on `[0, ∞)`.
    Cube,
    Quartic,
    Exp,
}

impl LyapunovCatalog {
    pub const ALL: [LyapunovCatalog; 5] = [
        LyapunovCatalog::Linear,
        LyapunovCatalog::Square,
        LyapunovCatalog::Cube,
        LyapunovCatalog::Quartic,
        LyapunovCatalog::Exp,
    ];

    /// The set checked on every hypothesis class.
    pub const STANDARD: [LyapunovCatalog; 4] = [
        LyapunovCatalog::Linear,
        LyapunovCatalog::Square,
        LyapunovCatalog::Quartic,
        LyapunovCatalog::Exp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LyapunovCatalog::Linear => "linear",
            LyapunovCatalog::Square => "square",
            LyapunovCatalog::Cube => "cube",
            LyapunovCatalog::Quartic => "quartic",
            LyapunovCatalog::Exp => "exp",
        }
    }

    fn functions(self) -> (fn(f64) -> f64, fn(f64) -> f64) {
        match self {
            LyapunovCatalog::Linear => (|z| z, |_| 1.0),
            LyapunovCatalog::Square => (|z| z * z, |z| 2.0 * z),
            LyapunovCatalog::Cube => (|z| z * z * z, |z| 3.0 * z * z),
            LyapunovCatalog::Quartic => (|z| z * z * z * z, |z| 4.0 * z * z * z),
            LyapunovCatalog::Exp => (f64::exp, f64::exp),
        }
    }
}

impl fmt::Display for LyapunovCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `E(u) = sign · ∫ Φ(u) dx` with `sign = (−1)^{i+1}` for class `i`.
#[derive(Clone)]
pub struct LyapunovSpec {
    name: String,
    phi: ScalarFn,
    phi_prime: ScalarFn,
    sign: f64,
}

impl fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("name", &self.name)
            .field("sign", &self.sign)
            .finish_non_exhaustive()
    }
}

impl LyapunovSpec {
    pub fn new<P, D>(name: impl Into<String>, phi: P, phi_prime: D, sign: f64) -> Self
    where
        P: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            phi: Arc::new(phi),
            phi_prime: Arc::new(phi_prime),
            sign: sign.signum(),
        }
    }

    pub fn from_catalog(entry: LyapunovCatalog, hypothesis: Hypothesis) -> Self {
        let (phi, phi_prime) = entry.functions();
        Self::new(entry.name(), phi, phi_prime, hypothesis.lyapunov_sign())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn phi(&self, z: f64) -> f64 {
        (self.phi)(z)
    }

    pub fn phi_prime(&self, z: f64) -> f64 {
        (self.phi_prime)(z)
    }

    /// `sign · Σ wᵢ Φ(yᵢ)`.
    pub fn value(&self, e: &Ensemble) -> f64 {
        self.sign * e.integrate(|y| (self.phi)(y))
    }

    /// Checks that `Φ′` is non-decreasing on `I_i` by sampling
    /// [`PHI_PRIME_SAMPLES`] equispaced points.
    pub fn validate_on(&self, class: &HypothesisClass) -> Result<(), AnalysisError> {
        let (lo, hi) = (class.interval_lo, class.interval_hi);
        let n = PHI_PRIME_SAMPLES;
        let mut prev = self.phi_prime(lo);
        for k in 1..n {
            let z = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let d = self.phi_prime(z);
            if d < prev - PHI_PRIME_SLACK {
                return Err(AnalysisError::NotLyapunov {
                    name: self.name.clone(),
                    lo,
                    hi,
                    drop: prev - d,
                    at: z,
                });
            }
            prev = d;
        }
        Ok(())
    }
}

pub fn lyapunov_value(e: &Ensemble, spec: &LyapunovSpec) -> f64 {
    spec.value(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub ok: bool,
    /// `max_k E(t_{k+1}) − E(t_k)`; `-inf` for fewer than two samples.
    pub worst_violation: f64,
    /// Time at the end of the worst increment.
    pub worst_at: Option<f64>,
}

/// Checks `E(t_{k+1}) ≤ E(t_k) + slack` along a series.
pub fn check_monotone(times: &[f64], values: &[f64], slack: f64) -> MonotoneReport {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = None;
    for (k, w) in values.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > worst {
            worst = inc;
            worst_at = times.get(k + 1).copied();
        }
    }
    MonotoneReport {
        ok: !(worst > slack),
        worst_violation: worst,
        worst_at,
    }
}

/// Terminal values of `∫g(u)` and `∫f(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitEstimate {
    pub l_g: f64,
    pub l_f: f64,
    pub converged: bool,
}

impl LimitEstimate {
    /// `l_f / l_g` when `|l_g|` is above `floor`.
    pub fn ratio(&self, floor: f64) -> Option<f64> {
        (self.l_g.abs() > floor).then(|| self.l_f / self.l_g)
    }
}

/// Minimum sample count for a convergence claim.
pub const MIN_LIMIT_SAMPLES: usize = 10;
/// Allowed variation of `∫g`, `∫f` over the last tenth of the run.
pub const LIMIT_VARIATION_TOL: f64 = 1e-8;

/// `∫g(u)` and `∫f(u)` at every recorded time.
pub fn denominator_numerator_series(record: &TrajectoryRecord) -> (Vec<f64>, Vec<f64>) {
    record
        .snapshots
        .iter()
        .map(|s| (s.integrate(reaction_g), s.integrate(reaction_f)))
        .unzip()
}

/// Reads off `l_g`, `l_f` as the terminal values; `converged` requires at
/// least [`MIN_LIMIT_SAMPLES`] samples and a spread below
/// [`LIMIT_VARIATION_TOL`] over the final 10% of recorded time.
pub fn estimate_limits(record: &TrajectoryRecord) -> LimitEstimate {
    let (gs, fs) = denominator_numerator_series(record);
    let l_g = *gs.last().expect("record has at least one sample");
    let l_f = *fs.last().expect("record has at least one sample");
    let converged = record.len() >= MIN_LIMIT_SAMPLES && {
        let t0 = record.times[0];
        let t1 = record.end_time();
        let cut = t1 - 0.1 * (t1 - t0);
        let start = record.times.partition_point(|&t| t < cut);
        spread(&gs[start..]) < LIMIT_VARIATION_TOL && spread(&fs[start..]) < LIMIT_VARIATION_TOL
    };
    LimitEstimate { l_g, l_f, converged }
}

fn spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaKind {
    H1Step,
    H3Step,
    H2Partial,
}

/// A level of the limit step function and the measure it occupies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelPiece {
    pub level: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaPrediction {
    pub kind: OmegaKind,
    /// `None` under H2, where no closed form exists.
    pub lambda_infinity: Option<f64>,
    pub pieces: Vec<LevelPiece>,
    /// Measure whose limit is not determined (H2 only).
    pub undetermined_measure: f64,
}

impl OmegaPrediction {
    /// Predicted limit of the characteristic starting at `s`, if determined.
    pub fn limit_of(&self, s: f64) -> Option<f64> {
        match self.kind {
            OmegaKind::H1Step if s == 1.0 => Some(1.0),
            OmegaKind::H3Step if s == 0.0 => Some(0.0),
            OmegaKind::H1Step | OmegaKind::H3Step => self.lambda_infinity,
            OmegaKind::H2Partial if s == 0.0 || s == 1.0 => Some(s),
            OmegaKind::H2Partial => None,
        }
    }
}

/// Closed-form ω-limit from the initial ensemble.
///
/// Under H1 the limit is `1` on `{u₀ = 1}` and `λ∞` on `{u₀ > 1}`, where
/// mass conservation gives `|{u₀ = 1}| + λ∞ |{u₀ > 1}| = ∫u₀`. Under H3 it
/// is `λ∞` on `{u₀ < 0}` and `0` elsewhere with `λ∞ |{u₀ < 0}| = ∫u₀`.
pub fn predict_omega_limit(
    e0: &Ensemble,
    hyp: &HypothesisClass,
) -> Result<OmegaPrediction, AnalysisError> {
    let m = mass(e0);
    match hyp.tag {
        Hypothesis::H1 => {
            let at_one = e0.measure_where(|v| v == 1.0);
            let above = e0.measure_where(|v| v > 1.0);
            if above <= 0.0 {
                return Err(AnalysisError::DegenerateSupport { set: "{u0 > 1}" });
            }
            let lambda_inf = (m - at_one) / above;
            let mut pieces = Vec::new();
            if at_one > 0.0 {
                pieces.push(LevelPiece {
                    level: 1.0,
                    measure: at_one,
                });
            }
            pieces.push(LevelPiece {
                level: lambda_inf,
                measure: above,
            });
            Ok(OmegaPrediction {
                kind: OmegaKind::H1Step,
                lambda_infinity: Some(lambda_inf),
                pieces,
                undetermined_measure: 0.0,
            })
        }
        Hypothesis::H3 => {
            let below = e0.measure_where(|v| v < 0.0);
            if below <= 0.0 {
                return Err(AnalysisError::DegenerateSupport { set: "{u0 < 0}" });
            }
            let at_zero = e0.measure_where(|v| v == 0.0);
            let lambda_inf = m / below;
            let mut pieces = vec![LevelPiece {
                level: lambda_inf,
                measure: below,
            }];
            if at_zero > 0.0 {
                pieces.push(LevelPiece {
                    level: 0.0,
                    measure: at_zero,
                });
            }
            Ok(OmegaPrediction {
                kind: OmegaKind::H3Step,
                lambda_infinity: Some(lambda_inf),
                pieces,
                undetermined_measure: 0.0,
            })
        }
        Hypothesis::H2 => {
            let at_zero = e0.measure_where(|v| v == 0.0);
            let at_one = e0.measure_where(|v| v == 1.0);
            let interior = e0.measure_where(|v| v > 0.0 && v < 1.0);
            let pieces = [(0.0, at_zero), (1.0, at_one)]
                .into_iter()
                .filter(|&(_, m)| m > 0.0)
                .map(|(level, measure)| LevelPiece { level, measure })
                .collect();
            Ok(OmegaPrediction {
                kind: OmegaKind::H2Partial,
                lambda_infinity: None,
                pieces,
                undetermined_measure: interior,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Zero,
    One,
    LambdaInf,
    Ambiguous,
}

/// Assigns each atom to the candidate limit in `{0, 1, λ∞}` within `tol`.
/// No candidate, or more than one, gives [`Bucket::Ambiguous`].
pub fn classify_terminal(e_final: &Ensemble, lambda_inf: Option<f64>, tol: f64) -> Vec<Bucket> {
    let mut candidates = vec![(Bucket::Zero, 0.0), (Bucket::One, 1.0)];
    if let Some(l) = lambda_inf {
        candidates.push((Bucket::LambdaInf, l));
    }
    e_final
        .values()
        .map(|y| {
            let mut near = candidates.iter().filter(|(_, c)| (y - c).abs() <= tol);
            match (near.next(), near.next()) {
                (Some(&(b, _)), None) => b,
                _ => Bucket::Ambiguous,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub ok: bool,
    /// Distinct initial values whose atoms end at `λ∞`.
    pub offending_values: Vec<f64>,
}

/// At most one distinct initial value may be attracted to an interior `λ∞`.
pub fn check_h2_uniqueness(
    e0: &Ensemble,
    buckets: &[Bucket],
    lambda_inf: f64,
) -> Result<UniquenessReport, AnalysisError> {
    if !(lambda_inf > 0.0 && lambda_inf < 1.0) {
        return Err(AnalysisError::Precondition(format!(
            "λ∞ = {lambda_inf} is not in (0, 1)"
        )));
    }
    if buckets.len() != e0.len() {
        return Err(AnalysisError::Precondition(format!(
            "{} buckets for {} atoms",
            buckets.len(),
            e0.len()
        )));
    }
    let mut distinct: Vec<f64> = Vec::new();
    for (v, b) in e0.values().zip(buckets) {
        if *b == Bucket::LambdaInf && !distinct.contains(&v) {
            distinct.push(v);
        }
    }
    let ok = distinct.len() <= 1;
    Ok(UniquenessReport {
        ok,
        offending_values: if ok { Vec::new() } else { distinct },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub ok: bool,
    pub t_eps: f64,
    pub lambda_end: f64,
    /// `min_t (Y − α)`
    pub lower_margin: f64,
    /// `min_t (β − Y)`
    pub upper_margin: f64,
    pub alpha_end: f64,
    pub beta_end: f64,
}

/// Comparison-principle bracket for a characteristic.
///
/// Takes `λ∞ := λ(end)` and the first recorded `t_ε` after which
/// `|λ − λ∞| ≤ eps`, then integrates
/// `α̇ = g(α)(α − λ∞ + ε)` and `β̇ = g(β)(β − λ∞ − ε)` from `Y(t_ε)` and checks
/// `α − 1e-9 ≤ Y ≤ β + 1e-9` at every recorded time after `t_ε`. The
/// ordering holds where `g(Y) < 0`, i.e. for atoms above 1 or below 0.
pub fn sandwich_check(
    y_traj: &ScalarTrajectory,
    lambda_series: &[f64],
    eps: f64,
    ctrl: &StepControl,
) -> Result<SandwichReport, AnalysisError> {
    let n = y_traj.times.len();
    if n == 0 || lambda_series.len() != n || y_traj.values.len() != n {
        return Err(AnalysisError::Precondition(
            "trajectory and λ series must be non-empty and aligned".into(),
        ));
    }
    let lambda_end = lambda_series[n - 1];
    let settle = lambda_series
        .iter()
        .rposition(|l| (l - lambda_end).abs() > eps)
        .map_or(0, |k| k + 1);
    if n > 1 && settle == n - 1 {
        return Err(AnalysisError::NoSettlingTime { eps });
    }
    let times = &y_traj.times[settle..];
    let ys = &y_traj.values[settle..];
    let y0 = ys[0];
    let lo_level = lambda_end - eps;
    let hi_level = lambda_end + eps;
    let alpha = integrator::integrate_scalar_at(|_, a| velocity(a, lo_level), y0, times, ctrl)?;
    let beta = integrator::integrate_scalar_at(|_, b| velocity(b, hi_level), y0, times, ctrl)?;

    let lower_margin = ys
        .iter()
        .zip(&alpha)
        .map(|(y, a)| y - a)
        .fold(f64::INFINITY, f64::min);
    let upper_margin = ys
        .iter()
        .zip(&beta)
        .map(|(y, b)| b - y)
        .fold(f64::INFINITY, f64::min);
    Ok(SandwichReport {
        ok: lower_margin >= -SANDWICH_SLACK && upper_margin >= -SANDWICH_SLACK,
        t_eps: times[0],
        lambda_end,
        lower_margin,
        upper_margin,
        alpha_end: *alpha.last().expect("non-empty"),
        beta_end: *beta.last().expect("non-empty"),
    })
}

/// `max_i |yᵢ(end) − φ(sᵢ)|` over atoms whose predicted limit is determined.
pub fn omega_limit_gap(e0: &Ensemble, e_final: &Ensemble, prediction: &OmegaPrediction) -> f64 {
    e0.values()
        .zip(e_final.values())
        .filter_map(|(s, y)| prediction.limit_of(s).map(|l| (y - l).abs()))
        .fold(0.0, f64::max)
}

/// `Σ wᵢ·(Φ′(yᵢ) − Φ′(λ))(yᵢ − λ) g(yᵢ)`, the time derivative of `∫Φ(u)`.
pub fn lyapunov_derivative(e: &Ensemble, spec: &LyapunovSpec, lambda: f64) -> f64 {
    let dl = spec.phi_prime(lambda);
    compensated_sum(
        e.atoms()
            .iter()
            .map(|a| a.weight() * (spec.phi_prime(a.value()) - dl) * velocity(a.value(), lambda)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{evolve, reference_evolve};
    use crate::measure::{build_ensemble, validate_hypothesis, InitialDatumSpec};

    fn ens(pairs: &[(f64, f64)]) -> Ensemble {
        build_ensemble(&InitialDatumSpec::Atoms(pairs.to_vec())).unwrap()
    }

    #[test]
    fn lyapunov_values() {
        let sq_h1 = LyapunovSpec::from_catalog(LyapunovCatalog::Square, Hypothesis::H1);
        assert_eq!(sq_h1.value(&ens(&[(2.0, 1.0)])), 4.0);
        let sq_h2 = LyapunovSpec::from_catalog(LyapunovCatalog::Square, Hypothesis::H2);
        assert_eq!(sq_h2.value(&ens(&[(0.5, 1.0)])), -0.25);
        let lin = LyapunovSpec::from_catalog(LyapunovCatalog::Linear, Hypothesis::H3);
        let e = ens(&[(-1.0, 0.5), (-0.5, 0.5)]);
        assert_eq!(lin.value(&e), mass(&e));
    }

    #[test]
    fn linear_functional_is_constant_along_a_run() {
        let e = ens(&[(1.5, 0.5), (3.0, 0.5)]);
        let spec = LyapunovSpec::from_catalog(LyapunovCatalog::Linear, Hypothesis::H1);
        let rec = evolve(&e, &StepControl::default(), &[spec]).unwrap();
        let series = rec.lyapunov("linear").unwrap();
        for v in series {
            assert!((v - 2.25).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_prime_validation() {
        let h3 = validate_hypothesis(&ens(&[(-2.0, 0.5), (0.0, 0.5)])).unwrap();
        let cube = LyapunovSpec::from_catalog(LyapunovCatalog::Cube, Hypothesis::H3);
        assert!(matches!(
            cube.validate_on(&h3),
            Err(AnalysisError::NotLyapunov { .. })
        ));
        for entry in LyapunovCatalog::STANDARD {
            LyapunovSpec::from_catalog(entry, Hypothesis::H3)
                .validate_on(&h3)
                .unwrap();
        }
        let h2 = validate_hypothesis(&ens(&[(0.2, 1.0)])).unwrap();
        LyapunovSpec::from_catalog(LyapunovCatalog::Cube, Hypothesis::H2)
            .validate_on(&h2)
            .unwrap();
    }

    #[test]
    fn monotone_reports() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let r = check_monotone(&t, &[1.0, 1.0, 1.0, 1.0], 0.0);
        assert!(r.ok && r.worst_violation <= 0.0);
        let r = check_monotone(&t, &[4.0, 3.0, 2.0, 1.0], 0.0);
        assert!(r.ok);
        let r = check_monotone(&t, &[1.0, 0.5, 1.5, 1.0], 1e-9);
        assert!(!r.ok);
        assert_eq!(r.worst_violation, 1.0);
        assert_eq!(r.worst_at, Some(2.0));
        assert!(check_monotone(&[0.0], &[3.0], 0.0).ok);
    }

    #[test]
    fn limits_at_equilibrium() {
        let e = ens(&[(2.0, 1.0)]);
        let rec = reference_evolve(&e, 0.1, 1.0, 0.1).unwrap();
        let lim = estimate_limits(&rec);
        assert_eq!((lim.l_g, lim.l_f), (-2.0, -4.0));
        assert!(lim.converged);
        assert_eq!(lim.ratio(1e-6), Some(2.0));
    }

    #[test]
    fn too_few_samples_never_converge() {
        let rec = evolve(&ens(&[(2.0, 1.0)]), &StepControl::default(), &[]).unwrap();
        let lim = estimate_limits(&rec);
        assert_eq!((lim.l_g, lim.l_f), (-2.0, -4.0));
        assert!(!lim.converged);
    }

    #[test]
    fn predictions() {
        let e = ens(&[(1.0, 0.5), (2.0, 0.5)]);
        let p = predict_omega_limit(&e, &validate_hypothesis(&e).unwrap()).unwrap();
        assert_eq!(p.kind, OmegaKind::H1Step);
        assert_eq!(p.lambda_infinity, Some(2.0));
        assert_eq!(
            p.pieces,
            vec![
                LevelPiece { level: 1.0, measure: 0.5 },
                LevelPiece { level: 2.0, measure: 0.5 }
            ]
        );

        let e = ens(&[(1.5, 0.5), (3.0, 0.5)]);
        let p = predict_omega_limit(&e, &validate_hypothesis(&e).unwrap()).unwrap();
        assert_eq!(p.lambda_infinity, Some(2.25));
        assert_eq!(p.pieces, vec![LevelPiece { level: 2.25, measure: 1.0 }]);

        let e = ens(&[(-1.0, 0.5), (0.0, 0.5)]);
        let p = predict_omega_limit(&e, &validate_hypothesis(&e).unwrap()).unwrap();
        assert_eq!(p.kind, OmegaKind::H3Step);
        assert_eq!(p.lambda_infinity, Some(-1.0));
        assert_eq!(
            p.pieces,
            vec![
                LevelPiece { level: -1.0, measure: 0.5 },
                LevelPiece { level: 0.0, measure: 0.5 }
            ]
        );

        let e = ens(&[(0.0, 0.25), (0.4, 0.5), (1.0, 0.25)]);
        let p = predict_omega_limit(&e, &validate_hypothesis(&e).unwrap()).unwrap();
        assert_eq!(p.kind, OmegaKind::H2Partial);
        assert_eq!(p.lambda_infinity, None);
        assert_eq!(p.undetermined_measure, 0.5);
        assert_eq!(p.limit_of(0.4), None);
        assert_eq!(p.limit_of(1.0), Some(1.0));
    }

    #[test]
    fn degenerate_support_is_reported() {
        // a hypothesis class that does not match the data
        let e = ens(&[(1.0, 1.0)]);
        let forged = HypothesisClass {
            tag: Hypothesis::H1,
            interval_lo: 1.0,
            interval_hi: 1.0,
        };
        assert!(matches!(
            predict_omega_limit(&e, &forged),
            Err(AnalysisError::DegenerateSupport { .. })
        ));
        let e = ens(&[(0.0, 1.0)]);
        let forged = HypothesisClass {
            tag: Hypothesis::H3,
            interval_lo: 0.0,
            interval_hi: 0.0,
        };
        assert!(predict_omega_limit(&e, &forged).is_err());
    }

    #[test]
    fn buckets() {
        let e = ens(&[(1e-9, 0.5), (1.0 - 1e-9, 0.5)]);
        assert_eq!(
            classify_terminal(&e, Some(0.5), 1e-4),
            vec![Bucket::Zero, Bucket::One]
        );
        let e = ens(&[(2.250_000_1, 1.0)]);
        assert_eq!(classify_terminal(&e, Some(2.25), 1e-4), vec![Bucket::LambdaInf]);
        let e = ens(&[(0.5, 1.0)]);
        assert_eq!(classify_terminal(&e, None, 1e-4), vec![Bucket::Ambiguous]);
        // λ∞ indistinguishable from 1
        let e = ens(&[(1.0, 1.0)]);
        assert_eq!(
            classify_terminal(&e, Some(1.0 + 1e-6), 1e-4),
            vec![Bucket::Ambiguous]
        );
    }

    #[test]
    fn h2_uniqueness() {
        use Bucket::*;
        let e = ens(&[(0.1, 0.3), (0.9, 0.3), (0.5, 0.4)]);
        assert!(check_h2_uniqueness(&e, &[Zero, One, LambdaInf], 0.5).unwrap().ok);

        // explicit lists merge equal values, so build the duplicate by sampling
        let e = build_ensemble(&InitialDatumSpec::Sampler(crate::measure::Sampler {
            profile: crate::measure::Profile::new(|_| 0.3),
            lo: 0.0,
            hi: 1.0,
            samples: 2,
            domain_measure: None,
        }))
        .unwrap();
        assert!(check_h2_uniqueness(&e, &[LambdaInf, LambdaInf], 0.3).unwrap().ok);

        let e = ens(&[(0.3, 0.5), (0.4, 0.5)]);
        let r = check_h2_uniqueness(&e, &[LambdaInf, LambdaInf], 0.35).unwrap();
        assert!(!r.ok);
        assert_eq!(r.offending_values, vec![0.3, 0.4]);

        assert!(check_h2_uniqueness(&e, &[Zero, One], 1.0).is_err());
    }

    fn constant_traj(v: f64, n: usize) -> ScalarTrajectory {
        ScalarTrajectory {
            times: (0..n).map(|k| k as f64).collect(),
            values: vec![v; n],
        }
    }

    #[test]
    fn sandwich_on_equilibrium() {
        let ctrl = StepControl::default();
        let traj = constant_traj(2.0, 60);
        let lam = vec![2.0; 60];
        let r = sandwich_check(&traj, &lam, 0.1, &ctrl).unwrap();
        assert!(r.ok);
        assert_eq!(r.t_eps, 0.0);
        assert!((r.alpha_end - 1.9).abs() < 1e-6, "{}", r.alpha_end);
        assert!((r.beta_end - 2.1).abs() < 1e-6, "{}", r.beta_end);
        assert!(r.alpha_end < 2.0 && 2.0 < r.beta_end);

        let r = sandwich_check(&traj, &lam, 0.0, &ctrl).unwrap();
        assert!(r.ok);
        assert_eq!((r.lower_margin, r.upper_margin), (0.0, 0.0));
        assert_eq!((r.alpha_end, r.beta_end), (2.0, 2.0));
    }

    #[test]
    fn sandwich_detects_a_trajectory_outside_the_bracket() {
        let traj = ScalarTrajectory {
            times: vec![0.0, 1.0, 2.0],
            values: vec![2.0, 2.5, 2.5],
        };
        let r = sandwich_check(&traj, &[2.0; 3], 0.1, &StepControl::default()).unwrap();
        assert!(!r.ok);
        assert!(r.upper_margin < -0.3);
    }

    #[test]
    fn sandwich_requires_settling() {
        let traj = constant_traj(2.0, 3);
        assert!(matches!(
            sandwich_check(&traj, &[2.0, 2.0, 3.0], 0.1, &StepControl::default()),
            Err(AnalysisError::NoSettlingTime { .. })
        ));
    }

    #[test]
    fn derivative_sign_matches_hypothesis() {
        // the Lyapunov identity evaluated directly: sign · d/dt ∫Φ ≤ 0
        for pairs in [
            vec![(1.5, 0.5), (3.0, 0.5)],
            vec![(0.2, 0.3), (0.7, 0.7)],
            vec![(-2.0, 0.4), (-0.3, 0.6)],
        ] {
            let e = ens(&pairs);
            let hyp = validate_hypothesis(&e).unwrap();
            let lambda = crate::dynamics::lambda_of(&e, 1e-12).unwrap();
            for entry in LyapunovCatalog::STANDARD {
                let spec = LyapunovSpec::from_catalog(entry, hyp.tag);
                let d = spec.sign() * lyapunov_derivative(&e, &spec, lambda);
                assert!(d <= 1e-14, "{entry} under {}: {d}", hyp.tag);
            }
        }
    }
}
