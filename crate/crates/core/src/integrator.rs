//! Time stepping for the atom system.
//!
//! The production path is an embedded Dormand–Prince 5(4) pair with λ
//! recomputed from every stage state. Since `Σ wᵢ g(yᵢ)(yᵢ − λ) = 0` holds
//! exactly for the λ of the same state, every stage derivative has zero
//! weighted sum and mass drifts only by rounding.
//!
//! [`reference_evolve`] is a classical fixed-step RK4 used as an independent
//! oracle in tests.

use serde::Serialize;
use thiserror::Error;

use crate::analysis::LyapunovSpec;
use crate::dynamics::{self, DynamicsError, DEFAULT_DENOMINATOR_GUARD};
use crate::measure::{self, Ensemble, MeasureError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("step size fell below h_min = {h_min:e} at t = {t}")]
    StepSizeUnderflow { t: f64, h_min: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error("λ interpolant needs at least one sample with increasing times")]
    InvalidInterpolant,
}

/// Tolerances and limits for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub t_max: f64,
    /// Run stops once `‖rhs‖∞` drops below this.
    pub steady_tol: f64,
    pub denom_guard: f64,
    /// Observables are recorded on the grid `k · record_every`.
    pub record_every: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1.0,
            t_max: 200.0,
            steady_tol: 1e-10,
            denom_guard: DEFAULT_DENOMINATOR_GUARD,
            record_every: 0.1,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<(), IntegratorError> {
        let named = [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("h_init", self.h_init),
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("t_max", self.t_max),
            ("steady_tol", self.steady_tol),
            ("denom_guard", self.denom_guard),
            ("record_every", self.record_every),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IntegratorError::InvalidControl(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return Err(IntegratorError::InvalidControl(format!(
                "need h_min <= h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            )));
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// The 5th-order weights equal the last row of A (FSAL), so the 5th-order
// solution is the 7th stage state.
// B5 − B4
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Vector field `(t, y, out) -> aux`; `aux` is λ for the coupled system.
pub(crate) trait VectorField {
    fn eval(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<f64, DynamicsError>;
}

impl<F> VectorField for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<f64, DynamicsError>,
{
    fn eval(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<f64, DynamicsError> {
        self(t, y, out)
    }
}

struct Workspace {
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
    y5: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: vec![vec![0.0; n]; 7],
            stage: vec![0.0; n],
            y5: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tolerances {
    abs_tol: f64,
    rel_tol: f64,
    h_min: f64,
    h_max: f64,
}

impl From<&StepControl> for Tolerances {
    fn from(c: &StepControl) -> Self {
        Self {
            abs_tol: c.abs_tol,
            rel_tol: c.rel_tol,
            h_min: c.h_min,
            h_max: c.h_max,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Accepted {
    h_used: f64,
    h_next: f64,
    err_est: f64,
    /// aux value returned by the field at the new state
    aux: f64,
}

#[derive(Debug)]
enum StepFailure {
    Underflow,
    Denominator(DynamicsError),
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One accepted adaptive step from `(t, y)` with `k1 = f(t, y)` already in
/// `k1`. On success `y` and `k1` hold the new state and its derivative.
///
/// `h` may be below `h_min` when the caller clamps it to land on a target
/// time; only rejection-driven shrinking is held to `h_min`.
fn adaptive_step<F: VectorField>(
    tol: Tolerances,
    field: &mut F,
    t: f64,
    y: &mut [f64],
    k1: &mut [f64],
    mut h: f64,
    ws: &mut Workspace,
) -> Result<Accepted, StepFailure> {
    let n = y.len();
    ws.k[0].copy_from_slice(k1);
    loop {
        let mut aux = 0.0;
        let mut stage_error = None;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s].iter().take(s).enumerate() {
                    acc += a * ws.k[j][i];
                }
                ws.stage[i] = y[i] + h * acc;
            }
            match field.eval(t + C[s] * h, &ws.stage, &mut ws.k[s]) {
                Ok(a) => aux = a,
                Err(e) => {
                    stage_error = Some(e);
                    break;
                }
            }
            if s == 6 {
                ws.y5.copy_from_slice(&ws.stage);
            }
        }
        if let Some(e) = stage_error {
            h *= 0.5;
            if h < tol.h_min {
                return Err(StepFailure::Denominator(e));
            }
            continue;
        }

        let mut err_est: f64 = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            for (s, e) in E.iter().enumerate() {
                acc += e * ws.k[s][i];
            }
            err_est = err_est.max((h * acc).abs());
        }
        let scale = tol.abs_tol + tol.rel_tol * sup_norm(y).max(sup_norm(&ws.y5));
        let factor = if err_est == 0.0 {
            FAC_MAX
        } else {
            (SAFETY * (scale / err_est).powf(0.2)).clamp(FAC_MIN, FAC_MAX)
        };

        if err_est <= scale {
            y.copy_from_slice(&ws.y5);
            k1.copy_from_slice(&ws.k[6]);
            return Ok(Accepted {
                h_used: h,
                h_next: (h * factor).min(tol.h_max).max(tol.h_min),
                err_est,
                aux,
            });
        }
        h *= factor;
        if h < tol.h_min {
            return Err(StepFailure::Underflow);
        }
    }
}

/// Result of a single adaptive step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub ensemble: Ensemble,
    pub h_used: f64,
    pub h_next: f64,
    pub err_est: f64,
}

/// One accepted Dormand–Prince step of the coupled system, retrying with a
/// smaller `h` until the error test passes.
pub fn step(e: &Ensemble, h: f64, ctrl: &StepControl) -> Result<StepOutcome, IntegratorError> {
    ctrl.validate()?;
    if !(h >= ctrl.h_min && h <= ctrl.h_max) {
        return Err(IntegratorError::InvalidControl(format!(
            "h = {h} outside [h_min, h_max]"
        )));
    }
    let weights: Vec<f64> = e.weights().collect();
    let dm = e.domain_measure();
    let guard = ctrl.denom_guard;
    let mut field = |_t: f64, y: &[f64], out: &mut [f64]| {
        dynamics::rhs_into(&weights, y, guard, dm, out)
    };
    let mut y: Vec<f64> = e.values().collect();
    let mut k1 = vec![0.0; y.len()];
    field.eval(e.time(), &y, &mut k1)?;
    let mut ws = Workspace::new(y.len());
    let acc = adaptive_step(ctrl.into(), &mut field, e.time(), &mut y, &mut k1, h, &mut ws)
        .map_err(|f| failure_to_error(f, e.time(), ctrl.h_min))?;
    Ok(StepOutcome {
        ensemble: e.with_values(&y, e.time() + acc.h_used)?,
        h_used: acc.h_used,
        h_next: acc.h_next,
        err_est: acc.err_est,
    })
}

fn failure_to_error(f: StepFailure, t: f64, h_min: f64) -> IntegratorError {
    match f {
        StepFailure::Underflow => IntegratorError::StepSizeUnderflow { t, h_min },
        StepFailure::Denominator(e) => IntegratorError::Dynamics(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SteadyState,
    TMaxReached,
    DenominatorVanished,
}

/// A named scalar series aligned with [`TrajectoryRecord::times`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedSeries {
    pub name: String,
    pub values: Vec<f64>,
}

/// Extremes seen over every accepted state, not only recorded ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepExtrema {
    pub value_min: f64,
    pub value_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub accepted_steps: usize,
}

impl StepExtrema {
    fn new() -> Self {
        Self {
            value_min: f64::INFINITY,
            value_max: f64::NEG_INFINITY,
            lambda_min: f64::INFINITY,
            lambda_max: f64::NEG_INFINITY,
            accepted_steps: 0,
        }
    }

    fn observe(&mut self, values: &[f64], lambda: f64) {
        for &v in values {
            self.value_min = self.value_min.min(v);
            self.value_max = self.value_max.max(v);
        }
        self.lambda_min = self.lambda_min.min(lambda);
        self.lambda_max = self.lambda_max.max(lambda);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub lambda_series: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub lyapunov_series: Vec<NamedSeries>,
    /// One snapshot per entry of `times`; each carries its own time.
    pub snapshots: Vec<Ensemble>,
    pub termination: Termination,
    pub extrema: StepExtrema,
}

impl TrajectoryRecord {
    fn new(specs: &[LyapunovSpec]) -> Self {
        Self {
            times: Vec::new(),
            lambda_series: Vec::new(),
            mass_series: Vec::new(),
            lyapunov_series: specs
                .iter()
                .map(|s| NamedSeries {
                    name: s.name().to_string(),
                    values: Vec::new(),
                })
                .collect(),
            snapshots: Vec::new(),
            termination: Termination::TMaxReached,
            extrema: StepExtrema::new(),
        }
    }

    fn push(&mut self, e: Ensemble, lambda: f64, specs: &[LyapunovSpec]) {
        self.times.push(e.time());
        self.lambda_series.push(lambda);
        self.mass_series.push(measure::mass(&e));
        for (series, spec) in self.lyapunov_series.iter_mut().zip(specs) {
            series.values.push(spec.value(&e));
        }
        self.snapshots.push(e);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &Ensemble {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Ensemble {
        self.snapshots.last().expect("record has at least one sample")
    }

    pub fn final_lambda(&self) -> f64 {
        *self.lambda_series.last().expect("record has at least one sample")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("record has at least one sample")
    }

    /// Values of atom `index` at every recorded time.
    pub fn atom_series(&self, index: usize) -> Vec<f64> {
        self.snapshots
            .iter()
            .map(|s| s.atoms()[index].value())
            .collect()
    }

    pub fn lyapunov(&self, name: &str) -> Option<&[f64]> {
        self.lyapunov_series
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    /// Piecewise-linear interpolant of the recorded λ.
    pub fn lambda_interpolant(&self) -> PiecewiseLinear {
        PiecewiseLinear {
            times: self.times.clone(),
            values: self.lambda_series.clone(),
        }
    }
}

/// Integrates `e` until steady state, `t_max`, or a vanishing denominator,
/// after checking that `e` satisfies one of the hypothesis classes.
pub fn evolve(
    e: &Ensemble,
    ctrl: &StepControl,
    specs: &[LyapunovSpec],
) -> Result<TrajectoryRecord, IntegratorError> {
    measure::validate_hypothesis(e)?;
    evolve_exploratory(e, ctrl, specs)
}

/// [`evolve`] without the hypothesis check.
pub fn evolve_exploratory(
    e: &Ensemble,
    ctrl: &StepControl,
    specs: &[LyapunovSpec],
) -> Result<TrajectoryRecord, IntegratorError> {
    ctrl.validate()?;
    let weights: Vec<f64> = e.weights().collect();
    let dm = e.domain_measure();
    let guard = ctrl.denom_guard;
    let mut field = |_t: f64, y: &[f64], out: &mut [f64]| {
        dynamics::rhs_into(&weights, y, guard, dm, out)
    };

    let mut record = TrajectoryRecord::new(specs);
    let mut t = e.time();
    let mut y: Vec<f64> = e.values().collect();
    let mut k1 = vec![0.0; y.len()];
    let mut lambda = field.eval(t, &y, &mut k1)?;
    record.extrema.observe(&y, lambda);
    record.push(e.clone(), lambda, specs);

    let tol = Tolerances::from(ctrl);
    let mut ws = Workspace::new(y.len());
    let mut h = ctrl.h_init;
    let t0 = t;
    let mut next_index: u64 = 1;

    let termination = loop {
        if sup_norm(&k1) < ctrl.steady_tol {
            break Termination::SteadyState;
        }
        if t >= ctrl.t_max {
            break Termination::TMaxReached;
        }
        let grid_time = t0 + next_index as f64 * ctrl.record_every;
        let target = grid_time.min(ctrl.t_max);
        let landing = h >= target - t;
        let h_try = if landing { target - t } else { h };

        match adaptive_step(tol, &mut field, t, &mut y, &mut k1, h_try, &mut ws) {
            Ok(acc) => {
                lambda = acc.aux;
                t = if landing && acc.h_used == h_try {
                    target
                } else {
                    t + acc.h_used
                };
                record.extrema.observe(&y, lambda);
                record.extrema.accepted_steps += 1;
                // a clamped landing step should not throttle the next one
                h = if landing && acc.h_used == h_try {
                    acc.h_next.max(h.min(tol.h_max))
                } else {
                    acc.h_next
                };
                if t >= target {
                    record.push(e.with_values(&y, t)?, lambda, specs);
                    while t0 + next_index as f64 * ctrl.record_every <= t {
                        next_index += 1;
                    }
                }
            }
            Err(StepFailure::Denominator(_)) => break Termination::DenominatorVanished,
            Err(StepFailure::Underflow) => {
                return Err(IntegratorError::StepSizeUnderflow {
                    t,
                    h_min: ctrl.h_min,
                })
            }
        }
    };

    if record.end_time() < t {
        record.push(e.with_values(&y, t)?, lambda, specs);
    }
    record.termination = termination;
    Ok(record)
}

/// Piecewise-linear function of time through `(times[k], values[k])`,
/// held constant outside the sampled range.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, IntegratorError> {
        if times.is_empty()
            || times.len() != values.len()
            || times.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(IntegratorError::InvalidInterpolant);
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        // first index with times[i] > t
        let i = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
    }
}

/// A scalar solution sampled at given times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarTrajectory {
    pub fn last_value(&self) -> f64 {
        *self.values.last().expect("trajectory is non-empty")
    }
}

/// Adaptive integration of an autonomous scalar field `ẏ = v(y)` from
/// `(times[0], y0)`, reporting the solution at each of `times`.
pub(crate) fn integrate_scalar_at<V>(
    v: V,
    y0: f64,
    times: &[f64],
    ctrl: &StepControl,
) -> Result<Vec<f64>, IntegratorError>
where
    V: Fn(f64, f64) -> f64,
{
    let mut field = |t: f64, y: &[f64], out: &mut [f64]| {
        out[0] = v(t, y[0]);
        Ok(0.0)
    };
    let tol = Tolerances::from(ctrl);
    let mut ws = Workspace::new(1);
    let mut y = [y0];
    let mut k1 = [0.0];
    let mut out = Vec::with_capacity(times.len());
    let Some(&start) = times.first() else {
        return Ok(out);
    };
    let mut t = start;
    field.eval(t, &y, &mut k1)?;
    out.push(y0);
    let mut h = ctrl.h_init;
    for &target in &times[1..] {
        while t < target {
            let landing = h >= target - t;
            let h_try = if landing { target - t } else { h };
            let acc = adaptive_step(tol, &mut field, t, &mut y, &mut k1, h_try, &mut ws)
                .map_err(|f| failure_to_error(f, t, ctrl.h_min))?;
            if landing && acc.h_used == h_try {
                t = target;
                h = acc.h_next.max(h.min(tol.h_max));
            } else {
                t += acc.h_used;
                h = acc.h_next;
            }
        }
        out.push(y[0]);
    }
    Ok(out)
}

/// Solves `Ẏ = f(Y) − λ(t) g(Y)`, `Y(t₀) = s`, with λ read from `lambda`,
/// reporting `Y` at every knot of the interpolant.
pub fn solve_characteristic(
    s: f64,
    lambda: &PiecewiseLinear,
    ctrl: &StepControl,
) -> Result<ScalarTrajectory, IntegratorError> {
    let times = lambda.times().to_vec();
    let values = integrate_scalar_at(
        |t, y| dynamics::velocity(y, lambda.eval(t)),
        s,
        &times,
        ctrl,
    )?;
    Ok(ScalarTrajectory { times, values })
}

/// Fixed-step classical RK4 with λ recomputed at every stage.
///
/// The step is `t_end / n` with `n = ⌈t_end / h_fixed⌉`, so the run lands
/// on `t_end` exactly. Samples are recorded every `record_every` time units
/// (rounded to a whole number of steps) and at `t_end`.
pub fn reference_evolve(
    e: &Ensemble,
    h_fixed: f64,
    t_end: f64,
    record_every: f64,
) -> Result<TrajectoryRecord, IntegratorError> {
    reference_evolve_guarded(e, h_fixed, t_end, record_every, DEFAULT_DENOMINATOR_GUARD)
}

/// [`reference_evolve`] with an explicit denominator guard.
pub fn reference_evolve_guarded(
    e: &Ensemble,
    h_fixed: f64,
    t_end: f64,
    record_every: f64,
    guard: f64,
) -> Result<TrajectoryRecord, IntegratorError> {
    if !(h_fixed > 0.0 && t_end > 0.0 && record_every > 0.0) {
        return Err(IntegratorError::InvalidControl(
            "h_fixed, t_end and record_every must be positive".into(),
        ));
    }
    let steps = ((t_end / h_fixed) - 1e-9).ceil().max(1.0) as u64;
    let h = t_end / steps as f64;
    let stride = ((record_every / h).round() as u64).max(1);

    let weights: Vec<f64> = e.weights().collect();
    let dm = e.domain_measure();
    let n = e.len();
    let rhs = |y: &[f64], out: &mut [f64]| dynamics::rhs_into(&weights, y, guard, dm, out);

    let mut record = TrajectoryRecord::new(&[]);
    let t0 = e.time();
    let mut y: Vec<f64> = e.values().collect();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];

    let mut lambda = rhs(&y, &mut k1)?;
    record.extrema.observe(&y, lambda);
    record.push(e.clone(), lambda, &[]);

    for step in 1..=steps {
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(&stage, &mut k2)?;
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(&stage, &mut k3)?;
        for i in 0..n {
            stage[i] = y[i] + h * k3[i];
        }
        rhs(&stage, &mut k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        lambda = rhs(&y, &mut k1)?;
        record.extrema.observe(&y, lambda);
        record.extrema.accepted_steps += 1;
        if step % stride == 0 || step == steps {
            let t = if step == steps {
                t0 + t_end
            } else {
                t0 + step as f64 * h
            };
            record.push(e.with_values(&y, t)?, lambda, &[]);
        }
    }
    record.termination = Termination::TMaxReached;
    Ok(record)
}
