//! Finite weighted-atom representation of the state.
//!
//! The equation has no spatial operator, so `u(·, t)` is determined by the
//! pushforward of Lebesgue measure under `u₀` together with the scalar
//! characteristic flow. An [`Ensemble`] stores that pushforward as a list of
//! atoms `(value, weight)`; each atom follows its own characteristic and the
//! atoms couple only through the nonlocal coefficient.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::sum::compensated_sum;

/// Relative tolerance on `Σ weights == domain_measure`.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("initial datum has no atoms or pieces")]
    EmptySpec,
    #[error("atom {index} has non-positive weight {weight}")]
    NonpositiveWeight { index: usize, weight: f64 },
    #[error("atom {index} has non-finite value {value}")]
    NonfiniteValue { index: usize, value: f64 },
    #[error("invalid sampler: {0}")]
    InvalidSampler(String),
    #[error("total weight {total} does not match domain measure {domain_measure}")]
    WeightMismatch { total: f64, domain_measure: f64 },
    #[error("atom count changed from {expected} to {found}")]
    AtomCountMismatch { expected: usize, found: usize },
    #[error("no hypothesis class applies: {0}")]
    NoHypothesis(String),
}

/// One value of `u` carried with the measure of its level set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    value: f64,
    weight: f64,
}

impl Atom {
    pub fn new(value: f64, weight: f64) -> Result<Self, MeasureError> {
        if !value.is_finite() {
            return Err(MeasureError::NonfiniteValue { index: 0, value });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(MeasureError::NonpositiveWeight { index: 0, weight });
        }
        Ok(Self { value, weight })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// The full state: atoms in a fixed order, the current time and `|Ω|`.
///
/// Atom order is set at construction and every later ensemble derived from
/// this one keeps it, so reductions are reproducible bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    atoms: Vec<Atom>,
    time: f64,
    domain_measure: f64,
}

impl Ensemble {
    /// Builds an ensemble at `time` whose domain measure is the total weight.
    pub fn new(atoms: Vec<Atom>, time: f64) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::EmptySpec);
        }
        let domain_measure = compensated_sum(atoms.iter().map(Atom::weight));
        Ok(Self {
            atoms,
            time,
            domain_measure,
        })
    }

    /// Builds an ensemble with an explicitly stated `|Ω|`, which must match the
    /// total weight to within [`WEIGHT_TOLERANCE`].
    pub fn with_domain_measure(
        atoms: Vec<Atom>,
        time: f64,
        domain_measure: f64,
    ) -> Result<Self, MeasureError> {
        let e = Self::new(atoms, time)?;
        if (e.domain_measure - domain_measure).abs() > WEIGHT_TOLERANCE * domain_measure.abs() {
            return Err(MeasureError::WeightMismatch {
                total: e.domain_measure,
                domain_measure,
            });
        }
        Ok(Self {
            domain_measure,
            ..e
        })
    }

    /// Same weights, new values and time.
    pub fn with_values(&self, values: &[f64], time: f64) -> Result<Self, MeasureError> {
        if values.len() != self.atoms.len() {
            return Err(MeasureError::AtomCountMismatch {
                expected: self.atoms.len(),
                found: values.len(),
            });
        }
        let mut atoms = Vec::with_capacity(values.len());
        for (index, (atom, &value)) in self.atoms.iter().zip(values).enumerate() {
            if !value.is_finite() {
                return Err(MeasureError::NonfiniteValue { index, value });
            }
            atoms.push(Atom {
                value,
                weight: atom.weight,
            });
        }
        Ok(Self {
            atoms,
            time,
            domain_measure: self.domain_measure,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain_measure
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(Atom::value)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(Atom::weight)
    }

    /// `Σ wᵢ h(yᵢ)` in atom order with compensated summation.
    pub fn integrate<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        compensated_sum(self.atoms.iter().map(|a| a.weight * h(a.value)))
    }

    /// Measure of the set of atoms whose value satisfies `pred`.
    pub fn measure_where<P: Fn(f64) -> bool>(&self, pred: P) -> f64 {
        compensated_sum(
            self.atoms
                .iter()
                .filter(|a| pred(a.value))
                .map(Atom::weight),
        )
    }

    pub fn min_value(&self) -> f64 {
        self.values().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `∫_Ω u dx`.
pub fn mass(e: &Ensemble) -> f64 {
    e.integrate(|y| y)
}

/// A closed-form profile `x ↦ u₀(x)` on a reference interval.
#[derive(Clone)]
pub struct Profile(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl Profile {
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Profile(..)")
    }
}

/// Midpoint sampling of a profile on `[lo, hi]` with `samples` equal cells.
///
/// `domain_measure` defaults to `hi - lo`.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub profile: Profile,
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub domain_measure: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum InitialDatumSpec {
    /// `(value, weight)` pairs; equal values are merged.
    Atoms(Vec<(f64, f64)>),
    /// Piecewise-constant `u₀` given as `(value, measure)` pieces; equal values
    /// are merged.
    Pieces(Vec<(f64, f64)>),
    /// Sampled closed-form `u₀`; never merged, so atom `k` is cell `k`.
    Sampler(Sampler),
}

impl InitialDatumSpec {
    /// True when the datum approximates a `u₀` without level sets of positive
    /// measure inside `(0, 1)`.
    pub fn is_sampled(&self) -> bool {
        matches!(self, InitialDatumSpec::Sampler(_))
    }
}

pub fn build_ensemble(spec: &InitialDatumSpec) -> Result<Ensemble, MeasureError> {
    match spec {
        InitialDatumSpec::Atoms(pairs) | InitialDatumSpec::Pieces(pairs) => {
            build_merged(pairs)
        }
        InitialDatumSpec::Sampler(s) => build_sampled(s),
    }
}

fn build_merged(pairs: &[(f64, f64)]) -> Result<Ensemble, MeasureError> {
    if pairs.is_empty() {
        return Err(MeasureError::EmptySpec);
    }
    let mut atoms: Vec<Atom> = Vec::with_capacity(pairs.len());
    for (index, &(value, weight)) in pairs.iter().enumerate() {
        let atom = Atom::new(value, weight).map_err(|e| with_index(e, index))?;
        // exact equality only
        match atoms.iter_mut().find(|a| a.value == value) {
            Some(existing) => existing.weight += atom.weight,
            None => atoms.push(atom),
        }
    }
    Ensemble::new(atoms, 0.0)
}

fn build_sampled(s: &Sampler) -> Result<Ensemble, MeasureError> {
    if s.samples == 0 {
        return Err(MeasureError::InvalidSampler("sample count must be at least 1".into()));
    }
    if !(s.lo.is_finite() && s.hi.is_finite() && s.lo < s.hi) {
        return Err(MeasureError::InvalidSampler(format!(
            "reference interval [{}, {}] is empty or not finite",
            s.lo, s.hi
        )));
    }
    let domain_measure = s.domain_measure.unwrap_or(s.hi - s.lo);
    if !(domain_measure > 0.0 && domain_measure.is_finite()) {
        return Err(MeasureError::InvalidSampler(format!(
            "domain measure {domain_measure} must be positive"
        )));
    }
    let n = s.samples as f64;
    let dx = (s.hi - s.lo) / n;
    let weight = domain_measure / n;
    let mut atoms = Vec::with_capacity(s.samples);
    for k in 0..s.samples {
        let x = s.lo + (k as f64 + 0.5) * dx;
        let value = s.profile.eval(x);
        atoms.push(Atom::new(value, weight).map_err(|e| with_index(e, k))?);
    }
    Ensemble::with_domain_measure(atoms, 0.0, domain_measure)
}

fn with_index(e: MeasureError, index: usize) -> MeasureError {
    match e {
        MeasureError::NonpositiveWeight { weight, .. } => {
            MeasureError::NonpositiveWeight { index, weight }
        }
        MeasureError::NonfiniteValue { value, .. } => MeasureError::NonfiniteValue { index, value },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Hypothesis {
    /// `u₀ ≥ 1`, `u₀ ≢ 1`.
    H1,
    /// `0 ≤ u₀ ≤ 1`, `u₀(1 − u₀) ≢ 0`.
    H2,
    /// `u₀ ≤ 0`, `u₀ ≢ 0`.
    H3,
}

impl Hypothesis {
    /// `(−1)^{i+1}` for class `i`.
    pub fn lyapunov_sign(self) -> f64 {
        match self {
            Hypothesis::H1 | Hypothesis::H3 => 1.0,
            Hypothesis::H2 => -1.0,
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Hypothesis::H1 => "H1",
            Hypothesis::H2 => "H2",
            Hypothesis::H3 => "H3",
        };
        f.write_str(s)
    }
}

/// A hypothesis class together with its invariant interval `I_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisClass {
    pub tag: Hypothesis,
    pub interval_lo: f64,
    pub interval_hi: f64,
}

impl HypothesisClass {
    /// Whether `x` lies in `I_i` inflated by `slack` on both sides.
    pub fn contains(&self, x: f64, slack: f64) -> bool {
        x >= self.interval_lo - slack && x <= self.interval_hi + slack
    }
}

pub fn validate_hypothesis(e: &Ensemble) -> Result<HypothesisClass, MeasureError> {
    let lo = e.min_value();
    let hi = e.max_value();
    if lo >= 1.0 {
        if hi > 1.0 {
            return Ok(HypothesisClass {
                tag: Hypothesis::H1,
                interval_lo: 1.0,
                interval_hi: hi,
            });
        }
        return Err(MeasureError::NoHypothesis(
            "u0 >= 1 everywhere but u0 is identically 1".into(),
        ));
    }
    if lo >= 0.0 && hi <= 1.0 {
        if e.values().any(|v| v > 0.0 && v < 1.0) {
            return Ok(HypothesisClass {
                tag: Hypothesis::H2,
                interval_lo: 0.0,
                interval_hi: 1.0,
            });
        }
        return Err(MeasureError::NoHypothesis(
            "0 <= u0 <= 1 everywhere but u0(1 - u0) is identically 0".into(),
        ));
    }
    if hi <= 0.0 {
        if lo < 0.0 {
            return Ok(HypothesisClass {
                tag: Hypothesis::H3,
                interval_lo: lo,
                interval_hi: 0.0,
            });
        }
        return Err(MeasureError::NoHypothesis(
            "u0 <= 0 everywhere but u0 is identically 0".into(),
        ));
    }
    Err(MeasureError::NoHypothesis(format!(
        "values span [{lo}, {hi}], which lies in none of [1, ∞), [0, 1], (−∞, 0]"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explicit(pairs: &[(f64, f64)]) -> Ensemble {
        build_ensemble(&InitialDatumSpec::Atoms(pairs.to_vec())).unwrap()
    }

    fn pairs(e: &Ensemble) -> Vec<(f64, f64)> {
        e.atoms().iter().map(|a| (a.value(), a.weight())).collect()
    }

    #[test]
    fn explicit_list() {
        let e = explicit(&[(2.0, 0.5), (1.0, 0.5)]);
        assert_eq!(e.len(), 2);
        assert_eq!(e.domain_measure(), 1.0);
        assert_eq!(e.time(), 0.0);
        assert_eq!(pairs(&e), vec![(2.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn midpoint_sampler() {
        let spec = InitialDatumSpec::Sampler(Sampler {
            profile: Profile::new(|x| x),
            lo: 0.0,
            hi: 1.0,
            samples: 2,
            domain_measure: None,
        });
        let e = build_ensemble(&spec).unwrap();
        assert_eq!(pairs(&e), vec![(0.25, 0.5), (0.75, 0.5)]);
    }

    #[test]
    fn sampler_is_never_merged() {
        let spec = InitialDatumSpec::Sampler(Sampler {
            profile: Profile::new(|_| 0.5),
            lo: 0.0,
            hi: 2.0,
            samples: 4,
            domain_measure: Some(1.0),
        });
        let e = build_ensemble(&spec).unwrap();
        assert_eq!(pairs(&e), vec![(0.5, 0.25); 4]);
        assert_eq!(e.domain_measure(), 1.0);
    }

    #[test]
    fn equal_values_merge() {
        let e = explicit(&[(1.0, 0.3), (1.0, 0.2)]);
        assert_eq!(pairs(&e), vec![(1.0, 0.5)]);
    }

    #[test]
    fn merge_keeps_first_occurrence_order() {
        let e = explicit(&[(3.0, 0.25), (2.0, 0.25), (3.0, 0.5)]);
        assert_eq!(pairs(&e), vec![(3.0, 0.75), (2.0, 0.25)]);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            build_ensemble(&InitialDatumSpec::Atoms(vec![])),
            Err(MeasureError::EmptySpec)
        );
        assert_eq!(
            build_ensemble(&InitialDatumSpec::Pieces(vec![(1.0, 0.5), (2.0, -1.0)])),
            Err(MeasureError::NonpositiveWeight {
                index: 1,
                weight: -1.0
            })
        );
        assert!(matches!(
            build_ensemble(&InitialDatumSpec::Atoms(vec![(f64::NAN, 1.0)])),
            Err(MeasureError::NonfiniteValue { index: 0, .. })
        ));
        let zero_samples = InitialDatumSpec::Sampler(Sampler {
            profile: Profile::new(|x| x),
            lo: 0.0,
            hi: 1.0,
            samples: 0,
            domain_measure: None,
        });
        assert!(matches!(
            build_ensemble(&zero_samples),
            Err(MeasureError::InvalidSampler(_))
        ));
    }

    #[test]
    fn hypothesis_classes() {
        let h1 = validate_hypothesis(&explicit(&[(1.0, 0.5), (2.0, 0.5)])).unwrap();
        assert_eq!(h1.tag, Hypothesis::H1);
        assert_eq!((h1.interval_lo, h1.interval_hi), (1.0, 2.0));

        let h2 = validate_hypothesis(&explicit(&[(0.0, 0.5), (0.3, 0.5)])).unwrap();
        assert_eq!(h2.tag, Hypothesis::H2);
        assert_eq!((h2.interval_lo, h2.interval_hi), (0.0, 1.0));

        let h3 = validate_hypothesis(&explicit(&[(-1.0, 0.5), (0.0, 0.5)])).unwrap();
        assert_eq!(h3.tag, Hypothesis::H3);
        assert_eq!((h3.interval_lo, h3.interval_hi), (-1.0, 0.0));
    }

    #[test]
    fn hypothesis_rejections() {
        for bad in [
            vec![(1.0, 1.0)],
            vec![(-1.0, 0.5), (0.5, 0.5)],
            vec![(0.0, 0.5), (1.0, 0.5)],
            vec![(0.0, 1.0)],
            vec![(0.5, 0.5), (1.5, 0.5)],
        ] {
            let e = explicit(&bad);
            assert!(
                matches!(validate_hypothesis(&e), Err(MeasureError::NoHypothesis(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn mass_examples() {
        assert_eq!(mass(&explicit(&[(2.0, 0.5), (1.0, 0.5)])), 1.5);
        assert_eq!(mass(&explicit(&[(0.0, 1.0)])), 0.0);
        assert_eq!(mass(&explicit(&[(-1.0, 0.5), (-0.5, 0.5)])), -0.75);
    }

    #[test]
    fn with_values_keeps_weights_and_order() {
        let e = explicit(&[(2.0, 0.25), (1.5, 0.75)]);
        let e2 = e.with_values(&[1.9, 1.6], 0.5).unwrap();
        assert_eq!(pairs(&e2), vec![(1.9, 0.25), (1.6, 0.75)]);
        assert_eq!(e2.time(), 0.5);
        assert_eq!(e2.domain_measure(), e.domain_measure());
        assert!(e.with_values(&[1.0], 0.5).is_err());
    }

    #[test]
    fn stated_domain_measure_must_match() {
        let atoms = vec![Atom::new(1.0, 0.5).unwrap()];
        assert!(Ensemble::with_domain_measure(atoms.clone(), 0.0, 0.5).is_ok());
        assert!(matches!(
            Ensemble::with_domain_measure(atoms, 0.0, 1.0),
            Err(MeasureError::WeightMismatch { .. })
        ));
    }
}
