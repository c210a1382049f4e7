//! Reaction terms, the nonlocal coefficient and the right-hand side.
//!
//! With `f(z) = z²(1 − z)` and `g(z) = z(1 − z)` one has `f = z·g`, so
//! `f(u) − λ g(u) = g(u)(u − λ) = u(1 − u)(u − λ)`; the factored form is the
//! one evaluated here because it is exactly zero at `u ∈ {0, 1}` and `u = λ`.

use thiserror::Error;

use crate::measure::Ensemble;
use crate::sum::CompensatedSum;

/// Default denominator guard, relative to `|Ω|`.
pub const DEFAULT_DENOMINATOR_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DynamicsError {
    #[error("∫g(u) = {denominator:e} is below the guard {threshold:e}")]
    DenominatorVanishes { denominator: f64, threshold: f64 },
}

/// `f(z) = z²(1 − z)`.
#[inline]
pub fn reaction_f(z: f64) -> f64 {
    z * z * (1.0 - z)
}

/// `g(z) = z(1 − z)`.
#[inline]
pub fn reaction_g(z: f64) -> f64 {
    z * (1.0 - z)
}

/// Numerator and denominator of `λ`: `(Σ wᵢ f(yᵢ), Σ wᵢ g(yᵢ))`.
pub fn lambda_parts(e: &Ensemble) -> (f64, f64) {
    lambda_parts_of(e.weights(), e.values())
}

fn lambda_parts_of(
    weights: impl Iterator<Item = f64>,
    values: impl Iterator<Item = f64>,
) -> (f64, f64) {
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    for (w, y) in weights.zip(values) {
        num += w * reaction_f(y);
        den += w * reaction_g(y);
    }
    (num.value(), den.value())
}

fn checked_ratio(num: f64, den: f64, guard: f64, domain_measure: f64) -> Result<f64, DynamicsError> {
    let threshold = guard * domain_measure;
    // also rejects NaN
    if !(den.abs() >= threshold) || den == 0.0 {
        return Err(DynamicsError::DenominatorVanishes {
            denominator: den,
            threshold,
        });
    }
    Ok(num / den)
}

/// `λ = ∫f(u) / ∫g(u)`.
pub fn lambda_of(e: &Ensemble, guard: f64) -> Result<f64, DynamicsError> {
    let (num, den) = lambda_parts(e);
    checked_ratio(num, den, guard, e.domain_measure())
}

/// `λ` for raw per-atom values sharing the given weights.
pub(crate) fn lambda_from_slices(
    weights: &[f64],
    values: &[f64],
    guard: f64,
    domain_measure: f64,
) -> Result<f64, DynamicsError> {
    let (num, den) = lambda_parts_of(weights.iter().copied(), values.iter().copied());
    checked_ratio(num, den, guard, domain_measure)
}

/// Per-atom time derivatives, aligned with the ensemble's atom order.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsVector(pub Vec<f64>);

impl RhsVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Characteristic velocity `g(y)(y − λ)` of a single value.
#[inline]
pub fn velocity(y: f64, lambda: f64) -> f64 {
    reaction_g(y) * (y - lambda)
}

pub fn rhs(e: &Ensemble, guard: f64) -> Result<RhsVector, DynamicsError> {
    let lambda = lambda_of(e, guard)?;
    Ok(RhsVector(e.values().map(|y| velocity(y, lambda)).collect()))
}

/// Writes the right-hand side for `values` into `out` and returns `λ`.
pub(crate) fn rhs_into(
    weights: &[f64],
    values: &[f64],
    guard: f64,
    domain_measure: f64,
    out: &mut [f64],
) -> Result<f64, DynamicsError> {
    let lambda = lambda_from_slices(weights, values, guard, domain_measure)?;
    for (o, &y) in out.iter_mut().zip(values) {
        *o = velocity(y, lambda);
    }
    Ok(lambda)
}

/// Residual `ż − f(z) + λ g(z)` of the characteristic equation.
pub fn operator_l(z: f64, zdot: f64, lam: f64) -> f64 {
    zdot - reaction_f(z) + lam * reaction_g(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_ensemble, InitialDatumSpec};

    fn ens(pairs: &[(f64, f64)]) -> Ensemble {
        build_ensemble(&InitialDatumSpec::Atoms(pairs.to_vec())).unwrap()
    }

    #[test]
    fn reaction_values() {
        assert_eq!(reaction_f(0.0), 0.0);
        assert_eq!(reaction_f(1.0), 0.0);
        assert_eq!(reaction_f(2.0), -4.0);
        assert_eq!(reaction_g(0.0), 0.0);
        assert_eq!(reaction_g(0.5), 0.25);
        assert_eq!(reaction_g(2.0), -2.0);
    }

    #[test]
    fn lambda_examples() {
        let g = DEFAULT_DENOMINATOR_GUARD;
        assert_eq!(lambda_of(&ens(&[(2.0, 1.0)]), g).unwrap(), 2.0);
        assert_eq!(lambda_of(&ens(&[(1.0, 0.5), (2.0, 0.5)]), g).unwrap(), 2.0);
        let (num, den) = lambda_parts(&ens(&[(0.25, 0.5), (0.75, 0.5)]));
        // weighted sums; the unweighted ones are 0.1875 and 0.375
        assert_eq!((num, den), (0.09375, 0.1875));
        assert_eq!(lambda_of(&ens(&[(0.25, 0.5), (0.75, 0.5)]), g).unwrap(), 0.5);
        assert!(matches!(
            lambda_of(&ens(&[(1.0, 1.0)]), g),
            Err(DynamicsError::DenominatorVanishes { .. })
        ));
    }

    #[test]
    fn guard_scales_with_domain_measure() {
        // |∫g| = 1e-12 · 0.25 on a domain of measure 1
        let e = ens(&[(1e-12, 0.25), (1.0, 0.75)]);
        assert!(lambda_of(&e, 1e-12).is_err());
        assert!(lambda_of(&e, 1e-13).is_ok());
    }

    #[test]
    fn rhs_examples() {
        let g = DEFAULT_DENOMINATOR_GUARD;
        assert_eq!(rhs(&ens(&[(2.0, 1.0)]), g).unwrap().0, vec![0.0]);
        assert_eq!(
            rhs(&ens(&[(1.0, 0.5), (2.0, 0.5)]), g).unwrap().0,
            vec![0.0, 0.0]
        );
        let r = rhs(&ens(&[(0.25, 0.5), (0.75, 0.5)]), g).unwrap().0;
        assert_eq!(r, vec![-0.046875, 0.046875]);
    }

    #[test]
    fn factored_form_matches_unfactored() {
        // f − λg expanded: z²(1 − z) − λ z(1 − z)
        for &(z, lam) in &[(0.3, 0.7), (2.5, 1.2), (-1.5, -0.25), (0.0, 3.0), (1.0, -2.0)] {
            let unfactored = reaction_f(z) - lam * reaction_g(z);
            assert!((velocity(z, lam) - unfactored).abs() <= 1e-14 * (1.0 + unfactored.abs()));
        }
    }

    #[test]
    fn operator_l_examples() {
        assert_eq!(operator_l(1.0, 0.0, 17.0), 0.0);
        assert_eq!(operator_l(0.0, 0.0, 0.5), 0.0);
        assert_eq!(operator_l(2.0, 0.0, 2.0), 0.0);
        assert_eq!(operator_l(0.5, 0.0, 0.25), -0.0625);
    }

    #[test]
    fn rhs_propagates_denominator_error() {
        assert!(rhs(&ens(&[(0.0, 0.5), (1.0, 0.5)]), 1e-12).is_err());
    }
}
