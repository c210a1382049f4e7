//! Simulation and long-time verification for the nonlocal bistable equation
//!
//! ```text
//! u_t = u²(1 − u) − λ(t) u(1 − u),   λ(t) = ∫u²(1 − u) dx / ∫u(1 − u) dx.
//! ```
//!
//! The state is an [`Ensemble`] of weighted atoms, one per distinct value of
//! `u₀`; each atom follows the scalar characteristic ODE and the atoms are
//! coupled only through λ.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod integrator;
pub mod measure;
pub mod output;
pub mod scenario;
pub mod sum;

pub use analysis::{
    check_h2_uniqueness, check_monotone, classify_terminal, estimate_limits, lyapunov_value,
    predict_omega_limit, sandwich_check, Bucket, LyapunovCatalog, LyapunovSpec, OmegaKind,
    OmegaPrediction,
};
pub use dynamics::{lambda_of, operator_l, reaction_f, reaction_g, rhs, RhsVector};
pub use integrator::{
    evolve, evolve_exploratory, reference_evolve, solve_characteristic, step, PiecewiseLinear,
    StepControl, Termination, TrajectoryRecord,
};
pub use measure::{
    build_ensemble, mass, validate_hypothesis, Atom, Ensemble, Hypothesis, HypothesisClass,
    InitialDatumSpec,
};
