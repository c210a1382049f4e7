#![allow(dead_code)]

use std::path::PathBuf;

use nonlocal_flow::config::{parse_config, ScenarioConfig};
use nonlocal_flow::{build_ensemble, Ensemble, InitialDatumSpec};

pub fn scenarios_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/acceptance.json")
}

pub fn shipped() -> Vec<ScenarioConfig> {
    let text = std::fs::read_to_string(scenarios_path()).expect("shipped scenarios");
    parse_config(&text).expect("shipped scenarios parse")
}

pub fn shipped_named(name: &str) -> ScenarioConfig {
    shipped()
        .into_iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no shipped scenario {name}"))
}

pub fn atoms(pairs: &[(f64, f64)]) -> Ensemble {
    build_ensemble(&InitialDatumSpec::Atoms(pairs.to_vec())).unwrap()
}

/// Plain RK4 for `ẏ = v(t, y)` on a uniform grid, independent of the
/// library's integrators.
pub fn rk4_scalar(v: impl Fn(f64, f64) -> f64, y0: f64, t0: f64, t1: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = v(t, y);
        let k2 = v(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = v(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = v(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// `λ` from raw pairs with naive sums.
pub fn naive_lambda(pairs: &[(f64, f64)]) -> f64 {
    let num: f64 = pairs.iter().map(|&(v, w)| w * v * v * (1.0 - v)).sum();
    let den: f64 = pairs.iter().map(|&(v, w)| w * v * (1.0 - v)).sum();
    num / den
}
