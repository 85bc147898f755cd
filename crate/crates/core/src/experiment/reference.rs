//! Shipped reference configurations, embedded from `configs/`.

use super::{CalibrateRequest, ExperimentConfig};

fn parse(name: &str, text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).unwrap_or_else(|e| panic!("embedded config {name} is invalid: {e}"))
}

/// Quadratic, projected SGD, `d=5, n=100, m=10, b=8, η=0.1, T=200, K=50`.
pub fn psgd_strongly_convex() -> ExperimentConfig {
    parse("psgd_strongly_convex", include_str!("../../configs/psgd_strongly_convex.json"))
}

/// Logistic, projected SGD, `T=100, K=60`.
pub fn psgd_convex() -> ExperimentConfig {
    parse("psgd_convex", include_str!("../../configs/psgd_convex.json"))
}

pub fn psgd_nonconvex() -> ExperimentConfig {
    parse("psgd_nonconvex", include_str!("../../configs/psgd_nonconvex.json"))
}

pub fn sgd_r2d_ridge() -> ExperimentConfig {
    parse("sgd_r2d_ridge", include_str!("../../configs/sgd_r2d_ridge.json"))
}

/// Quadratic, unprojected SGD with descent-based unlearning; `T` from the horizon.
pub fn sgd_d2d_quadratic() -> ExperimentConfig {
    parse("sgd_d2d_quadratic", include_str!("../../configs/sgd_d2d_quadratic.json"))
}

/// `T` sweep at a fixed sensitivity target.
pub fn k_saturation_sweep() -> ExperimentConfig {
    parse("k_saturation_sweep", include_str!("../../configs/k_saturation_sweep.json"))
}

/// Explicit-constant convex request: `Σ = 0.04`.
pub fn calibrate_convex() -> CalibrateRequest {
    serde_json::from_str(include_str!("../../configs/calibrate_convex.json")).expect("embedded calibrate request is valid")
}

/// Every experiment config that runs trajectories.
pub fn all() -> Vec<(&'static str, ExperimentConfig)> {
    vec![
        ("psgd_strongly_convex", psgd_strongly_convex()),
        ("psgd_convex", psgd_convex()),
        ("psgd_nonconvex", psgd_nonconvex()),
        ("sgd_r2d_ridge", sgd_r2d_ridge()),
        ("sgd_d2d_quadratic", sgd_d2d_quadratic()),
    ]
}
