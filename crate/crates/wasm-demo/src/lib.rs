//! Browser bindings for a few svsa-core runs. Every export returns a flat
//! `Float64Array`; the page in `www/` draws it on a canvas.

use svsa_core::dynamics::{inward_check, InwardSetPair, Perturbation, SelectionStrategy, SetValuedMap};
use svsa_core::mdp::{run_avi, AviConfig, ErrorInjector, Mdp};
use svsa_core::norms::NormSpec;
use svsa_core::saa::{run_projective, run_saa, NoiseModel, SaaSettings, StepSchedule};
use svsa_core::Vector;
use wasm_bindgen::prelude::*;

const DISCOUNTED_MDP: &str = include_str!("../../harness/data/mdp_discounted3.json");

/// Most points handed back for plotting.
const MAX_POINTS: usize = 600;

fn field(rate: f64, radius: f64) -> svsa_core::Result<SetValuedMap> {
    SetValuedMap::scaled_identity(2, -rate).with_perturbation(Perturbation::ball(radius, NormSpec::Euclidean))
}

fn stride(len: usize) -> usize {
    len.div_ceil(MAX_POINTS).max(1)
}

/// Iterates of `x_{n+1} = x_n + a(n)[y_n + M_{n+1}]` for
/// `H(x) = −rate·x + B(0, radius)` from `(3, −2)`, as `[x₀, y₀, x₁, y₁, …]`.
/// With `r_c > 0` the run is the projective variant over centred balls of
/// radii `r_b < r_c`, and projected iterates are marked by a trailing
/// list of their (thinned) indices after a `NaN` separator.
pub fn trajectory(
    rate: f64,
    radius: f64,
    noise: f64,
    seed: u64,
    n_iter: usize,
    r_b: f64,
    r_c: f64,
) -> svsa_core::Result<Vec<f64>> {
    let map = field(rate, radius)?;
    let x0 = Vector::from_column_slice(&[3.0, -2.0]);
    let settings = SaaSettings {
        schedule: StepSchedule::harmonic_shifted(1.0, 1.0),
        noise: NoiseModel::bounded(noise),
        seed,
        n_iter,
    };
    let strategy = SelectionStrategy::Uniform { seed };
    let trace = if r_c > 0.0 {
        let pair = InwardSetPair::balls(Vector::zeros(2), r_b, r_c, NormSpec::Euclidean)?;
        run_projective(&map, &x0, &settings, &strategy, &pair)?
    } else {
        run_saa(&map, &x0, &settings, &strategy)?
    };
    let step = stride(trace.x.len());
    let mut out: Vec<f64> = trace.x.iter().step_by(step).flat_map(|x| [x[0], x[1]]).collect();
    if r_c > 0.0 {
        out.push(f64::NAN);
        out.extend(trace.projection_events().into_iter().map(|n| (n / step) as f64));
    }
    Ok(out)
}

/// Approximate value iteration on a three-state discounted MDP with errors of
/// size `epsilon` in the max-norm. Returns `[ε/(1−γ), d₀, d₁, …]` where
/// `d_n = ‖J_n − J*‖_∞` along the run.
pub fn avi_curve(epsilon: f64, noise: f64, seed: u64, n_iter: usize) -> svsa_core::Result<Vec<f64>> {
    let mdp = Mdp::from_json(DISCOUNTED_MDP)?;
    let config = AviConfig {
        epsilon,
        error_norm: NormSpec::max(3),
        nu: NormSpec::max(3),
        alpha: None,
        injector: ErrorInjector::Uniform,
        schedule: StepSchedule::harmonic_shifted(10.0, 9.0),
        noise: NoiseModel::bounded(noise),
        seed,
        n_iter,
        tail_fraction: 0.5,
        j0: None,
        certificate_pairs: 200,
    };
    let result = run_avi(&mdp, &config)?;
    let xs = &result.trace().x;
    let mut out = vec![epsilon / (1.0 - mdp.gamma())];
    out.extend(xs.iter().step_by(stride(xs.len())).map(|j| (j - &result.j_star).amax()));
    Ok(out)
}

/// Whether Euler trajectories of `H(x) = −rate·x + B(0, radius)` started on
/// the sphere of radius `r_c` stay inside it. Returns `[holds, t, x, y]`,
/// with the exit time and point of a counterexample when there is one.
pub fn inward(rate: f64, radius: f64, r_b: f64, r_c: f64) -> svsa_core::Result<Vec<f64>> {
    let map = field(rate, radius)?;
    let pair = InwardSetPair::balls(Vector::zeros(2), r_b, r_c, NormSpec::Euclidean)?;
    let report = inward_check(&pair, &map, 48, 0.01, 5.0)?;
    Ok(match report.counterexample {
        Some(c) => vec![0.0, c.time, c.state[0], c.state[1]],
        None => vec![1.0, f64::NAN, f64::NAN, f64::NAN],
    })
}

fn js(r: svsa_core::Result<Vec<f64>>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = saaTrajectory)]
#[allow(clippy::too_many_arguments)]
pub fn saa_trajectory(
    rate: f64,
    radius: f64,
    noise: f64,
    seed: u32,
    n_iter: u32,
    r_b: f64,
    r_c: f64,
) -> Result<Vec<f64>, JsError> {
    js(trajectory(rate, radius, noise, seed as u64, n_iter as usize, r_b, r_c))
}

#[wasm_bindgen(js_name = aviCurve)]
pub fn avi_curve_js(epsilon: f64, noise: f64, seed: u32, n_iter: u32) -> Result<Vec<f64>, JsError> {
    js(avi_curve(epsilon, noise, seed as u64, n_iter as usize))
}

#[wasm_bindgen(js_name = inwardCheck)]
pub fn inward_js(rate: f64, radius: f64, r_b: f64, r_c: f64) -> Result<Vec<f64>, JsError> {
    js(inward(rate, radius, r_b, r_c))
}
