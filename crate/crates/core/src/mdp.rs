//! Tabular MDPs (discounted or stochastic shortest path), the Bellman
//! operator, exact value iteration and stochastic approximate value
//! iteration `J_{n+1} = J_n + a(n)[TJ_n − J_n + ε_n + M_{n+1}]`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Perturbation, SelectionStrategy, SetValuedMap};
use crate::norms::{pnorm_bridge, NormSpec};
use crate::rng::{stream, Stream};
use crate::saa::{coupled_run, gap_recursion, CoupledRun, GapCheck, NoiseModel, RunTrace, SaaSettings, StepSchedule};
use crate::dynamics::InwardSetPair;
use crate::{Error, Result, Vector};

const ROW_TOL: f64 = 1e-12;
const VI_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Discounted,
    Ssp,
}

/// One `(state, action)` row of the MDP file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
    pub transitions: Vec<(usize, f64)>,
}

/// On-disk layout of an MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<usize>,
    pub actions: Vec<ActionSpec>,
}

#[derive(Clone, Debug, PartialEq)]
struct Action {
    id: usize,
    cost: f64,
    transitions: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    mode: Mode,
    gamma: f64,
    terminal: Option<usize>,
    /// Per state, sorted by action id.
    actions: Vec<Vec<Action>>,
}

impl Mdp {
    pub fn from_file_spec(spec: MdpFile) -> Result<Self> {
        let n = spec.n_states;
        if n == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        let (gamma, terminal) = match spec.mode {
            Mode::Discounted => {
                let g = spec.gamma.ok_or_else(|| Error::InvalidMdp("discounted mode needs gamma".into()))?;
                if !(g > 0.0 && g < 1.0) {
                    return Err(Error::InvalidMdp(format!("gamma must lie in (0, 1), got {g}")));
                }
                (g, None)
            }
            Mode::Ssp => {
                let t = spec.terminal.ok_or_else(|| Error::InvalidMdp("ssp mode needs a terminal state".into()))?;
                if t >= n {
                    return Err(Error::InvalidMdp(format!("terminal state {t} out of range")));
                }
                (1.0, Some(t))
            }
        };
        let mut actions: Vec<Vec<Action>> = vec![Vec::new(); n];
        for a in spec.actions {
            if a.state >= n {
                return Err(Error::InvalidMdp(format!("state {} out of range", a.state)));
            }
            if !a.cost.is_finite() {
                return Err(Error::InvalidMdp(format!("cost of ({}, {}) is not finite", a.state, a.action)));
            }
            let mut total = 0.0;
            for (j, p) in &a.transitions {
                if *j >= n {
                    return Err(Error::InvalidMdp(format!("transition target {j} out of range")));
                }
                if !(*p >= 0.0) {
                    return Err(Error::InvalidMdp(format!("negative probability at ({}, {})", a.state, a.action)));
                }
                total += p;
            }
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidMdp(format!(
                    "row ({}, {}) sums to {total}",
                    a.state, a.action
                )));
            }
            if actions[a.state].iter().any(|b| b.id == a.action) {
                return Err(Error::InvalidMdp(format!("duplicate action ({}, {})", a.state, a.action)));
            }
            actions[a.state].push(Action { id: a.action, cost: a.cost, transitions: a.transitions });
        }
        if let Some(t) = terminal {
            if actions[t].is_empty() {
                actions[t].push(Action { id: 0, cost: 0.0, transitions: vec![(t, 1.0)] });
            }
            for a in &actions[t] {
                let absorbing = a.transitions.iter().all(|(j, p)| *j == t || *p == 0.0);
                if a.cost != 0.0 || !absorbing {
                    return Err(Error::InvalidMdp("terminal state must be absorbing with zero cost".into()));
                }
            }
        }
        if let Some(i) = actions.iter().position(|a| a.is_empty()) {
            return Err(Error::InvalidMdp(format!("state {i} has no actions")));
        }
        for list in &mut actions {
            list.sort_by_key(|a| a.id);
        }
        Ok(Mdp { n_states: n, mode: spec.mode, gamma, terminal, actions })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file_spec(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_spec(&self) -> MdpFile {
        MdpFile {
            n_states: self.n_states,
            mode: self.mode,
            gamma: (self.mode == Mode::Discounted).then_some(self.gamma),
            terminal: self.terminal,
            actions: self
                .actions
                .iter()
                .enumerate()
                .flat_map(|(i, list)| {
                    list.iter().map(move |a| ActionSpec {
                        state: i,
                        action: a.id,
                        cost: a.cost,
                        transitions: a.transitions.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Discount factor, `1` for stochastic shortest path problems.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn terminal(&self) -> Option<usize> {
        self.terminal
    }

    pub fn n_actions(&self, state: usize) -> usize {
        self.actions[state].len()
    }

    fn q_value(&self, a: &Action, j: &Vector) -> f64 {
        let future: f64 = a
            .transitions
            .iter()
            .filter(|(s, _)| Some(*s) != self.terminal)
            .map(|(s, p)| p * j[*s])
            .sum();
        a.cost + self.gamma * future
    }

    /// `TJ` together with a greedy policy (lowest action index on ties).
    pub fn bellman_greedy(&self, j: &Vector) -> Result<(Vector, Vec<usize>)> {
        if j.len() != self.n_states {
            return Err(Error::DimensionMismatch { expected: self.n_states, got: j.len() });
        }
        let mut out = Vector::zeros(self.n_states);
        let mut policy = vec![0; self.n_states];
        for (i, list) in self.actions.iter().enumerate() {
            if Some(i) == self.terminal {
                policy[i] = list[0].id;
                continue;
            }
            let mut best = f64::INFINITY;
            for a in list {
                let q = self.q_value(a, j);
                if q < best {
                    best = q;
                    policy[i] = a.id;
                }
            }
            out[i] = best;
        }
        Ok((out, policy))
    }

    pub fn bellman(&self, j: &Vector) -> Result<Vector> {
        self.bellman_greedy(j).map(|(tj, _)| tj)
    }

    /// Cost vector of a stationary deterministic policy given by action
    /// positions, or `None` when the policy is improper.
    fn policy_value(&self, choice: &[usize]) -> Option<Vector> {
        let n = self.n_states;
        if let Some(t) = self.terminal {
            // proper iff the terminal state is reachable from every state
            let mut reaches = vec![false; n];
            reaches[t] = true;
            let mut changed = true;
            while changed {
                changed = false;
                for i in 0..n {
                    if !reaches[i]
                        && self.actions[i][choice[i]].transitions.iter().any(|(s, p)| *p > 0.0 && reaches[*s])
                    {
                        reaches[i] = true;
                        changed = true;
                    }
                }
            }
            if reaches.iter().any(|r| !r) {
                return None;
            }
        }
        let mut a = DMatrix::identity(n, n);
        let mut c = Vector::zeros(n);
        for i in 0..n {
            if Some(i) == self.terminal {
                continue;
            }
            let act = &self.actions[i][choice[i]];
            c[i] = act.cost;
            for (s, p) in &act.transitions {
                if Some(*s) != self.terminal {
                    a[(i, *s)] -= self.gamma * p;
                }
            }
        }
        a.lu().solve(&c)
    }

    /// `J*` as the componentwise minimum over all proper deterministic
    /// stationary policies, each evaluated by a linear solve.
    pub fn policy_enumeration(&self) -> Result<Vector> {
        let count: f64 = self.actions.iter().map(|a| a.len() as f64).product();
        if count > 1e6 {
            return Err(Error::InvalidArgument(format!("{count} policies are too many to enumerate")));
        }
        let mut choice = vec![0; self.n_states];
        let mut best = Vector::from_element(self.n_states, f64::INFINITY);
        loop {
            if let Some(v) = self.policy_value(&choice) {
                best = best.zip_map(&v, f64::min);
            }
            let mut i = 0;
            loop {
                if i == self.n_states {
                    if best.iter().any(|b| !b.is_finite()) {
                        return Err(Error::InvalidMdp("no proper policy".into()));
                    }
                    return Ok(best);
                }
                choice[i] += 1;
                if choice[i] < self.actions[i].len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViResult {
    pub j: Vector,
    pub residual: f64,
    pub sweeps: usize,
    /// `‖TJ_k − J_k‖` per sweep.
    pub residuals: Vec<f64>,
}

/// Value iteration `J ← TJ` from zero until `‖TJ − J‖ ≤ tol` in `norm`.
pub fn exact_vi(mdp: &Mdp, tol: f64, norm: &NormSpec) -> Result<ViResult> {
    norm.check_dim(mdp.n_states)?;
    let mut j = Vector::zeros(mdp.n_states);
    let mut residuals = Vec::new();
    for sweep in 0..VI_CAP {
        let tj = mdp.bellman(&j)?;
        let residual = norm.apply(&(&tj - &j));
        residuals.push(residual);
        if residual <= tol {
            return Ok(ViResult { j, residual, sweeps: sweep, residuals });
        }
        j = tj;
    }
    Err(Error::NoConvergence { iterations: VI_CAP, residual: *residuals.last().unwrap() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionCertificate {
    pub alpha_hat: f64,
    pub pairs: usize,
    pub passes: bool,
}

/// Largest sampled ratio `‖TJ₁ − TJ₂‖_ν / ‖J₁ − J₂‖_ν`. Pairs mix far-apart
/// and nearby points; pairs with `J₁ = J₂` are skipped.
pub fn contraction_certificate(mdp: &Mdp, nu: &NormSpec, n_pairs: usize, seed: u64) -> Result<ContractionCertificate> {
    if !matches!(nu, NormSpec::WeightedMax { .. }) {
        return Err(Error::InvalidNorm("contraction certificates use a weighted max-norm".into()));
    }
    nu.check_dim(mdp.n_states)?;
    let mut rng = stream(seed, Stream::Sampling);
    let n = mdp.n_states;
    let mut alpha_hat: f64 = 0.0;
    let mut pairs = 0;
    for k in 0..n_pairs {
        let scale = 10f64.powi((k % 4) as i32 - 1);
        let j1 = Vector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let mut j2 = &j1 + Vector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0));
        if let Some(t) = mdp.terminal {
            j2[t] = j1[t];
        }
        let den = nu.apply(&(&j1 - &j2));
        if den == 0.0 {
            continue;
        }
        let num = nu.apply(&(mdp.bellman(&j1)? - mdp.bellman(&j2)?));
        alpha_hat = alpha_hat.max(num / den);
        pairs += 1;
    }
    Ok(ContractionCertificate { alpha_hat, pairs, passes: alpha_hat < 1.0 })
}

/// `J ↦ TJ + B^ε` with `B^ε` the closed ε-ball of `norm`.
pub fn perturbed_bellman(mdp: &Mdp, epsilon: f64, norm: &NormSpec) -> Result<SetValuedMap> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("error bound must be nonnegative, got {epsilon}")));
    }
    let m = Arc::new(mdp.clone());
    let base = SetValuedMap::from_fn(mdp.n_states, move |j| m.bellman(j).expect("dimension checked by caller"));
    base.with_perturbation(Perturbation::ball(epsilon, norm.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorInjector {
    /// A constant error on the ε-sphere, along `direction` if given,
    /// otherwise along `ν` (weighted max-norm) or the all-ones vector.
    FixedBias {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Independent uniform draws from the ε-ball.
    Uniform,
    /// Rounding of `TJ` to a grid of the given spacing, rescaled onto the
    /// ε-ball when the rounding error is larger.
    Rounding { spacing: f64 },
}

fn default_tail() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AviConfig {
    pub epsilon: f64,
    /// Norm bounding the injected errors; residuals and distances are
    /// reported in it.
    pub error_norm: NormSpec,
    /// Weighted max-norm in which `T` contracts.
    pub nu: NormSpec,
    /// Contraction modulus of `T` in `nu`; defaults to `γ`.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub injector: ErrorInjector,
    pub schedule: StepSchedule,
    pub noise: NoiseModel,
    pub seed: u64,
    pub n_iter: usize,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    #[serde(default)]
    pub j0: Option<Vec<f64>>,
    #[serde(default = "default_pairs")]
    pub certificate_pairs: usize,
}

fn default_pairs() -> usize {
    2000
}

/// Smallest error bound used to size the partner sets, so that `ε = 0`
/// still yields nondegenerate balls.
pub const PARTNER_EPSILON_FLOOR: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct AviResult {
    pub j_star: Vector,
    pub j_bar: Vector,
    /// `‖TJ̄ − J̄‖` in the error norm.
    pub residual: f64,
    /// `‖J̄ − J*‖` in the error norm.
    pub distance: f64,
    pub residual_nu: f64,
    pub distance_nu: f64,
    pub alpha: f64,
    pub certificate: ContractionCertificate,
    /// Bound on the injected errors in the ν-norm.
    pub epsilon_nu: f64,
    pub max_injected: f64,
    pub max_injected_nu: f64,
    pub partner_set: InwardSetPair,
    pub coupled: CoupledRun,
}

impl AviResult {
    pub fn trace(&self) -> &RunTrace {
        &self.coupled.plain
    }

    pub fn diverged(&self) -> bool {
        self.coupled.plain.diverged.is_some()
    }

    /// Distance from `J̄` to `{J : ‖TJ − J‖ ≤ ε}` measured as the residual
    /// excess over ε.
    pub fn residual_excess(&self, epsilon: f64) -> f64 {
        (self.residual - epsilon).max(0.0)
    }
}

fn injector_strategy(config: &AviConfig, n: usize) -> Result<SelectionStrategy> {
    let eps = config.epsilon;
    let norm = config.error_norm.clone();
    Ok(match &config.injector {
        ErrorInjector::FixedBias { direction } => {
            let dir = match (direction, &norm) {
                (Some(d), _) => {
                    if d.len() != n {
                        return Err(Error::DimensionMismatch { expected: n, got: d.len() });
                    }
                    Vector::from_column_slice(d)
                }
                (None, NormSpec::WeightedMax { weights }) => Vector::from_column_slice(weights),
                (None, _) => Vector::from_element(n, 1.0),
            };
            let u = if eps == 0.0 {
                Vector::zeros(n)
            } else {
                norm.to_sphere(&dir, eps).ok_or_else(|| Error::InvalidArgument("zero bias direction".into()))?
            };
            SelectionStrategy::FixedBias(u)
        }
        ErrorInjector::Uniform => SelectionStrategy::Uniform { seed: config.seed },
        ErrorInjector::Rounding { spacing } => {
            if !(*spacing > 0.0) {
                return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {spacing}")));
            }
            let h = *spacing;
            SelectionStrategy::callback(move |j, fx| {
                let tj = fx + j;
                let mut err = tj.map(|v| (v / h).round() * h) - &tj;
                let size = norm.apply(&err);
                if size > eps {
                    err *= eps / size;
                }
                fx + err
            })
        }
    })
}

pub fn run_avi(mdp: &Mdp, config: &AviConfig) -> Result<AviResult> {
    let n = mdp.n_states;
    config.error_norm.validate()?;
    config.error_norm.check_dim(n)?;
    config.nu.check_dim(n)?;
    if !(config.tail_fraction > 0.0 && config.tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction must lie in (0, 1], got {}", config.tail_fraction)));
    }
    let certificate = contraction_certificate(mdp, &config.nu, config.certificate_pairs, config.seed)?;
    if !certificate.passes {
        return Err(Error::InvalidMdp(format!("sampled contraction ratio {} ≥ 1", certificate.alpha_hat)));
    }
    let alpha = config.alpha.unwrap_or(mdp.gamma);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("contraction modulus must lie in (0, 1), got {alpha}")));
    }
    let bridge_lower = match &config.error_norm {
        NormSpec::WeightedMax { .. } if config.error_norm == config.nu => 1.0,
        NormSpec::WeightedP { .. } => pnorm_bridge(&config.nu, &config.error_norm)?.0,
        other => {
            return Err(Error::InvalidNorm(format!("errors must be bounded in ν or a weighted p-norm, got {other:?}")))
        }
    };
    let epsilon_nu = config.epsilon / bridge_lower;

    let ViResult { j: j_star, .. } = exact_vi(mdp, 1e-12, &config.nu)?;
    let map = perturbed_bellman(mdp, config.epsilon, &config.error_norm)?.minus_identity();
    let strategy = injector_strategy(config, n)?;
    let radius = epsilon_nu.max(PARTNER_EPSILON_FLOOR) / (1.0 - alpha);
    let partner_set = InwardSetPair::balls(j_star.clone(), 2.0 * radius, 4.0 * radius, config.nu.clone())?;
    let j0 = match &config.j0 {
        Some(v) if v.len() != n => return Err(Error::DimensionMismatch { expected: n, got: v.len() }),
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(n),
    };
    let settings = SaaSettings {
        schedule: config.schedule.clone(),
        noise: config.noise.clone(),
        seed: config.seed,
        n_iter: config.n_iter,
    };
    let coupled = coupled_run(&map, &j0, &j0, &settings, &strategy, &partner_set, &config.nu)?;

    let trace = &coupled.plain;
    let mut max_injected: f64 = 0.0;
    let mut max_injected_nu: f64 = 0.0;
    for step in 0..trace.len() {
        let tj = mdp.bellman(&trace.x[step])?;
        // y_n − (TJ_n − J_n) recovers ε_n up to rounding at the scale of J_n
        let tol = 1e-12 + 16.0 * f64::EPSILON * trace.x[step].amax().max(tj.amax());
        let mean_field = tj - &trace.x[step];
        let err = &trace.y[step] - mean_field;
        let size = config.error_norm.apply(&err);
        let size_nu = config.nu.apply(&err);
        if size > config.epsilon + tol {
            return Err(Error::ErrorBoundViolation { step, norm: size, bound: config.epsilon });
        }
        if size_nu > epsilon_nu + tol {
            return Err(Error::ErrorBoundViolation { step, norm: size_nu, bound: epsilon_nu });
        }
        max_injected = max_injected.max(size);
        max_injected_nu = max_injected_nu.max(size_nu);
    }

    let j_bar = trace.tail_average(config.tail_fraction);
    let res_vec = mdp.bellman(&j_bar)? - &j_bar;
    let dist_vec = &j_bar - &j_star;
    Ok(AviResult {
        residual: config.error_norm.apply(&res_vec),
        distance: config.error_norm.apply(&dist_vec),
        residual_nu: config.nu.apply(&res_vec),
        distance_nu: config.nu.apply(&dist_vec),
        j_star,
        j_bar,
        alpha,
        certificate,
        epsilon_nu,
        max_injected,
        max_injected_nu,
        partner_set,
        coupled,
    })
}

/// Check the per-step gap recursion and the closed-form bound
/// `‖J_n − Ĵ_n‖_ν ≤ ‖J_N − Ĵ_N‖_ν ∨ 2ε/(1−α)` on the coupled traces, with
/// `ε` the error bound in the ν-norm.
pub fn gap_recursion_check(result: &AviResult, alpha: f64, epsilon: f64) -> Result<GapCheck> {
    gap_recursion(&result.coupled.report.gaps, &result.coupled.projective, alpha, 2.0 * epsilon, 1e-10)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub residual: f64,
    pub distance: f64,
}

/// One AVI run per ε (strictly decreasing), all other settings shared.
pub fn epsilon_sweep(mdp: &Mdp, base: &AviConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>> {
    if epsilons.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidArgument("ε list must be strictly decreasing".into()));
    }
    epsilons
        .iter()
        .map(|eps| {
            let config = AviConfig { epsilon: *eps, ..base.clone() };
            let r = run_avi(mdp, &config)?;
            Ok(SweepRow { epsilon: *eps, residual: r.residual, distance: r.distance })
        })
        .collect()
}
