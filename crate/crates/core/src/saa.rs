//! The stochastic approximation iterate `x_{n+1} = x_n + a(n)[y_n + M_{n+1}]`
//! with `y_n ∈ H(x_n)`, its projective partner, coupled runs and the
//! trajectory diagnostics built on recorded traces.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_row, InwardSetPair, LevelFunction, SelectionStrategy, Selector, SetValuedMap};
use crate::norms::NormSpec;
use crate::rng::{stream, Stream};
use crate::{Error, Result, Vector, DIVERGENCE_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    /// `a₀/(n+1+shift)`
    Harmonic {
        a0: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `a₀/(n+1)^q`
    Polynomial { a0: f64, q: f64 },
    Explicit { steps: Vec<f64> },
}

impl StepSchedule {
    pub fn harmonic(a0: f64) -> Self {
        StepSchedule::Harmonic { a0, shift: 0.0 }
    }

    /// `a₀/(n+1+shift)`; a shift of `a₀ − 1` keeps every step at most one.
    pub fn harmonic_shifted(a0: f64, shift: f64) -> Self {
        StepSchedule::Harmonic { a0, shift }
    }

    pub fn polynomial(a0: f64, q: f64) -> Self {
        StepSchedule::Polynomial { a0, q }
    }

    pub fn step(&self, n: usize) -> f64 {
        match self {
            StepSchedule::Harmonic { a0, shift } => a0 / (n as f64 + 1.0 + shift),
            StepSchedule::Polynomial { a0, q } => a0 / (n as f64 + 1.0).powf(*q),
            StepSchedule::Explicit { steps } => steps.get(n).copied().unwrap_or(0.0),
        }
    }

    fn check(&self, n_iter: usize) -> Result<()> {
        match self {
            StepSchedule::Harmonic { a0, .. } | StepSchedule::Polynomial { a0, .. } if !(*a0 > 0.0) => {
                Err(Error::Schedule(format!("a0 must be positive, got {a0}")))
            }
            StepSchedule::Harmonic { shift, .. } if !(*shift >= 0.0) => {
                Err(Error::Schedule(format!("shift must be nonnegative, got {shift}")))
            }
            StepSchedule::Polynomial { q, .. } if !(*q > 0.0 && *q <= 1.0) => {
                Err(Error::Schedule(format!("q must lie in (0, 1], got {q}")))
            }
            StepSchedule::Explicit { steps } if steps.len() < n_iter => {
                Err(Error::Schedule(format!("{} explicit steps for {n_iter} iterations", steps.len())))
            }
            StepSchedule::Explicit { steps } if steps.iter().any(|a| !(*a >= 0.0)) => {
                Err(Error::Schedule("step sizes must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "kebab-case")]
pub enum ScheduleVerdict {
    Pass,
    Fail(String),
    Inconclusive(String),
}

impl ScheduleVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, ScheduleVerdict::Pass)
    }
}

/// Half-width of the ambiguous band around the critical decay exponents
/// `1/2` and `1` used for explicit step lists.
pub const SCHEDULE_BAND: f64 = 0.1;
const MIN_EXPLICIT_STEPS: usize = 1000;

/// Decide `Σ a(n) = ∞` and `Σ a(n)² < ∞`.
///
/// Harmonic and polynomial schedules are decided symbolically. Explicit
/// lists are judged from the log-log decay exponent `s` of their tail:
/// `s ∈ (1/2, 1)` passes, `s < 1/2` or `s > 1` fails, and values within
/// [`SCHEDULE_BAND`] of `1/2` are inconclusive. Near `s = 1` the list passes
/// when `n·a(n)` settles to a constant and is inconclusive otherwise.
pub fn validate_schedule(s: &StepSchedule) -> Result<ScheduleVerdict> {
    match s {
        StepSchedule::Harmonic { a0, .. } | StepSchedule::Polynomial { a0, .. } if !(*a0 > 0.0) => {
            Err(Error::Schedule(format!("a0 must be positive, got {a0}")))
        }
        StepSchedule::Harmonic { shift, .. } if !(*shift >= 0.0) => {
            Err(Error::Schedule(format!("shift must be nonnegative, got {shift}")))
        }
        StepSchedule::Harmonic { .. } => Ok(ScheduleVerdict::Pass),
        StepSchedule::Polynomial { q, .. } => Ok(if *q > 0.5 && *q <= 1.0 {
            ScheduleVerdict::Pass
        } else if *q <= 0.5 {
            ScheduleVerdict::Fail(format!("q = {q} ≤ 1/2: Σ a(n)² diverges"))
        } else {
            ScheduleVerdict::Fail(format!("q = {q} > 1: Σ a(n) converges"))
        }),
        StepSchedule::Explicit { steps } => Ok(explicit_verdict(steps)),
    }
}

fn explicit_verdict(steps: &[f64]) -> ScheduleVerdict {
    if let Some(n) = steps.iter().position(|a| !(*a >= 0.0)) {
        return ScheduleVerdict::Fail(format!("a({n}) is negative or not a number"));
    }
    let len = steps.len();
    if len < MIN_EXPLICIT_STEPS {
        return ScheduleVerdict::Inconclusive(format!("{len} steps are too few to judge the tail"));
    }
    let last_positive = steps.iter().rposition(|a| *a > 0.0);
    match last_positive {
        None => return ScheduleVerdict::Fail("all steps are zero".into()),
        Some(k) if k < len / 2 => {
            return ScheduleVerdict::Fail(format!("steps vanish after n = {k}: Σ a(n) is finite"))
        }
        _ => {}
    }
    let lo = len / 10;
    let tail: Vec<(f64, f64)> = log_spaced(lo.max(1), len - 1, 64)
        .into_iter()
        .filter(|n| steps[*n] > 0.0)
        .map(|n| ((n as f64 + 1.0).ln(), steps[n].ln()))
        .collect();
    if tail.len() < 8 {
        return ScheduleVerdict::Fail("tail is mostly zero: Σ a(n) is finite".into());
    }
    let s = -least_squares_slope(&tail);
    if s > 1.0 + SCHEDULE_BAND {
        ScheduleVerdict::Fail(format!("tail decays like n^-{s:.3}: Σ a(n) converges"))
    } else if s < 0.5 - SCHEDULE_BAND {
        ScheduleVerdict::Fail(format!("tail decays like n^-{s:.3}: Σ a(n)² diverges"))
    } else if s <= 0.5 + SCHEDULE_BAND {
        ScheduleVerdict::Inconclusive(format!("decay exponent {s:.3} is too close to 1/2"))
    } else if s < 1.0 - SCHEDULE_BAND {
        ScheduleVerdict::Pass
    } else {
        let at = |n: usize| (n as f64 + 1.0) * steps[n];
        let (mid, end) = (at(len / 2), at(len - 1));
        if mid > 0.0 && end > 0.0 && (mid.min(end) / mid.max(end)) >= 0.98 {
            ScheduleVerdict::Pass
        } else {
            ScheduleVerdict::Inconclusive(format!("decay exponent {s:.3} is too close to 1"))
        }
    }
}

fn log_spaced(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (l, h) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| (l + (h - l) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .map(|n| n.clamp(lo, hi))
        .collect();
    out.dedup();
    out
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundedDistribution {
    /// Uniform in the Euclidean ball of radius `D`.
    UniformBall,
    /// Uniform in the cube inscribed in that ball.
    UniformCube,
    /// Corners `±D/√d` of that cube with independent fair signs.
    Sign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    Zero,
    /// Independent draws with `‖M‖₂ ≤ bound`.
    BoundedIid { bound: f64, distribution: BoundedDistribution },
    /// `M ~ N(0, σ²I)` with `σ² = K(1 + ‖x‖²)/d`.
    StateScaledGaussian { k: f64 },
}

impl NoiseModel {
    pub fn bounded(bound: f64) -> Self {
        NoiseModel::BoundedIid { bound, distribution: BoundedDistribution::UniformBall }
    }

    /// Almost-sure bound on `‖M‖₂` if there is one.
    pub fn bound(&self) -> Option<f64> {
        match self {
            NoiseModel::Zero => Some(0.0),
            NoiseModel::BoundedIid { bound, .. } => Some(*bound),
            NoiseModel::StateScaledGaussian { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::BoundedIid { bound, .. } if !(*bound >= 0.0) => {
                Err(Error::InvalidArgument(format!("noise bound must be nonnegative, got {bound}")))
            }
            NoiseModel::StateScaledGaussian { k } if !(*k >= 0.0) => {
                Err(Error::InvalidArgument(format!("noise scale must be nonnegative, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

/// A noise model bound to its own random stream.
pub struct NoiseSource {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(model: NoiseModel, seed: u64) -> Self {
        NoiseSource { model, rng: stream(seed, Stream::Noise) }
    }

    /// `M_{n+1}` given the current iterate.
    pub fn draw(&mut self, x: &Vector) -> Vector {
        let d = x.len();
        match &self.model {
            NoiseModel::Zero => Vector::zeros(d),
            NoiseModel::BoundedIid { bound, distribution } => {
                let m = match distribution {
                    BoundedDistribution::UniformBall => {
                        crate::dynamics::sample_ball(&NormSpec::Euclidean, d, *bound, &mut self.rng)
                    }
                    BoundedDistribution::UniformCube => {
                        let h = bound / (d as f64).sqrt();
                        Vector::from_fn(d, |_, _| self.rng.random_range(-h..=h))
                    }
                    BoundedDistribution::Sign => {
                        let h = bound / (d as f64).sqrt();
                        Vector::from_fn(d, |_, _| if self.rng.random::<bool>() { h } else { -h })
                    }
                };
                let norm = m.norm();
                assert!(norm <= bound * (1.0 + 1e-12), "noise draw {norm} exceeds bound {bound}");
                m
            }
            NoiseModel::StateScaledGaussian { k } => {
                let sigma = (k * (1.0 + x.norm_squared()) / d as f64).sqrt();
                Vector::from_fn(d, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    sigma * z
                })
            }
        }
    }
}

/// Everything a run needs besides the map, the start and the selection rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaaSettings {
    pub schedule: StepSchedule,
    pub noise: NoiseModel,
    pub seed: u64,
    pub n_iter: usize,
}

/// Recorded run. `x` has one more entry than the per-step vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub x: Vec<Vector>,
    pub y: Vec<Vector>,
    pub noise: Vec<Vector>,
    pub steps: Vec<f64>,
    /// `t_n = Σ_{m<n} a(m)`, one per iterate.
    pub times: Vec<f64>,
    /// `g_n = x_{n+1} − (x_n + a(n)(y_n + M_{n+1}))`, zero without projection.
    pub corrections: Vec<Vector>,
    /// `x_0 − x̃_0` for projective runs.
    pub initial_correction: Vector,
    /// Index of the first iterate that crossed the divergence threshold.
    pub diverged: Option<usize>,
}

impl RunTrace {
    fn start(x0: Vector, capacity: usize) -> Self {
        let d = x0.len();
        RunTrace {
            x: {
                let mut v = Vec::with_capacity(capacity + 1);
                v.push(x0);
                v
            },
            y: Vec::with_capacity(capacity),
            noise: Vec::with_capacity(capacity),
            steps: Vec::with_capacity(capacity),
            times: {
                let mut v = Vec::with_capacity(capacity + 1);
                v.push(0.0);
                v
            },
            corrections: Vec::with_capacity(capacity),
            initial_correction: Vector::zeros(d),
            diverged: None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn last(&self) -> &Vector {
        self.x.last().expect("trace holds the initial iterate")
    }

    /// `x_n + a(n)(y_n + M_{n+1})`, the iterate before any projection.
    pub fn unprojected(&self, n: usize) -> Vector {
        &self.x[n] + (&self.y[n] + &self.noise[n]) * self.steps[n]
    }

    /// Steps `n` whose successor `x_{n+1}` was produced by a projection.
    pub fn projection_events(&self) -> Vec<usize> {
        self.corrections
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
            .map(|(n, _)| n)
            .collect()
    }

    /// Index of the last projected iterate: `n + 1` for the last event `n`,
    /// or `0` when only the start was (possibly) projected.
    pub fn last_projection_index(&self) -> usize {
        self.projection_events().last().map_or(0, |n| n + 1)
    }

    /// Smallest cumulative time between consecutive projection events.
    pub fn min_event_separation(&self) -> Option<f64> {
        self.projection_events()
            .windows(2)
            .map(|w| self.times[w[1] + 1] - self.times[w[0] + 1])
            .min_by(f64::total_cmp)
    }

    /// Mean of the last `fraction` of the iterates.
    pub fn tail_average(&self, fraction: f64) -> Vector {
        let total = self.x.len();
        let count = ((total as f64 * fraction).ceil() as usize).clamp(1, total);
        let mut sum = Vector::zeros(self.dim());
        for x in &self.x[total - count..] {
            sum += x;
        }
        sum / count as f64
    }

    /// CSV with columns `n, t_n, a_n, x.., y.., M.., g_norm`. The final
    /// iterate is written with the per-step columns left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header = vec!["n".to_string(), "t_n".into(), "a_n".into()];
        for prefix in ["x", "y", "M"] {
            header.extend((1..=d).map(|i| format!("{prefix}_{i}")));
        }
        header.push("g_norm".into());
        writeln!(w, "{}", header.join(","))?;
        for n in 0..self.len() {
            let values = [self.times[n], self.steps[n]]
                .into_iter()
                .chain(self.x[n].iter().copied())
                .chain(self.y[n].iter().copied())
                .chain(self.noise[n].iter().copied())
                .chain(std::iter::once(self.corrections[n].norm()));
            writeln!(w, "{n},{}", fmt_row(values))?;
        }
        let n = self.len();
        let empty = ",".repeat(2 * d + 1);
        writeln!(w, "{n},{},,{}{empty}", fmt_row([self.times[n]]), fmt_row(self.x[n].iter().copied()))?;
        Ok(())
    }
}

/// Nearest point of `closure(ℬ)` if `x ∉ 𝒞`, `x` itself otherwise.
///
/// Euclidean balls project radially and weighted max-norm balls by clamping,
/// both exact. Weighted p-norm balls use the radial point and Lyapunov
/// sublevels the first point with level `≤ R_b` found by bisection on the
/// segment towards the attractor centroid.
pub fn project(pair: &InwardSetPair, x: &Vector) -> Result<Vector> {
    if pair.in_c(x)? {
        return Ok(x.clone());
    }
    let r_b = pair.r_b();
    match pair.level() {
        LevelFunction::Norm { center, norm } => {
            let offset = x - center;
            Ok(match norm {
                NormSpec::WeightedMax { weights } => {
                    center + Vector::from_iterator(
                        offset.len(),
                        offset.iter().zip(weights).map(|(z, w)| z.clamp(-r_b * w, r_b * w)),
                    )
                }
                _ => center + norm.to_sphere(&offset, r_b).unwrap_or(offset),
            })
        }
        LevelFunction::Lyapunov(_) => {
            let anchor = pair.level().anchor();
            let at = |s: f64| &anchor + (x - &anchor) * s;
            let (mut inside, mut outside) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (inside + outside);
                if pair.level().value(&at(mid))? <= r_b {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            Ok(at(inside))
        }
    }
}

/// One simulated chain of a (possibly coupled) run.
struct Chain<'a> {
    trace: RunTrace,
    pair: Option<&'a InwardSetPair>,
    x: Vector,
}

/// Advance all chains with shared noise and selection offsets, both drawn at
/// the state of the first chain.
fn simulate(
    map: &SetValuedMap,
    chains: &mut [Chain<'_>],
    steps: &dyn Fn(usize) -> f64,
    noise: &mut NoiseSource,
    selector: &mut Selector,
    n_iter: usize,
) -> Result<()> {
    for n in 0..n_iter {
        let a = steps(n);
        let driver = chains[0].x.clone();
        let f_driver = map.base(&driver);
        let u = selector.offset(map, &driver, &f_driver)?;
        let m = noise.draw(&driver);
        let mut diverged = false;
        for (i, chain) in chains.iter_mut().enumerate() {
            let y = if i == 0 {
                &f_driver + &u
            } else {
                let fx = map.base(&chain.x);
                let y = &fx + &u;
                let distance = map.membership_distance(&chain.x, &y)?;
                if distance > crate::dynamics::MEMBERSHIP_TOL * fx.amax().max(1.0) {
                    return Err(Error::MembershipViolation { distance });
                }
                y
            };
            let candidate = &chain.x + (&y + &m) * a;
            let next = match chain.pair {
                Some(pair) if candidate.iter().all(|v| v.is_finite()) => project(pair, &candidate)?,
                _ => candidate.clone(),
            };
            let t = chain.trace.times[n] + a;
            chain.trace.corrections.push(&next - &candidate);
            chain.trace.y.push(y);
            chain.trace.noise.push(m.clone());
            chain.trace.steps.push(a);
            chain.trace.times.push(t);
            if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_THRESHOLD {
                chain.trace.diverged = Some(n + 1);
                diverged = true;
            }
            chain.trace.x.push(next.clone());
            chain.x = next;
        }
        if diverged {
            break;
        }
    }
    Ok(())
}

fn prepare(map: &SetValuedMap, x0: &Vector, settings: &SaaSettings) -> Result<()> {
    if x0.len() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: x0.len() });
    }
    if settings.n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    settings.noise.validate()?;
    settings.schedule.check(settings.n_iter)?;
    if let ScheduleVerdict::Fail(reason) = validate_schedule(&settings.schedule)? {
        return Err(Error::Schedule(reason));
    }
    Ok(())
}

fn projected_start<'a>(pair: &'a InwardSetPair, x0: &Vector, n_iter: usize) -> Result<Chain<'a>> {
    let start = project(pair, x0)?;
    let mut trace = RunTrace::start(start.clone(), n_iter);
    trace.initial_correction = &start - x0;
    Ok(Chain { trace, pair: Some(pair), x: start })
}

fn plain_start<'a>(x0: &Vector, n_iter: usize) -> Chain<'a> {
    Chain { trace: RunTrace::start(x0.clone(), n_iter), pair: None, x: x0.clone() }
}

pub fn run_saa(map: &SetValuedMap, x0: &Vector, settings: &SaaSettings, strategy: &SelectionStrategy) -> Result<RunTrace> {
    prepare(map, x0, settings)?;
    let mut chains = [plain_start(x0, settings.n_iter)];
    let schedule = &settings.schedule;
    simulate(
        map,
        &mut chains,
        &|n| schedule.step(n),
        &mut NoiseSource::new(settings.noise.clone(), settings.seed),
        &mut Selector::new(strategy.clone()),
        settings.n_iter,
    )?;
    let [chain] = chains;
    Ok(chain.trace)
}

pub fn run_projective(
    map: &SetValuedMap,
    x0: &Vector,
    settings: &SaaSettings,
    strategy: &SelectionStrategy,
    pair: &InwardSetPair,
) -> Result<RunTrace> {
    prepare(map, x0, settings)?;
    let mut chains = [projected_start(pair, x0, settings.n_iter)?];
    let schedule = &settings.schedule;
    simulate(
        map,
        &mut chains,
        &|n| schedule.step(n),
        &mut NoiseSource::new(settings.noise.clone(), settings.seed),
        &mut Selector::new(strategy.clone()),
        settings.n_iter,
    )?;
    let [chain] = chains;
    Ok(chain.trace)
}

/// Per-sample-path comparison of a run with its projective partner.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparabilityReport {
    /// Index of the last projected partner iterate.
    #[serde(rename = "N")]
    pub n: usize,
    pub sup_gap: f64,
    pub projection_events: usize,
    #[serde(skip)]
    pub gaps: Vec<f64>,
}

impl ComparabilityReport {
    pub fn from_traces(plain: &RunTrace, partner: &RunTrace, norm: &NormSpec) -> Result<Self> {
        norm.check_dim(plain.dim())?;
        let gaps: Vec<f64> = plain.x.iter().zip(&partner.x).map(|(a, b)| norm.apply(&(a - b))).collect();
        let n = partner.last_projection_index();
        let sup_gap = gaps.iter().skip(n).copied().fold(0.0, f64::max);
        Ok(ComparabilityReport { n, sup_gap, projection_events: partner.projection_events().len(), gaps })
    }

    /// Finite sup gap after `N` (the per-path form of comparability).
    pub fn is_comparable(&self) -> bool {
        self.sup_gap.is_finite()
    }

    pub fn to_json(&self, per_iterate_gap_file: &str) -> serde_json::Value {
        serde_json::json!({
            "N": self.n,
            "sup_gap": self.sup_gap,
            "per_iterate_gap_file": per_iterate_gap_file,
        })
    }

    /// CSV with columns `n, gap`.
    pub fn write_gap_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,gap")?;
        for (n, g) in self.gaps.iter().enumerate() {
            writeln!(w, "{n},{g:.16e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub plain: RunTrace,
    pub projective: RunTrace,
    pub report: ComparabilityReport,
}

/// The plain iterate from `x0` and the projective partner from `partner_x0`,
/// driven by the same noise realization and the same selection offsets.
pub fn coupled_run(
    map: &SetValuedMap,
    x0: &Vector,
    partner_x0: &Vector,
    settings: &SaaSettings,
    strategy: &SelectionStrategy,
    pair: &InwardSetPair,
    gap_norm: &NormSpec,
) -> Result<CoupledRun> {
    let schedule = &settings.schedule;
    coupled_with_steps(map, x0, partner_x0, settings, strategy, pair, gap_norm, &|n| schedule.step(n), true)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn coupled_with_steps(
    map: &SetValuedMap,
    x0: &Vector,
    partner_x0: &Vector,
    settings: &SaaSettings,
    strategy: &SelectionStrategy,
    pair: &InwardSetPair,
    gap_norm: &NormSpec,
    steps: &dyn Fn(usize) -> f64,
    check_schedule: bool,
) -> Result<CoupledRun> {
    if check_schedule {
        prepare(map, x0, settings)?;
    } else {
        settings.noise.validate()?;
    }
    if partner_x0.len() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: partner_x0.len() });
    }
    let mut chains = [plain_start(x0, settings.n_iter), projected_start(pair, partner_x0, settings.n_iter)?];
    simulate(
        map,
        &mut chains,
        steps,
        &mut NoiseSource::new(settings.noise.clone(), settings.seed),
        &mut Selector::new(strategy.clone()),
        settings.n_iter,
    )?;
    let [plain, projective] = chains;
    let report = ComparabilityReport::from_traces(&plain.trace, &projective.trace, gap_norm)?;
    Ok(CoupledRun { plain: plain.trace, projective: projective.trace, report })
}

/// Outcome of checking `gap_{n+1} ≤ (1−a(n))·gap_n + a(n)(spread + α·gap_n)`
/// on every unprojected partner step and the closed form
/// `gap_n ≤ gap_N ∨ spread/(1−α)` for `n ≥ N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapCheck {
    pub recursion_ok: bool,
    pub closed_form_ok: bool,
    pub steps_checked: usize,
    /// Steps with `spread ≤ (1−α)·gap_n`, where the bound cannot grow.
    pub shrinking_case: usize,
    /// Steps with `spread > (1−α)·gap_n`.
    pub growing_case: usize,
    pub closed_form_bound: f64,
    pub first_violation: Option<usize>,
    #[serde(rename = "N")]
    pub n: usize,
}

impl GapCheck {
    pub fn passed(&self) -> bool {
        self.recursion_ok && self.closed_form_ok
    }
}

pub fn gap_recursion(
    gaps: &[f64],
    partner: &RunTrace,
    alpha: f64,
    spread: f64,
    slack: f64,
) -> Result<GapCheck> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("contraction modulus must lie in [0, 1), got {alpha}")));
    }
    let n_big = partner.last_projection_index();
    let steps = partner.len().min(gaps.len().saturating_sub(1));
    if let Some(n) = (n_big..steps).find(|n| partner.steps[*n] > 1.0) {
        return Err(Error::Schedule(format!("a({n}) = {} > 1 breaks the gap recursion", partner.steps[n])));
    }
    let mut check = GapCheck {
        recursion_ok: true,
        closed_form_ok: true,
        steps_checked: 0,
        shrinking_case: 0,
        growing_case: 0,
        closed_form_bound: gaps.get(n_big).copied().unwrap_or(0.0).max(spread / (1.0 - alpha)),
        first_violation: None,
        n: n_big,
    };
    for n in 0..steps {
        if partner.corrections[n].iter().any(|v| *v != 0.0) || partner.steps[n] > 1.0 {
            continue;
        }
        let a = partner.steps[n];
        let gap = gaps[n];
        let bound = (1.0 - a) * gap + a * (spread + alpha * gap);
        check.steps_checked += 1;
        if spread <= (1.0 - alpha) * gap {
            check.shrinking_case += 1;
        } else {
            check.growing_case += 1;
        }
        if gaps[n + 1] > bound + slack {
            check.recursion_ok = false;
            check.first_violation.get_or_insert(n + 1);
        }
    }
    for (n, g) in gaps.iter().enumerate().skip(n_big) {
        if *g > check.closed_form_bound + slack {
            check.closed_form_ok = false;
            check.first_violation.get_or_insert(n);
            break;
        }
    }
    Ok(check)
}

/// Piecewise-linear interpolation of a trace: `X(t_n) = x_n`, linear on
/// `[t_n, t_{n+1})` towards `x_n + a(n)(y_n + M_{n+1})`, with a jump at every
/// `t_{n+1}` where a projection occurred.
#[derive(Clone, Debug)]
pub struct InterpolatedPath {
    pub times: Vec<f64>,
    pub knots: Vec<Vector>,
    /// Left limits `X(t_{n+1}−)`.
    pub left_limits: Vec<Vector>,
    /// Iterate indices `n` at which `X` jumps.
    pub jumps: Vec<usize>,
}

impl InterpolatedPath {
    pub fn eval(&self, t: f64) -> Vector {
        let last = self.times.len() - 1;
        if t >= self.times[last] {
            return self.knots[last].clone();
        }
        if t <= self.times[0] {
            return self.knots[0].clone();
        }
        let n = self.times.partition_point(|s| *s <= t) - 1;
        let span = self.times[n + 1] - self.times[n];
        let theta = (t - self.times[n]) / span;
        &self.knots[n] + (&self.left_limits[n] - &self.knots[n]) * theta
    }

    /// `per_segment` evenly spaced samples on each `[t_n, t_{n+1})` followed
    /// by the final knot.
    pub fn samples(&self, per_segment: usize) -> Vec<(f64, Vector)> {
        let per = per_segment.max(1);
        let mut out = Vec::with_capacity(self.left_limits.len() * per + 1);
        for n in 0..self.left_limits.len() {
            for k in 0..per {
                let theta = k as f64 / per as f64;
                let t = self.times[n] + theta * (self.times[n + 1] - self.times[n]);
                out.push((t, &self.knots[n] + (&self.left_limits[n] - &self.knots[n]) * theta));
            }
        }
        out.push((*self.times.last().unwrap(), self.knots.last().unwrap().clone()));
        out
    }
}

pub fn interpolate(trace: &RunTrace) -> InterpolatedPath {
    let left_limits = (0..trace.len()).map(|n| trace.unprojected(n)).collect();
    InterpolatedPath {
        times: trace.times.clone(),
        knots: trace.x.clone(),
        left_limits,
        jumps: trace.projection_events().into_iter().map(|n| n + 1).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseWindowReport {
    pub max_window_sum: f64,
    pub argmax_k: usize,
    pub windows: usize,
    /// Some window ran past the end of the trace before accumulating `T`.
    pub partial: bool,
}

/// `max_k ‖Σ_{n=k}^{m_T(k)} a(n)M_{n+1}‖₂` over `k ∈ [k_lo, k_hi]` with
/// `m_T(k) = min{m ≥ k : Σ_{n=k}^m a(n) ≥ T}`.
pub fn noise_window_check(trace: &RunTrace, horizon: f64, k_range: Option<(usize, usize)>) -> Result<NoiseWindowReport> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("window length must be positive, got {horizon}")));
    }
    let len = trace.len();
    let (k_lo, k_hi) = k_range.unwrap_or((0, len - 1));
    if k_lo > k_hi || k_hi >= len {
        return Err(Error::InvalidArgument(format!("window starts {k_lo}..={k_hi} outside 0..{len}")));
    }
    let d = trace.dim();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(Vector::zeros(d));
    for n in 0..len {
        let next = &prefix[n] + &trace.noise[n] * trace.steps[n];
        prefix.push(next);
    }
    let mut report = NoiseWindowReport { max_window_sum: 0.0, argmax_k: k_lo, windows: 0, partial: false };
    let mut m = k_lo;
    for k in k_lo..=k_hi {
        m = m.max(k);
        while m < len && trace.times[m + 1] - trace.times[k] < horizon {
            m += 1;
        }
        let end = if m < len {
            m + 1
        } else {
            report.partial = true;
            len
        };
        let sum = (&prefix[end] - &prefix[k]).norm();
        report.windows += 1;
        if sum > report.max_window_sum {
            report.max_window_sum = sum;
            report.argmax_k = k;
        }
    }
    Ok(report)
}

/// `d/(2D₁)`: `d` is the Euclidean distance from `∂𝒞` to `closure(ℬ)` and
/// `D₁ = D + sup {‖y‖ : x ∈ closure(𝒞), y ∈ H(x)}`, the supremum taken over
/// `samples` boundary points of `𝒞`.
pub fn separation_constant(pair: &InwardSetPair, map: &SetValuedMap, noise_bound: f64, samples: usize) -> Result<f64> {
    let gap = match pair.level() {
        LevelFunction::Norm { norm: NormSpec::Euclidean, .. } => pair.r_c() - pair.r_b(),
        LevelFunction::Norm { norm: NormSpec::WeightedMax { weights }, .. } => {
            (pair.r_c() - pair.r_b()) * weights.iter().copied().fold(f64::INFINITY, f64::min)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "separation constant needs a Euclidean or weighted max-norm ball pair".into(),
            ))
        }
    };
    let sup = pair
        .boundary_samples(samples, 0, 1e-12)?
        .iter()
        .chain(std::iter::once(&pair.level().anchor()))
        .map(|x| map.sup_euclidean_norm(x))
        .fold(0.0, f64::max);
    Ok(gap / (2.0 * (noise_bound + sup)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Perturbation;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn settings(schedule: StepSchedule, noise: NoiseModel, seed: u64, n_iter: usize) -> SaaSettings {
        SaaSettings { schedule, noise, seed, n_iter }
    }

    fn decay(d: usize) -> SetValuedMap {
        SetValuedMap::scaled_identity(d, -1.0)
    }

    #[test]
    fn schedule_verdicts() {
        assert_eq!(validate_schedule(&StepSchedule::harmonic(1.0)).unwrap(), ScheduleVerdict::Pass);
        assert!(matches!(validate_schedule(&StepSchedule::polynomial(1.0, 0.4)).unwrap(), ScheduleVerdict::Fail(_)));
        assert_eq!(validate_schedule(&StepSchedule::polynomial(1.0, 0.75)).unwrap(), ScheduleVerdict::Pass);
        assert_eq!(validate_schedule(&StepSchedule::polynomial(1.0, 1.0)).unwrap(), ScheduleVerdict::Pass);
        assert!(matches!(validate_schedule(&StepSchedule::polynomial(1.0, 0.5)).unwrap(), ScheduleVerdict::Fail(_)));
        assert!(validate_schedule(&StepSchedule::harmonic(0.0)).is_err());
        assert!(validate_schedule(&StepSchedule::polynomial(-1.0, 0.7)).is_err());
    }

    fn explicit(f: impl Fn(usize) -> f64, len: usize) -> StepSchedule {
        StepSchedule::Explicit { steps: (0..len).map(f).collect() }
    }

    #[test]
    fn explicit_schedule_heuristic() {
        let len = 1_000_000;
        let geometric = explicit(|n| 0.5f64.powi(n as i32), len);
        assert!(matches!(validate_schedule(&geometric).unwrap(), ScheduleVerdict::Fail(_)));
        let harmonic = explicit(|n| 1.0 / (n as f64 + 1.0), len);
        assert_eq!(validate_schedule(&harmonic).unwrap(), ScheduleVerdict::Pass);
        let three_quarters = explicit(|n| (n as f64 + 1.0).powf(-0.75), len);
        assert_eq!(validate_schedule(&three_quarters).unwrap(), ScheduleVerdict::Pass);
        let slow = explicit(|n| (n as f64 + 1.0).powf(-0.3), len);
        assert!(matches!(validate_schedule(&slow).unwrap(), ScheduleVerdict::Fail(_)));
        let fast = explicit(|n| (n as f64 + 1.0).powf(-1.5), len);
        assert!(matches!(validate_schedule(&fast).unwrap(), ScheduleVerdict::Fail(_)));
        let critical = explicit(|n| (n as f64 + 1.0).powf(-0.5), len);
        assert!(matches!(validate_schedule(&critical).unwrap(), ScheduleVerdict::Inconclusive(_)));
        let log_harmonic = explicit(|n| 1.0 / ((n as f64 + 2.0) * (n as f64 + 2.0).ln()), len);
        assert!(matches!(validate_schedule(&log_harmonic).unwrap(), ScheduleVerdict::Inconclusive(_)));
        let short = explicit(|n| 1.0 / (n as f64 + 1.0), 10);
        assert!(matches!(validate_schedule(&short).unwrap(), ScheduleVerdict::Inconclusive(_)));
        let negative = explicit(|n| if n == 3 { -1.0 } else { 1.0 }, len);
        assert!(matches!(validate_schedule(&negative).unwrap(), ScheduleVerdict::Fail(_)));
    }

    #[test]
    fn schedule_serde_tags() {
        let s: StepSchedule = serde_json::from_str(r#"{"kind":"polynomial","a0":1.0,"q":0.75}"#).unwrap();
        assert_eq!(s, StepSchedule::polynomial(1.0, 0.75));
        let n: NoiseModel = serde_json::from_str(r#"{"kind":"bounded-iid","bound":0.2,"distribution":"sign"}"#).unwrap();
        assert_eq!(n.bound(), Some(0.2));
    }

    #[test]
    fn deterministic_decay_matches_product_formula() {
        // x_n = x_0·Π_{k<n}(1 − a(k)) with a(0) = 1 gives x_n = 0 for n ≥ 1,
        // so start the harmonic schedule at a₀ = 0.5 for a nontrivial oracle
        let s = settings(StepSchedule::harmonic(0.5), NoiseModel::Zero, 0, 10_000);
        let trace = run_saa(&decay(1), &v(&[1.0]), &s, &SelectionStrategy::Center).unwrap();
        let mut product = 1.0;
        for n in 0..10_000 {
            product *= 1.0 - 0.5 / (n as f64 + 1.0);
            assert!((trace.x[n + 1][0] - product).abs() <= 1e-15);
        }
        assert!(trace.last()[0].abs() <= 0.01);

        let unit = settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 10_000);
        let trace = run_saa(&decay(1), &v(&[1.0]), &unit, &SelectionStrategy::Center).unwrap();
        assert!(trace.last()[0].abs() <= 0.01);
    }

    #[test]
    fn zero_field_accumulates_noise() {
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::bounded(0.3), 5, 2000);
        let x0 = v(&[0.5, -1.0]);
        let trace = run_saa(&SetValuedMap::constant(Vector::zeros(2)), &x0, &s, &SelectionStrategy::Center).unwrap();
        let mut acc = x0.clone();
        for n in 0..2000 {
            acc += &trace.noise[n] * trace.steps[n];
            assert_eq!(trace.x[n + 1], acc);
        }
    }

    #[test]
    fn single_step_unfolds() {
        let s = settings(StepSchedule::harmonic(0.5), NoiseModel::bounded(0.2), 1, 1);
        let x0 = v(&[2.0]);
        let trace = run_saa(&decay(1), &x0, &s, &SelectionStrategy::Center).unwrap();
        assert_eq!(trace.x.len(), 2);
        assert_eq!(trace.x[1], &x0 + (v(&[-2.0]) + &trace.noise[0]) * 0.5);
    }

    #[test]
    fn run_rejects_bad_inputs() {
        let bad = settings(StepSchedule::polynomial(1.0, 0.4), NoiseModel::Zero, 0, 10);
        assert!(matches!(run_saa(&decay(1), &v(&[1.0]), &bad, &SelectionStrategy::Center), Err(Error::Schedule(_))));
        let zero = settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 0);
        assert!(run_saa(&decay(1), &v(&[1.0]), &zero, &SelectionStrategy::Center).is_err());
        let short = settings(StepSchedule::Explicit { steps: vec![0.1; 5] }, NoiseModel::Zero, 0, 10);
        assert!(run_saa(&decay(1), &v(&[1.0]), &short, &SelectionStrategy::Center).is_err());
    }

    #[test]
    fn divergence_flag_stops_the_run() {
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 10_000);
        let blowup = SetValuedMap::from_fn(1, |x| x.map(|v| v * v));
        let trace = run_saa(&blowup, &v(&[5.0]), &s, &SelectionStrategy::Center).unwrap();
        let idx = trace.diverged.expect("diverges");
        assert_eq!(trace.x.len(), idx + 1);
        assert!(trace.x[idx - 1].norm() <= DIVERGENCE_THRESHOLD);
    }

    #[test]
    fn projection_examples() {
        let pair = InwardSetPair::balls(Vector::zeros(2), 1.0, 2.0, NormSpec::Euclidean).unwrap();
        assert_eq!(project(&pair, &v(&[3.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
        assert_eq!(project(&pair, &v(&[1.5, 0.5])).unwrap(), v(&[1.5, 0.5]));
        assert_eq!(project(&pair, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
        let boxes = InwardSetPair::balls(Vector::zeros(2), 1.0, 2.0, NormSpec::weighted_max(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(project(&boxes, &v(&[3.0, 0.5])).unwrap(), v(&[1.0, 0.5]));
        assert_eq!(project(&boxes, &v(&[-5.0, 5.0])).unwrap(), v(&[-1.0, 2.0]));
    }

    #[test]
    fn projection_onto_lyapunov_sublevel() {
        let est = crate::dynamics::lyapunov_build(
            decay(1),
            crate::norms::FiniteSet::from_scalars(&[0.0]).unwrap(),
            1.0,
            2.0,
            10.0,
            0.01,
        )
        .unwrap();
        let pair = crate::dynamics::build_inward_pair(std::sync::Arc::new(est), 1.0, 2.0).unwrap();
        let p = project(&pair, &v(&[-4.0])).unwrap();
        assert!((p[0] + 1.0).abs() < 1e-12);
        assert!(p[0] >= -1.0);
    }

    #[test]
    fn projective_run_without_excursions_matches_plain() {
        let pair = InwardSetPair::balls(Vector::zeros(1), 1.0, 2.0, NormSpec::Euclidean).unwrap();
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 500);
        let plain = run_saa(&decay(1), &v(&[0.5]), &s, &SelectionStrategy::Center).unwrap();
        let proj = run_projective(&decay(1), &v(&[0.5]), &s, &SelectionStrategy::Center, &pair).unwrap();
        assert_eq!(plain, proj);
        assert!(proj.projection_events().is_empty());
    }

    #[test]
    fn projective_start_is_projected() {
        let pair = InwardSetPair::balls(Vector::zeros(2), 1.0, 2.0, NormSpec::Euclidean).unwrap();
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 5);
        let proj = run_projective(&decay(2), &v(&[0.0, 5.0]), &s, &SelectionStrategy::Center, &pair).unwrap();
        assert_eq!(proj.x[0], v(&[0.0, 1.0]));
        assert_eq!(proj.initial_correction, v(&[0.0, -4.0]));
    }

    fn expanding_run(seed: u64) -> (RunTrace, InwardSetPair, SetValuedMap) {
        let map = SetValuedMap::scaled_identity(2, 1.0)
            .with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean))
            .unwrap();
        let pair = InwardSetPair::balls(Vector::zeros(2), 0.5, 1.0, NormSpec::Euclidean).unwrap();
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::bounded(0.2), seed, 20_000);
        let trace = run_projective(&map, &v(&[0.3, 0.1]), &s, &SelectionStrategy::Uniform { seed }, &pair).unwrap();
        (trace, pair, map)
    }

    #[test]
    fn expanding_field_projects_repeatedly_but_separated() {
        let (trace, pair, map) = expanding_run(3);
        let events = trace.projection_events();
        assert!(events.len() > 3);
        for x in &trace.x {
            assert!(pair.in_closure_c(x).unwrap());
        }
        for n in 0..trace.len() {
            let g = &trace.x[n + 1] - trace.unprojected(n);
            assert!((g - &trace.corrections[n]).amax() <= 1e-15);
        }
        let delta = separation_constant(&pair, &map, 0.2, 256).unwrap();
        assert!((delta - 0.5 / (2.0 * 1.3)).abs() < 1e-12);
        assert!(trace.min_event_separation().unwrap() >= delta - 1e-6);
    }

    #[test]
    fn coupled_runs_share_noise_and_offsets() {
        let map = decay(2).with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean)).unwrap();
        let pair = InwardSetPair::balls(Vector::zeros(2), 1.0, 2.0, NormSpec::Euclidean).unwrap();
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::bounded(0.2), 11, 3000);
        let x0 = v(&[0.2, 0.1]);
        let run = coupled_run(&map, &x0, &x0, &s, &SelectionStrategy::Uniform { seed: 2 }, &pair, &NormSpec::Euclidean).unwrap();
        assert_eq!(run.plain.noise, run.projective.noise);
        assert!(run.report.gaps.iter().all(|g| *g == 0.0));
        assert_eq!(run.report.n, 0);

        let far = v(&[5.0, 0.0]);
        let run = coupled_run(&map, &far, &far, &s, &SelectionStrategy::Uniform { seed: 2 }, &pair, &NormSpec::Euclidean).unwrap();
        assert_eq!(run.projective.x[0], v(&[1.0, 0.0]));
        for n in 0..run.plain.len() {
            let u = &run.plain.y[n] - map.base(&run.plain.x[n]);
            let u_hat = &run.projective.y[n] - map.base(&run.projective.x[n]);
            assert!((u - u_hat).amax() < 1e-15);
        }
        for w in run.report.gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn coupled_gap_recursion_holds() {
        let map = decay(2).with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean)).unwrap();
        let pair = InwardSetPair::balls(Vector::zeros(2), 1.0, 2.0, NormSpec::Euclidean).unwrap();
        let s = settings(StepSchedule::polynomial(1.0, 0.75), NoiseModel::bounded(0.2), 4, 5000);
        let run = coupled_run(&map, &v(&[3.0, 0.0]), &v(&[0.0, 3.0]), &s, &SelectionStrategy::Uniform { seed: 1 }, &pair, &NormSpec::Euclidean).unwrap();
        let check = gap_recursion(&run.report.gaps, &run.projective, 0.0, 0.2, 1e-10).unwrap();
        assert!(check.passed(), "{check:?}");
        assert!(check.steps_checked > 4000);
    }

    #[test]
    fn gap_recursion_flags_growth() {
        let mut trace = RunTrace::start(v(&[0.0]), 3);
        for _ in 0..3 {
            trace.steps.push(0.5);
            trace.corrections.push(v(&[0.0]));
        }
        let gaps = [1.0, 1.0, 5.0, 1.0];
        let check = gap_recursion(&gaps, &trace, 0.5, 0.0, 1e-10).unwrap();
        assert!(!check.recursion_ok);
        assert_eq!(check.first_violation, Some(1));
        trace.steps[1] = 2.0;
        assert!(gap_recursion(&gaps, &trace, 0.5, 0.0, 1e-10).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let s = settings(StepSchedule::harmonic(0.5), NoiseModel::bounded(0.1), 8, 50);
        let trace = run_saa(&decay(1), &v(&[1.0]), &s, &SelectionStrategy::Center).unwrap();
        let path = interpolate(&trace);
        for (t, x) in trace.times.iter().zip(&trace.x) {
            assert_eq!(&path.eval(*t), x);
        }
        let mid = path.eval(0.25);
        let expected = &trace.x[0] + (trace.unprojected(0) - &trace.x[0]) * 0.5;
        assert!((mid - expected).amax() < 1e-15);
        assert!(path.jumps.is_empty());

        let flat = run_saa(&SetValuedMap::constant(Vector::zeros(1)), &v(&[2.0]), &settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 10), &SelectionStrategy::Center).unwrap();
        assert!(interpolate(&flat).samples(4).iter().all(|(_, x)| x[0] == 2.0));
    }

    #[test]
    fn interpolation_jumps_at_projections() {
        let (trace, _, _) = expanding_run(1);
        let path = interpolate(&trace);
        let events = trace.projection_events();
        assert_eq!(path.jumps, events.iter().map(|n| n + 1).collect::<Vec<_>>());
        let n = events[0];
        assert_ne!(path.left_limits[n], path.knots[n + 1]);
    }

    #[test]
    fn noise_window_examples() {
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::Zero, 0, 1000);
        let trace = run_saa(&decay(1), &v(&[1.0]), &s, &SelectionStrategy::Center).unwrap();
        assert_eq!(noise_window_check(&trace, 1.0, None).unwrap().max_window_sum, 0.0);

        let mut constant = RunTrace::start(v(&[0.0, 0.0]), 4);
        for n in 0..4 {
            constant.steps.push(0.25);
            constant.noise.push(v(&[3.0, 4.0]));
            constant.times.push(0.25 * (n + 1) as f64);
        }
        let r = noise_window_check(&constant, 1.0, Some((0, 0))).unwrap();
        assert!((r.max_window_sum - 5.0).abs() < 1e-15);
        assert!(!r.partial);
        let r = noise_window_check(&constant, 2.0, Some((0, 0))).unwrap();
        assert!(r.partial);
    }

    #[test]
    fn state_scaled_noise_second_moment() {
        let mut src = NoiseSource::new(NoiseModel::StateScaledGaussian { k: 0.5 }, 3);
        let x = v(&[1.0, -2.0, 0.5]);
        let bound = 0.5 * (1.0 + x.norm_squared());
        let mut sum = Vector::zeros(3);
        let mut second = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let m = src.draw(&x);
            second += m.norm_squared();
            sum += m;
        }
        assert!(second / draws as f64 <= 1.1 * bound);
        assert!((sum / draws as f64).amax() < 0.02);
    }

    #[test]
    fn trace_csv_layout() {
        let s = settings(StepSchedule::harmonic(1.0), NoiseModel::bounded(0.1), 2, 3);
        let trace = run_saa(&decay(2), &v(&[1.0, 1.0]), &s, &SelectionStrategy::Center).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,t_n,a_n,x_1,x_2,y_1,y_2,M_1,M_2,g_norm");
        assert_eq!(lines.len(), 5);
        assert!(lines.iter().all(|l| l.split(',').count() == 10));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn bounded_noise_never_exceeds_bound(seed in any::<u64>(), bound in 0.01f64..5.0, d in 1usize..6) {
            for distribution in [BoundedDistribution::UniformBall, BoundedDistribution::UniformCube, BoundedDistribution::Sign] {
                let mut src = NoiseSource::new(NoiseModel::BoundedIid { bound, distribution }, seed);
                let x = Vector::zeros(d);
                for _ in 0..200 {
                    prop_assert!(src.draw(&x).norm() <= bound * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn runs_are_bitwise_reproducible(seed in any::<u64>()) {
            let map = decay(2).with_perturbation(Perturbation::ball(0.1, NormSpec::max(2))).unwrap();
            let s = settings(StepSchedule::harmonic(1.0), NoiseModel::bounded(0.2), seed, 200);
            let strategy = SelectionStrategy::Uniform { seed };
            let a = run_saa(&map, &v(&[1.0, -1.0]), &s, &strategy).unwrap();
            let b = run_saa(&map, &v(&[1.0, -1.0]), &s, &strategy).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn projective_iterates_stay_in_closure(seed in any::<u64>(), gain in 0.5f64..3.0) {
            let map = SetValuedMap::scaled_identity(2, gain);
            let pair = InwardSetPair::balls(Vector::zeros(2), 0.5, 1.0, NormSpec::Euclidean).unwrap();
            let s = settings(StepSchedule::harmonic(1.0), NoiseModel::bounded(0.3), seed, 500);
            let trace = run_projective(&map, &v(&[0.9, 0.0]), &s, &SelectionStrategy::Center, &pair).unwrap();
            for x in &trace.x {
                prop_assert!(pair.in_closure_c(x).unwrap());
            }
            for n in 0..trace.len() {
                let g = &trace.x[n + 1] - trace.unprojected(n);
                prop_assert!((g - &trace.corrections[n]).amax() <= 1e-15);
            }
        }

        #[test]
        fn projection_is_nearest_point_of_ball(x in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let pair = InwardSetPair::balls(Vector::zeros(3), 1.0, 2.0, NormSpec::Euclidean).unwrap();
            let x = Vector::from_vec(x);
            let p = project(&pair, &x).unwrap();
            if x.norm() < 2.0 {
                prop_assert_eq!(p, x);
            } else {
                prop_assert!((p.norm() - 1.0).abs() < 1e-12);
                prop_assert!(((&x - &p).norm() - (x.norm() - 1.0)).abs() < 1e-12);
            }
        }
    }
}
