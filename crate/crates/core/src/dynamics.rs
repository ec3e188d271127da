//! Set-valued maps `H(x) = F(x) + U(x)`, selections `y ∈ H(x)`, Euler
//! solutions of the differential inclusion `ẋ ∈ H(x)`, numerically built
//! Lyapunov functions and inward directing set pairs.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::hull::nearest_in_hull;
use crate::norms::{FiniteSet, NormSpec};
use crate::rng::{stream, Stream};
use crate::{Error, Result, Vector, DIVERGENCE_THRESHOLD};

/// Selections may sit this far (relative to `max(1, ‖F(x)‖_∞)`) outside
/// `H(x)` before they count as a membership violation.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

pub type PointMap = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type SelectionCallback = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;

/// The set added to the base point `F(x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    None,
    /// Closed ball of radius `radius + growth·‖x‖` in `norm`. `growth = 0`
    /// gives a fixed compact ball.
    Ball { radius: f64, norm: NormSpec, growth: f64 },
    /// Convex hull of a finite offset list.
    Offsets(Vec<Vector>),
}

impl Perturbation {
    pub fn ball(radius: f64, norm: NormSpec) -> Self {
        Perturbation::Ball { radius, norm, growth: 0.0 }
    }

    fn radius_at(&self, x: &Vector) -> f64 {
        match self {
            Perturbation::Ball { radius, norm, growth } => {
                if *growth == 0.0 {
                    *radius
                } else {
                    radius + growth * norm.apply(x)
                }
            }
            _ => 0.0,
        }
    }
}

/// `H(x) = {F(x) + u : u ∈ U(x)}` on `ℝ^d`. Values are convex and compact by
/// construction (a norm ball or the convex hull of finitely many offsets).
#[derive(Clone)]
pub struct SetValuedMap {
    dim: usize,
    base: PointMap,
    perturbation: Perturbation,
}

impl fmt::Debug for SetValuedMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SetValuedMap")
            .field("dim", &self.dim)
            .field("perturbation", &self.perturbation)
            .finish_non_exhaustive()
    }
}

impl SetValuedMap {
    pub fn new(dim: usize, base: PointMap, perturbation: Perturbation) -> Result<Self> {
        match &perturbation {
            Perturbation::None => {}
            Perturbation::Ball { radius, norm, growth } => {
                norm.validate()?;
                norm.check_dim(dim)?;
                if !(*radius >= 0.0 && *growth >= 0.0) {
                    return Err(Error::InvalidArgument("ball radius and growth must be nonnegative".into()));
                }
            }
            Perturbation::Offsets(list) => {
                if list.is_empty() {
                    return Err(Error::EmptySet);
                }
                if let Some(u) = list.iter().find(|u| u.len() != dim) {
                    return Err(Error::DimensionMismatch { expected: dim, got: u.len() });
                }
            }
        }
        Ok(SetValuedMap { dim, base, perturbation })
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        SetValuedMap { dim, base: Arc::new(f), perturbation: Perturbation::None }
    }

    /// `x ↦ A x + b`.
    pub fn affine(a: DMatrix<f64>, b: Vector) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        let dim = b.len();
        Ok(Self::from_fn(dim, move |x| &a * x + &b))
    }

    /// `x ↦ s·x`.
    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self::from_fn(dim, move |x| x * s)
    }

    pub fn constant(v: Vector) -> Self {
        Self::from_fn(v.len(), move |_| v.clone())
    }

    pub fn with_perturbation(self, perturbation: Perturbation) -> Result<Self> {
        Self::new(self.dim, self.base, perturbation)
    }

    /// The map `x ↦ H(x) − x`, i.e. the mean field whose zeros are the fixed
    /// points of `H`.
    pub fn minus_identity(&self) -> Self {
        let base = self.base.clone();
        SetValuedMap {
            dim: self.dim,
            base: Arc::new(move |x| base(x) - x),
            perturbation: self.perturbation.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.perturbation
    }

    pub fn base(&self, x: &Vector) -> Vector {
        (self.base)(x)
    }

    /// Radius of the ball perturbation at `x` (zero for other kinds).
    pub fn radius_at(&self, x: &Vector) -> f64 {
        self.perturbation.radius_at(x)
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Distance from `y` to `H(x)`: measured in the ball's norm for ball
    /// perturbations and in the Euclidean norm otherwise.
    pub fn membership_distance(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let fx = self.base(x);
        Ok(self.offset_distance(x, &(y - fx)))
    }

    /// Distance from the offset `u` to the perturbation set `U(x)`.
    fn offset_distance(&self, x: &Vector, u: &Vector) -> f64 {
        match &self.perturbation {
            Perturbation::None => u.norm(),
            Perturbation::Ball { norm, .. } => (norm.apply(u) - self.radius_at(x)).max(0.0),
            Perturbation::Offsets(list) => (nearest_in_hull(list, u) - u).norm(),
        }
    }

    /// `sup_{w ∈ H(x)} ‖w‖₂`. Exact except for weighted p-norm balls, where
    /// `‖F(x)‖ + r·C` (C the Euclidean radius of the unit ball) is returned.
    pub fn sup_euclidean_norm(&self, x: &Vector) -> f64 {
        let fx = self.base(x);
        match &self.perturbation {
            Perturbation::None => fx.norm(),
            Perturbation::Offsets(list) => list.iter().map(|u| (&fx + u).norm()).fold(0.0, f64::max),
            Perturbation::Ball { norm, .. } => {
                let r = self.radius_at(x);
                match norm {
                    NormSpec::Euclidean => fx.norm() + r,
                    NormSpec::WeightedMax { weights } => fx
                        .iter()
                        .zip(weights)
                        .map(|(f, w)| (f.abs() + r * w).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                    NormSpec::WeightedP { .. } => fx.norm() + r * norm.euclidean_dominance(),
                }
            }
        }
    }

    /// Offsets whose selections bound the reachable set of ball-perturbed
    /// affine fields: zero (or the offset centroid) plus the `2d` axis
    /// extremes, or every listed offset.
    pub(crate) fn extreme_strategies(&self) -> Vec<SelectionStrategy> {
        let mut out = vec![SelectionStrategy::Center];
        match &self.perturbation {
            Perturbation::None => {}
            Perturbation::Ball { .. } => {
                for axis in 0..self.dim {
                    for sign in [1.0, -1.0] {
                        out.push(SelectionStrategy::AxisExtreme { axis, sign });
                    }
                }
            }
            Perturbation::Offsets(list) => {
                out.extend(list.iter().cloned().map(SelectionStrategy::FixedBias));
            }
        }
        out
    }
}

/// How a point of `H(x)` is chosen.
#[derive(Clone)]
pub enum SelectionStrategy {
    /// `F(x)` for balls, `F(x)` plus the offset centroid for offset lists.
    Center,
    /// Uniform draw from the perturbation set (Dirichlet weights for offset
    /// lists).
    Uniform { seed: u64 },
    /// `F(x) + u` for a fixed offset `u`, which must lie in the perturbation.
    FixedBias(Vector),
    /// `F(x) ± r(x)·e_axis` scaled onto the ball's sphere.
    AxisExtreme { axis: usize, sign: f64 },
    /// Arbitrary rule `(x, F(x)) ↦ y`; the result is checked for membership.
    Callback(SelectionCallback),
}

impl fmt::Debug for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Center => write!(f, "Center"),
            Self::Uniform { seed } => write!(f, "Uniform {{ seed: {seed} }}"),
            Self::FixedBias(u) => write!(f, "FixedBias({:?})", u.as_slice()),
            Self::AxisExtreme { axis, sign } => write!(f, "AxisExtreme({axis}, {sign})"),
            Self::Callback(_) => write!(f, "Callback"),
        }
    }
}

impl SelectionStrategy {
    pub fn callback<F>(f: F) -> Self
    where
        F: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        SelectionStrategy::Callback(Arc::new(f))
    }

    fn label(&self) -> String {
        match self {
            Self::Center => "center".into(),
            Self::Uniform { .. } => "uniform".into(),
            Self::FixedBias(u) => format!("offset {:?}", u.as_slice()),
            Self::AxisExtreme { axis, sign } => format!("axis {axis} {}", if *sign > 0.0 { '+' } else { '-' }),
            Self::Callback(_) => "callback".into(),
        }
    }
}

/// A selection strategy with its own random stream.
pub struct Selector {
    strategy: SelectionStrategy,
    rng: ChaCha8Rng,
}

impl Selector {
    pub fn new(strategy: SelectionStrategy) -> Self {
        let seed = match &strategy {
            SelectionStrategy::Uniform { seed } => *seed,
            _ => 0,
        };
        Selector { strategy, rng: stream(seed, Stream::Selection) }
    }

    pub fn strategy(&self) -> &SelectionStrategy {
        &self.strategy
    }

    /// The offset `u = y − F(x)` of the next selection at `x`.
    pub fn offset(&mut self, map: &SetValuedMap, x: &Vector, fx: &Vector) -> Result<Vector> {
        let d = map.dim;
        let u = match (&self.strategy, &map.perturbation) {
            (_, Perturbation::None) => match &self.strategy {
                SelectionStrategy::Callback(cb) => cb(x, fx) - fx,
                SelectionStrategy::FixedBias(u) => u.clone(),
                _ => return Ok(Vector::zeros(d)),
            },
            (SelectionStrategy::Center, Perturbation::Ball { .. }) => return Ok(Vector::zeros(d)),
            (SelectionStrategy::Center, Perturbation::Offsets(list)) => {
                return Ok(FiniteSet::new(list.clone())?.centroid())
            }
            (SelectionStrategy::Uniform { .. }, Perturbation::Ball { norm, .. }) => {
                return Ok(sample_ball(norm, d, map.radius_at(x), &mut self.rng))
            }
            (SelectionStrategy::Uniform { .. }, Perturbation::Offsets(list)) => {
                let w: Vec<f64> = list.iter().map(|_| Exp1.sample(&mut self.rng)).collect();
                let total: f64 = w.iter().sum();
                let mut u = Vector::zeros(d);
                for (wi, p) in w.iter().zip(list) {
                    u.axpy(wi / total, p, 1.0);
                }
                return Ok(u);
            }
            (SelectionStrategy::AxisExtreme { axis, sign }, Perturbation::Ball { norm, .. }) => {
                let widths = norm.ball_half_widths(d, map.radius_at(x));
                let mut u = Vector::zeros(d);
                u[*axis] = sign.signum() * widths[*axis];
                return Ok(u);
            }
            (SelectionStrategy::AxisExtreme { .. }, Perturbation::Offsets(_)) => {
                return Err(Error::InvalidArgument("axis extremes need a ball perturbation".into()))
            }
            (SelectionStrategy::FixedBias(u), _) => u.clone(),
            (SelectionStrategy::Callback(cb), _) => cb(x, fx) - fx,
        };
        let scale = fx.amax().max(1.0);
        let distance = map.offset_distance(x, &u);
        if distance > MEMBERSHIP_TOL * scale {
            return Err(Error::MembershipViolation { distance });
        }
        Ok(u)
    }

    pub fn select(&mut self, map: &SetValuedMap, x: &Vector) -> Result<Vector> {
        map.check_dim(x)?;
        let fx = map.base(x);
        let u = self.offset(map, x, &fx)?;
        Ok(fx + u)
    }
}

/// One selection `y ∈ H(x)` under `strategy`.
pub fn select(map: &SetValuedMap, x: &Vector, selector: &mut Selector) -> Result<Vector> {
    selector.select(map, x)
}

/// Uniform sample from the ball of the given radius centred at the origin.
pub(crate) fn sample_ball<R: Rng>(norm: &NormSpec, d: usize, radius: f64, rng: &mut R) -> Vector {
    match norm {
        NormSpec::Euclidean => {
            let g = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let n = g.norm();
            if n == 0.0 {
                return Vector::zeros(d);
            }
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            g * (r / n)
        }
        NormSpec::WeightedMax { weights } => {
            Vector::from_iterator(d, weights.iter().map(|w| radius * w * rng.random_range(-1.0..=1.0)))
        }
        NormSpec::WeightedP { weights, p } => {
            // uniform on the unit ℓ_p ball via generalised Gaussians
            let gamma = Gamma::new(1.0 / p, 1.0).expect("valid gamma parameters");
            let z: Vec<f64> = (0..d)
                .map(|_| {
                    let mag: f64 = gamma.sample(rng);
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * mag.powf(1.0 / p)
                })
                .collect();
            let tail: f64 = Exp1.sample(rng);
            let denom = (z.iter().map(|v| v.abs().powf(*p)).sum::<f64>() + tail).powf(1.0 / p);
            Vector::from_iterator(d, z.iter().zip(weights).map(|(zi, w)| radius * zi / denom * w.powf(-1.0 / p)))
        }
    }
}

/// Result of checking the linear-growth bound of a set-valued map on a grid.
#[derive(Clone, Debug)]
pub struct MarchaudReport {
    pub rows: Vec<MarchaudRow>,
    pub pass: bool,
    pub convex_compact: &'static str,
    pub upper_semicontinuity: &'static str,
}

#[derive(Clone, Debug)]
pub struct MarchaudRow {
    pub point: Vector,
    pub sup_norm: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Evaluate `sup_{w ∈ H(x)} ‖w‖ ≤ K(1 + ‖x‖)` at every grid point.
pub fn marchaud_report(map: &SetValuedMap, grid: &FiniteSet, k: f64) -> Result<MarchaudReport> {
    if grid.dim() != map.dim {
        return Err(Error::DimensionMismatch { expected: map.dim, got: grid.dim() });
    }
    let rows: Vec<MarchaudRow> = grid
        .points()
        .iter()
        .map(|x| {
            let sup_norm = map.sup_euclidean_norm(x);
            let bound = k * (1.0 + x.norm());
            MarchaudRow { point: x.clone(), sup_norm, bound, ok: sup_norm <= bound * (1.0 + 1e-12) }
        })
        .collect();
    let pass = rows.iter().all(|r| r.ok);
    Ok(MarchaudReport {
        rows,
        pass,
        convex_compact: "by construction",
        upper_semicontinuity: "by construction, not numerically tested",
    })
}

/// Explicit Euler solution `x_{k+1} = x_k + h·y_k`, `y_k ∈ H(x_k)`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub selections: Vec<Vector>,
}

impl Trajectory {
    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// CSV with columns `t, x_1..x_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.states[0].len();
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=d).map(|i| format!("x_{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            writeln!(w, "{}", fmt_row(std::iter::once(*t).chain(x.iter().copied())))?;
        }
        Ok(())
    }
}

/// Comma-joined values at 17 significant digits.
pub fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
}

pub(crate) fn step_count(horizon: f64, h: f64) -> usize {
    ((horizon / h) * (1.0 - 1e-12)).ceil() as usize
}

pub fn euler_solve(map: &SetValuedMap, x0: &Vector, h: f64, horizon: f64, selector: &mut Selector) -> Result<Trajectory> {
    if !(h > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidArgument("step and horizon must be positive".into()));
    }
    map.check_dim(x0)?;
    let steps = step_count(horizon, h);
    let mut traj = Trajectory {
        step: h,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        selections: Vec::with_capacity(steps),
    };
    traj.times.push(0.0);
    traj.states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        let y = selector.select(map, &x)?;
        let next = &x + &y * h;
        if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { step: k + 1, last_finite: x });
        }
        traj.selections.push(y);
        traj.times.push((k + 1) as f64 * h);
        traj.states.push(next.clone());
        x = next;
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovParams {
    /// `g(0) = c`.
    pub c: f64,
    /// `g(t) ↑ d_g` as `t → ∞`.
    pub d_g: f64,
    pub horizon: f64,
    pub step: f64,
    /// Required distance to the attractor at the horizon.
    pub horizon_tol: f64,
    /// Radius of the probe points used to validate the horizon at build time.
    pub probe_radius: f64,
}

impl LyapunovParams {
    pub fn new(c: f64, d_g: f64, horizon: f64, step: f64) -> Self {
        LyapunovParams { c, d_g, horizon, step, horizon_tol: 1e-3, probe_radius: 1.0 }
    }
}

/// `V(x) = max { d(y, 𝒜)·g(t) : y ∈ Φ_t(x), t ≥ 0 }` evaluated on Euler
/// trajectories, with `g(t) = d_g − (d_g − c)e^{−t}` and the flow sampled by
/// the centre selection plus the extreme offsets of the perturbation.
#[derive(Clone, Debug)]
pub struct LyapunovEstimate {
    map: SetValuedMap,
    attractor: FiniteSet,
    params: LyapunovParams,
    strategies: Vec<SelectionStrategy>,
}

impl LyapunovEstimate {
    pub fn build(map: SetValuedMap, attractor: FiniteSet, params: LyapunovParams) -> Result<Self> {
        if !(0.0 < params.c && params.c < params.d_g) {
            return Err(Error::InvalidArgument(format!("need 0 < c < d, got c={} d={}", params.c, params.d_g)));
        }
        if !(params.step > 0.0 && params.horizon > 0.0 && params.horizon_tol > 0.0) {
            return Err(Error::InvalidArgument("step, horizon and tolerance must be positive".into()));
        }
        if attractor.dim() != map.dim {
            return Err(Error::DimensionMismatch { expected: map.dim, got: attractor.dim() });
        }
        let strategies = map.extreme_strategies();
        let v = LyapunovEstimate { map, attractor, params, strategies };
        let centroid = v.attractor.centroid();
        for u in NormSpec::Euclidean.axis_extremes(v.map.dim, v.params.probe_radius) {
            v.eval(&(&centroid + u))?;
        }
        Ok(v)
    }

    pub fn params(&self) -> &LyapunovParams {
        &self.params
    }

    pub fn attractor(&self) -> &FiniteSet {
        &self.attractor
    }

    pub fn map(&self) -> &SetValuedMap {
        &self.map
    }

    pub fn g(&self, t: f64) -> f64 {
        self.params.d_g - (self.params.d_g - self.params.c) * (-t).exp()
    }

    pub fn distance_to_attractor(&self, x: &Vector) -> f64 {
        self.attractor.distance_to(x, &NormSpec::Euclidean)
    }

    pub fn eval(&self, x: &Vector) -> Result<f64> {
        self.map.check_dim(x)?;
        let steps = step_count(self.params.horizon, self.params.step);
        let h = self.params.step;
        let mut best: f64 = 0.0;
        for strategy in &self.strategies {
            let mut selector = Selector::new(strategy.clone());
            let mut state = x.clone();
            let mut dist = self.distance_to_attractor(&state);
            best = best.max(dist * self.g(0.0));
            for k in 1..=steps {
                let y = selector.select(&self.map, &state)?;
                state.axpy(h, &y, 1.0);
                if !state.iter().all(|v| v.is_finite()) || state.norm() > DIVERGENCE_THRESHOLD {
                    return Err(Error::Diverged { step: k, last_finite: state });
                }
                dist = self.distance_to_attractor(&state);
                best = best.max(dist * self.g(k as f64 * h));
            }
            if dist > self.params.horizon_tol {
                return Err(Error::HorizonTooShort { distance: dist, tolerance: self.params.horizon_tol });
            }
        }
        Ok(best)
    }

    /// CSV with columns `x_1..x_d, V`.
    pub fn write_grid_csv<W: Write>(&self, grid: &FiniteSet, mut w: W) -> Result<()> {
        let d = grid.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).chain(std::iter::once("V".into())).collect();
        writeln!(w, "{}", header.join(","))?;
        for x in grid.points() {
            let v = self.eval(x)?;
            writeln!(w, "{}", fmt_row(x.iter().copied().chain(std::iter::once(v))))?;
        }
        Ok(())
    }

    /// Check `V(x) > V(x(t))` along the centre-selection Euler trajectory
    /// from each point off the attractor, at the given multiples of the step.
    pub fn check_decrease(&self, points: &FiniteSet, step_multiples: &[usize]) -> Result<DecreaseReport> {
        let mut report = DecreaseReport { checked: 0, violations: Vec::new() };
        let h = self.params.step;
        let last = step_multiples.iter().copied().max().unwrap_or(0);
        for x in points.points() {
            if self.distance_to_attractor(x) <= self.params.horizon_tol {
                continue;
            }
            let vx = self.eval(x)?;
            let mut selector = Selector::new(SelectionStrategy::Center);
            let mut state = x.clone();
            for k in 1..=last {
                let y = selector.select(&self.map, &state)?;
                state.axpy(h, &y, 1.0);
                if step_multiples.contains(&k) {
                    let vt = self.eval(&state)?;
                    report.checked += 1;
                    if !(vx > vt) {
                        report.violations.push((x.clone(), k as f64 * h, vx, vt));
                    }
                }
            }
        }
        Ok(report)
    }
}

#[derive(Clone, Debug)]
pub struct DecreaseReport {
    pub checked: usize,
    /// `(x, t, V(x), V(x(t)))` for every failed comparison.
    pub violations: Vec<(Vector, f64, f64, f64)>,
}

pub fn lyapunov_build(
    map: SetValuedMap,
    attractor: FiniteSet,
    c: f64,
    d_g: f64,
    horizon: f64,
    h: f64,
) -> Result<LyapunovEstimate> {
    LyapunovEstimate::build(map, attractor, LyapunovParams::new(c, d_g, horizon, h))
}

/// The function whose sublevel sets define `ℬ` and `𝒞`.
#[derive(Clone, Debug)]
pub enum LevelFunction {
    /// `‖x − center‖`, giving norm balls.
    Norm { center: Vector, norm: NormSpec },
    Lyapunov(Arc<LyapunovEstimate>),
}

impl LevelFunction {
    pub fn value(&self, x: &Vector) -> Result<f64> {
        match self {
            LevelFunction::Norm { center, norm } => norm.eval(&(x - center)),
            LevelFunction::Lyapunov(v) => v.eval(x),
        }
    }

    /// Point the boundary sampler and sublevel projections radiate from.
    pub fn anchor(&self) -> Vector {
        match self {
            LevelFunction::Norm { center, .. } => center.clone(),
            LevelFunction::Lyapunov(v) => v.attractor().centroid(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LevelFunction::Norm { center, .. } => center.len(),
            LevelFunction::Lyapunov(v) => v.map().dim(),
        }
    }

    fn is_cheap(&self) -> bool {
        matches!(self, LevelFunction::Norm { .. })
    }
}

/// `ℬ = {level < r_b}` and `𝒞 = {level < r_c}` with `r_b < r_c`, so that
/// `closure(ℬ) ⊂ 𝒞`.
#[derive(Clone, Debug)]
pub struct InwardSetPair {
    level: LevelFunction,
    r_b: f64,
    r_c: f64,
}

impl InwardSetPair {
    pub fn new(level: LevelFunction, r_b: f64, r_c: f64) -> Result<Self> {
        if !(0.0 < r_b && r_b < r_c) {
            return Err(Error::InvalidArgument(format!("need 0 < R_b < R_c, got {r_b} and {r_c}")));
        }
        if let LevelFunction::Norm { center, norm } = &level {
            norm.validate()?;
            norm.check_dim(center.len())?;
        }
        Ok(InwardSetPair { level, r_b, r_c })
    }

    /// Concentric norm balls.
    pub fn balls(center: Vector, r_b: f64, r_c: f64, norm: NormSpec) -> Result<Self> {
        Self::new(LevelFunction::Norm { center, norm }, r_b, r_c)
    }

    pub fn level(&self) -> &LevelFunction {
        &self.level
    }

    pub fn r_b(&self) -> f64 {
        self.r_b
    }

    pub fn r_c(&self) -> f64 {
        self.r_c
    }

    pub fn in_b(&self, x: &Vector) -> Result<bool> {
        Ok(self.level.value(x)? < self.r_b)
    }

    pub fn in_c(&self, x: &Vector) -> Result<bool> {
        Ok(self.level.value(x)? < self.r_c)
    }

    pub fn in_closure_b(&self, x: &Vector) -> Result<bool> {
        Ok(self.level.value(x)? <= self.r_b)
    }

    pub fn in_closure_c(&self, x: &Vector) -> Result<bool> {
        Ok(self.level.value(x)? <= self.r_c)
    }

    /// Point on `{level = r}` along the ray `anchor + s·direction`, `s > 0`.
    pub fn level_crossing(&self, direction: &Vector, r: f64, tol: f64) -> Result<Vector> {
        let anchor = self.level.anchor();
        if let LevelFunction::Norm { norm, .. } = &self.level {
            let u = norm
                .to_sphere(direction, r)
                .ok_or_else(|| Error::InvalidArgument("zero direction".into()))?;
            return Ok(anchor + u);
        }
        let dir = direction / direction.norm();
        let at = |s: f64| -> Result<f64> { self.level.value(&(&anchor + &dir * s)) };
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut expansions = 0;
        while at(hi)? < r {
            lo = hi;
            hi *= 2.0;
            expansions += 1;
            if expansions > 60 {
                return Err(Error::InvalidArgument(format!("level {r} is never reached along the ray")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = at(mid)?;
            if (v - r).abs() <= tol {
                return Ok(&anchor + &dir * mid);
            }
            if v < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(&anchor + &dir * (0.5 * (lo + hi)))
    }

    /// `n` points of `∂𝒞`. Directions are evenly spaced for `d ≤ 2` and
    /// seeded Gaussian directions otherwise.
    pub fn boundary_samples(&self, n: usize, seed: u64, tol: f64) -> Result<Vec<Vector>> {
        sample_directions(self.level.dim(), n, seed)
            .iter()
            .map(|dir| self.level_crossing(dir, self.r_c, tol))
            .collect()
    }
}

pub fn build_inward_pair(v: Arc<LyapunovEstimate>, r_b: f64, r_c: f64) -> Result<InwardSetPair> {
    InwardSetPair::new(LevelFunction::Lyapunov(v), r_b, r_c)
}

pub(crate) fn sample_directions(d: usize, n: usize, seed: u64) -> Vec<Vector> {
    match d {
        1 => (0..n).map(|k| Vector::from_element(1, if k % 2 == 0 { 1.0 } else { -1.0 })).collect(),
        2 => (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Vector::from_column_slice(&[a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut rng = stream(seed, Stream::Sampling);
            (0..n)
                .map(|_| {
                    let g = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                    let n = g.norm();
                    g / n
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug)]
pub struct InwardOptions {
    /// An exit is declared once the level exceeds `r_c·(1 + margin_frac)`.
    pub margin_frac: f64,
    /// Level evaluations per trajectory when the level function is costly.
    pub checkpoints: usize,
    pub seed: u64,
    pub boundary_tol: f64,
}

impl Default for InwardOptions {
    fn default() -> Self {
        InwardOptions { margin_frac: 0.01, checkpoints: 100, seed: 0, boundary_tol: 1e-9 }
    }
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub start: Vector,
    pub time: f64,
    pub state: Vector,
    pub level: f64,
    pub selection: String,
}

#[derive(Clone, Debug)]
pub struct InwardReport {
    pub holds: bool,
    pub trajectories: usize,
    pub counterexample: Option<Counterexample>,
}

pub fn inward_check(pair: &InwardSetPair, map: &SetValuedMap, n_boundary: usize, h: f64, horizon: f64) -> Result<InwardReport> {
    inward_check_with(pair, map, n_boundary, h, horizon, &InwardOptions::default())
}

/// Check that Euler trajectories started on `∂𝒞` stay in `𝒞` up to the
/// horizon, for the centre selection, the extreme offsets and the selection
/// pushing outward from the anchor.
pub fn inward_check_with(
    pair: &InwardSetPair,
    map: &SetValuedMap,
    n_boundary: usize,
    h: f64,
    horizon: f64,
    opts: &InwardOptions,
) -> Result<InwardReport> {
    if !(h > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidArgument("step and horizon must be positive".into()));
    }
    if pair.level.dim() != map.dim {
        return Err(Error::DimensionMismatch { expected: pair.level.dim(), got: map.dim });
    }
    let mut strategies = map.extreme_strategies();
    if let Perturbation::Ball { norm, .. } = map.perturbation().clone() {
        let anchor = pair.level.anchor();
        let pert = map.perturbation().clone();
        strategies.push(SelectionStrategy::callback(move |x, fx| {
            let r = pert.radius_at(x);
            fx + norm.to_sphere(&(x - &anchor), r).unwrap_or_else(|| Vector::zeros(x.len()))
        }));
    }
    let threshold = pair.r_c * (1.0 + opts.margin_frac);
    let steps = step_count(horizon, h);
    let stride = if pair.level.is_cheap() { 1 } else { (steps / opts.checkpoints.max(1)).max(1) };
    let mut trajectories = 0;
    for start in pair.boundary_samples(n_boundary, opts.seed, opts.boundary_tol)? {
        for strategy in &strategies {
            trajectories += 1;
            let label = strategy.label();
            let mut selector = Selector::new(strategy.clone());
            let mut state = start.clone();
            for k in 1..=steps {
                let y = selector.select(map, &state)?;
                state.axpy(h, &y, 1.0);
                let finite = state.iter().all(|v| v.is_finite());
                if !finite || k % stride == 0 || k == steps {
                    let level = if finite { pair.level.value(&state)? } else { f64::INFINITY };
                    if level > threshold {
                        return Ok(InwardReport {
                            holds: false,
                            trajectories,
                            counterexample: Some(Counterexample {
                                start,
                                time: k as f64 * h,
                                state,
                                level,
                                selection: label,
                            }),
                        });
                    }
                }
            }
        }
    }
    Ok(InwardReport { holds: true, trajectories, counterexample: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn neg_identity(d: usize) -> SetValuedMap {
        SetValuedMap::scaled_identity(d, -1.0)
    }

    #[test]
    fn singleton_selection_is_base_point() {
        let map = SetValuedMap::from_fn(2, |x| x * 2.0);
        let x = v(&[1.0, -3.0]);
        for s in [SelectionStrategy::Center, SelectionStrategy::Uniform { seed: 4 }] {
            assert_eq!(Selector::new(s).select(&map, &x).unwrap(), v(&[2.0, -6.0]));
        }
    }

    #[test]
    fn fixed_bias_on_ball_boundary() {
        let map = neg_identity(2).with_perturbation(Perturbation::ball(0.1, NormSpec::max(2))).unwrap();
        let mut sel = Selector::new(SelectionStrategy::FixedBias(v(&[0.1, 0.0])));
        let x = v(&[1.0, 2.0]);
        assert_eq!(sel.select(&map, &x).unwrap(), v(&[-0.9, -2.0]));
        let mut bad = Selector::new(SelectionStrategy::FixedBias(v(&[0.2, 0.0])));
        assert!(matches!(bad.select(&map, &x), Err(Error::MembershipViolation { .. })));
    }

    #[test]
    fn uniform_draws_stay_in_ball() {
        for norm in [
            NormSpec::max(2),
            NormSpec::Euclidean,
            NormSpec::weighted_p(vec![1.0, 3.0], 1.5).unwrap(),
            NormSpec::weighted_max(vec![0.5, 2.0]).unwrap(),
        ] {
            let map = neg_identity(2).with_perturbation(Perturbation::ball(0.1, norm.clone())).unwrap();
            let mut sel = Selector::new(SelectionStrategy::Uniform { seed: 9 });
            let x = v(&[0.3, -0.7]);
            let fx = map.base(&x);
            for _ in 0..100_000 {
                let y = sel.select(&map, &x).unwrap();
                assert!(norm.apply(&(&y - &fx)) <= 0.1 + 1e-12);
                assert!(map.membership_distance(&x, &y).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn callback_outside_set_is_rejected() {
        let map = neg_identity(1).with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean)).unwrap();
        let mut ok = Selector::new(SelectionStrategy::callback(|_, fx| fx + Vector::from_element(1, 0.05)));
        assert!(ok.select(&map, &v(&[1.0])).is_ok());
        let mut bad = Selector::new(SelectionStrategy::callback(|_, fx| fx + Vector::from_element(1, 0.5)));
        assert!(matches!(bad.select(&map, &v(&[1.0])), Err(Error::MembershipViolation { .. })));
    }

    #[test]
    fn offset_list_selections() {
        let offsets = vec![v(&[0.1, 0.0]), v(&[-0.1, 0.0]), v(&[0.0, 0.2])];
        let map = neg_identity(2).with_perturbation(Perturbation::Offsets(offsets)).unwrap();
        let x = v(&[1.0, 1.0]);
        let c = Selector::new(SelectionStrategy::Center).select(&map, &x).unwrap();
        assert!((c - v(&[-1.0, -1.0 + 0.2 / 3.0])).norm() < 1e-15);
        let mut sel = Selector::new(SelectionStrategy::Uniform { seed: 1 });
        for _ in 0..1000 {
            let y = sel.select(&map, &x).unwrap();
            assert!(map.membership_distance(&x, &y).unwrap() < 1e-12);
        }
        assert!(map.membership_distance(&x, &v(&[-1.0, -0.5])).unwrap() > 0.29);
    }

    #[test]
    fn marchaud_examples() {
        let grid = FiniteSet::new(
            (-2..=2).flat_map(|i| (-2..=2).map(move |j| v(&[i as f64 * 0.5, j as f64 * 0.5]))).collect(),
        )
        .unwrap();
        let zero = SetValuedMap::constant(Vector::zeros(2))
            .with_perturbation(Perturbation::ball(1.0, NormSpec::Euclidean))
            .unwrap();
        assert!(marchaud_report(&zero, &grid, 1.0).unwrap().pass);

        let square = SetValuedMap::from_fn(1, |x| x.map(|v| v * v));
        let far = FiniteSet::from_scalars(&[1e3]).unwrap();
        assert!(!marchaud_report(&square, &far, 10.0).unwrap().pass);

        let unit = FiniteSet::ball_samples(&Vector::zeros(2), 1.0, &NormSpec::Euclidean, 0.1).unwrap();
        let r = marchaud_report(&neg_identity(2), &unit, 1.0).unwrap();
        assert!(r.pass);
        assert_eq!(r.upper_semicontinuity, "by construction, not numerically tested");
    }

    #[test]
    fn sup_norm_of_box_ball_is_attained_at_a_corner() {
        let map = SetValuedMap::constant(v(&[1.0, -1.0]))
            .with_perturbation(Perturbation::ball(0.5, NormSpec::max(2)))
            .unwrap();
        let x = Vector::zeros(2);
        assert!((map.sup_euclidean_norm(&x) - (2.0 * 1.5f64.powi(2)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn euler_linear_decay() {
        let h = 1e-3;
        let traj = euler_solve(&neg_identity(1), &v(&[1.0]), h, 2.0, &mut Selector::new(SelectionStrategy::Center)).unwrap();
        assert_eq!(traj.states.len(), 2001);
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] - (-t).exp()).abs() <= h);
        }
    }

    #[test]
    fn euler_constant_field_is_exact() {
        let field = SetValuedMap::constant(v(&[0.5, -0.25]));
        let traj = euler_solve(&field, &v(&[1.0, 1.0]), 0.25, 2.0, &mut Selector::new(SelectionStrategy::Center)).unwrap();
        assert_eq!(traj.last(), &v(&[2.0, 0.5]));
    }

    #[test]
    fn euler_tube_for_perturbed_decay() {
        // |x(t)| ≤ e^{-t}|x0| + 0.1(1 - e^{-t}) by variation of constants
        let map = neg_identity(1).with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean)).unwrap();
        let h = 1e-3;
        for strategy in [
            SelectionStrategy::Uniform { seed: 3 },
            SelectionStrategy::FixedBias(v(&[0.1])),
            SelectionStrategy::FixedBias(v(&[-0.1])),
        ] {
            let traj = euler_solve(&map, &v(&[2.0]), h, 5.0, &mut Selector::new(strategy)).unwrap();
            for (t, x) in traj.times.iter().zip(&traj.states) {
                let envelope = (-t).exp() * 2.0 + 0.1 * (1.0 - (-t).exp());
                assert!(x[0].abs() <= envelope + 2.0 * h);
            }
        }
    }

    #[test]
    fn euler_divergence_reports_last_state() {
        let blowup = SetValuedMap::from_fn(1, |x| x.map(|v| v * v));
        let err = euler_solve(&blowup, &v(&[10.0]), 0.5, 100.0, &mut Selector::new(SelectionStrategy::Center)).unwrap_err();
        match err {
            Error::Diverged { last_finite, .. } => assert!(last_finite[0].is_finite()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn trajectory_csv_header() {
        let traj = euler_solve(&neg_identity(2), &v(&[1.0, 0.0]), 0.5, 1.0, &mut Selector::new(SelectionStrategy::Center)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("5.0000000000000000e-1,5.0000000000000000e-1,"));
    }

    fn decay_lyapunov(h: f64) -> LyapunovEstimate {
        lyapunov_build(neg_identity(1), FiniteSet::from_scalars(&[0.0]).unwrap(), 1.0, 2.0, 10.0, h).unwrap()
    }

    #[test]
    fn lyapunov_of_linear_decay_is_abs() {
        let v_est = decay_lyapunov(1e-2);
        for x in [-1.5, -0.3, 0.0, 0.7, 2.0] {
            let val = v_est.eval(&v(&[x])).unwrap();
            assert!((val - x.abs()).abs() < 1e-12, "{x}: {val}");
            assert!(val <= x.abs() * 2.0);
        }
    }

    #[test]
    fn lyapunov_rejects_bad_parameters_and_short_horizons() {
        let a = FiniteSet::from_scalars(&[0.0]).unwrap();
        assert!(lyapunov_build(neg_identity(1), a.clone(), 2.0, 1.0, 10.0, 0.01).is_err());
        assert!(matches!(
            lyapunov_build(neg_identity(1), a, 1.0, 2.0, 0.5, 0.01),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn lyapunov_decreases_along_flow() {
        let v_est = decay_lyapunov(1e-2);
        let pts = FiniteSet::from_scalars(&[-1.0, -0.2, 0.5, 1.8]).unwrap();
        let r = v_est.check_decrease(&pts, &[1, 10, 100]).unwrap();
        assert_eq!(r.checked, 12);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn lyapunov_with_ball_perturbation_uses_extremes() {
        let map = neg_identity(1).with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean)).unwrap();
        let attractor = FiniteSet::ball_samples(&Vector::zeros(1), 0.1, &NormSpec::Euclidean, 0.001).unwrap();
        let est = LyapunovEstimate::build(map, attractor, LyapunovParams::new(1.0, 2.0, 12.0, 1e-2)).unwrap();
        assert!(est.eval(&v(&[0.05])).unwrap() < 1e-3);
        let far = est.eval(&v(&[1.0])).unwrap();
        assert!((far - 0.9).abs() < 1e-2);
    }

    #[test]
    fn inward_pair_from_abs() {
        let pair = build_inward_pair(Arc::new(decay_lyapunov(1e-2)), 1.0, 2.0).unwrap();
        assert!(pair.in_c(&v(&[1.5])).unwrap());
        assert!(!pair.in_b(&v(&[1.5])).unwrap());
        assert!(pair.in_b(&v(&[-0.99])).unwrap());
        assert!(!pair.in_c(&v(&[-2.0])).unwrap());
        let boundary = pair.boundary_samples(4, 0, 1e-9).unwrap();
        for x in &boundary {
            assert!((pair.level().value(x).unwrap() - 2.0).abs() <= 1e-9);
        }
        assert!(build_inward_pair(Arc::new(decay_lyapunov(1e-2)), 2.0, 2.0).is_err());
    }

    #[test]
    fn closure_of_b_lies_in_c() {
        let pair = InwardSetPair::balls(v(&[1.0, -1.0]), 0.5, 0.8, NormSpec::weighted_max(vec![1.0, 2.0]).unwrap()).unwrap();
        let samples = FiniteSet::ball_samples(&v(&[1.0, -1.0]), 0.5, &NormSpec::weighted_max(vec![1.0, 2.0]).unwrap(), 0.05).unwrap();
        for x in samples.points() {
            assert!(pair.in_closure_b(x).unwrap());
            assert!(pair.in_c(x).unwrap());
        }
    }

    #[test]
    fn inward_examples() {
        let contract = neg_identity(2);
        for r in [0.5, 1.0, 2.0] {
            let pair = InwardSetPair::balls(Vector::zeros(2), r / 2.0, r, NormSpec::Euclidean).unwrap();
            assert!(inward_check(&pair, &contract, 16, 0.01, 3.0).unwrap().holds);
        }
        let pair = InwardSetPair::balls(Vector::zeros(2), 1.0, 2.0, NormSpec::Euclidean).unwrap();
        let perturbed = neg_identity(2).with_perturbation(Perturbation::ball(0.1, NormSpec::Euclidean)).unwrap();
        assert!(inward_check(&pair, &perturbed, 16, 0.01, 3.0).unwrap().holds);

        let expand = SetValuedMap::scaled_identity(2, 1.0);
        let r = inward_check(&pair, &expand, 16, 0.01, 3.0).unwrap();
        assert!(!r.holds);
        let cx = r.counterexample.unwrap();
        assert!((cx.start.norm() - 2.0).abs() < 1e-12);
        assert!(cx.level > 2.0);
    }

    #[test]
    fn inward_check_on_lyapunov_sublevels() {
        let est = Arc::new(decay_lyapunov(1e-2));
        let pair = build_inward_pair(est, 1.0, 2.0).unwrap();
        assert!(inward_check(&pair, &neg_identity(1), 2, 0.01, 2.0).unwrap().holds);
        assert!(!inward_check(&pair, &SetValuedMap::scaled_identity(1, 1.0), 2, 0.01, 2.0).unwrap().holds);
    }
}
