//! Stochastic approximation of fixed points `x ∈ Tx` of contractive
//! set-valued maps `T(x) = F(x) + U(x)`, comparison with the projective
//! partner, and the generic boundedness comparison for stage maps
//! `x_{n+1} ∈ G(x_n) + ξ_n`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{euler_solve, InwardSetPair, Perturbation, SelectionStrategy, Selector, SetValuedMap};
use crate::hull::nearest_in_hull;
use crate::norms::{ball_hausdorff, FiniteSet, NormSpec};
use crate::rng::{stream, Stream};
use crate::saa::{coupled_run, coupled_with_steps, gap_recursion, CoupledRun, GapCheck, RunTrace, SaaSettings};
use crate::{Error, Result, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseSpec {
    Affine {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OffsetSpec {
    None,
    /// Ball of the metric's norm with radius `radius + growth·ρ(x, 0)`.
    Ball {
        radius: f64,
        #[serde(default)]
        growth: f64,
    },
    List { points: Vec<Vec<f64>> },
}

/// On-disk layout of a contractive set-valued map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpMapFile {
    pub base: BaseSpec,
    pub offsets: OffsetSpec,
    pub metric: NormSpec,
    pub alpha: f64,
    #[serde(rename = "D")]
    pub diameter: f64,
}

/// `T(x) = F(x) + U(x)` with declared modulus `α` and diameter bound `D` in
/// the metric induced by `metric`.
#[derive(Clone, Debug)]
pub struct ContractiveSetMap {
    map: SetValuedMap,
    affine: Option<(DMatrix<f64>, Vector)>,
    metric: NormSpec,
    alpha: f64,
    diameter: f64,
}

impl ContractiveSetMap {
    pub fn new(map: SetValuedMap, metric: NormSpec, alpha: f64, diameter: f64) -> Result<Self> {
        metric.validate()?;
        metric.check_dim(map.dim())?;
        if !(alpha >= 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("contraction modulus must lie in [0, 1), got {alpha}")));
        }
        if !(diameter >= 0.0) {
            return Err(Error::InvalidArgument(format!("diameter bound must be nonnegative, got {diameter}")));
        }
        if let Perturbation::Ball { norm, .. } = map.perturbation() {
            if *norm != metric {
                return Err(Error::InvalidNorm("ball offsets must use the metric's norm".into()));
            }
        }
        Ok(ContractiveSetMap { map, affine: None, metric, alpha, diameter })
    }

    pub fn affine(
        a: DMatrix<f64>,
        b: Vector,
        offsets: Perturbation,
        metric: NormSpec,
        alpha: f64,
        diameter: f64,
    ) -> Result<Self> {
        let map = SetValuedMap::affine(a.clone(), b.clone())?.with_perturbation(offsets)?;
        let mut out = Self::new(map, metric, alpha, diameter)?;
        out.affine = Some((a, b));
        Ok(out)
    }

    pub fn from_file_spec(spec: FpMapFile) -> Result<Self> {
        let BaseSpec::Affine { a, b } = spec.base;
        let d = b.len();
        if a.len() != d || a.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidArgument(format!("A must be {d}×{d}")));
        }
        let a = DMatrix::from_fn(d, d, |i, j| a[i][j]);
        let offsets = match spec.offsets {
            OffsetSpec::None => Perturbation::None,
            OffsetSpec::Ball { radius, growth } => Perturbation::Ball { radius, norm: spec.metric.clone(), growth },
            OffsetSpec::List { points } => Perturbation::Offsets(points.iter().map(|p| Vector::from_column_slice(p)).collect()),
        };
        Self::affine(a, Vector::from_vec(b), offsets, spec.metric, spec.alpha, spec.diameter)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file_spec(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn map(&self) -> &SetValuedMap {
        &self.map
    }

    pub fn metric(&self) -> &NormSpec {
        &self.metric
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn rho(&self, x: &Vector, y: &Vector) -> f64 {
        self.metric.distance(x, y)
    }

    /// `diam(Tx)` in the metric.
    pub fn diameter_at(&self, x: &Vector) -> f64 {
        match self.map.perturbation() {
            Perturbation::None => 0.0,
            Perturbation::Ball { .. } => 2.0 * self.map.radius_at(x),
            Perturbation::Offsets(list) => {
                let mut best: f64 = 0.0;
                for (i, p) in list.iter().enumerate() {
                    for q in &list[i + 1..] {
                        best = best.max(self.rho(p, q));
                    }
                }
                best
            }
        }
    }

    /// `H_ρ(Tx, Ty)`; exact because both values are translates of one set
    /// (or, with growth, concentric-shape balls of different radii).
    pub fn hausdorff(&self, x: &Vector, y: &Vector) -> f64 {
        let (fx, fy) = (self.map.base(x), self.map.base(y));
        match self.map.perturbation() {
            Perturbation::Ball { norm, growth, .. } if *growth > 0.0 => {
                ball_hausdorff(&fx, self.map.radius_at(x), &fy, self.map.radius_at(y), norm)
                    .expect("dimensions match")
            }
            _ => self.rho(&fx, &fy),
        }
    }

    /// `d_ρ(x, Tx)`. Exact for balls and singletons; for offset lists the
    /// ρ-distance to the Euclidean-nearest hull point, an upper bound.
    pub fn residual(&self, x: &Vector) -> f64 {
        let fx = self.map.base(x);
        match self.map.perturbation() {
            Perturbation::None => self.rho(x, &fx),
            Perturbation::Ball { .. } => (self.rho(x, &fx) - self.map.radius_at(x)).max(0.0),
            Perturbation::Offsets(list) => {
                let u = nearest_in_hull(list, &(x - &fx));
                self.rho(x, &(fx + u))
            }
        }
    }

    /// Fixed point of the base map `F`: a linear solve for affine maps,
    /// Banach iteration otherwise.
    pub fn base_fixed_point(&self) -> Result<Vector> {
        if let Some((a, b)) = &self.affine {
            let d = b.len();
            return (DMatrix::identity(d, d) - a).lu().solve(b).ok_or(Error::Singular);
        }
        let mut x = Vector::zeros(self.dim());
        for k in 0..1_000_000 {
            let next = self.map.base(&x);
            let step = self.rho(&next, &x);
            x = next;
            if step <= 1e-14 * (1.0 + x.amax()) {
                return Ok(x);
            }
            if !step.is_finite() {
                return Err(Error::NoConvergence { iterations: k, residual: step });
            }
        }
        Err(Error::NoConvergence { iterations: 1_000_000, residual: f64::NAN })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FpCertificate {
    pub ratio: f64,
    pub ratio_witness: Option<(Vec<f64>, Vec<f64>)>,
    pub max_diameter: f64,
    pub diameter_witness: Option<Vec<f64>>,
    pub dominance_constant: f64,
    pub dominance_ok: bool,
    /// Largest residual `d_ρ(x(T), T x(T))` after Euler integration of
    /// `ẋ ∈ Tx − x` from the grid points.
    pub attractor_probe: f64,
    pub passes: bool,
}

/// Sampled contraction ratio, diameter over the grid, metric dominance and a
/// probe of global attractivity.
pub fn certify_map(map: &ContractiveSetMap, n_pairs: usize, grid: &FiniteSet, seed: u64) -> Result<FpCertificate> {
    if grid.dim() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: grid.dim() });
    }
    let d = map.dim();
    let mut rng = stream(seed, Stream::Sampling);
    let pts = grid.points();
    let mut cert = FpCertificate {
        ratio: 0.0,
        ratio_witness: None,
        max_diameter: 0.0,
        diameter_witness: None,
        dominance_constant: map.metric.euclidean_dominance(),
        dominance_ok: true,
        attractor_probe: 0.0,
        passes: true,
    };
    for k in 0..n_pairs {
        let x = &pts[rng.random_range(0..pts.len())];
        let scale = 10f64.powi((k % 4) as i32 - 2);
        let y = x + Vector::from_fn(d, |_, _| scale * rng.random_range(-1.0..1.0));
        let rho = map.rho(x, &y);
        if rho == 0.0 {
            continue;
        }
        if (x - &y).norm() > cert.dominance_constant * rho * (1.0 + 1e-12) {
            cert.dominance_ok = false;
        }
        let ratio = map.hausdorff(x, &y) / rho;
        if ratio > cert.ratio {
            cert.ratio = ratio;
            cert.ratio_witness = Some((x.iter().copied().collect(), y.iter().copied().collect()));
        }
    }
    for x in pts {
        let diam = map.diameter_at(x);
        if diam > cert.max_diameter {
            cert.max_diameter = diam;
            cert.diameter_witness = Some(x.iter().copied().collect());
        }
    }
    let field = map.map.minus_identity();
    for x in pts {
        cert.attractor_probe = match euler_solve(&field, x, 0.01, 30.0, &mut Selector::new(SelectionStrategy::Center)) {
            Ok(traj) => cert.attractor_probe.max(map.residual(traj.last())),
            Err(_) => f64::INFINITY,
        };
    }
    cert.passes = cert.ratio <= map.alpha + 1e-12 && cert.max_diameter <= map.diameter + 1e-12 && cert.dominance_ok;
    if cert.ratio <= map.alpha + 1e-12 {
        cert.ratio_witness = None;
    }
    if cert.max_diameter <= map.diameter + 1e-12 {
        cert.diameter_witness = None;
    }
    Ok(cert)
}

/// Smallest diameter used to size the partner sets.
pub const PARTNER_DIAMETER_FLOOR: f64 = 0.01;

/// `ρ`-balls around the base fixed point with radii `(D/(1−α))·(2, 4)`.
pub fn partner_sets(map: &ContractiveSetMap) -> Result<InwardSetPair> {
    let r = map.diameter.max(PARTNER_DIAMETER_FLOOR) / (1.0 - map.alpha);
    InwardSetPair::balls(map.base_fixed_point()?, 2.0 * r, 4.0 * r, map.metric.clone())
}

#[derive(Clone, Debug)]
pub struct FpResult {
    pub x_bar: Vector,
    pub residual: f64,
    pub base_fixed_point: Vector,
    pub partner_set: InwardSetPair,
    pub coupled: CoupledRun,
}

impl FpResult {
    pub fn trace(&self) -> &RunTrace {
        &self.coupled.plain
    }
}

fn default_grid(map: &ContractiveSetMap, x0: &Vector) -> Result<FiniteSet> {
    let xf = map.base_fixed_point()?;
    let mut pts = vec![x0.clone(), xf.clone()];
    for u in NormSpec::Euclidean.axis_extremes(map.dim(), 1.0) {
        pts.push(x0 + &u);
        pts.push(&xf + u);
    }
    FiniteSet::new(pts)
}

/// `x_{n+1} = x_n + a(n)[y_n + M_{n+1}]`, `y_n ∈ Tx_n − x_n`, coupled with
/// its projective partner; `x̄` averages the last `tail_fraction` of iterates.
pub fn run_fixed_point(
    map: &ContractiveSetMap,
    x0: &Vector,
    settings: &SaaSettings,
    strategy: &SelectionStrategy,
    tail_fraction: f64,
) -> Result<FpResult> {
    let cert = certify_map(map, 1000, &default_grid(map, x0)?, settings.seed)?;
    if !cert.passes {
        return Err(Error::InvalidArgument(format!(
            "map is not certified: ratio {}, diameter {}",
            cert.ratio, cert.max_diameter
        )));
    }
    let partner_set = partner_sets(map)?;
    let field = map.map.minus_identity();
    let coupled = coupled_run(&field, x0, x0, settings, strategy, &partner_set, &map.metric)?;
    let x_bar = coupled.plain.tail_average(tail_fraction);
    Ok(FpResult {
        residual: map.residual(&x_bar),
        x_bar,
        base_fixed_point: partner_set.level().anchor(),
        partner_set,
        coupled,
    })
}

/// `ρ(x_n, x̂_n) ≤ (2D/(1−α)) ∨ ρ(x_N, x̂_N)` for `n ≥ N` and the per-step
/// recursion behind it.
pub fn fp_gap_bound_check(result: &FpResult, alpha: f64, diameter: f64) -> Result<GapCheck> {
    gap_recursion(&result.coupled.report.gaps, &result.coupled.projective, alpha, 2.0 * diameter, 1e-10)
}

/// `x_{n+1} ∈ G(x_n) + ξ_n` for the plain chain and its projected partner,
/// with identical `ξ_n` and selection offsets.
pub fn run_stage_maps(
    map: &ContractiveSetMap,
    x0: &Vector,
    partner_x0: &Vector,
    settings: &SaaSettings,
    strategy: &SelectionStrategy,
    pair: &InwardSetPair,
) -> Result<CoupledRun> {
    let field = map.map.minus_identity();
    coupled_with_steps(&field, x0, partner_x0, settings, strategy, pair, &map.metric, &|_| 1.0, false)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundednessCheck {
    #[serde(rename = "N")]
    pub n: usize,
    pub bound: f64,
    pub sup_after: f64,
    pub holds: bool,
}

/// `sup_{n ≥ N+1} ρ(x_n, x̃_n) ≤ 2D/(1−α) + ρ(x_N, x̃_N)`.
pub fn generic_boundedness_check(run: &CoupledRun, alpha: f64, diameter: f64) -> Result<BoundednessCheck> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("contraction modulus must lie in [0, 1), got {alpha}")));
    }
    let gaps = &run.report.gaps;
    let n = run.report.n;
    let bound = 2.0 * diameter / (1.0 - alpha) + gaps[n];
    let sup_after = gaps.iter().skip(n + 1).copied().fold(0.0, f64::max);
    Ok(BoundednessCheck { n, bound, sup_after, holds: sup_after <= bound + 1e-10 })
}

/// Largest `diam(Tx_n)` seen along the given traces.
pub fn observed_diameter(map: &ContractiveSetMap, traces: &[&RunTrace]) -> f64 {
    traces
        .iter()
        .flat_map(|t| t.x.iter())
        .map(|x| map.diameter_at(x))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saa::{NoiseModel, StepSchedule};
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn half(offsets: Perturbation, diameter: f64) -> ContractiveSetMap {
        ContractiveSetMap::affine(DMatrix::identity(1, 1) * 0.5, v(&[0.0]), offsets, NormSpec::max(1), 0.5, diameter)
            .unwrap()
    }

    fn grid1() -> FiniteSet {
        FiniteSet::from_scalars(&[-2.0, -1.0, 0.0, 0.5, 3.0]).unwrap()
    }

    fn settings(seed: u64, n_iter: usize, noise: NoiseModel) -> SaaSettings {
        SaaSettings { schedule: StepSchedule::harmonic(1.0), noise, seed, n_iter }
    }

    #[test]
    fn certificate_examples() {
        let c = certify_map(&half(Perturbation::None, 0.0), 1000, &grid1(), 1).unwrap();
        assert!(c.passes);
        assert!(c.ratio <= 0.5 + 1e-12);
        assert_eq!(c.max_diameter, 0.0);

        let ball = half(Perturbation::ball(0.05, NormSpec::max(1)), 0.1);
        let c = certify_map(&ball, 1000, &grid1(), 1).unwrap();
        assert!(c.passes);
        assert_eq!(c.max_diameter, 0.1);
        assert!(c.attractor_probe < 1e-6);

        let identity = ContractiveSetMap::affine(DMatrix::identity(1, 1), v(&[0.0]), Perturbation::None, NormSpec::max(1), 0.5, 0.0).unwrap();
        let c = certify_map(&identity, 100, &grid1(), 1).unwrap();
        assert!(!c.passes);
        assert!(c.ratio >= 1.0 - 1e-12);
        assert!(c.ratio_witness.is_some());
    }

    #[test]
    fn map_file_round_trip() {
        let text = r#"{"base":{"kind":"affine","A":[[0.4,0.2],[-0.1,0.5]],"b":[0.4,0.4]},
            "offsets":{"kind":"ball","radius":0.05},
            "metric":{"kind":"weighted-max","weights":[1.0,1.0]},"alpha":0.6,"D":0.1}"#;
        let spec: FpMapFile = serde_json::from_str(text).unwrap();
        let again: FpMapFile = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
        let map = ContractiveSetMap::from_file_spec(spec).unwrap();
        let xf = map.base_fixed_point().unwrap();
        assert!((xf - v(&[0.875, 0.625])).amax() < 1e-14);
        let bad = text.replace("weighted-max", "euclidean").replace(",\"weights\":[1.0,1.0]", "");
        assert!(ContractiveSetMap::from_json(&bad).is_ok());
    }

    #[test]
    fn base_fixed_point_has_zero_residual() {
        let map = half(Perturbation::ball(0.05, NormSpec::max(1)), 0.1);
        let xf = map.base_fixed_point().unwrap();
        assert_eq!(map.residual(&xf), 0.0);
        let general = ContractiveSetMap::new(SetValuedMap::from_fn(1, |x| x * 0.5 + v(&[1.0])), NormSpec::max(1), 0.5, 0.0).unwrap();
        assert!((general.base_fixed_point().unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn plain_contraction_converges_to_zero() {
        let map = half(Perturbation::None, 0.0);
        let mut s = settings(0, 100_000, NoiseModel::Zero);
        s.schedule = StepSchedule::harmonic(2.0);
        let r = run_fixed_point(&map, &v(&[1.0]), &s, &SelectionStrategy::Center, 0.1).unwrap();
        assert!(r.x_bar[0].abs() <= 1e-3);
        assert!(r.coupled.projective.x.iter().all(|x| r.partner_set.in_closure_c(x).unwrap()));
    }

    #[test]
    fn list_offsets_are_selected_exactly() {
        let offsets = Perturbation::Offsets(vec![v(&[0.05]), v(&[-0.05])]);
        let map = half(offsets, 0.1);
        let strategy = SelectionStrategy::FixedBias(v(&[0.05]));
        let r = run_fixed_point(&map, &v(&[1.0]), &settings(2, 1000, NoiseModel::bounded(0.1)), &strategy, 0.1).unwrap();
        let trace = r.trace();
        for n in 0..trace.len() {
            let mean = map.map().base(&trace.x[n]) - &trace.x[n];
            assert!((&trace.y[n] - mean - v(&[0.05])).amax() <= 1e-15);
        }
    }

    #[test]
    fn gap_bound_with_projection() {
        let map = half(Perturbation::ball(0.05, NormSpec::max(1)), 0.1);
        let r = run_fixed_point(&map, &v(&[5.0]), &settings(4, 20_000, NoiseModel::bounded(0.2)), &SelectionStrategy::Uniform { seed: 4 }, 0.1).unwrap();
        assert!(r.coupled.projective.initial_correction[0] != 0.0);
        assert!(r.residual <= 0.05);
        let check = fp_gap_bound_check(&r, 0.5, 0.1).unwrap();
        assert!(check.passed(), "{check:?}");
    }

    #[test]
    fn stage_map_boundedness() {
        let map = half(Perturbation::None, 0.0);
        let pair = partner_sets(&map).unwrap();
        let s = settings(9, 10_000, NoiseModel::bounded(0.005));
        let run = run_stage_maps(&map, &v(&[3.0]), &v(&[3.0]), &s, &SelectionStrategy::Center, &pair).unwrap();
        let check = generic_boundedness_check(&run, 0.5, 0.0).unwrap();
        assert!(check.holds);
        assert_eq!(check.n, run.projective.last_projection_index());
        assert!(run.plain.steps.iter().all(|a| *a == 1.0));
    }

    #[test]
    fn growing_offsets_use_observed_diameter() {
        let map = ContractiveSetMap::affine(
            DMatrix::identity(1, 1) * 0.4,
            v(&[0.0]),
            Perturbation::Ball { radius: 0.02, norm: NormSpec::max(1), growth: 0.1 },
            NormSpec::max(1),
            0.55,
            f64::INFINITY,
        )
        .unwrap();
        let c = certify_map(&map, 2000, &grid1(), 3).unwrap();
        assert!(c.ratio <= 0.5 + 1e-9);
        let pair = InwardSetPair::balls(v(&[0.0]), 0.5, 1.0, NormSpec::max(1)).unwrap();
        let s = settings(3, 5000, NoiseModel::bounded(0.1));
        let run = coupled_run(&map.map().minus_identity(), &v(&[4.0]), &v(&[4.0]), &s, &SelectionStrategy::Center, &pair, map.metric()).unwrap();
        let observed = observed_diameter(&map, &[&run.plain, &run.projective]);
        assert!(observed.is_finite() && observed > 0.04);
        let check = gap_recursion(&run.report.gaps, &run.projective, 0.55, 2.0 * observed, 1e-10).unwrap();
        assert!(check.passed());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn affine_hausdorff_contracts(a in proptest::collection::vec(-3.0f64..3.0, 2), b in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let map = ContractiveSetMap::affine(
                DMatrix::from_row_slice(2, 2, &[0.4, 0.2, -0.1, 0.5]),
                v(&[0.4, 0.4]),
                Perturbation::ball(0.05, NormSpec::max(2)),
                NormSpec::max(2),
                0.6,
                0.1,
            ).unwrap();
            let (x, y) = (Vector::from_vec(a), Vector::from_vec(b));
            prop_assert!(map.hausdorff(&x, &y) <= 0.6 * map.rho(&x, &y) + 1e-12);
            prop_assert!(map.diameter_at(&x) <= 0.1);
        }
    }
}
