//! Weighted norms on `ℝ^d`, the metrics they induce, and Hausdorff distances.
//!
//! Three norm families are supported:
//!
//! * weighted max-norm `‖z‖_ν = max_i |z_i| / ν_i`,
//! * weighted p-norm `‖z‖_{ω,p} = (Σ_i ω_i |z_i|^p)^{1/p}`,
//! * the Euclidean norm.
//!
//! Hausdorff distances between infinite sets are only computed for the
//! shapes that occur in practice here: translates of a common norm ball have
//! Hausdorff distance equal to the distance of their centres
//! ([`ball_translate_hausdorff`]). Everything else goes through finite samples
//! ([`FiniteSet`]) and [`hausdorff`].

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormSpec {
    /// `max_i |z_i| / weights_i`
    WeightedMax { weights: Vec<f64> },
    /// `(Σ_i weights_i |z_i|^p)^{1/p}`
    WeightedP { weights: Vec<f64>, p: f64 },
    Euclidean,
}

impl NormSpec {
    pub fn weighted_max(weights: Vec<f64>) -> Result<Self> {
        let spec = NormSpec::WeightedMax { weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn weighted_p(weights: Vec<f64>, p: f64) -> Result<Self> {
        let spec = NormSpec::WeightedP { weights, p };
        spec.validate()?;
        Ok(spec)
    }

    /// Unweighted max-norm on `ℝ^d`.
    pub fn max(d: usize) -> Self {
        NormSpec::WeightedMax { weights: vec![1.0; d] }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = match self {
            NormSpec::Euclidean => return Ok(()),
            NormSpec::WeightedMax { weights } => weights,
            NormSpec::WeightedP { weights, p } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return Err(Error::InvalidNorm(format!("exponent must be >= 1, got {p}")));
                }
                weights
            }
        };
        if weights.is_empty() {
            return Err(Error::InvalidNorm("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidNorm(format!("weights must be positive, got {w}")));
        }
        Ok(())
    }

    /// Dimension fixed by the weight vector; `None` for the Euclidean norm.
    pub fn dim(&self) -> Option<usize> {
        match self {
            NormSpec::WeightedMax { weights } | NormSpec::WeightedP { weights, .. } => {
                Some(weights.len())
            }
            NormSpec::Euclidean => None,
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self.dim() {
            Some(expected) if expected != d => Err(Error::DimensionMismatch { expected, got: d }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, z: &Vector) -> Result<f64> {
        self.check_dim(z.len())?;
        Ok(self.apply(z))
    }

    /// Norm of `z` without the dimension check.
    pub(crate) fn apply(&self, z: &Vector) -> f64 {
        match self {
            NormSpec::WeightedMax { weights } => z
                .iter()
                .zip(weights)
                .fold(0.0, |acc, (zi, wi)| f64::max(acc, zi.abs() / wi)),
            NormSpec::WeightedP { weights, p } => {
                if *p == 2.0 {
                    z.iter().zip(weights).map(|(zi, wi)| wi * zi * zi).sum::<f64>().sqrt()
                } else {
                    z.iter()
                        .zip(weights)
                        .map(|(zi, wi)| wi * zi.abs().powf(*p))
                        .sum::<f64>()
                        .powf(1.0 / p)
                }
            }
            NormSpec::Euclidean => z.norm(),
        }
    }

    pub(crate) fn distance(&self, x: &Vector, y: &Vector) -> f64 {
        self.apply(&(x - y))
    }

    /// Largest Euclidean norm on the unit ball of this norm, i.e. the tight
    /// constant `C` with `‖z‖ ≤ C‖z‖_self`.
    pub fn euclidean_dominance(&self) -> f64 {
        match self {
            NormSpec::Euclidean => 1.0,
            NormSpec::WeightedMax { weights } => weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
            NormSpec::WeightedP { weights, p } => {
                if *p <= 2.0 {
                    // extreme points of the unit ball sit on the axes
                    weights.iter().fold(0.0, |acc, w| f64::max(acc, w.powf(-1.0 / p)))
                } else {
                    // Hölder with conjugate exponents p/2 and p/(p-2)
                    let r = p / (p - 2.0);
                    weights
                        .iter()
                        .map(|w| w.powf(-2.0 / p).powf(r))
                        .sum::<f64>()
                        .powf(1.0 / r)
                        .sqrt()
                }
            }
        }
    }

    /// `(ν_min, d·ν_max)` such that `ν_min‖z‖_ν ≤ ‖z‖ ≤ d·ν_max‖z‖_ν` for
    /// every `z ∈ ℝ^d`, `‖·‖` Euclidean.
    pub fn sandwich_constants(&self, d: usize) -> Result<(f64, f64)> {
        match self {
            NormSpec::WeightedMax { weights } => {
                self.check_dim(d)?;
                let (lo, hi) = min_max(weights);
                Ok((lo, d as f64 * hi))
            }
            _ => Err(Error::InvalidNorm(
                "sandwich constants are defined for weighted max-norms; use pnorm_bridge for weighted p-norms".into(),
            )),
        }
    }

    /// Half-widths of the axis-aligned box circumscribing the ball of the
    /// given radius.
    pub fn ball_half_widths(&self, d: usize, radius: f64) -> Vec<f64> {
        match self {
            NormSpec::WeightedMax { weights } => weights.iter().map(|w| radius * w).collect(),
            NormSpec::WeightedP { weights, p } => {
                weights.iter().map(|w| radius * w.powf(-1.0 / p)).collect()
            }
            NormSpec::Euclidean => vec![radius; d],
        }
    }

    /// The `2d` points `±r_i e_i` on the sphere of the given radius.
    pub fn axis_extremes(&self, d: usize, radius: f64) -> Vec<Vector> {
        let widths = self.ball_half_widths(d, radius);
        let mut out = Vec::with_capacity(2 * d);
        for (i, w) in widths.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let mut v = Vector::zeros(d);
                v[i] = sign * w;
                out.push(v);
            }
        }
        out
    }

    /// Rescale a nonzero direction so that it lies on the sphere of the given
    /// radius. Returns `None` for the zero vector.
    pub fn to_sphere(&self, direction: &Vector, radius: f64) -> Option<Vector> {
        let n = self.apply(direction);
        (n > 0.0).then(|| direction * (radius / n))
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

/// Constants `(lower, upper)` with
/// `lower·‖z‖_ν ≤ ‖z‖_{ω,p} ≤ upper·‖z‖_ν` for all `z`.
///
/// When every `ω_i ≥ 1` this is `(ν_min, d·ω_max·ν_max)`. Smaller weights
/// shrink the p-norm below `ν_min‖z‖_ν`, so the general constants are
/// `ν_min·min(1, ω_min^{1/p})` and `ν_max·max(d·ω_max, (d·ω_max)^{1/p})`.
pub fn pnorm_bridge(nu: &NormSpec, omega: &NormSpec) -> Result<(f64, f64)> {
    let NormSpec::WeightedMax { weights: nu_w } = nu else {
        return Err(Error::InvalidNorm("first argument must be a weighted max-norm".into()));
    };
    let NormSpec::WeightedP { weights: om_w, p } = omega else {
        return Err(Error::InvalidNorm("second argument must be a weighted p-norm".into()));
    };
    nu.validate()?;
    omega.validate()?;
    if nu_w.len() != om_w.len() {
        return Err(Error::DimensionMismatch { expected: nu_w.len(), got: om_w.len() });
    }
    let d = nu_w.len() as f64;
    let (nu_min, nu_max) = min_max(nu_w);
    let (om_min, om_max) = min_max(om_w);
    let lower = nu_min * f64::min(1.0, om_min.powf(1.0 / p));
    let upper = nu_max * f64::max(d * om_max, (d * om_max).powf(1.0 / p));
    Ok((lower, upper))
}

/// A norm-induced metric `ρ(x, y) = ‖x − y‖` together with the constant `C`
/// such that `‖x − y‖₂ ≤ C·ρ(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub norm: NormSpec,
    pub dominance_constant: f64,
}

impl MetricSpec {
    /// Metric of `norm` with the tight analytic dominance constant.
    pub fn from_norm(norm: NormSpec) -> Result<Self> {
        norm.validate()?;
        let dominance_constant = norm.euclidean_dominance();
        Ok(MetricSpec { norm, dominance_constant })
    }

    pub fn euclidean() -> Self {
        MetricSpec { norm: NormSpec::Euclidean, dominance_constant: 1.0 }
    }

    pub fn distance(&self, x: &Vector, y: &Vector) -> f64 {
        self.norm.distance(x, y)
    }
}

/// Nonempty finite point set in `ℝ^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteSet {
    points: Vec<Vector>,
}

impl FiniteSet {
    pub fn new(points: Vec<Vector>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySet)?;
        let d = first.len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        Ok(FiniteSet { points })
    }

    pub fn singleton(point: Vector) -> Self {
        FiniteSet { points: vec![point] }
    }

    /// Scalars as points of `ℝ`.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| Vector::from_element(1, *v)).collect())
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn centroid(&self) -> Vector {
        let mut c = Vector::zeros(self.dim());
        for p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    /// `min_{y ∈ self} ‖x − y‖`.
    pub fn distance_to(&self, x: &Vector, norm: &NormSpec) -> f64 {
        self.points
            .iter()
            .map(|p| norm.distance(x, p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Dense samples of the closed ball `{x : ‖x − center‖ ≤ radius}`.
    ///
    /// A grid of spacing `mesh` over the circumscribing box is filtered to the
    /// ball, and every kept grid point is also pushed radially onto the sphere
    /// so the boundary is covered at the same resolution.
    pub fn ball_samples(center: &Vector, radius: f64, norm: &NormSpec, mesh: f64) -> Result<Self> {
        let d = center.len();
        norm.check_dim(d)?;
        if !(mesh > 0.0) || radius < 0.0 {
            return Err(Error::InvalidArgument("mesh must be positive and radius nonnegative".into()));
        }
        let widths = norm.ball_half_widths(d, radius);
        let counts: Vec<usize> = widths.iter().map(|w| (2.0 * w / mesh).ceil() as usize + 1).collect();
        let mut points = vec![center.clone()];
        let mut index = vec![0usize; d];
        'grid: loop {
            let offset = Vector::from_iterator(
                d,
                (0..d).map(|i| {
                    if counts[i] == 1 {
                        0.0
                    } else {
                        -widths[i] + 2.0 * widths[i] * index[i] as f64 / (counts[i] - 1) as f64
                    }
                }),
            );
            if norm.apply(&offset) <= radius {
                points.push(center + &offset);
                if let Some(s) = norm.to_sphere(&offset, radius) {
                    points.push(center + s);
                }
            }
            for i in 0..d {
                index[i] += 1;
                if index[i] < counts[i] {
                    continue 'grid;
                }
                index[i] = 0;
            }
            break;
        }
        Ok(FiniteSet { points })
    }
}

fn directed_hausdorff(a: &FiniteSet, b: &FiniteSet, metric: &MetricSpec) -> f64 {
    // early-break scan: once a point of `a` is known to be within the current
    // maximum of `b`, it cannot raise the maximum
    let mut cmax: f64 = 0.0;
    for x in a.points() {
        let mut cmin = f64::INFINITY;
        for y in b.points() {
            let d = metric.distance(x, y);
            if d < cmax {
                cmin = d;
                break;
            }
            cmin = cmin.min(d);
        }
        if cmin > cmax && cmin.is_finite() {
            cmax = cmin;
        }
    }
    cmax
}

/// Hausdorff distance between two finite sets under a norm-induced metric.
pub fn hausdorff(a: &FiniteSet, b: &FiniteSet, metric: &MetricSpec) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    metric.norm.check_dim(a.dim())?;
    Ok(directed_hausdorff(a, b, metric).max(directed_hausdorff(b, a, metric)))
}

/// Hausdorff distance between the two balls of equal radius centred at `c1`
/// and `c2`. Translation invariance makes this `‖c1 − c2‖`.
pub fn ball_translate_hausdorff(c1: &Vector, c2: &Vector, radius: f64, norm: &NormSpec) -> Result<f64> {
    if radius < 0.0 {
        return Err(Error::InvalidArgument(format!("negative radius {radius}")));
    }
    if c1.len() != c2.len() {
        return Err(Error::DimensionMismatch { expected: c1.len(), got: c2.len() });
    }
    norm.eval(&(c1 - c2))
}

/// Hausdorff distance between norm balls of possibly different radii:
/// `‖c1 − c2‖ + |r1 − r2|`.
pub fn ball_hausdorff(c1: &Vector, r1: f64, c2: &Vector, r2: f64, norm: &NormSpec) -> Result<f64> {
    Ok(ball_translate_hausdorff(c1, c2, r1.min(r2), norm)? + (r1 - r2).abs())
}
