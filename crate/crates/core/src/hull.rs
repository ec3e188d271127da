//! Euclidean nearest point of the convex hull of a finite point list
//! (Wolfe's minimum-norm-point algorithm).

use nalgebra::DMatrix;

use crate::Vector;

const TOL: f64 = 1e-12;

/// Nearest point of `conv(points)` to `y` in the Euclidean norm.
pub(crate) fn nearest_in_hull(points: &[Vector], y: &Vector) -> Vector {
    let q: Vec<Vector> = points.iter().map(|p| p - y).collect();
    y + min_norm_point(&q)
}

fn min_norm_point(q: &[Vector]) -> Vector {
    let scale = q.iter().map(|v| v.norm_squared()).fold(0.0, f64::max).max(1.0);
    let start = (0..q.len())
        .min_by(|a, b| q[*a].norm_squared().total_cmp(&q[*b].norm_squared()))
        .expect("nonempty point list");
    let mut support = vec![start];
    let mut weights = vec![1.0];
    let mut x = q[start].clone();

    for _ in 0..(50 * q.len() + 50) {
        let (j, xq) = (0..q.len())
            .map(|i| (i, x.dot(&q[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xq >= x.norm_squared() - TOL * scale || support.contains(&j) {
            break;
        }
        support.push(j);
        weights.push(0.0);

        loop {
            let mu = affine_minimizer(q, &support);
            if mu.iter().all(|m| *m > TOL) {
                weights = mu;
                x = combine(q, &support, &weights);
                break;
            }
            let theta = support
                .iter()
                .enumerate()
                .filter(|(k, _)| mu[*k] <= TOL)
                .map(|(k, _)| weights[k] / (weights[k] - mu[k]))
                .filter(|t| t.is_finite())
                .fold(1.0, f64::min);
            for k in 0..weights.len() {
                weights[k] += theta * (mu[k] - weights[k]);
            }
            let mut k = 0;
            while k < support.len() {
                if weights[k] <= TOL && support.len() > 1 {
                    support.remove(k);
                    weights.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            x = combine(q, &support, &weights);
            if support.len() == 1 {
                break;
            }
        }
    }
    x
}

fn combine(q: &[Vector], support: &[usize], weights: &[f64]) -> Vector {
    let mut x = Vector::zeros(q[0].len());
    for (i, w) in support.iter().zip(weights) {
        x.axpy(*w, &q[*i], 1.0);
    }
    x
}

/// Minimiser of `‖Σ μ_k q_k‖` over the affine hull (`Σ μ_k = 1`).
fn affine_minimizer(q: &[Vector], support: &[usize]) -> Vec<f64> {
    let m = support.len();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    let mut b = Vector::zeros(m + 1);
    for (r, i) in support.iter().enumerate() {
        for (c, j) in support.iter().enumerate() {
            a[(r, c)] = q[*i].dot(&q[*j]);
        }
        a[(r, m)] = 1.0;
        a[(m, r)] = 1.0;
    }
    b[m] = 1.0;
    let sol = a
        .clone()
        .lu()
        .solve(&b)
        .or_else(|| a.svd(true, true).solve(&b, 1e-14).ok())
        .unwrap_or_else(|| Vector::from_element(m + 1, 1.0 / m as f64));
    sol.iter().take(m).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn point_inside_triangle() {
        let pts = [v(&[0.0, 0.0]), v(&[2.0, 0.0]), v(&[0.0, 2.0])];
        let y = v(&[0.5, 0.5]);
        assert!((nearest_in_hull(&pts, &y) - &y).norm() < 1e-12);
    }

    #[test]
    fn point_outside_segment() {
        let pts = [v(&[-1.0, 0.0]), v(&[1.0, 0.0])];
        let p = nearest_in_hull(&pts, &v(&[0.3, 2.0]));
        assert!((p - v(&[0.3, 0.0])).norm() < 1e-12);
        let p = nearest_in_hull(&pts, &v(&[3.0, 1.0]));
        assert!((p - v(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn square_corner_and_face() {
        let pts = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])];
        let p = nearest_in_hull(&pts, &v(&[2.0, 0.5]));
        assert!((p - v(&[1.0, 0.5])).norm() < 1e-12);
        let p = nearest_in_hull(&pts, &v(&[-1.0, -3.0]));
        assert!(p.norm() < 1e-12);
    }
}
