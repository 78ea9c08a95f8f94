//! Simplex quadrature from collapsed Gauss–Jacobi tensor rules.
//!
//! Rules are stored in barycentric coordinates with weights summing to one, so an integral
//! over a simplex `f` is `|f| Σ w_q g(x_q)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// A quadrature rule on the reference `dim`-simplex.
#[derive(Clone, Debug)]
pub struct SimplexRule {
    pub dim: usize,
    /// Exactness degree requested at construction.
    pub degree: usize,
    /// Barycentric coordinates, `dim + 1` entries per point.
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SimplexRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss–Jacobi nodes and weights on `[0, 1]` for the weight `(1 - t)^alpha`, weights summing to 1.
fn gauss_jacobi(q: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let beta = 0.0;
    let mut jac = DMatrix::<f64>::zeros(q, q);
    for n in 0..q {
        let nf = n as f64;
        let s = 2.0 * nf + alpha + beta;
        let a = if n == 0 {
            (beta - alpha) / (alpha + beta + 2.0)
        } else {
            (beta * beta - alpha * alpha) / (s * (s + 2.0))
        };
        jac[(n, n)] = a;
        if n + 1 < q {
            let m = nf + 1.0;
            let s1 = 2.0 * m + alpha + beta;
            let b = (4.0 * m * (m + alpha) * (m + beta) * (m + alpha + beta)
                / (s1 * s1 * (s1 + 1.0) * (s1 - 1.0)))
                .sqrt();
            jac[(n, n + 1)] = b;
            jac[(n + 1, n)] = b;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..q)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    // x in [-1, 1] with weight (1 - x)^alpha maps to t = (1 + x) / 2 with weight (1 - t)^alpha
    let nodes = pairs.iter().map(|p| 0.5 * (1.0 + p.0)).collect();
    let weights = pairs.iter().map(|p| p.1 / total).collect();
    (nodes, weights)
}

fn build_rule(dim: usize, degree: usize) -> SimplexRule {
    if dim == 0 {
        return SimplexRule { dim, degree, points: vec![vec![1.0]], weights: vec![1.0] };
    }
    let q = degree / 2 + 1;
    let (nodes, weights) = gauss_jacobi(q, (dim - 1) as f64);
    let sub = build_rule(dim - 1, degree);
    let mut points = Vec::with_capacity(q * sub.len());
    let mut out_w = Vec::with_capacity(q * sub.len());
    for (t, wt) in nodes.iter().zip(&weights) {
        for (p, ws) in sub.points.iter().zip(&sub.weights) {
            let mut bary = Vec::with_capacity(dim + 1);
            bary.push(*t);
            bary.extend(p.iter().map(|x| (1.0 - t) * x));
            points.push(bary);
            out_w.push(wt * ws);
        }
    }
    SimplexRule { dim, degree, points, weights: out_w }
}

/// Rule on the `dim`-simplex exact for polynomials of total degree `degree`. Rules are cached.
pub fn simplex_rule(dim: usize, degree: usize) -> Arc<SimplexRule> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<SimplexRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((dim, degree))
        .or_insert_with(|| Arc::new(build_rule(dim, degree)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::multi_indices;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|x| x as f64).product()
    }

    #[test]
    fn weights_positive_and_normalized() {
        for dim in 0..=3 {
            for degree in 0..=12 {
                let r = simplex_rule(dim, degree);
                assert!(r.weights.iter().all(|&w| w > 0.0));
                assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                for p in &r.points {
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                    assert!(p.iter().all(|&x| x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn integrates_barycentric_monomials_exactly() {
        // mean of λ^α over an m-simplex is m! α! / (m + |α|)!
        for dim in 1..=3 {
            for degree in 0..=10 {
                let r = simplex_rule(dim, degree);
                for alpha in multi_indices(dim + 1, degree) {
                    let exact = factorial(dim) * alpha.iter().map(|&a| factorial(a as usize)).product::<f64>()
                        / factorial(dim + degree);
                    let approx: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p.iter().zip(&alpha).map(|(x, &a)| x.powi(a as i32)).product::<f64>())
                        .sum();
                    assert!((approx - exact).abs() < 1e-14, "dim {dim} alpha {alpha:?}");
                }
            }
        }
    }
}
