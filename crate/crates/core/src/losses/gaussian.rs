use serde::{Deserialize, Serialize};

use super::LossError;
use crate::autodiff::{Graph, GraphError, Tensor, Var};

/// Diagonal loading added to a fitted covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Jitter {
    /// Constant `ε`.
    Fixed { epsilon: f64 },
    /// `ε = max(scale · mean(diag Σ), floor)`, differentiable in the rows
    /// whenever the floor is not active.
    Relative { scale: f64, floor: f64 },
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter::Relative { scale: 1e-3, floor: 1e-6 }
    }
}

/// Mean and jittered population covariance of one language's embedding rows.
#[derive(Debug, Clone, Copy)]
pub struct GaussianStats {
    pub mean: Var,
    pub covariance: Var,
    pub jitter: f64,
}

fn check_rows(g: &Graph, rows: Var, needed: usize) -> Result<(usize, usize), LossError> {
    let t = g.value(rows);
    if t.ndim() != 2 {
        return Err(LossError::Graph(GraphError::Invalid {
            op: "embedding rows",
            msg: format!("expected a matrix, got shape {:?}", t.shape()),
        }));
    }
    if t.rows() < needed {
        return Err(LossError::TooFewRows { needed, got: t.rows() });
    }
    Ok((t.rows(), t.cols()))
}

/// Arithmetic mean of the rows.
pub fn centroid(g: &mut Graph, rows: Var) -> Result<Var, LossError> {
    check_rows(g, rows, 1)?;
    Ok(g.mean_rows(rows)?)
}

/// `μ = mean(rows)`, `Σ = (1/n) Σ (e−μ)(e−μ)ᵀ + ε I`.
pub fn fit_gaussian(g: &mut Graph, rows: Var, jitter: Jitter) -> Result<GaussianStats, LossError> {
    let (n, z) = check_rows(g, rows, 2)?;
    let mean = g.mean_rows(rows)?;
    let neg_mean = g.scale(mean, -1.0);
    let centered = g.add_row_broadcast(rows, neg_mean)?;
    let ct = g.transpose(centered)?;
    let scatter = g.matmul(ct, centered)?;
    let cov = g.scale(scatter, 1.0 / n as f64);

    let (eps_var, eps) = match jitter {
        Jitter::Fixed { epsilon } => (g.constant(Tensor::scalar(epsilon)), epsilon),
        Jitter::Relative { scale, floor } => {
            let tr = g.trace(cov)?;
            let rel = g.scale(tr, scale / z as f64);
            let value = g.scalar_value(rel);
            if value > floor {
                (rel, value)
            } else {
                (g.constant(Tensor::scalar(floor)), floor)
            }
        }
    };
    let eye = g.constant(Tensor::identity(z));
    let load = g.mul_scalar(eye, eps_var)?;
    let covariance = g.add(cov, load)?;
    Ok(GaussianStats { mean, covariance, jitter: eps })
}

fn invert(g: &mut Graph, m: Var, language: u8) -> Result<Var, LossError> {
    g.inverse(m).map_err(|e| match e {
        GraphError::Singular { condition } => LossError::IllConditioned { language, condition },
        other => LossError::Graph(other),
    })
}

/// `tr(Σ₁⁻¹Σ₂ + Σ₁Σ₂⁻¹) + (μ₁−μ₂)ᵀ(Σ₁⁻¹+Σ₂⁻¹)(μ₁−μ₂) − 2z`.
///
/// Named a Jensen-Shannon divergence, but algebraically it is twice the
/// symmetric KL divergence between the two Gaussians, so it is symmetric and
/// nonnegative.
pub fn jsd_constraint(g: &mut Graph, g1: &GaussianStats, g2: &GaussianStats) -> Result<Var, LossError> {
    let z = g.value(g1.mean).len();
    if g.value(g2.mean).len() != z {
        return Err(LossError::Graph(GraphError::ShapeMismatch {
            op: "jsd_constraint",
            lhs: g.value(g1.mean).shape().to_vec(),
            rhs: g.value(g2.mean).shape().to_vec(),
        }));
    }
    let inv1 = invert(g, g1.covariance, 1)?;
    let inv2 = invert(g, g2.covariance, 2)?;
    let a = g.matmul(inv1, g2.covariance)?;
    let b = g.matmul(g1.covariance, inv2)?;
    let ab = g.add(a, b)?;
    let tr = g.trace(ab)?;
    let diff = g.sub(g1.mean, g2.mean)?;
    let inv_sum = g.add(inv1, inv2)?;
    let proj = g.matmul(inv_sum, diff)?;
    let quad = g.dot(diff, proj)?;
    let total = g.add(tr, quad)?;
    Ok(g.add_scalar(total, -2.0 * z as f64))
}

/// Centroids with norm at or below this are rejected by [`cd_constraint`].
const MIN_CENTROID_NORM: f64 = 1e-12;

/// `1 − c₁·c₂ / (‖c₁‖‖c₂‖)`.
pub fn cd_constraint(g: &mut Graph, c1: Var, c2: Var) -> Result<Var, LossError> {
    for (which, c) in [(1u8, c1), (2u8, c2)] {
        let norm = g.value(c).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > MIN_CENTROID_NORM) {
            return Err(LossError::ZeroNormCentroid { which, norm });
        }
    }
    let num = g.dot(c1, c2)?;
    let n1 = g.dot(c1, c1)?;
    let n2 = g.dot(c2, c2)?;
    let prod = g.mul(n1, n2)?;
    let den = g.sqrt(prod);
    let cos = g.div(num, den)?;
    let neg = g.scale(cos, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(g: &mut Graph, mean: &[f64], cov: Vec<f64>) -> GaussianStats {
        let z = mean.len();
        let m = g.constant(Tensor::vector(mean));
        let c = g.constant(Tensor::matrix(z, z, cov).unwrap());
        GaussianStats { mean: m, covariance: c, jitter: 0.0 }
    }

    #[test]
    fn fit_two_points() {
        let mut g = Graph::new();
        let rows = g.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap());
        let eps = 1e-3;
        let s = fit_gaussian(&mut g, rows, Jitter::Fixed { epsilon: eps }).unwrap();
        assert_eq!(g.value(s.mean).data(), &[1.0, 0.0]);
        assert_eq!(g.value(s.covariance).data(), &[1.0 + eps, 0.0, 0.0, eps]);
    }

    #[test]
    fn identical_rows_give_jitter_only() {
        let mut g = Graph::new();
        let rows = g.constant(Tensor::from_rows(&vec![vec![0.4, -1.0, 2.0]; 5]).unwrap());
        let s = fit_gaussian(&mut g, rows, Jitter::default()).unwrap();
        assert_eq!(s.jitter, 1e-6);
        let cov = g.value(s.covariance);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1e-6 } else { 0.0 };
                assert!((cov.at(i, j) - want).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn too_few_rows() {
        let mut g = Graph::new();
        let rows = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            fit_gaussian(&mut g, rows, Jitter::default()),
            Err(LossError::TooFewRows { needed: 2, got: 1 })
        ));
        assert!(centroid(&mut g, rows).is_ok());
    }

    #[test]
    fn hand_computed_one_dimensional_divergence() {
        let mut g = Graph::new();
        let a = stats(&mut g, &[0.0], vec![1.0]);
        let b = stats(&mut g, &[1.0], vec![2.0]);
        let d = jsd_constraint(&mut g, &a, &b).unwrap();
        assert!((g.scalar_value(d) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_fits_give_zero() {
        let mut g = Graph::new();
        let a = stats(&mut g, &[0.3, -0.2], vec![2.0, 0.3, 0.3, 1.0]);
        let d = jsd_constraint(&mut g, &a, &a).unwrap();
        assert!(g.scalar_value(d).abs() < 1e-12);
    }

    #[test]
    fn ill_conditioned_names_language() {
        let mut g = Graph::new();
        let a = stats(&mut g, &[0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(&mut g, &[0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]);
        match jsd_constraint(&mut g, &a, &b) {
            Err(LossError::IllConditioned { language: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cosine_distance_cases() {
        let mut g = Graph::new();
        let cases = [
            ([1.0, 2.0], [1.0, 2.0], 0.0),
            ([1.0, 0.0], [0.0, 3.0], 1.0),
            ([1.0, -2.0], [-1.0, 2.0], 2.0),
        ];
        for (a, b, want) in cases {
            let ca = g.constant(Tensor::vector(&a));
            let cb = g.constant(Tensor::vector(&b));
            let d = cd_constraint(&mut g, ca, cb).unwrap();
            assert!((g.scalar_value(d) - want).abs() < 1e-12, "{a:?} {b:?}");
        }
        let zero = g.constant(Tensor::vector(&[0.0, 0.0]));
        let one = g.constant(Tensor::vector(&[1.0, 0.0]));
        assert!(matches!(cd_constraint(&mut g, one, zero), Err(LossError::ZeroNormCentroid { which: 2, .. })));
    }

    #[test]
    fn centroid_matches_gaussian_mean() {
        let mut g = Graph::new();
        let rows = g.constant(Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.7]).unwrap());
        let c = centroid(&mut g, rows).unwrap();
        let s = fit_gaussian(&mut g, rows, Jitter::default()).unwrap();
        assert_eq!(g.value(c), g.value(s.mean));
        let two = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let c2 = centroid(&mut g, two).unwrap();
        assert_eq!(g.value(c2).data(), &[0.5, 0.5]);
    }
}
