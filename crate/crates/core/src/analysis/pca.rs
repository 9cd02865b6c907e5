use super::AnalysisError;
use crate::autodiff::Tensor;

const MAX_ITERS: usize = 10_000;
const TOL: f64 = 1e-14;

/// Top-two principal components of a row set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `2 × z`, orthonormal rows.
    pub components: Tensor,
    /// `n × 2` projections of the centered rows.
    pub projected: Tensor,
    /// Eigenvalues of the population covariance, descending.
    pub explained: [f64; 2],
    /// Trace of the population covariance.
    pub total_variance: f64,
}

fn matvec(c: &[f64], v: &[f64]) -> Vec<f64> {
    let z = v.len();
    (0..z).map(|i| c[i * z..(i + 1) * z].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let p = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    }
}

/// Flips `v` so that its entry of largest magnitude is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Power iteration for the dominant eigenvector of `c` orthogonal to `found`.
fn dominant(c: &[f64], z: usize, found: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..z).map(|i| 1.0 / (i + 1) as f64).collect();
    orthogonalize(&mut v, found);
    if normalize(&mut v) < 1e-12 {
        v = (0..z).map(|i| if i == found.len() { 1.0 } else { 0.0 }).collect();
        orthogonalize(&mut v, found);
        normalize(&mut v);
    }
    for _ in 0..MAX_ITERS {
        let mut w = matvec(c, &v);
        orthogonalize(&mut w, found);
        if normalize(&mut w) < 1e-300 {
            break;
        }
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if change < TOL {
            break;
        }
    }
    v
}

/// PCA by power iteration with deflation on the population covariance.
pub fn pca_2d(rows: &Tensor) -> Result<Pca, AnalysisError> {
    let (n, z) = (rows.rows(), rows.cols());
    if rows.ndim() != 2 || n < 3 || z < 2 {
        return Err(AnalysisError::TooSmall { rows: n, cols: z });
    }
    let mean: Vec<f64> = (0..z).map(|k| (0..n).map(|i| rows.at(i, k)).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = (0..n).map(|i| rows.row(i).iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut cov = vec![0.0; z * z];
    for r in &centered {
        for a in 0..z {
            for b in 0..z {
                cov[a * z + b] += r[a] * r[b] / n as f64;
            }
        }
    }
    let total_variance: f64 = (0..z).map(|k| cov[k * z + k]).sum();
    let scale = centered.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()));
    if scale == 0.0 || total_variance <= f64::EPSILON * scale * scale {
        return Err(AnalysisError::Degenerate);
    }
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut explained = [0.0; 2];
    let mut deflated = cov.clone();
    for k in 0..2 {
        let mut v = dominant(&deflated, z, &comps);
        fix_sign(&mut v);
        let lambda = dot(&v, &matvec(&cov, &v)).max(0.0);
        for a in 0..z {
            for b in 0..z {
                deflated[a * z + b] -= lambda * v[a] * v[b];
            }
        }
        explained[k] = lambda;
        comps.push(v);
    }
    let projected = centered.iter().flat_map(|r| [dot(r, &comps[0]), dot(r, &comps[1])]).collect();
    Ok(Pca {
        mean,
        components: Tensor::from_rows(&comps).expect("two components"),
        projected: Tensor::new(vec![n, 2], projected).expect("n × 2"),
        explained,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn line_in_three_dims() {
        let dir = [1.0, 2.0, -2.0];
        let rows: Vec<Vec<f64>> = (0..7).map(|i| dir.iter().map(|d| d * (i as f64 - 2.0)).collect()).collect();
        let p = pca_2d(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let c = p.components.row(0);
        for (a, d) in c.iter().zip(dir) {
            assert!((a.abs() - (d / 3.0f64).abs()).abs() < 1e-9);
        }
        assert!(p.explained[1] < 1e-9 * p.explained[0]);
        assert!(c[1].abs() >= c[0].abs());
        assert!(c[1] > 0.0 || c[2] > 0.0);
    }

    #[test]
    fn isotropic_sample_has_balanced_variances() {
        let mut rng = Prng::new(3);
        let rows: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let p = pca_2d(&Tensor::from_rows(&rows).unwrap()).unwrap();
        assert!(p.explained[0] >= p.explained[1]);
        assert!(p.explained[1] / p.explained[0] > 0.9);
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let mut rng = Prng::new(8);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|k| rng.normal() * (k + 1) as f64).collect()).collect();
        let p = pca_2d(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let (a, b) = (p.components.row(0), p.components.row(1));
        assert!((dot(a, a) - 1.0).abs() < 1e-6);
        assert!((dot(b, b) - 1.0).abs() < 1e-6);
        assert!(dot(a, b).abs() < 1e-6);
        assert!(p.explained[0] >= p.explained[1]);
        assert!(p.explained[0] + p.explained[1] <= p.total_variance + 1e-9);
    }

    #[test]
    fn pc_coordinates_are_fixed_up_to_sign() {
        let mut rng = Prng::new(4);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![3.0 * rng.normal(), rng.normal()]).collect();
        let p = pca_2d(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let again = pca_2d(&p.projected).unwrap();
        for i in 0..30 {
            for k in 0..2 {
                assert!((again.projected.at(i, k).abs() - p.projected.at(i, k).abs()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let same = Tensor::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert!(matches!(pca_2d(&same), Err(AnalysisError::Degenerate)));
        let tiny = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(pca_2d(&tiny), Err(AnalysisError::TooSmall { .. })));
    }
}
