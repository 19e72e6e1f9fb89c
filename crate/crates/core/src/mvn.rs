//! Multivariate normal sampling via a pivoted (rank-revealing) Cholesky
//! factorization, so singular covariances such as perfectly correlated
//! treatment effects are sampled exactly on their support.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: Vec<f64>,
    /// Row `i` of the factor belongs to coordinate `perm[i]`.
    factor: Vec<Vec<f64>>,
    perm: Vec<usize>,
    rank: usize,
}

impl MvnSampler {
    /// `covariance` is row-major, `mean.len()` squared entries.
    pub fn new(mean: &[f64], covariance: &[f64]) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::domain("covariance has the wrong number of entries"));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (covariance[i * d + j], covariance[j * d + i]);
                if (a - b).abs() > PSD_TOL * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::domain("covariance is not symmetric"));
                }
            }
        }
        let (factor, perm, rank) = pivoted_cholesky(covariance, d)?;
        Ok(MvnSampler {
            mean: mean.to_vec(),
            factor,
            perm,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.rank).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.mean.clone();
        for (i, row) in self.factor.iter().enumerate() {
            let dev: f64 = row.iter().zip(&z).map(|(l, z)| l * z).sum();
            x[self.perm[i]] += dev;
        }
        x
    }
}

/// One draw from `N(mean, covariance)`.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &[f64], covariance: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    Ok(MvnSampler::new(mean, covariance)?.sample(rng))
}

/// Returns `(L, perm, rank)` with `P A Pᵀ = L Lᵀ`, `L` lower-trapezoidal with
/// `rank` columns.
fn pivoted_cholesky(a: &[f64], d: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let mut w: Vec<Vec<f64>> = (0..d).map(|i| a[i * d..(i + 1) * d].to_vec()).collect();
    let mut l = vec![vec![0.0; d]; d];
    let mut perm: Vec<usize> = (0..d).collect();
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(1.0, f64::max);
    let mut rank = 0;

    for k in 0..d {
        let mut piv = k;
        for j in k + 1..d {
            if w[j][j] > w[piv][piv] {
                piv = j;
            }
        }
        if w[piv][piv] < -PSD_TOL * scale {
            return Err(Error::domain("covariance is not positive semidefinite"));
        }
        if w[piv][piv] <= PSD_TOL * scale {
            // Remaining Schur complement must vanish for a PSD matrix.
            for i in k..d {
                for j in k..d {
                    if w[i][j].abs() > PSD_TOL.sqrt() * scale {
                        return Err(Error::domain("covariance is not positive semidefinite"));
                    }
                }
            }
            break;
        }
        if piv != k {
            w.swap(k, piv);
            for row in w.iter_mut() {
                row.swap(k, piv);
            }
            l.swap(k, piv);
            perm.swap(k, piv);
        }
        let lkk = w[k][k].sqrt();
        l[k][k] = lkk;
        for i in k + 1..d {
            l[i][k] = w[i][k] / lkk;
        }
        for i in k + 1..d {
            for j in k + 1..=i {
                let upd = l[i][k] * l[j][k];
                w[i][j] -= upd;
                if i != j {
                    w[j][i] -= upd;
                }
            }
        }
        rank += 1;
    }

    for row in l.iter_mut() {
        row.truncate(rank);
    }
    Ok((l, perm, rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn zero_covariance_returns_mean() {
        let mut rng = StreamKey::new(1).trial_rng();
        let x = mvn_sample(&[1.5, -2.0], &[0.0; 4], &mut rng).unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_indefinite() {
        let mut rng = StreamKey::new(1).trial_rng();
        assert!(mvn_sample(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0], &mut rng).is_err());
        assert!(mvn_sample(&[0.0, 0.0], &[0.0, 1.0, 1.0, 0.0], &mut rng).is_err());
        assert!(mvn_sample(&[0.0, 0.0], &[1.0, 0.5, 0.4, 1.0], &mut rng).is_err());
    }

    #[test]
    fn identity_moments() {
        let d = 3;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        let s = MvnSampler::new(&[0.0; 3], &cov).unwrap();
        let mut rng = StreamKey::new(11).trial_rng();
        let n = 100_000;
        let mut acc = vec![0.0; d * d];
        for _ in 0..n {
            let x = s.sample(&mut rng);
            for i in 0..d {
                for j in 0..d {
                    acc[i * d + j] += x[i] * x[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc[i * d + j] / n as f64 - expect).abs() < 0.02);
            }
        }
    }

    #[test]
    fn negative_correlation() {
        let s = MvnSampler::new(&[0.0, 0.0], &[1.0, -0.5, -0.5, 1.0]).unwrap();
        let mut rng = StreamKey::new(5).trial_rng();
        let n = 100_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = s.sample(&mut rng);
            sx += x[0];
            sy += x[1];
            sxx += x[0] * x[0];
            syy += x[1] * x[1];
            sxy += x[0] * x[1];
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!((corr + 0.5).abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn singular_covariance_is_rank_deficient() {
        let s = MvnSampler::new(&[0.0, 0.0], &[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(s.rank(), 1);
        let mut rng = StreamKey::new(5).trial_rng();
        for _ in 0..100 {
            let x = s.sample(&mut rng);
            assert_eq!(x[0], -x[1]);
        }
    }
}
