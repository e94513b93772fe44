//! Singular value decomposition and singular value clipping.
//!
//! The SVD is a one-sided Jacobi iteration, which is plenty at the matrix
//! sizes that occur here. Clipping projects a weight onto the spectral-norm
//! ball by clamping singular values at the cap; conv kernels are flattened
//! to (out_channels) x (everything else) first and reshaped back after.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x k, orthonormal columns.
    pub u: Tensor,
    /// k singular values, descending, non-negative.
    pub sigma: Vec<f64>,
    /// n x k, orthonormal columns.
    pub v: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct ClipPolicy {
    pub max_singular_value: f64,
    pub period_iterations: usize,
}

impl Default for ClipPolicy {
    fn default() -> Self {
        ClipPolicy {
            max_singular_value: 1.0,
            period_iterations: 5,
        }
    }
}

impl ClipPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_singular_value <= 0.0 {
            return Err(Error::invalid("clip cap must be positive"));
        }
        if self.period_iterations == 0 {
            return Err(Error::invalid("clip period must be >= 1"));
        }
        Ok(())
    }
}

/// SVD of a rank-2 tensor. `a` is m x n row-major; k = min(m, n).
pub fn svd(a: &Tensor) -> Result<SvdResult> {
    if a.rank() != 2 {
        return Err(Error::invalid(format!(
            "svd expects a matrix, got rank {}",
            a.rank()
        )));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if m >= n {
        svd_tall(a.data(), m, n)
    } else {
        // svd of the transpose, then swap the factor roles
        let mut at = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                at[j * m + i] = a.data()[i * n + j];
            }
        }
        let r = svd_tall(&at, n, m)?;
        Ok(SvdResult {
            u: r.v,
            sigma: r.sigma,
            v: r.u,
        })
    }
}

/// One-sided Jacobi on a tall (m >= n) matrix given row-major.
fn svd_tall(a: &[f64], m: usize, n: usize) -> Result<SvdResult> {
    // column-major working copies
    let mut cols = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            cols[j * m + i] = a[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    for _ in 0..MAX_SWEEPS {
        let mut converged = true;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let ap = cols[p * m + i];
                    let aq = cols[q * m + i];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = cols[p * m + i];
                    let aq = cols[q * m + i];
                    cols[p * m + i] = c * ap - s * aq;
                    cols[q * m + i] = s * ap + c * aq;
                }
                for i in 0..n {
                    let vp = v[p * n + i];
                    let vq = v[q * n + i];
                    v[p * n + i] = c * vp - s * vq;
                    v[q * n + i] = s * vp + c * vq;
                }
            }
        }
        if converged {
            break;
        }
    }

    // singular values and left vectors
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| cols[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());

    let mut u = vec![0.0; m * n];
    let mut vt = vec![0.0; n * n];
    let mut sigma = vec![0.0; n];
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (rank, &j) in order.iter().enumerate() {
        sigma[rank] = norms[j];
        let col: Vec<f64> = if norms[j] > 0.0 {
            cols[j * m..(j + 1) * m].iter().map(|x| x / norms[j]).collect()
        } else {
            orthonormal_fill(m, &u_cols)
        };
        for i in 0..m {
            u[i * n + rank] = col[i];
        }
        u_cols.push(col);
        for i in 0..n {
            vt[i * n + rank] = v[j * n + i];
        }
    }
    Ok(SvdResult {
        u: Tensor::from_vec(&[m, n], u)?,
        sigma,
        v: Tensor::from_vec(&[n, n], vt)?,
    })
}

/// A unit vector orthogonal to all of `existing` (Gram-Schmidt over the
/// canonical basis), used to complete U when a singular value is zero.
fn orthonormal_fill(m: usize, existing: &[Vec<f64>]) -> Vec<f64> {
    for seed in 0..m {
        let mut cand = vec![0.0; m];
        cand[seed] = 1.0;
        for col in existing {
            let dot: f64 = cand.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            for (c, e) in cand.iter_mut().zip(col.iter()) {
                *c -= dot * e;
            }
        }
        let norm: f64 = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for c in &mut cand {
                *c /= norm;
            }
            return cand;
        }
    }
    unreachable!("cannot complete orthonormal basis");
}

/// Flatten a rank >= 2 weight to (out_channels) x (everything else).
fn matrixize(weight: &Tensor) -> Result<(usize, usize)> {
    if weight.rank() < 2 {
        return Err(Error::invalid(format!(
            "spectral operations need rank >= 2, got rank {}",
            weight.rank()
        )));
    }
    let m = weight.shape()[0];
    let n: usize = weight.shape()[1..].iter().product();
    Ok((m, n))
}

/// Largest singular value of the matrixized weight.
pub fn spectral_norm(weight: &Tensor) -> Result<f64> {
    let (m, n) = matrixize(weight)?;
    let flat = weight.reshaped(&[m, n])?;
    let r = svd(&flat)?;
    Ok(r.sigma.first().copied().unwrap_or(0.0))
}

/// Clamp every singular value of the matrixized weight at the policy cap.
/// Singular values already below the cap, and all singular vectors, are
/// unchanged; when nothing exceeds the cap the input is returned as is.
pub fn clip_singular_values(weight: &Tensor, policy: &ClipPolicy) -> Result<Tensor> {
    policy.validate()?;
    let (m, n) = matrixize(weight)?;
    let cap = policy.max_singular_value;
    let flat = weight.reshaped(&[m, n])?;
    let r = svd(&flat)?;
    if r.sigma.iter().all(|&s| s <= cap) {
        return Ok(weight.clone());
    }
    let k = r.sigma.len();
    let mut out = vec![0.0; m * n];
    for (idx, &s) in r.sigma.iter().enumerate() {
        let sc = s.min(cap);
        if sc == 0.0 {
            continue;
        }
        for i in 0..m {
            let ui = r.u.data()[i * k + idx] * sc;
            if ui == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += ui * r.v.data()[j * k + idx];
            }
        }
    }
    Tensor::from_vec(weight.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    fn reconstruct(r: &SvdResult, m: usize, n: usize) -> Vec<f64> {
        let k = r.sigma.len();
        let mut out = vec![0.0; m * n];
        for idx in 0..k {
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] +=
                        r.u.data()[i * k + idx] * r.sigma[idx] * r.v.data()[j * k + idx];
                }
            }
        }
        out
    }

    fn frob(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn identity_singular_values() {
        let a = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let r = svd(&a).unwrap();
        for s in &r.sigma {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_singular_values() {
        let a = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let r = svd(&a).unwrap();
        assert!((r.sigma[0] - 2.0).abs() < 1e-12);
        assert!((r.sigma[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut prng = Prng::new(5);
        for &(m, n) in &[(8usize, 8usize), (16, 9), (5, 12), (7, 3)] {
            let a = Tensor::randn(&mut prng, &[m, n]);
            let r = svd(&a).unwrap();
            let k = m.min(n);
            assert_eq!(r.sigma.len(), k);
            // descending, non-negative
            for w in r.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert!(r.sigma.iter().all(|&s| s >= 0.0));
            // residual
            let norm_a = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let res = frob(&reconstruct(&r, m, n), a.data()) / norm_a.max(1.0);
            assert!(res < 1e-10, "residual {res} for {m}x{n}");
            // U^T U = I, V^T V = I
            for factor in [(&r.u, m), (&r.v, n)] {
                let (t, rows) = factor;
                for p in 0..k {
                    for q in 0..k {
                        let dot: f64 =
                            (0..rows).map(|i| t.data()[i * k + p] * t.data()[i * k + q]).sum();
                        let expect = if p == q { 1.0 } else { 0.0 };
                        assert!((dot - expect).abs() < 1e-10, "gram {p},{q}: {dot}");
                    }
                }
            }
        }
    }

    #[test]
    fn rank_deficient_matrix() {
        // rank 1: outer product
        let a = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let r = svd(&a).unwrap();
        assert!(r.sigma[1] < 1e-10);
        let res = frob(&reconstruct(&r, 3, 2), a.data());
        assert!(res < 1e-10);
    }

    #[test]
    fn non_finite_rejected() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, f64::NAN, 0.0, 1.0]).unwrap();
        assert!(svd(&a).is_err());
    }

    #[test]
    fn clip_diagonal() {
        let a = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let c = clip_singular_values(&a, &ClipPolicy::default()).unwrap();
        assert!((c.data()[0] - 1.0).abs() < 1e-10);
        assert!((c.data()[3] - 0.5).abs() < 1e-10);
        assert!(c.data()[1].abs() < 1e-10 && c.data()[2].abs() < 1e-10);
    }

    #[test]
    fn clip_noop_below_cap() {
        let mut prng = Prng::new(6);
        let mut a = Tensor::randn(&mut prng, &[4, 4]);
        let norm = spectral_norm(&a).unwrap();
        for v in a.data_mut() {
            *v *= 0.9 / norm;
        }
        let c = clip_singular_values(&a, &ClipPolicy::default()).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn clip_rejects_rank1() {
        let bias = Tensor::zeros(&[8]);
        assert!(clip_singular_values(&bias, &ClipPolicy::default()).is_err());
        assert!(spectral_norm(&bias).is_err());
    }

    #[test]
    fn rotation_spectral_norm_is_one() {
        let th: f64 = 0.7;
        let a = Tensor::from_vec(&[2, 2], vec![th.cos(), -th.sin(), th.sin(), th.cos()]).unwrap();
        assert!((spectral_norm(&a).unwrap() - 1.0).abs() < 1e-12);
        let d = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut prng = Prng::new(7);
        let a = Tensor::randn(&mut prng, &[32, 32]);
        // power iteration oracle on A^T A
        let n = 32;
        let mut v = vec![1.0; n];
        for _ in 0..3000 {
            // w = A v ; v' = A^T w
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += a.data()[i * n + j] * v[j];
                }
            }
            let mut v2 = vec![0.0; n];
            for j in 0..n {
                for i in 0..n {
                    v2[j] += a.data()[i * n + j] * w[i];
                }
            }
            let norm = v2.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v2 {
                *x /= norm;
            }
            v = v2;
        }
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += a.data()[i * n + j] * v[j];
            }
        }
        let est = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let got = spectral_norm(&a).unwrap();
        assert!((got - est).abs() < 1e-8, "svd {got} vs power {est}");
    }

    #[test]
    fn conv_kernel_clip_is_minimal_projection() {
        let mut prng = Prng::new(8);
        // 16x9 flattening of a conv kernel [16, 1, 3, 3]
        let a = Tensor::randn(&mut prng, &[16, 1, 3, 3]);
        let policy = ClipPolicy::default();
        let c = clip_singular_values(&a, &policy).unwrap();
        assert_eq!(c.shape(), a.shape());
        assert!(spectral_norm(&c).unwrap() <= 1.0 + 1e-9);
        // minimal Frobenius distance of a spectral-ball projection is
        // sqrt(sum over clipped values of (sigma - cap)^2)
        let flat = a.reshaped(&[16, 9]).unwrap();
        let r = svd(&flat).unwrap();
        let expect: f64 = r
            .sigma
            .iter()
            .map(|&s| (s - s.min(1.0)).powi(2))
            .sum::<f64>()
            .sqrt();
        let got = frob(c.data(), a.data());
        assert!((got - expect).abs() < 1e-9, "dist {got} vs minimal {expect}");
    }

    #[test]
    fn clip_idempotent_and_preserves_spaces() {
        let mut prng = Prng::new(9);
        let a = Tensor::randn(&mut prng, &[6, 4]);
        let policy = ClipPolicy::default();
        let c1 = clip_singular_values(&a, &policy).unwrap();
        let c2 = clip_singular_values(&c1, &policy).unwrap();
        let diff = frob(c1.data(), c2.data());
        assert!(diff < 1e-9, "idempotence diff {diff}");
        // principal angles between column spaces of A and clip(A):
        // singular values of U_a^T U_c are the cosines
        let ra = svd(&a).unwrap();
        let rc = svd(&c1).unwrap();
        let k = 4;
        let mut gram = vec![0.0; k * k];
        for p in 0..k {
            for q in 0..k {
                let mut dot = 0.0;
                for i in 0..6 {
                    dot += ra.u.data()[i * k + p] * rc.u.data()[i * k + q];
                }
                gram[p * k + q] = dot;
            }
        }
        let gt = Tensor::from_vec(&[k, k], gram).unwrap();
        let rg = svd(&gt).unwrap();
        for &cos in &rg.sigma {
            let angle = cos.min(1.0).acos();
            assert!(angle < 1e-6, "principal angle {angle}");
        }
    }
}
