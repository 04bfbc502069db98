//! Slow reference implementations used to cross-check the production paths.
//!
//! Everything here avoids the QR/Legendre route and nalgebra solvers on purpose:
//! plain monomials, normal equations and a hand-rolled Gaussian elimination.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynmodel::FeatureModel;
use crate::lpdiff::FilterSpec;

/// Solves `a x = b` (b with several columns) by partial-pivot elimination.
pub fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let k = b.first().map_or(0, |r| r.len());
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().chain(rb).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n + k {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![vec![0.0; k]; n];
    for r in (0..n).rev() {
        for c in 0..k {
            let mut s = m[r][n + c];
            for j in r + 1..n {
                s -= m[r][j] * x[j][c];
            }
            x[r][c] = s / m[r][r];
        }
    }
    Some(x)
}

fn falling(j: usize, d: usize) -> f64 {
    (0..d).map(|i| (j - i) as f64).product()
}

/// Minimum-norm `D` with `D A = B`, monomial constraints in the offsets `tau_k = (k - i0) h`.
/// Solved through the saddle-point system `[I A; A^T 0] [x; y] = [0; b]`, one column
/// per derivative order, with one step of iterative refinement.
/// Columns excluded by the support mask are zero.
pub fn design_filter_oracle(spec: &FilterSpec) -> Option<DMatrix<f64>> {
    let i0 = spec.eval_position();
    let rows: Vec<usize> = spec.support.indices(spec.window);
    // scaled offsets keep the system tolerable; rescale derivatives afterwards
    let scale = (spec.window as f64 - 1.0) / 2.0 * spec.h;
    let a: Vec<Vec<f64>> = rows
        .iter()
        .map(|&k| {
            let s = (k as f64 - i0) * spec.h / scale;
            (0..spec.p).map(|j| s.powi(j as i32)).collect()
        })
        .collect();
    let (nr, p) = (rows.len(), spec.p);
    let dim = nr + p;
    let mut kkt = vec![vec![0.0; dim]; dim];
    for r in 0..nr {
        kkt[r][r] = 1.0;
        for j in 0..p {
            kkt[r][nr + j] = a[r][j];
            kkt[nr + j][r] = a[r][j];
        }
    }
    // right-hand side: derivative of s^j at 0 is d! for j = d
    let rhs: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..=spec.m)
                .map(|d| {
                    if i >= nr && i - nr == d {
                        falling(d, d)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut x = gauss_solve(&kkt, &rhs)?;
    let resid: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..=spec.m)
                .map(|c| rhs[i][c] - (0..dim).map(|j| kkt[i][j] * x[j][c]).sum::<f64>())
                .collect()
        })
        .collect();
    let dx = gauss_solve(&kkt, &resid)?;
    for i in 0..dim {
        for c in 0..=spec.m {
            x[i][c] += dx[i][c];
        }
    }
    let mut out = DMatrix::zeros(spec.m + 1, spec.window);
    for (ri, &k) in rows.iter().enumerate() {
        for d in 0..=spec.m {
            out[(d, k - 1)] = x[ri][d] * scale.powi(-(d as i32));
        }
    }
    Some(out)
}

/// Jet at the evaluation point by direct least-squares polynomial fit of a window of samples.
pub fn dense_lsq_jet(spec: &FilterSpec, window_samples: &[f64]) -> Option<Vec<f64>> {
    let d = design_filter_oracle(spec)?;
    Some(
        (0..=spec.m)
            .map(|r| {
                (0..spec.window)
                    .map(|k| d[(r, k)] * window_samples[k])
                    .sum()
            })
            .collect(),
    )
}

/// Monte Carlo estimate of `E[f(u + e)] - f(u)` for `e ~ N(0, C)`, with its standard error.
pub fn gaussian_bias_oracle<F>(
    f: F,
    u: &[f64],
    c: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = u.len();
    // symmetric square root so semidefinite (even zero) covariances work
    let eig = c.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root =
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let f0 = f(u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n];
    let mut x = vec![0.0; n];
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            x[i] = u[i] + (0..n).map(|j| root[(i, j)] * z[j]).sum::<f64>();
        }
        let v = f(&x) - f0;
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / draws as f64;
    let var = (s2 / draws as f64 - mean * mean).max(0.0);
    (mean, (var / draws as f64).sqrt())
}

/// Central-difference gradient of every feature, `d_phi x K`.
pub fn fd_gradient(model: &FeatureModel, u: &[f64], t: f64, step: f64) -> DMatrix<f64> {
    let k = u.len();
    let mut g = DMatrix::zeros(model.d_phi(), k);
    let mut v = u.to_vec();
    for i in 0..k {
        v[i] = u[i] + step;
        let fp = model.eval_features(&v, t);
        v[i] = u[i] - step;
        let fm = model.eval_features(&v, t);
        v[i] = u[i];
        for a in 0..model.d_phi() {
            g[(a, i)] = (fp[a] - fm[a]) / (2.0 * step);
        }
    }
    g
}

/// Central-difference Hessian of feature `a`.
pub fn fd_hessian(model: &FeatureModel, a: usize, u: &[f64], t: f64, step: f64) -> DMatrix<f64> {
    let k = u.len();
    let f = |v: &[f64]| model.eval_features(v, t)[a];
    let mut h = DMatrix::zeros(k, k);
    let mut v = u.to_vec();
    for i in 0..k {
        for j in 0..k {
            let mut acc = 0.0;
            for (si, sj, w) in [
                (1.0, 1.0, 1.0),
                (1.0, -1.0, -1.0),
                (-1.0, 1.0, -1.0),
                (-1.0, -1.0, 1.0),
            ] {
                v.copy_from_slice(u);
                v[i] += si * step;
                v[j] += sj * step;
                acc += w * f(&v);
            }
            h[(i, j)] = acc / (4.0 * step * step);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpdiff::design_filter;

    #[test]
    fn gauss_solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let b = vec![vec![3.0], vec![5.0]];
        let x = gauss_solve(&a, &b).unwrap();
        assert!((x[0][0] - 0.8).abs() < 1e-14 && (x[1][0] - 1.4).abs() < 1e-14);
        assert!(gauss_solve(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[vec![1.0], vec![1.0]]).is_none());
    }

    #[test]
    fn oracle_matches_production_small() {
        let spec = FilterSpec::centered(9, 4, 2, 0.1);
        let d0 = design_filter_oracle(&spec).unwrap();
        let d1 = design_filter(&spec).unwrap().coeffs;
        assert!((d0 - d1).abs().max() < 1e-9);
    }

    #[test]
    fn gaussian_oracle_quadratic() {
        let c = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
        let (m, se) =
            gaussian_bias_oracle(|x| x[0] * x[0] + x[0] * x[1], &[1.0, -1.0], &c, 200_000, 3);
        assert!((m - 0.6).abs() < 4.0 * se, "{m} {se}");
    }
}
