//! Ground-truth trajectories and noisy measurements.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dynmodel::{FeatureModel, ParamMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;

/// Shape of the per-sample noise before scaling by the covariance factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDist {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]` (unit variance).
    Uniform,
}

/// Measurement noise covariance `Sigma_eps` (`d_x x d_x`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma_eps: DMatrix<f64>,
    pub dist: NoiseDist,
}

impl NoiseModel {
    /// `sigma2 * I`.
    pub fn isotropic(sigma2: f64, d_x: usize) -> Self {
        NoiseModel {
            sigma_eps: DMatrix::identity(d_x, d_x) * sigma2,
            dist: NoiseDist::Gaussian,
        }
    }

    pub fn new(sigma_eps: DMatrix<f64>) -> Result<Self> {
        let nm = NoiseModel {
            sigma_eps,
            dist: NoiseDist::Gaussian,
        };
        nm.factor()?;
        Ok(nm)
    }

    pub fn d_x(&self) -> usize {
        self.sigma_eps.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_eps.iter().all(|v| *v == 0.0)
    }

    /// `L` with `L L^T = Sigma_eps`. Diagonal covariances get an exact
    /// elementwise square root, others the eigen square root.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        let s = &self.sigma_eps;
        let n = s.nrows();
        if s.ncols() != n {
            return Err(Error::Dimension("noise covariance must be square".into()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("noise covariance must be finite".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if s[(i, j)] != s[(j, i)] {
                    return Err(Error::Dimension(
                        "noise covariance must be symmetric".into(),
                    ));
                }
            }
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || s[(i, j)] == 0.0));
        if diagonal {
            let min = (0..n).map(|i| s[(i, i)]).fold(f64::INFINITY, f64::min);
            if min < 0.0 {
                return Err(Error::NotPsd { min_eig: min });
            }
            return Ok(DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    s[(i, i)].sqrt()
                } else {
                    0.0
                }
            }));
        }
        let eig = SymmetricEigen::new(s.clone());
        let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let min = eig.eigenvalues.min();
        if min < -1e-12 * max.max(1.0) {
            return Err(Error::NotPsd { min_eig: min });
        }
        let root = DVector::from_iterator(n, eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
    }
}

/// Everything needed to integrate one clean trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub model: FeatureModel,
    pub theta0: ParamMatrix,
    /// Initial jet `(x, x', ..., x^(m-1))`, laid out `[d][l]`.
    pub x0: Vec<f64>,
    pub n: usize,
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let md = self.model.m * self.model.d_x;
        if self.x0.len() != md {
            return Err(Error::Dimension(format!(
                "initial jet has {} values, model needs {md}",
                self.x0.len()
            )));
        }
        if self.theta0.0.nrows() != self.model.d_phi() || self.theta0.0.ncols() != self.model.d_x {
            return Err(Error::Dimension(
                "theta0 shape does not match the model".into(),
            ));
        }
        if self.n == 0 || !(self.h > 0.0) || !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::Config(
                "need n >= 1, h > 0 and positive tolerances".into(),
            ));
        }
        Ok(())
    }

    /// Sample times `i h`, `i = 1..n`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.n).map(|i| i as f64 * self.h).collect()
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const DENSE: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const MAX_STEPS: usize = 50_000_000;

/// Adaptive Dormand-Prince integration of `y' = f(t, y)` with dense output
/// at the requested (increasing) times.
pub fn dopri5<F>(
    f: F,
    t0: f64,
    y0: &[f64],
    t_out: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let dim = y0.len();
    let mut out = Vec::with_capacity(t_out.len());
    let Some(&t_end) = t_out.last() else {
        return Ok(out);
    };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    f(t, &y, &mut k[0])?;

    let mut next = 0;
    while next < t_out.len() && t_out[next] <= t0 {
        out.push(y.clone());
        next += 1;
    }

    // initial step guess (Hairer-Norsett-Wanner)
    let sc = |yi: f64| atol + rtol * yi.abs();
    let d0 = (y.iter().map(|v| (v / sc(*v)).powi(2)).sum::<f64>() / dim as f64).sqrt();
    let d1 = (k[0]
        .iter()
        .zip(&y)
        .map(|(f, v)| (f / sc(*v)).powi(2))
        .sum::<f64>()
        / dim as f64)
        .sqrt();
    let mut step = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    step = step.min(t_end - t0).max(1e-12);

    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut steps = 0usize;
    while next < t_out.len() {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Integrator {
                t,
                reason: "step budget exhausted".into(),
            });
        }
        if t + step > t_end {
            step = t_end - t;
        }
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += step * a * k[j][i];
                }
                ytmp[i] = acc;
            }
            f(t + C[s] * step, &ytmp, &mut k[s])?;
            if s == 6 {
                ynew.copy_from_slice(&ytmp);
            }
        }
        // error estimate
        let mut err = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, ej) in E.iter().enumerate() {
                e += ej * k[j][i];
            }
            e *= step;
            let scale = atol + rtol * y[i].abs().max(ynew[i].abs());
            err += (e / scale).powi(2);
        }
        let err = (err / dim as f64).sqrt();
        if !err.is_finite() {
            step *= 0.2;
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator {
                    t,
                    reason: "non-finite state".into(),
                });
            }
            continue;
        }
        if err <= 1.0 {
            let t_new = t + step;
            // dense output between t and t_new
            while next < t_out.len() && t_out[next] <= t_new {
                let theta = (t_out[next] - t) / step;
                let theta1 = 1.0 - theta;
                let mut v = vec![0.0; dim];
                for i in 0..dim {
                    let ydiff = ynew[i] - y[i];
                    let bspl = step * k[0][i] - ydiff;
                    let r4 = ydiff - step * k[6][i] - bspl;
                    let mut r5 = 0.0;
                    for (j, dj) in DENSE.iter().enumerate() {
                        r5 += dj * k[j][i];
                    }
                    r5 *= step;
                    v[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
                }
                out.push(v);
                next += 1;
            }
            t = t_new;
            y.copy_from_slice(&ynew);
            let last = k[6].clone();
            k[0] = last;
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        step *= fac;
        if step < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integrator {
                t,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok(out)
}

/// Clean positions `x(i h)`, `i = 1..n`, as an `n x d_x` matrix.
pub fn integrate(cfg: &TrajectoryConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let model = &cfg.model;
    let d_x = model.d_x;
    let m = model.m;
    let md = m * d_x;
    let theta = &cfg.theta0;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let mut u = vec![0.0; (m + 1) * d_x];
        u[..md].copy_from_slice(y);
        dy[..md - d_x].copy_from_slice(&y[d_x..]);
        let top = model.rhs(theta, &u, t)?;
        dy[md - d_x..].copy_from_slice(top.as_slice());
        Ok(())
    };
    let times = cfg.times();
    let states = dopri5(rhs, 0.0, &cfg.x0, &times, cfg.rtol, cfg.atol)?;
    Ok(DMatrix::from_fn(cfg.n, d_x, |i, l| states[i][l]))
}

/// `z_i = x_i + L g_i` with `g_i` drawn from a generator seeded by `seed`.
pub fn add_noise(clean: &DMatrix<f64>, noise: &NoiseModel, seed: u64) -> Result<DMatrix<f64>> {
    let d_x = clean.ncols();
    if noise.d_x() != d_x {
        return Err(Error::Dimension(format!(
            "noise covariance is {0}x{0} but series has {1} channels",
            noise.d_x(),
            d_x
        )));
    }
    let l = noise.factor()?;
    let mut z = clean.clone();
    if noise.is_zero() {
        return Ok(z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unif = Uniform::new_inclusive(-3f64.sqrt(), 3f64.sqrt()).expect("valid range");
    let mut g = vec![0.0; d_x];
    for i in 0..clean.nrows() {
        for gi in g.iter_mut() {
            *gi = match noise.dist {
                NoiseDist::Gaussian => StandardNormal.sample(&mut rng),
                NoiseDist::Uniform => unif.sample(&mut rng),
            };
        }
        for a in 0..d_x {
            let mut acc = 0.0;
            for b in 0..d_x {
                acc += l[(a, b)] * g[b];
            }
            z[(i, a)] += acc;
        }
    }
    Ok(z)
}
