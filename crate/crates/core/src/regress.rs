//! Plug-in estimators: least squares (LS), bias-corrected least squares (BC)
//! and staggered-filter instrumental variables (IV).
//!
//! All three regress the order-`m` jet row onto features of the lower
//! orders. BC subtracts the second-order noise bias
//! `B = 1/2 C^{mu nu} d_mu d_nu` from the quadratic sums, where `C` is the
//! covariance of the filtered noise across jet coordinates. IV replaces one
//! factor of each quadratic sum by an estimate built from disjoint samples.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynmodel::{FeatureModel, ParamMatrix};
use crate::error::{Error, Result};
use crate::lpdiff::{design_filter, design_staggered_pair, FilterBank, FilterSpec, JetSeries};
use crate::simkit::NoiseModel;

/// Grams with reciprocal condition below this are treated as singular.
pub const RCOND_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    LS,
    BC,
    IV,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LS, Method::BC, Method::IV];

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "ls" => Some(Method::LS),
            "bc" | "bcls" => Some(Method::BC),
            "iv" => Some(Method::IV),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::LS => "LS",
            Method::BC => "BC",
            Method::IV => "IV",
        })
    }
}

/// Covariates and responses, plus the instrument side for IV.
#[derive(Debug, Clone)]
pub struct RegressionData {
    /// `n' x d_phi`.
    pub phi: DMatrix<f64>,
    /// `n' x d_x`.
    pub y: DMatrix<f64>,
    pub phi_tilde: Option<DMatrix<f64>>,
    pub y_tilde: Option<DMatrix<f64>>,
}

impl RegressionData {
    pub fn n_prime(&self) -> usize {
        self.phi.nrows()
    }
}

/// Covariance of filtered noise over the flattened jet coordinates `d * d_x + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterNoiseCov {
    pub c: DMatrix<f64>,
}

impl FilterNoiseCov {
    /// Leading `k x k` block, i.e. derivative orders below `k / d_x`.
    fn leading(&self, k: usize) -> DMatrix<f64> {
        self.c.view((0, 0), (k, k)).into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct BiasCorrections {
    pub sigma_phiphi: DMatrix<f64>,
    pub sigma_phiy: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub method: Method,
    pub theta_hat: ParamMatrix,
    /// The matrix actually factorized.
    pub gram: DMatrix<f64>,
    pub pe_stat: f64,
    pub n_prime: usize,
    pub gram_condition: f64,
}

impl EstimatorOutput {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method.to_string(),
            "theta_hat": self.theta_hat.row_major(),
            "theta_shape": [self.theta_hat.0.nrows(), self.theta_hat.0.ncols()],
            "pe_stat": self.pe_stat,
            "n_prime": self.n_prime,
            "gram_condition": self.gram_condition,
        })
    }
}

fn check_jet(jet: &JetSeries, model: &FeatureModel) -> Result<()> {
    if jet.d_x != model.d_x {
        return Err(Error::Dimension(format!(
            "jet has {} channels, model has {}",
            jet.d_x, model.d_x
        )));
    }
    if jet.m < model.m {
        return Err(Error::Dimension(format!(
            "jet carries derivatives up to {}, model needs {}",
            jet.m, model.m
        )));
    }
    if jet.is_empty() {
        return Err(Error::Dimension("jet series is empty".into()));
    }
    Ok(())
}

/// Rows `phi(x_j^(0..m-1), t_j)` and `x_j^(m)`.
pub fn assemble(jet: &JetSeries, model: &FeatureModel) -> Result<RegressionData> {
    check_jet(jet, model)?;
    let k = model.k();
    let n = jet.len();
    let d_x = model.d_x;
    let mut phi = DMatrix::zeros(n, model.d_phi());
    let mut y = DMatrix::zeros(n, d_x);
    for j in 0..n {
        let u = &jet.point(j)[..k];
        phi.row_mut(j)
            .copy_from(&model.eval_features(u, jet.times[j]).transpose());
        for l in 0..d_x {
            y[(j, l)] = u[model.m * d_x + l];
        }
    }
    Ok(RegressionData {
        phi,
        y,
        phi_tilde: None,
        y_tilde: None,
    })
}

/// `C[(d,l),(d',l')] = Sigma_eps[l,l'] * sum_k D^d_k D^{d'}_k`.
pub fn filter_noise_cov(bank: &FilterBank, noise: &NoiseModel) -> FilterNoiseCov {
    let dd = &bank.coeffs * bank.coeffs.transpose();
    let d_x = noise.d_x();
    let mp1 = bank.m() + 1;
    let s = &noise.sigma_eps;
    let c = DMatrix::from_fn(mp1 * d_x, mp1 * d_x, |r, q| {
        let (d, l) = (r / d_x, r % d_x);
        let (d2, l2) = (q / d_x, q % d_x);
        s[(l, l2)] * dd[(d, d2)]
    });
    FilterNoiseCov { c }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `1/2 <Hess phi^a, C>` for every feature at one point.
fn half_contractions(model: &FeatureModel, u: &[f64], t: f64, c: &DMatrix<f64>) -> Vec<f64> {
    model
        .eval_hessian(u, t)
        .iter()
        .map(|h| 0.5 * frob_dot(h, c))
        .collect()
}

/// Second-order bias of the quadratic sums `phi phi^T` and `phi y^T`,
/// averaged over the jet.
pub fn bias_corrections(
    data: &RegressionData,
    jet: &JetSeries,
    model: &FeatureModel,
    cov: &FilterNoiseCov,
) -> Result<BiasCorrections> {
    check_jet(jet, model)?;
    let k = model.k();
    if cov.c.nrows() < k {
        return Err(Error::Dimension(
            "filter noise covariance smaller than the model jet".into(),
        ));
    }
    let c = cov.leading(k);
    let d_phi = model.d_phi();
    let d_x = model.d_x;
    let n = jet.len();
    if data.n_prime() != n {
        return Err(Error::Dimension(
            "regression data and jet lengths differ".into(),
        ));
    }
    let nonlinear = model.is_nonlinear();
    let mut spp = DMatrix::zeros(d_phi, d_phi);
    let mut spy = DMatrix::zeros(d_phi, d_x);
    for j in 0..n {
        let u = &jet.point(j)[..k];
        let t = jet.times[j];
        let g = model.eval_gradient(u, t);
        let gc = &g * &c;
        let hc = if nonlinear {
            half_contractions(model, u, t, &c)
        } else {
            vec![0.0; d_phi]
        };
        for a in 0..d_phi {
            for b in a..d_phi {
                let mut v = hc[a] * data.phi[(j, b)] + hc[b] * data.phi[(j, a)];
                for q in 0..k {
                    v += gc[(a, q)] * g[(b, q)];
                }
                spp[(a, b)] += v;
            }
            for l in 0..d_x {
                spy[(a, l)] += hc[a] * data.y[(j, l)] + gc[(a, model.m * d_x + l)];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for a in 0..d_phi {
        for b in a..d_phi {
            spp[(a, b)] *= inv;
            spp[(b, a)] = spp[(a, b)];
        }
    }
    spy *= inv;
    Ok(BiasCorrections {
        sigma_phiphi: spp,
        sigma_phiy: spy,
    })
}

/// `sigma_min(Phi) / sqrt(n')`.
pub fn pe_diagnostic(phi: &DMatrix<f64>) -> f64 {
    let n = phi.nrows();
    if n == 0 || phi.ncols() == 0 {
        return 0.0;
    }
    let smin = if n >= phi.ncols() {
        let r = phi.clone().qr().r();
        r.singular_values().min()
    } else {
        0.0
    };
    smin / (n as f64).sqrt()
}

fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

fn solve(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    gram.clone().qr().solve(rhs)
}

fn finish(
    method: Method,
    gram: DMatrix<f64>,
    rhs: DMatrix<f64>,
    pe_stat: f64,
    n_prime: usize,
) -> Result<EstimatorOutput> {
    let rc = rcond(&gram);
    let singular = || match method {
        Method::BC => Error::CorrectedGramSingular { pe_stat, rcond: rc },
        _ => Error::SingularGram {
            method,
            pe_stat,
            rcond: rc,
        },
    };
    if !(rc > RCOND_FLOOR) {
        return Err(singular());
    }
    let theta = solve(&gram, &rhs).ok_or_else(singular)?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(EstimatorOutput {
        method,
        theta_hat: ParamMatrix(theta),
        gram,
        pe_stat,
        n_prime,
        gram_condition: 1.0 / rc,
    })
}

fn empty_check(data: &RegressionData) -> Result<usize> {
    let n = data.n_prime();
    if n == 0 {
        return Err(Error::Dimension("no regression rows".into()));
    }
    if data.y.nrows() != n {
        return Err(Error::Dimension(
            "covariate and response row counts differ".into(),
        ));
    }
    Ok(n)
}

/// Ordinary least squares on the plug-in regression.
pub fn ls_estimate(data: &RegressionData) -> Result<EstimatorOutput> {
    let n = empty_check(data)?;
    let inv = 1.0 / n as f64;
    let gram = data.phi.tr_mul(&data.phi) * inv;
    let rhs = data.phi.tr_mul(&data.y) * inv;
    finish(Method::LS, gram, rhs, pe_diagnostic(&data.phi), n)
}

/// Least squares with the second-order noise bias removed from both sums.
pub fn bc_estimate(
    data: &RegressionData,
    corrections: &BiasCorrections,
) -> Result<EstimatorOutput> {
    let n = empty_check(data)?;
    let inv = 1.0 / n as f64;
    let gram = data.phi.tr_mul(&data.phi) * inv - &corrections.sigma_phiphi;
    let rhs = data.phi.tr_mul(&data.y) * inv - &corrections.sigma_phiy;
    finish(Method::BC, gram, rhs, pe_diagnostic(&data.phi), n)
}

/// Features with their own bias removed, from two jets on the same time grid.
pub fn iv_assemble(
    jet_hat: &JetSeries,
    jet_tilde: &JetSeries,
    model: &FeatureModel,
    cov_hat: &FilterNoiseCov,
    cov_tilde: &FilterNoiseCov,
) -> Result<RegressionData> {
    if jet_hat.len() != jet_tilde.len()
        || jet_hat
            .times
            .iter()
            .zip(&jet_tilde.times)
            .any(|(a, b)| (a - b).abs() > 1e-9 * jet_hat.h.max(f64::MIN_POSITIVE))
    {
        return Err(Error::Dimension(
            "instrument jets are on different time grids".into(),
        ));
    }
    let k = model.k();
    let corrected = |jet: &JetSeries, cov: &FilterNoiseCov| -> Result<RegressionData> {
        let mut data = assemble(jet, model)?;
        if model.is_nonlinear() {
            if cov.c.nrows() < k {
                return Err(Error::Dimension(
                    "filter noise covariance smaller than the model jet".into(),
                ));
            }
            let c = cov.leading(k);
            for j in 0..jet.len() {
                let hc = half_contractions(model, &jet.point(j)[..k], jet.times[j], &c);
                for (a, v) in hc.iter().enumerate() {
                    data.phi[(j, a)] -= v;
                }
            }
        }
        Ok(data)
    };
    let hat = corrected(jet_hat, cov_hat)?;
    let tilde = corrected(jet_tilde, cov_tilde)?;
    Ok(RegressionData {
        phi: hat.phi,
        y: hat.y,
        phi_tilde: Some(tilde.phi),
        y_tilde: Some(tilde.y),
    })
}

/// Symmetrized instrumental-variables estimate.
pub fn iv_estimate(data: &RegressionData) -> Result<EstimatorOutput> {
    let n = empty_check(data)?;
    let (Some(phi_t), Some(y_t)) = (&data.phi_tilde, &data.y_tilde) else {
        return Err(Error::Dimension(
            "IV needs instrument covariates and responses".into(),
        ));
    };
    if phi_t.shape() != data.phi.shape() || y_t.shape() != data.y.shape() {
        return Err(Error::Dimension(
            "instrument shapes differ from the primary side".into(),
        ));
    }
    let inv = 1.0 / (2.0 * n as f64);
    let cross = data.phi.tr_mul(phi_t);
    let gram = (&cross + cross.transpose()) * inv;
    let rhs = (phi_t.tr_mul(&data.y) + data.phi.tr_mul(y_t)) * inv;
    finish(Method::IV, gram, rhs, pe_diagnostic(&data.phi), n)
}

/// Filter banks and noise covariances prepared once for repeated estimation.
#[derive(Debug, Clone)]
pub struct Identifier {
    pub model: FeatureModel,
    pub bank: FilterBank,
    pub pair: (FilterBank, FilterBank),
    pub noise: NoiseModel,
    cov: FilterNoiseCov,
    cov_pair: (FilterNoiseCov, FilterNoiseCov),
}

impl Identifier {
    /// `spec.support` is ignored: the full bank and the staggered pair are both designed.
    pub fn new(model: FeatureModel, spec: &FilterSpec, noise: NoiseModel) -> Result<Self> {
        if spec.m != model.m {
            return Err(Error::Dimension(format!(
                "filter produces derivatives up to {}, model order is {}",
                spec.m, model.m
            )));
        }
        if noise.d_x() != model.d_x {
            return Err(Error::Dimension(
                "noise covariance does not match the model state".into(),
            ));
        }
        let full = spec.with_support(crate::lpdiff::Support::Full);
        let bank = design_filter(&full)?;
        let pair = design_staggered_pair(&full)?;
        let cov = filter_noise_cov(&bank, &noise);
        let cov_pair = (
            filter_noise_cov(&pair.0, &noise),
            filter_noise_cov(&pair.1, &noise),
        );
        Ok(Identifier {
            model,
            bank,
            pair,
            noise,
            cov,
            cov_pair,
        })
    }

    pub fn estimate(
        &self,
        method: Method,
        z: &DMatrix<f64>,
        t_start: f64,
    ) -> Result<EstimatorOutput> {
        Ok(self.estimate_many(&[method], z, t_start)?.remove(0))
    }

    /// Runs several estimators on the same series, sharing the filtered jets.
    pub fn estimate_many(
        &self,
        methods: &[Method],
        z: &DMatrix<f64>,
        t_start: f64,
    ) -> Result<Vec<EstimatorOutput>> {
        let needs_full = methods.iter().any(|m| *m != Method::IV);
        let full = if needs_full {
            let jet = self.bank.apply(z, t_start)?;
            let data = assemble(&jet, &self.model)?;
            Some((jet, data))
        } else {
            None
        };
        let iv_data = if methods.contains(&Method::IV) {
            let jh = self.pair.0.apply(z, t_start)?;
            let jt = self.pair.1.apply(z, t_start)?;
            Some(iv_assemble(
                &jh,
                &jt,
                &self.model,
                &self.cov_pair.0,
                &self.cov_pair.1,
            )?)
        } else {
            None
        };
        methods
            .iter()
            .map(|m| match m {
                Method::LS => ls_estimate(&full.as_ref().expect("full jet").1),
                Method::BC => {
                    let (jet, data) = full.as_ref().expect("full jet");
                    let corr = bias_corrections(data, jet, &self.model, &self.cov)?;
                    bc_estimate(data, &corr)
                }
                Method::IV => iv_estimate(iv_data.as_ref().expect("iv data")),
            })
            .collect()
    }
}

/// `phi(x) - 1/2 <Hess phi, C>` evaluated at one point, for callers outside a jet.
pub fn corrected_features(
    model: &FeatureModel,
    u: &[f64],
    t: f64,
    cov: &FilterNoiseCov,
) -> DVector<f64> {
    let k = model.k();
    let c = cov.leading(k);
    let hc = half_contractions(model, &u[..k], t, &c);
    let mut phi = model.eval_features(&u[..k], t);
    for (a, v) in hc.iter().enumerate() {
        phi[a] -= v;
    }
    phi
}
