//! Monte Carlo studies and empirical rate checks.
//!
//! One clean trajectory is integrated per study and every replication adds
//! fresh noise seeded with `base_seed + r`. All requested estimators consume
//! the same noisy series, so method comparisons are paired.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynmodel::{FeatureModel, ParamMatrix};
use crate::error::{Error, Result};
use crate::lpdiff::{design_filter, FilterSpec};
use crate::regress::{EstimatorOutput, Identifier, Method};
use crate::simkit::{self, NoiseDist, NoiseModel, TrajectoryConfig};

/// Built-in model name or inline model config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Inline(serde_json::Value),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<FeatureModel> {
        match self {
            ModelRef::Name(n) => FeatureModel::builtin(n)
                .ok_or_else(|| Error::Config(format!("unknown built-in model {n:?}"))),
            ModelRef::Inline(v) => FeatureModel::from_json(&v.to_string()),
        }
    }
}

/// Scalar `sigma^2` (meaning `sigma^2 I`) or a full covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl SigmaSpec {
    pub fn noise_model(&self, d_x: usize, dist: NoiseDist) -> Result<NoiseModel> {
        let mut nm = match self {
            SigmaSpec::Scalar(s) => {
                if !(*s >= 0.0) {
                    return Err(Error::Config(format!(
                        "noise variance {s} must be nonnegative"
                    )));
                }
                NoiseModel::isotropic(*s, d_x)
            }
            SigmaSpec::Matrix(rows) => {
                if rows.len() != d_x || rows.iter().any(|r| r.len() != d_x) {
                    return Err(Error::Config(format!(
                        "noise covariance must be {d_x}x{d_x}"
                    )));
                }
                NoiseModel::new(DMatrix::from_fn(d_x, d_x, |i, j| rows[i][j]))?
            }
        };
        nm.dist = dist;
        nm.factor()?;
        Ok(nm)
    }
}

/// Window design inside an experiment; `m` and `h` come from the model and trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(rename = "N")]
    pub window: usize,
    pub p: usize,
    #[serde(default)]
    pub i0: Option<f64>,
}

fn default_rtol() -> f64 {
    simkit::DEFAULT_RTOL
}
fn default_atol() -> f64 {
    simkit::DEFAULT_ATOL
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_kde_points() -> usize {
    256
}

/// Full description of one Monte Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelRef,
    /// Rows of `theta0` (`d_phi x d_x`).
    pub theta0: Vec<Vec<f64>>,
    /// Initial jet `(x, x', ..., x^(m-1))`, laid out `[d][l]`.
    pub x0: Vec<f64>,
    pub n: usize,
    pub h: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    pub sigma2: SigmaSpec,
    #[serde(default)]
    pub noise_dist: NoiseDist,
    pub filter: FilterConfig,
    #[serde(default = "default_methods")]
    pub estimators: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    #[serde(default = "default_kde_points")]
    pub kde_points: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        self.filter_spec()?.validate()?;
        self.trajectory()?.validate()
    }

    pub fn model(&self) -> Result<FeatureModel> {
        self.model.resolve()
    }

    pub fn trajectory(&self) -> Result<TrajectoryConfig> {
        Ok(TrajectoryConfig {
            model: self.model()?,
            theta0: ParamMatrix::from_rows(&self.theta0)?,
            x0: self.x0.clone(),
            n: self.n,
            h: self.h,
            rtol: self.rtol,
            atol: self.atol,
        })
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        self.sigma2.noise_model(self.model()?.d_x, self.noise_dist)
    }

    pub fn filter_spec(&self) -> Result<FilterSpec> {
        let model = self.model()?;
        let mut spec = FilterSpec::centered(self.filter.window, self.filter.p, model.m, self.h);
        spec.i0 = self.filter.i0;
        Ok(spec)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64)
            .map(|r| self.base_seed.wrapping_add(r))
            .collect()
    }
}

/// Scalar statistics for one parameter entry, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamStats {
    pub param: String,
    pub truth: f64,
    /// Normalizer actually used: `|theta0_i|`, or the operator norm of `theta0` when the entry is zero.
    pub scale: f64,
    pub bias_pct: f64,
    pub std_pct: f64,
    pub rmse_pct: f64,
}

/// Operator-norm statistics for the whole matrix, in percent of `||theta0||_2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixStats {
    pub opnorm_bias_pct: f64,
    pub opnorm_rmsd_pct: f64,
    pub opnorm_rmse_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub params: Vec<ParamStats>,
    pub matrix: MatrixStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub methods: Vec<MethodSummary>,
    pub replications: usize,
    pub seeds: Vec<u64>,
}

impl McSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// One estimator result from one replication.
#[derive(Debug, Clone)]
pub struct RepRow {
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub theta: ParamMatrix,
    pub pe_stat: f64,
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub reps: Vec<RepRow>,
    pub summary: McSummary,
    pub param_names: Vec<String>,
}

/// Largest singular value.
pub fn opnorm(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

pub fn param_names(d_phi: usize, d_x: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(d_phi * d_x);
    for a in 0..d_phi {
        for c in 0..d_x {
            out.push(if d_x == 1 {
                format!("theta_{}", a + 1)
            } else {
                format!("theta_{}_{}", a + 1, c + 1)
            });
        }
    }
    out
}

/// Bias, standard deviation (population) and RMSE of estimates against `theta0`.
pub fn summarize(method: Method, estimates: &[ParamMatrix], theta0: &ParamMatrix) -> MethodSummary {
    let r = estimates.len() as f64;
    let (nr, nc) = theta0.0.shape();
    let names = param_names(nr, nc);
    let norm0 = opnorm(&theta0.0);
    let mut mean = DMatrix::zeros(nr, nc);
    for e in estimates {
        mean += &e.0;
    }
    mean /= r;

    let mut params = Vec::with_capacity(nr * nc);
    for a in 0..nr {
        for c in 0..nc {
            let truth = theta0.0[(a, c)];
            let scale = if truth != 0.0 { truth.abs() } else { norm0 };
            let var = estimates
                .iter()
                .map(|e| (e.0[(a, c)] - mean[(a, c)]).powi(2))
                .sum::<f64>()
                / r;
            let bias_pct = (mean[(a, c)] - truth) / scale * 100.0;
            let std_pct = var.sqrt() / scale * 100.0;
            params.push(ParamStats {
                param: names[a * nc + c].clone(),
                truth,
                scale,
                bias_pct,
                std_pct,
                rmse_pct: (bias_pct * bias_pct + std_pct * std_pct).sqrt(),
            });
        }
    }
    let bias = opnorm(&(&mean - &theta0.0)) / norm0 * 100.0;
    let msd = estimates
        .iter()
        .map(|e| opnorm(&(&e.0 - &mean)).powi(2))
        .sum::<f64>()
        / r;
    let rmsd = msd.sqrt() / norm0 * 100.0;
    MethodSummary {
        method,
        params,
        matrix: MatrixStats {
            opnorm_bias_pct: bias,
            opnorm_rmsd_pct: rmsd,
            opnorm_rmse_pct: (bias * bias + rmsd * rmsd).sqrt(),
        },
    }
}

/// Noisy series for replication seed `seed`, sharing the clean trajectory.
pub fn replicate(clean: &DMatrix<f64>, noise: &NoiseModel, seed: u64) -> Result<DMatrix<f64>> {
    simkit::add_noise(clean, noise, seed)
}

/// Runs a study on an already integrated clean trajectory.
pub fn run_mc_on(cfg: &ExperimentConfig, clean: &DMatrix<f64>) -> Result<McResult> {
    cfg.validate()?;
    let model = cfg.model()?;
    let theta0 = ParamMatrix::from_rows(&cfg.theta0)?;
    let noise = cfg.noise()?;
    let ident = Identifier::new(model.clone(), &cfg.filter_spec()?, noise.clone())?;
    let seeds = cfg.seeds();
    let t_start = cfg.h;
    let methods = cfg.estimators.clone();

    let per_rep: Vec<Vec<EstimatorOutput>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let z = replicate(clean, &noise, seed)?;
            ident
                .estimate_many(&methods, &z, t_start)
                .map_err(|e| Error::Replication {
                    index: r,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reps = Vec::with_capacity(per_rep.len() * methods.len());
    for (r, outs) in per_rep.iter().enumerate() {
        for o in outs {
            reps.push(RepRow {
                rep: r,
                seed: seeds[r],
                method: o.method,
                theta: o.theta_hat.clone(),
                pe_stat: o.pe_stat,
            });
        }
    }
    let methods_summary = methods
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let est: Vec<ParamMatrix> = per_rep.iter().map(|o| o[i].theta_hat.clone()).collect();
            summarize(m, &est, &theta0)
        })
        .collect();
    Ok(McResult {
        reps,
        summary: McSummary {
            methods: methods_summary,
            replications: cfg.replications,
            seeds,
        },
        param_names: param_names(model.d_phi(), model.d_x),
    })
}

/// Integrates the clean trajectory once and runs every replication.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<McResult> {
    cfg.validate()?;
    let clean = simkit::integrate(&cfg.trajectory()?)?;
    run_mc_on(cfg, &clean)
}

/// Gaussian KDE with Silverman's bandwidth on a grid spanning `mean +- 4 sd`.
pub fn kde(samples: &[f64], grid_points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = samples.len();
    if r < 2 || grid_points < 2 {
        return Err(Error::Config(
            "kde needs at least two samples and two grid points".into(),
        ));
    }
    let mean = samples.iter().sum::<f64>() / r as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r as f64 - 1.0)).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Config("kde of degenerate (constant) samples".into()));
    }
    let bw = 1.06 * sd * (r as f64).powf(-0.2);
    let lo = mean - 4.0 * sd;
    let step = 8.0 * sd / (grid_points - 1) as f64;
    let norm = 1.0 / (r as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    let density = grid
        .iter()
        .map(|g| {
            samples
                .iter()
                .map(|x| (-0.5 * ((g - x) / bw).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok((grid, density))
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

/// Writes `reps.csv`, `summary.csv` and the KDE files; returns the file names.
pub fn write_mc_outputs(dir: &Path, res: &McResult, kde_points: usize) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let mut w = csv::Writer::from_path(dir.join("reps.csv"))?;
    let mut header = vec!["rep".to_string(), "seed".into(), "method".into()];
    header.extend(res.param_names.iter().cloned());
    header.push("pe_stat".into());
    w.write_record(&header)?;
    for row in &res.reps {
        let mut rec = vec![
            row.rep.to_string(),
            row.seed.to_string(),
            row.method.to_string(),
        ];
        rec.extend(row.theta.row_major().into_iter().map(fmt_f));
        rec.push(fmt_f(row.pe_stat));
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push("reps.csv".to_string());

    w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["method", "param", "bias_pct", "std_pct", "rmse_pct"])?;
    for ms in &res.summary.methods {
        for p in &ms.params {
            w.write_record([
                ms.method.to_string(),
                p.param.clone(),
                fmt_f(p.bias_pct),
                fmt_f(p.std_pct),
                fmt_f(p.rmse_pct),
            ])?;
        }
        // matrix row: std column carries the RMS operator-norm deviation
        w.write_record([
            ms.method.to_string(),
            "opnorm".to_string(),
            fmt_f(ms.matrix.opnorm_bias_pct),
            fmt_f(ms.matrix.opnorm_rmsd_pct),
            fmt_f(ms.matrix.opnorm_rmse_pct),
        ])?;
    }
    w.flush()?;
    files.push("summary.csv".to_string());

    if res.summary.replications >= 2 {
        let mut by_method: BTreeMap<Method, Vec<&RepRow>> = BTreeMap::new();
        for row in &res.reps {
            by_method.entry(row.method).or_default().push(row);
        }
        for (method, rows) in by_method {
            for (i, name) in res.param_names.iter().enumerate() {
                let samples: Vec<f64> = rows.iter().map(|r| r.theta.row_major()[i]).collect();
                let Ok((grid, dens)) = kde(&samples, kde_points) else {
                    continue;
                };
                let fname = format!("kde_{}_{}.csv", method.to_string().to_lowercase(), name);
                let mut w = csv::Writer::from_path(dir.join(&fname))?;
                w.write_record(["grid", "density"])?;
                for (g, d) in grid.iter().zip(&dens) {
                    w.write_record([fmt_f(*g), fmt_f(*d)])?;
                }
                w.flush()?;
                files.push(fname);
            }
        }
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// Rate studies

/// Analytic test signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Signal {
    /// `sin(omega t)`.
    Sine {
        omega: f64,
    },
    Zero,
}

impl Default for Signal {
    fn default() -> Self {
        Signal::Sine { omega: 1.0 }
    }
}

impl Signal {
    pub fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    pub fn derivative(&self, t: f64, d: usize) -> f64 {
        match *self {
            Signal::Sine { omega } => {
                omega.powi(d as i32) * (omega * t + d as f64 * std::f64::consts::FRAC_PI_2).sin()
            }
            Signal::Zero => 0.0,
        }
    }
}

fn default_draws() -> usize {
    10_000
}

/// Filter families for the bias/fluctuation rate checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterRateConfig {
    pub p: usize,
    pub m: usize,
    /// Bandwidth exponent for the scaled family `N = round(c h^-alpha)`.
    pub alpha: f64,
    pub c: f64,
    /// Sample periods for the scaled family.
    pub hs: Vec<f64>,
    /// Fixed window for the bias-vs-`Nh` check.
    pub fixed_window: usize,
    /// Sample periods for the fixed-window bias check.
    pub fixed_window_hs: Vec<f64>,
    /// Fixed period for the fluctuation-vs-`N` check.
    pub fixed_h: f64,
    /// Windows for the fluctuation-vs-`N` check.
    pub windows: Vec<usize>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub signal: Signal,
    /// Length of signal (time units) over which the worst-case bias is taken.
    #[serde(default = "default_span")]
    pub span: f64,
}

fn default_span() -> f64 {
    2.0 * std::f64::consts::PI
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub family: String,
    pub h: f64,
    pub window: usize,
    pub bias: f64,
    pub fluct: f64,
}

/// Fitted log-log slopes beside their theoretical targets.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub alpha: f64,
    /// `(p - m)(1 - alpha)`.
    pub beta: f64,
    /// `((2m + 1) alpha - 2m) / 2`.
    pub gamma: f64,
    pub beta_hat: f64,
    pub gamma_hat: f64,
    /// Slope of the order-`m` bias in `log(N h)` at fixed `N` (target `p - m`).
    pub bias_slope_nh: f64,
    pub bias_target_nh: f64,
    /// Slope of the fourth-moment root in `log N` at fixed `h` (target `-(m + 1/2)`).
    pub fluct_slope_n: f64,
    pub fluct_target_n: f64,
    pub rows: Vec<RateRow>,
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Worst-case `|x_hat^(m) - x^(m)|` of a noiseless signal over `span`.
pub fn worst_case_bias(spec: &FilterSpec, signal: Signal, span: f64) -> Result<f64> {
    let bank = design_filter(spec)?;
    let n = ((span / spec.h).ceil() as usize).max(1) + spec.window;
    let z = DMatrix::from_fn(n, 1, |i, _| signal.value(i as f64 * spec.h));
    let jet = bank.apply(&z, 0.0)?;
    Ok((0..jet.len())
        .map(|j| (jet.get(j, spec.m, 0) - signal.derivative(jet.times[j], spec.m)).abs())
        .fold(0.0, f64::max))
}

/// `(E |D_m w|^4)^{1/4}` for unit-variance white noise, by simulation.
pub fn fluctuation_root(spec: &FilterSpec, draws: usize, seed: u64) -> Result<f64> {
    let bank = design_filter(spec)?;
    let row: Vec<f64> = bank.coeffs.row(spec.m).iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let v: f64 = row
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c * z
            })
            .sum();
        acc += v.powi(4);
    }
    Ok((acc / draws as f64).powf(0.25))
}

pub fn filter_rate_study(cfg: &FilterRateConfig) -> Result<RateReport> {
    if cfg.hs.len() < 4 || cfg.fixed_window_hs.len() < 4 || cfg.windows.len() < 4 {
        return Err(Error::Config(
            "rate studies need at least 4 scales per family".into(),
        ));
    }
    let (p, m) = (cfg.p, cfg.m);
    let floor = |v: f64| v.max(1e-300).ln();
    let mut rows = Vec::new();

    let (mut lh, mut lb, mut lf) = (vec![], vec![], vec![]);
    for (i, &h) in cfg.hs.iter().enumerate() {
        let window = (cfg.c * h.powf(-cfg.alpha)).round() as usize;
        let spec = FilterSpec::centered(window, p, m, h);
        let bias = worst_case_bias(&spec, cfg.signal, cfg.span)?;
        let fluct = fluctuation_root(&spec, cfg.draws, cfg.seed.wrapping_add(i as u64))?;
        lh.push(h.ln());
        lb.push(floor(bias));
        lf.push(fluct.ln());
        rows.push(RateRow {
            family: "scaled".into(),
            h,
            window,
            bias,
            fluct,
        });
    }
    let beta_hat = fit_slope(&lh, &lb);
    let gamma_hat = fit_slope(&lh, &lf);

    let (mut lnh, mut lb2) = (vec![], vec![]);
    for &h in &cfg.fixed_window_hs {
        let spec = FilterSpec::centered(cfg.fixed_window, p, m, h);
        let bias = worst_case_bias(&spec, cfg.signal, cfg.span)?;
        lnh.push((cfg.fixed_window as f64 * h).ln());
        lb2.push(floor(bias));
        rows.push(RateRow {
            family: "fixed-window".into(),
            h,
            window: cfg.fixed_window,
            bias,
            fluct: f64::NAN,
        });
    }

    let (mut ln, mut lf2) = (vec![], vec![]);
    for (i, &window) in cfg.windows.iter().enumerate() {
        let spec = FilterSpec::centered(window, p, m, cfg.fixed_h);
        let fluct = fluctuation_root(&spec, cfg.draws, cfg.seed.wrapping_add(1000 + i as u64))?;
        ln.push((window as f64).ln());
        lf2.push(fluct.ln());
        rows.push(RateRow {
            family: "fixed-h".into(),
            h: cfg.fixed_h,
            window,
            bias: f64::NAN,
            fluct,
        });
    }

    let mf = m as f64;
    Ok(RateReport {
        alpha: cfg.alpha,
        beta: (p as f64 - mf) * (1.0 - cfg.alpha),
        gamma: ((2.0 * mf + 1.0) * cfg.alpha - 2.0 * mf) / 2.0,
        beta_hat,
        gamma_hat,
        bias_slope_nh: fit_slope(&lnh, &lb2),
        bias_target_nh: p as f64 - mf,
        fluct_slope_n: fit_slope(&ln, &lf2),
        fluct_target_n: -(mf + 0.5),
        rows,
    })
}

/// Estimator bias across sample periods at fixed duration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorRateConfig {
    pub base: ExperimentConfig,
    /// Sample periods; `n` and `N` are rescaled from `base`.
    pub hs: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorRateRow {
    pub h: f64,
    pub n: usize,
    pub window: usize,
    pub method: Method,
    /// Operator-norm bias in percent.
    pub bias_pct: f64,
    pub rmsd_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorRateReport {
    pub rows: Vec<EstimatorRateRow>,
    /// Slope of `log |bias|` against `log h` per method.
    pub slopes: BTreeMap<Method, f64>,
    /// LS has the largest bias at every `h`.
    pub ordering_holds: bool,
}

pub fn estimator_rate_study(cfg: &EstimatorRateConfig) -> Result<EstimatorRateReport> {
    if cfg.hs.len() < 3 {
        return Err(Error::Config(
            "estimator rate study needs at least 3 sample periods".into(),
        ));
    }
    let base = &cfg.base;
    let duration = base.n as f64 * base.h;
    let mut rows = Vec::new();
    let mut ordering_holds = true;
    for &h in &cfg.hs {
        let mut c = base.clone();
        c.h = h;
        c.n = (duration / h).round() as usize;
        c.filter.window =
            ((base.filter.window as f64) * (base.h / h).powf(cfg.alpha)).round() as usize;
        c.filter.i0 = None;
        let res = run_mc(&c)?;
        let bias_of = |m: Method| res.summary.method(m).map(|s| s.matrix.opnorm_bias_pct);
        if let Some(ls) = bias_of(Method::LS) {
            for m in [Method::BC, Method::IV] {
                if let Some(b) = bias_of(m) {
                    ordering_holds &= b.abs() < ls.abs();
                }
            }
        }
        for s in &res.summary.methods {
            rows.push(EstimatorRateRow {
                h,
                n: c.n,
                window: c.filter.window,
                method: s.method,
                bias_pct: s.matrix.opnorm_bias_pct,
                rmsd_pct: s.matrix.opnorm_rmsd_pct,
            });
        }
    }
    let mut slopes = BTreeMap::new();
    for &m in &base.estimators {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.h.ln(), r.bias_pct.abs().max(1e-300).ln()))
            .unzip();
        slopes.insert(m, fit_slope(&x, &y));
    }
    Ok(EstimatorRateReport {
        rows,
        slopes,
        ordering_holds,
    })
}

/// Writes rate tables; returns file names.
pub fn write_rate_outputs(dir: &Path, report: &RateReport) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("rates.csv"))?;
    w.write_record(["family", "h", "N", "bias", "fluct"])?;
    for r in &report.rows {
        w.write_record([
            r.family.clone(),
            fmt_f(r.h),
            r.window.to_string(),
            fmt_f(r.bias),
            fmt_f(r.fluct),
        ])?;
    }
    w.flush()?;
    fs::write(
        dir.join("rate_report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(vec!["rates.csv".into(), "rate_report.json".into()])
}

pub fn write_estimator_rate_outputs(
    dir: &Path,
    report: &EstimatorRateReport,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("estimator_rates.csv"))?;
    w.write_record(["h", "n", "N", "method", "bias_pct", "rmsd_pct"])?;
    for r in &report.rows {
        w.write_record([
            fmt_f(r.h),
            r.n.to_string(),
            r.window.to_string(),
            r.method.to_string(),
            fmt_f(r.bias_pct),
            fmt_f(r.rmsd_pct),
        ])?;
    }
    w.flush()?;
    fs::write(
        dir.join("estimator_rate_report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(vec![
        "estimator_rates.csv".into(),
        "estimator_rate_report.json".into(),
    ])
}

/// Directory containing the shipped study configs.
pub fn shipped_config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}
