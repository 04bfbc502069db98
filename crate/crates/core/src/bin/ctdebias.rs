use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};

use ctdebias::bench::{self, EstimatorRateConfig, ExperimentConfig, FilterRateConfig, SigmaSpec};
use ctdebias::dynmodel::{FeatureModel, ParamMatrix};
use ctdebias::lpdiff::{design_filter, design_staggered_pair, FilterBank, FilterSpec};
use ctdebias::regress::{Identifier, Method};
use ctdebias::simkit::{self, NoiseDist, TrajectoryConfig};
use ctdebias::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ctdebias",
    version,
    about = "Continuous-time identification from noisy samples"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Design a derivative filter bank and write its coefficients.
    Design {
        /// Filter spec, as a JSON file or inline JSON.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the odd/even staggered pair.
        #[arg(long)]
        staggered: bool,
    },
    /// Integrate a model and write the clean and noisy trajectory.
    Simulate {
        /// Built-in model name or model JSON (file or inline).
        #[arg(long)]
        model: String,
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator on a sampled trajectory.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        filter: String,
        #[arg(long, default_value = "ls")]
        method: String,
        /// Noise variance (scalar) or covariance matrix as JSON.
        #[arg(long, default_value = "0")]
        sigma: String,
        /// Warn when the persistence-of-excitation statistic falls below this.
        #[arg(long, default_value_t = 1e-6)]
        pe_warn: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study.
    Mc {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate study, filter-level or estimator-level.
    Rates {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Tracks files written into the output directory so a failure can undo them.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<String>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        self.files.push(name.to_string());
        fs::write(self.path(name), contents)?;
        Ok(())
    }

    fn record(&mut self, names: impl IntoIterator<Item = String>) {
        self.files.extend(names);
    }

    fn finish(self, mut manifest: Value) -> Result<()> {
        manifest["files"] = json!(self.files);
        manifest["tool"] = json!("ctdebias");
        manifest["version"] = json!(env!("CARGO_PKG_VERSION"));
        manifest["finished_unix"] = json!(unix_now());
        let tmp = self.dir.join(".manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&manifest)?)?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(())
    }

    fn abandon(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(f));
        }
        let _ = fs::remove_file(self.dir.join(".manifest.json.tmp"));
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Accepts a path to a JSON file or the JSON text itself.
fn read_json_arg(arg: &str) -> Result<String> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        return Ok(arg.to_string());
    }
    Ok(fs::read_to_string(arg)?)
}

fn load_model(arg: &str) -> Result<FeatureModel> {
    if let Some(m) = FeatureModel::builtin(arg) {
        return Ok(m);
    }
    FeatureModel::from_json(&read_json_arg(arg)?)
}

fn bank_csv(bank: &FilterBank) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    bank.write_csv(&mut buf)?;
    Ok(buf)
}

fn cmd_design(spec_arg: &str, out: &mut Outputs, staggered: bool) -> Result<Value> {
    let text = read_json_arg(spec_arg)?;
    let spec: FilterSpec = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    let bank = design_filter(&spec)?;
    out.write("filter.csv", bank_csv(&bank)?)?;
    out.write(
        "filter.json",
        serde_json::to_string_pretty(&bank.sidecar())?,
    )?;
    println!("row norms: {:?}", bank.row_norms());
    if staggered {
        let (odd, even) = design_staggered_pair(&spec)?;
        out.write("filter_odd.csv", bank_csv(&odd)?)?;
        out.write(
            "filter_odd.json",
            serde_json::to_string_pretty(&odd.sidecar())?,
        )?;
        out.write("filter_even.csv", bank_csv(&even)?)?;
        out.write(
            "filter_even.json",
            serde_json::to_string_pretty(&even.sidecar())?,
        )?;
        println!("odd row norms: {:?}", odd.row_norms());
        println!("even row norms: {:?}", even.row_norms());
    }
    Ok(json!({ "command": "design", "config": serde_json::from_str::<Value>(&text)? }))
}

#[derive(Deserialize)]
struct SimulateConfig {
    theta0: Vec<Vec<f64>>,
    x0: Vec<f64>,
    n: usize,
    h: f64,
    #[serde(default)]
    rtol: Option<f64>,
    #[serde(default)]
    atol: Option<f64>,
    #[serde(default = "zero_sigma")]
    sigma2: SigmaSpec,
    #[serde(default)]
    noise_dist: NoiseDist,
}

fn zero_sigma() -> SigmaSpec {
    SigmaSpec::Scalar(0.0)
}

fn cmd_simulate(model_arg: &str, config_arg: &str, seed: u64, out: &mut Outputs) -> Result<Value> {
    let model = load_model(model_arg)?;
    let text = read_json_arg(config_arg)?;
    let cfg: SimulateConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let noise = cfg.sigma2.noise_model(model.d_x, cfg.noise_dist)?;
    let traj = TrajectoryConfig {
        model: model.clone(),
        theta0: ParamMatrix::from_rows(&cfg.theta0)?,
        x0: cfg.x0,
        n: cfg.n,
        h: cfg.h,
        rtol: cfg.rtol.unwrap_or(simkit::DEFAULT_RTOL),
        atol: cfg.atol.unwrap_or(simkit::DEFAULT_ATOL),
    };
    traj.validate()?;
    let clean = simkit::integrate(&traj)?;
    let noisy = simkit::add_noise(&clean, &noise, seed)?;
    let times = traj.times();

    out.files.push("trajectory.csv".into());
    let mut w = csv::Writer::from_path(out.path("trajectory.csv"))?;
    let d_x = model.d_x;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d_x).map(|l| format!("x{l}")));
    header.extend((1..=d_x).map(|l| format!("z{l}")));
    w.write_record(&header)?;
    for i in 0..traj.n {
        let mut rec = vec![format!("{:e}", times[i])];
        rec.extend((0..d_x).map(|l| format!("{:e}", clean[(i, l)])));
        rec.extend((0..d_x).map(|l| format!("{:e}", noisy[(i, l)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("wrote {} samples of {} channels", traj.n, d_x);
    Ok(json!({
        "command": "simulate",
        "model": model.to_json(),
        "config": serde_json::from_str::<Value>(&text)?,
        "seeds": [seed],
    }))
}

/// Reads `t` and the measured channels (`z*` if present, else `x*`).
fn read_series(path: &Path, d_x: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = find("t").ok_or_else(|| Error::Config("data file has no `t` column".into()))?;
    let prefix = if find("z1").is_some() { "z" } else { "x" };
    let cols = (1..=d_x)
        .map(|l| {
            find(&format!("{prefix}{l}"))
                .ok_or_else(|| Error::Config(format!("data file has no `{prefix}{l}` column")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {:?}: {e}", &rec[i])))
        };
        t.push(num(t_col)?);
        for &c in &cols {
            vals.push(num(c)?);
        }
    }
    let n = t.len();
    Ok((t, DMatrix::from_row_slice(n, d_x, &vals)))
}

#[derive(Deserialize)]
struct EstimateFilter {
    #[serde(rename = "N")]
    window: usize,
    p: usize,
    #[serde(default)]
    i0: Option<f64>,
    #[serde(default)]
    h: Option<f64>,
}

fn cmd_estimate(
    data: &Path,
    model_arg: &str,
    filter_arg: &str,
    method_arg: &str,
    sigma_arg: &str,
    pe_warn: f64,
    out: &mut Outputs,
) -> Result<Value> {
    let model = load_model(model_arg)?;
    let method = Method::parse(method_arg).ok_or_else(|| {
        Error::Config(format!(
            "unknown method {method_arg:?} (expected ls, bc or iv)"
        ))
    })?;
    let sigma: SigmaSpec =
        serde_json::from_str(sigma_arg).map_err(|e| Error::Config(format!("bad --sigma: {e}")))?;
    let noise = sigma.noise_model(model.d_x, NoiseDist::Gaussian)?;
    let ftext = read_json_arg(filter_arg)?;
    let f: EstimateFilter =
        serde_json::from_str(&ftext).map_err(|e| Error::Config(e.to_string()))?;

    let (t, z) = read_series(data, model.d_x)?;
    if t.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: t.len(),
            window: f.window,
        });
    }
    let h = match f.h {
        Some(h) => h,
        None => (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64,
    };
    let mut spec = FilterSpec::centered(f.window, f.p, model.m, h);
    spec.i0 = f.i0;
    let ident = Identifier::new(model.clone(), &spec, noise)?;
    let est = ident.estimate(method, &z, t[0])?;

    let mut report = est.to_json();
    report["filter"] = ident.bank.sidecar();
    if method == Method::IV {
        report["instrument_filters"] = json!([ident.pair.0.sidecar(), ident.pair.1.sidecar()]);
    }
    out.write("estimate.json", serde_json::to_string_pretty(&report)?)?;
    println!("method: {method}");
    for (a, row) in est.theta_hat.rows().iter().enumerate() {
        println!("theta[{}] = {:?}", a + 1, row);
    }
    println!("pe_stat = {:e}", est.pe_stat);
    if est.pe_stat < pe_warn {
        eprintln!(
            "warning: weak excitation, pe_stat {:e} is below {:e}",
            est.pe_stat, pe_warn
        );
    }
    Ok(json!({
        "command": "estimate",
        "data": data.display().to_string(),
        "model": model.to_json(),
        "filter": serde_json::from_str::<Value>(&ftext)?,
        "method": method.to_string(),
        "sigma": serde_json::from_str::<Value>(sigma_arg)?,
    }))
}

fn cmd_mc(config_arg: &str, out: &mut Outputs) -> Result<Value> {
    let text = read_json_arg(config_arg)?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    let res = bench::run_mc(&cfg)?;
    // record names before writing so a mid-write failure still cleans up
    let names = bench::write_mc_outputs(&out.dir, &res, cfg.kde_points);
    match names {
        Ok(names) => out.record(names),
        Err(e) => {
            out.record(
                ["reps.csv", "summary.csv"]
                    .iter()
                    .map(|s| s.to_string())
                    .chain(kde_names(&out.dir)),
            );
            return Err(e);
        }
    }
    for ms in &res.summary.methods {
        println!(
            "{}: opnorm bias {:.4}%  rmsd {:.4}%",
            ms.method, ms.matrix.opnorm_bias_pct, ms.matrix.opnorm_rmsd_pct
        );
    }
    let mut manifest = json!({
        "command": "mc",
        "config": serde_json::to_value(&cfg)?,
        "seeds": res.summary.seeds,
    });
    if cfg.replications == 1 {
        manifest["note"] = json!("single replication: std columns are 0 by convention");
        manifest["single_replication"] = json!(true);
    }
    Ok(manifest)
}

fn kde_names(dir: &Path) -> Vec<String> {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.starts_with("kde_") && n.ends_with(".csv"))
                .collect()
        })
        .unwrap_or_default()
}

fn cmd_rates(config_arg: &str, out: &mut Outputs) -> Result<Value> {
    let text = read_json_arg(config_arg)?;
    let raw: Value = serde_json::from_str(&text)?;
    let estimator =
        raw.get("kind").and_then(Value::as_str) == Some("estimator") || raw.get("base").is_some();
    if estimator {
        let cfg: EstimatorRateConfig =
            serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let report = bench::estimator_rate_study(&cfg)?;
        out.record([
            "estimator_rates.csv".to_string(),
            "estimator_rate_report.json".to_string(),
        ]);
        bench::write_estimator_rate_outputs(&out.dir, &report)?;
        for (m, s) in &report.slopes {
            println!("{m}: bias slope in log h = {s:.3}");
        }
        println!(
            "LS has the largest bias at every h: {}",
            report.ordering_holds
        );
    } else {
        let cfg: FilterRateConfig =
            serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let report = bench::filter_rate_study(&cfg)?;
        out.record(["rates.csv".to_string(), "rate_report.json".to_string()]);
        bench::write_rate_outputs(&out.dir, &report)?;
        println!(
            "beta_hat = {:.3} (target {:.3})",
            report.beta_hat, report.beta
        );
        println!(
            "gamma_hat = {:.3} (target {:.3})",
            report.gamma_hat, report.gamma
        );
        println!(
            "fixed-N bias slope = {:.3} (target {:.3})",
            report.bias_slope_nh, report.bias_target_nh
        );
        println!(
            "fixed-h fluctuation slope = {:.3} (target {:.3})",
            report.fluct_slope_n, report.fluct_target_n
        );
    }
    Ok(json!({ "command": "rates", "config": raw }))
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        4
    } else if e.is_numerical() {
        3
    } else {
        2
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("CTDEBIAS_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        } else {
            eprintln!("warning: ignoring CTDEBIAS_THREADS={v:?}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = unix_now();
    let out_dir = match &cli.cmd {
        Cmd::Design { out, .. }
        | Cmd::Simulate { out, .. }
        | Cmd::Estimate { out, .. }
        | Cmd::Mc { out, .. }
        | Cmd::Rates { out, .. } => out.clone(),
    };
    let mut out = Outputs::open(&out_dir)?;
    let result = match &cli.cmd {
        Cmd::Design {
            spec, staggered, ..
        } => cmd_design(spec, &mut out, *staggered),
        Cmd::Simulate {
            model,
            config,
            seed,
            ..
        } => cmd_simulate(model, config, *seed, &mut out),
        Cmd::Estimate {
            data,
            model,
            filter,
            method,
            sigma,
            pe_warn,
            ..
        } => cmd_estimate(data, model, filter, method, sigma, *pe_warn, &mut out),
        Cmd::Mc { config, .. } => cmd_mc(config, &mut out),
        Cmd::Rates { config, .. } => cmd_rates(config, &mut out),
    };
    match result {
        Ok(mut manifest) => {
            manifest["started_unix"] = json!(started);
            out.finish(manifest)
        }
        Err(e) => {
            out.abandon();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
