//! Command-line surface. Machine-readable results go to the files named on
//! the command line; a short human summary goes to standard output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    confidence_intervals, kramers_invariant_density, kramers_tau, linspace, tau_ci_delta,
    AsymptoticInfo, ConfidenceIntervals, TauInterval, TauReport,
};
use crate::config::{self, resolve_model};
use crate::crossing::{analyze, CrossingAnalysis};
use crate::error::{Error, Result};
use crate::gaussian_oracle::{check_moments, sample_functionals};
use crate::ingest::{ingest_series, Impute, IngestSpec, ValueTransform};
use crate::kramers::{kramers_model, KramersParams};
use crate::model::SecondOrderModel;
use crate::objectives::ObjectiveKind;
use crate::observe::{build_observations, DifferenceScheme};
use crate::optimize::{estimate, EstimateOptions, EstimationResult};
use crate::simulate::{
    read_trajectory, simulate_em_subsampled, simulate_strang, write_trajectory, SimKey,
};
use crate::study::{run_simulation_study, StudyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const THETA0: [f64; 4] = [6.5, 1.0, 0.6, 0.1];
const TABLE1: [f64; 4] = [62.5, 296.7, 219.1, 9125.0];

#[derive(Debug, Parser)]
#[command(
    name = "hyposplit",
    version,
    about = "Splitting-based estimation for second-order SDEs"
)]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a Kramers trajectory and write it as CSV with a JSON sidecar.
    Simulate(SimulateArgs),
    /// Fit a dataset and report estimates, confidence intervals and τ.
    Estimate(EstimateArgs),
    /// Run a simulation study.
    Study(StudyArgs),
    /// Preprocess a raw CSV series into an equidistant trajectory.
    Ingest(IngestArgs),
    /// Well-crossing and occupancy report of a position series.
    Analyze(AnalyzeArgs),
    /// Monte Carlo check of the Gaussian functional moment identities.
    Moments(MomentsArgs),
    /// Invariant density grids of the Kramers oscillator.
    Densities(DensitiesArgs),
    /// Mean waiting time between the wells with a delta-method interval.
    Tau(TauArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimScheme {
    Em,
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoSource {
    /// Ergodic averages over the observed path.
    Empirical,
    /// Quadrature against the invariant density at θ̂.
    Quadrature,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// η, a, b, σ².
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = THETA0)]
    pub theta: Vec<f64>,
    /// Observation step.
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    /// Fine step for Euler–Maruyama; must divide h. Defaults to h.
    #[arg(long)]
    pub h_sim: Option<f64>,
    /// Observation intervals.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = SimScheme::Em)]
    pub scheme: SimScheme,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    /// Initial (x, v); the positive well at rest by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y0: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Trajectory CSV (t, x[, v]).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "PR")]
    pub kind: ObjectiveKind,
    #[arg(long, default_value = "forward")]
    pub scheme: DifferenceScheme,
    #[arg(long, value_enum, default_value_t = InfoSource::Empirical)]
    pub info: InfoSource,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Optimizer settings (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start point η, a, b, σ².
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct StudyArgs {
    /// Study settings (TOML or JSON). Defaults to a θ0 = (6.5, 1, 0.6, 0.1) study.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for study.csv, summary.json and the resolved config.
    #[arg(long, default_value = "study-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Ingestion settings (TOML or JSON); flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub time_column: Option<String>,
    #[arg(long)]
    pub value_column: Option<String>,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long, value_parser = parse_transform)]
    pub transform: Option<ValueTransform>,
    #[arg(long)]
    pub center: Option<bool>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub time_range: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_impute)]
    pub impute: Option<Impute>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Moving-average window in points (odd).
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    #[arg(long, default_value_t = 0.6)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct MomentsArgs {
    #[arg(long, default_value_t = 100_000)]
    pub intervals: usize,
    #[arg(long, default_value_t = 1000)]
    pub substeps: usize,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Largest |z| counted as a pass.
    #[arg(long, default_value_t = 4.0)]
    pub z: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct DensitiesArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = TABLE1)]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 201)]
    pub nx: usize,
    #[arg(long, default_value_t = 201)]
    pub nv: usize,
    /// Position range; ±2 well positions by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x_range: Option<Vec<f64>>,
    /// Velocity range; ±4 velocity standard deviations by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v_range: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, default_value = "densities")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct TauArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = TABLE1)]
    pub theta: Vec<f64>,
    /// Design of the fit the parameters came from.
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.02)]
    pub h: f64,
    #[arg(long, default_value = "PR")]
    pub kind: ObjectiveKind,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_transform(s: &str) -> std::result::Result<ValueTransform, String> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(ValueTransform::None),
        "neg-log" | "neglog" => Ok(ValueTransform::NegLog),
        _ => Err(format!("unknown transform '{s}' (none, neg-log)")),
    }
}

fn parse_impute(s: &str) -> std::result::Result<Impute, String> {
    match s.to_ascii_lowercase().as_str() {
        "linear" => Ok(Impute::Linear),
        "fail" => Ok(Impute::Fail),
        _ => Err(format!("unknown imputation '{s}' (linear, fail)")),
    }
}

fn params(v: &[f64]) -> Result<KramersParams> {
    let p = KramersParams::from_slice(v)?;
    p.validate()?;
    Ok(p)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Fixed notation for moderate magnitudes, scientific otherwise.
fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-4..1e6).contains(&v.abs()) {
        format!("{v:.6e}")
    } else {
        format!("{v:.6}")
    }
}

fn load_trajectory(path: &Path) -> Result<crate::simulate::Trajectory> {
    read_trajectory(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn save_resolved<T: Serialize>(value: &T, output: &Path) -> Result<()> {
    config::save(value, &config::resolved_path(output))
}

/// Parses `argv`, runs the command and returns the exit status.
pub fn run_from<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log)
        .try_init();
    match dispatch(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Study(a) => cmd_study(a, out),
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Moments(a) => cmd_moments(a, out),
        Command::Densities(a) => cmd_densities(a, out),
        Command::Tau(a) => cmd_tau(a, out),
    }
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let p = params(&a.theta)?;
    let model = kramers_model();
    let theta = p.theta();
    let y0 =
        a.y0.clone()
            .unwrap_or_else(|| model.default_initial_state(&theta.beta));
    let key = SimKey::new(a.seed).replicate(a.replicate);
    let traj = match a.scheme {
        SimScheme::Em => {
            let h_sim = a.h_sim.unwrap_or(a.h);
            let ratio = a.h / h_sim;
            let stride = ratio.round();
            if stride < 1.0 || ((ratio - stride) / ratio).abs() > 1e-12 {
                return Err(Error::Argument(format!(
                    "h = {} is not a multiple of h_sim = {h_sim}",
                    a.h
                )));
            }
            simulate_em_subsampled(&model, &theta, &y0, h_sim, a.n, stride as usize, key)?
        }
        SimScheme::Strang => {
            if a.h_sim.is_some() {
                return Err(Error::Argument(
                    "h_sim applies to the em scheme only".into(),
                ));
            }
            simulate_strang(&model, &theta, &y0, a.h, a.n, key)?
        }
    };
    write_trajectory(&traj, &a.out)?;
    save_resolved(a, &a.out)?;
    writeln!(
        out,
        "simulated {} points with h = {} to {}",
        traj.n_points(),
        traj.h,
        a.out.display()
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub estimation: EstimationResult,
    pub info_source: InfoSource,
    pub intervals: Option<ConfidenceIntervals>,
    pub tau: Option<TauReport>,
    pub tau_interval: Option<TauInterval>,
    pub notes: Vec<String>,
}

fn cmd_estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let traj = load_trajectory(&a.data)?;
    let model = kramers_model();
    let mut options: EstimateOptions = match &a.config {
        Some(p) => config::load(p)?,
        None => EstimateOptions::default(),
    };
    if let Some(s) = &a.start {
        if s.len() != 4 {
            return Err(Error::Argument("--start takes four values η,a,b,σ²".into()));
        }
        options.starts = vec![s.clone()];
    }
    let obs = build_observations(&traj, a.kind.observation(), a.scheme)?;
    let est = estimate(&model, &obs, a.kind, &options)?;
    let mut notes = Vec::new();
    let p = KramersParams::from_theta(&est.theta_hat)?;

    let info = match a.info {
        InfoSource::Empirical => AsymptoticInfo::empirical(&model, &est.theta_hat, &obs, a.kind),
        InfoSource::Quadrature => AsymptoticInfo::kramers(&p, a.kind, obs.n, obs.h),
    };
    let (intervals, cov) = match info {
        Ok(info) => {
            let ci = confidence_intervals(&est.theta_hat, &info, a.alpha)?;
            (Some(ci), Some(info.covariance().0))
        }
        Err(e) => {
            notes.push(format!("no confidence intervals: {e}"));
            (None, None)
        }
    };
    let (tau, tau_interval) = match kramers_tau(&p) {
        Ok(t) => {
            let ti = match &cov {
                Some(c) => match tau_ci_delta(&p, c, a.alpha) {
                    Ok(ti) => Some(ti),
                    Err(e) => {
                        notes.push(format!("no τ interval: {e}"));
                        None
                    }
                },
                None => None,
            };
            (Some(t), ti)
        }
        Err(e) => {
            notes.push(format!("no τ: {e}"));
            (None, None)
        }
    };

    writeln!(
        out,
        "objective {}  N = {}  h = {}  converged = {}",
        a.kind, est.n, est.h, est.converged
    )?;
    let level = 100.0 * (1.0 - a.alpha);
    writeln!(
        out,
        "{:<8} {:>14} {:>14} {:>14}",
        "param",
        "estimate",
        format!("{level:.0}% lower"),
        "upper"
    )?;
    for (i, name) in est.param_names.iter().enumerate() {
        let v = est.theta_vec()[i];
        match &intervals {
            Some(ci) => {
                let iv = &ci.intervals[i];
                writeln!(
                    out,
                    "{name:<8} {:>14} {:>14} {:>14}",
                    num(v),
                    num(iv.lower),
                    num(iv.upper)
                )?;
            }
            None => writeln!(out, "{name:<8} {:>14} {:>14} {:>14}", num(v), "-", "-")?,
        }
    }
    if let Some(t) = &tau {
        match &tau_interval {
            Some(ti) => writeln!(
                out,
                "{:<8} {:>14} {:>14} {:>14}",
                "tau",
                num(t.tau),
                num(ti.lower),
                num(ti.upper)
            )?,
            None => writeln!(out, "{:<8} {:>14}", "tau", num(t.tau))?,
        }
    }
    for n in &notes {
        writeln!(out, "note: {n}")?;
    }
    if let Some(path) = &a.out {
        let report = EstimateReport {
            estimation: est,
            info_source: a.info,
            intervals,
            tau,
            tau_interval,
            notes,
        };
        write_json(&report, path)?;
        save_resolved(
            &ResolvedEstimate {
                args: a,
                options: &options,
            },
            path,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ResolvedEstimate<'a> {
    args: &'a EstimateArgs,
    options: &'a EstimateOptions,
}

/// θ0 = (6.5, 1, 0.6, 0.1), h = 0.1, N = 5000 with a fine step of 10⁻³.
pub fn default_study() -> StudyConfig {
    StudyConfig {
        model: "kramers".into(),
        theta0: THETA0.to_vec(),
        h_sim: 1e-3,
        h: 0.1,
        n: 5000,
        replicates: 100,
        seed: 1,
        kinds: vec![
            ObjectiveKind::CF,
            ObjectiveKind::CR,
            ObjectiveKind::PF,
            ObjectiveKind::PR,
        ],
        scheme: DifferenceScheme::Forward,
        y0: None,
        burn_in: 0,
        start_at_truth: false,
        options: EstimateOptions::default(),
    }
}

fn cmd_study(a: &StudyArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg: StudyConfig = match &a.config {
        Some(p) => config::load(p)?,
        None => default_study(),
    };
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let model = resolve_model(&cfg.model)?;
    std::fs::create_dir_all(&a.out)?;
    config::save(&cfg, &a.out.join("resolved_config.toml"))?;
    let table = run_simulation_study(&model, &cfg)?;
    let mut w = BufWriter::new(File::create(a.out.join("study.csv"))?);
    table.write_csv(&mut w)?;
    w.flush()?;
    let summary = table.summary();
    write_json(&summary, &a.out.join("summary.json"))?;

    writeln!(
        out,
        "{} replicates, {} with failures; median |normalized error|:",
        summary.replicates, summary.failed_replicates
    )?;
    write!(out, "{:<7}", "kind")?;
    for n in &table.param_names {
        write!(out, " {n:>10}")?;
    }
    writeln!(out)?;
    for kind in &cfg.kinds {
        if let Some(per) = summary.kinds.get(kind.tag()) {
            write!(out, "{:<7}", kind.tag())?;
            for n in &table.param_names {
                write!(out, " {:>10.4}", per[n].median_abs_error)?;
            }
            writeln!(out)?;
        }
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn cmd_ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec: IngestSpec = match &a.config {
        Some(p) => config::load(p)?,
        None => IngestSpec {
            source: a
                .source
                .clone()
                .ok_or_else(|| Error::Config("--source or --config is required".into()))?,
            time_column: "t".into(),
            value_column: "x".into(),
            bin_width: a
                .bin_width
                .ok_or_else(|| Error::Config("--bin-width or --config is required".into()))?,
            transform: ValueTransform::None,
            center: false,
            time_range: None,
            impute: Impute::Linear,
        },
    };
    if let Some(s) = &a.source {
        spec.source = s.clone();
    }
    if let Some(c) = &a.time_column {
        spec.time_column = c.clone();
    }
    if let Some(c) = &a.value_column {
        spec.value_column = c.clone();
    }
    if let Some(w) = a.bin_width {
        spec.bin_width = w;
    }
    if let Some(t) = a.transform {
        spec.transform = t;
    }
    if let Some(c) = a.center {
        spec.center = c;
    }
    if let Some(r) = &a.time_range {
        if r.len() != 2 {
            return Err(Error::Argument(
                "--time-range takes two values, lo,hi".into(),
            ));
        }
        spec.time_range = Some([r[0], r[1]]);
    }
    if let Some(i) = a.impute {
        spec.impute = i;
    }
    let (traj, report) = ingest_series(&spec)?;
    write_trajectory(&traj, &a.out)?;
    save_resolved(&spec, &a.out)?;
    let mut rp = a.out.clone().into_os_string();
    rp.push(".report.json");
    write_json(&report, Path::new(&rp))?;
    writeln!(
        out,
        "{} records into {} bins of width {} ({} imputed) starting at t = {}; wrote {}",
        report.n_records,
        report.n_bins,
        spec.bin_width,
        report.imputed_bins.len(),
        report.t0,
        a.out.display()
    )?;
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let traj = load_trajectory(&a.data)?;
    if traj.dim != 1 {
        return Err(Error::Argument(
            "crossing analysis needs a scalar series".into(),
        ));
    }
    let rep: CrossingAnalysis = analyze(&traj.x, traj.h, traj.t0, a.window, a.level)?;
    writeln!(
        out,
        "window {} points, levels ±{}: {} crossings",
        a.window,
        a.level,
        rep.events.len()
    )?;
    for s in [&rep.upper, &rep.lower].into_iter().flatten() {
        writeln!(
            out,
            "{:?}: {} stays, mean {:.4}, min {:.4}, max {:.4}, IQR [{:.4}, {:.4}]",
            s.state, s.count, s.mean, s.min, s.max, s.q25, s.q75
        )?;
    }
    if rep.events.is_empty() {
        writeln!(out, "no crossings")?;
    }
    if let Some(p) = &a.out {
        write_json(&rep, p)?;
        save_resolved(a, p)?;
    }
    Ok(())
}

fn cmd_moments(a: &MomentsArgs, out: &mut dyn Write) -> Result<()> {
    let f = sample_functionals(a.intervals, a.dim, a.substeps, a.seed)?;
    let rep = check_moments(&f, a.z)?;
    let failed = rep.checks.iter().filter(|c| !c.pass).count();
    writeln!(
        out,
        "{} identities checked at {} draws, {} substeps: {} outside {} standard errors",
        rep.checks.len(),
        a.intervals,
        a.substeps,
        failed,
        a.z
    )?;
    for c in rep.checks.iter().filter(|c| !c.pass) {
        writeln!(
            out,
            "  {}: {:.6} vs {:.6} (z = {:.2})",
            c.name, c.estimate, c.target, c.z
        )?;
    }
    if let Some(p) = &a.out {
        write_json(&rep, p)?;
        save_resolved(a, p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DensityMeta {
    params: KramersParams,
    normalizer: f64,
    scale: f64,
    velocity_variance: f64,
    files: [&'static str; 3],
}

fn cmd_densities(a: &DensitiesArgs, out: &mut dyn Write) -> Result<()> {
    let p = params(&a.theta)?;
    let dens = kramers_invariant_density(&p)?;
    let w = p.well();
    let xr = a.x_range.clone().unwrap_or_else(|| vec![-2.0 * w, 2.0 * w]);
    if xr.len() != 2 || a.v_range.as_ref().is_some_and(|r| r.len() != 2) {
        return Err(Error::Argument("ranges take two values, lo,hi".into()));
    }
    let sv = dens.velocity_variance.sqrt();
    let vr = a
        .v_range
        .clone()
        .unwrap_or_else(|| vec![-4.0 * sv, 4.0 * sv]);
    let grid = dens.grid(&linspace(xr[0], xr[1], a.nx), &linspace(vr[0], vr[1], a.nv));
    std::fs::create_dir_all(&a.out)?;

    let mut wx = csv::Writer::from_path(a.out.join("position.csv"))?;
    wx.write_record(["x", "density"])?;
    for (x, d) in grid.x.iter().zip(&grid.position) {
        wx.write_record([x.to_string(), d.to_string()])?;
    }
    wx.flush()?;
    let mut wv = csv::Writer::from_path(a.out.join("velocity.csv"))?;
    wv.write_record(["v", "density"])?;
    for (v, d) in grid.v.iter().zip(&grid.velocity) {
        wv.write_record([v.to_string(), d.to_string()])?;
    }
    wv.flush()?;
    let mut wj = csv::Writer::from_path(a.out.join("joint.csv"))?;
    wj.write_record(["x", "v", "density"])?;
    for (i, x) in grid.x.iter().enumerate() {
        for (j, v) in grid.v.iter().enumerate() {
            wj.write_record([
                x.to_string(),
                v.to_string(),
                grid.joint[i * grid.v.len() + j].to_string(),
            ])?;
        }
    }
    wj.flush()?;
    let meta = DensityMeta {
        params: p,
        normalizer: dens.normalizer,
        scale: dens.scale,
        velocity_variance: dens.velocity_variance,
        files: ["position.csv", "velocity.csv", "joint.csv"],
    };
    write_json(&meta, &a.out.join("meta.json"))?;
    config::save(a, &a.out.join("resolved_config.toml"))?;
    writeln!(
        out,
        "wrote {}×{} density grids to {}",
        a.nx,
        a.nv,
        a.out.display()
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct TauOutput {
    pub report: TauReport,
    pub interval: TauInterval,
    pub n: usize,
    pub h: f64,
    pub kind: ObjectiveKind,
}

fn cmd_tau(a: &TauArgs, out: &mut dyn Write) -> Result<()> {
    let p = params(&a.theta)?;
    let report = kramers_tau(&p)?;
    let info = AsymptoticInfo::kramers(&p, a.kind, a.n, a.h)?;
    let interval = tau_ci_delta(&p, &info.covariance().0, a.alpha)?;
    let level = 100.0 * (1.0 - a.alpha);
    writeln!(
        out,
        "tau = {:.2}  {level:.0}% CI [{:.2}, {:.2}]",
        report.tau, interval.lower, interval.upper
    )?;
    writeln!(
        out,
        "prefactor {:.5}, exponent {:.5}, damping ratio {:.3}, noise ratio {:.4}",
        report.prefactor, report.exponent, report.damping_ratio, report.noise_ratio
    )?;
    if let Some(path) = &a.out {
        write_json(
            &TauOutput {
                report,
                interval,
                n: a.n,
                h: a.h,
                kind: a.kind,
            },
            path,
        )?;
        save_resolved(a, path)?;
    }
    Ok(())
}
