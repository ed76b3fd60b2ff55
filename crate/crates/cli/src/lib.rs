//! Subcommands of the `coldpost` binary.
//!
//! Everything lives in the library so tests can drive the exact code paths
//! the binary runs.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use coldpost::bo::{bo_loop, default_init, BoConfig, SearchBox};
use coldpost::data::{read_pgm, shepp_logan_with, write_pgm, PhantomContrast, Rng};
use coldpost::gp::{write_landscape_csv, GpModel, HyperPriors, LANDSCAPE_RESOLUTION};
use coldpost::metrics::{calibration_bins, error_map, psnr, DEFAULT_UCE_BINS};
use coldpost::mfvi::{predict, predict_mean_weights, train, write_history_csv, ArchConfig, HistoryEntry, PriorScaling};
use coldpost::radon::{fbp, FbpFilter, ProjectionGeometry, SPARSE_VIEW_ANGLES};
use coldpost::{
    DipNetwork, Error, Image, ObjectiveMode, RadonOperator, Sinogram, TemperedPrior, TrainConfig, VariationalParams,
};

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const IO: i32 = 4;
}

/// Failure of a subcommand, mapped to an exit code by [`CliError::exit_code`].
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Io(_) => exit::IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "I/O failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            Error::Numeric(_) | Error::Diverged { .. } => CliError::Numeric(e.to_string()),
            Error::Format { .. } | Error::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "coldpost", version, about = "Sparse-view CT with a tempered variational deep image prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the Shepp-Logan phantom as a 16-bit PGM.
    Phantom(PhantomArgs),
    /// Forward-project the image and write the sinogram CSV.
    Sinogram(DataArgs),
    /// Filtered back-projection baseline.
    Fbp(DataArgs),
    /// Plain deep-image-prior training (point weights, no KL).
    Dip(TrainArgs),
    /// Tempered mean-field variational training at one (T, sigma).
    Mfvi(MfviArgs),
    /// Bayesian optimization of (T, sigma).
    Bo(BoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContrastArg {
    Enhanced,
    Original,
}

impl From<ContrastArg> for PhantomContrast {
    fn from(c: ContrastArg) -> Self {
        match c {
            ContrastArg::Enhanced => PhantomContrast::Enhanced,
            ContrastArg::Original => PhantomContrast::Original,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    SqrtT,
    InverseSqrtT,
}

impl From<ScalingArg> for PriorScaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::SqrtT => PriorScaling::SqrtT,
            ScalingArg::InverseSqrtT => PriorScaling::InverseSqrtT,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Output PGM path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for config.txt (defaults to the directory of --out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ContrastArg::Enhanced)]
    pub contrast: ContrastArg,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Phantom side length (ignored with --image).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = SPARSE_VIEW_ANGLES)]
    pub angles: usize,
    /// Square PGM to use as ground truth instead of the phantom.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ContrastArg::Enhanced)]
    pub contrast: ContrastArg,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    /// Steps of linear learning-rate warmup.
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    /// Posterior samples for the predictive mean and variance.
    #[arg(long, default_value_t = 16)]
    pub mc_samples: usize,
    /// Weight samples averaged per training step.
    #[arg(long, default_value_t = 1)]
    pub mc_train_samples: usize,
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub input_channels: usize,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 2)]
    pub bottleneck_convs: usize,
    #[arg(long, value_enum, default_value_t = ScalingArg::SqrtT)]
    pub prior_scaling: ScalingArg,
}

#[derive(Debug, Clone, Args)]
pub struct MfviArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub temperature: f64,
    #[arg(long)]
    pub prior_sigma: f64,
    /// Allow (T, sigma) outside the default search box.
    #[arg(long = "unsafe")]
    pub allow_outside_box: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BoArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 12)]
    pub bo_iterations: usize,
    /// Candidates per iteration.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Concurrent candidate trainings.
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub t_min: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub t_max: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_max: f64,
    /// Skip the DIP baseline of the final report.
    #[arg(long)]
    pub skip_dip: bool,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("coldpost: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Sinogram(a) => cmd_sinogram(a),
        Command::Fbp(a) => cmd_fbp(a).map(|_| ()),
        Command::Dip(a) => cmd_dip(a).map(|_| ()),
        Command::Mfvi(a) => cmd_mfvi(a).map(|_| ()),
        Command::Bo(a) => cmd_bo(a).map(|_| ()),
    }
}

/// Worker threads allowed by `COLDPOST_THREADS` (unset or invalid: no cap).
pub fn thread_cap() -> Option<usize> {
    std::env::var("COLDPOST_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

/// Ordered `key = value` lines written to `config.txt`.
#[derive(Debug, Default)]
struct ConfigLog(Vec<(String, String)>);

impl ConfigLog {
    fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        let mut out = create(&dir.join("config.txt"))?;
        for (k, v) in &self.0 {
            writeln!(out, "{k} = {v}")?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Problem {
    reference: Image,
    operator: Arc<RadonOperator>,
    sinogram: Sinogram,
}

fn load_problem(a: &DataArgs, cfg: &mut ConfigLog) -> CliResult<Problem> {
    let reference: Image = match &a.image {
        Some(p) => {
            let img: Image = read_pgm(p)?;
            if !img.is_square() {
                return Err(CliError::Usage(format!("{} is not square", p.display())));
            }
            cfg.set("image", p.display());
            img
        }
        None => {
            cfg.set("image", "shepp-logan").set("contrast", format!("{:?}", PhantomContrast::from(a.contrast)));
            shepp_logan_with(a.size, a.contrast.into())?
        }
    };
    let size = reference.width();
    let geometry = ProjectionGeometry::parallel(a.angles, size)?;
    let operator = Arc::new(RadonOperator::new(&geometry, size)?);
    let sinogram = operator.forward(&reference)?;
    cfg.set("seed", a.seed)
        .set("size", size)
        .set("angles", a.angles)
        .set("detector_bins", geometry.num_bins())
        .set("bin_spacing", geometry.bin_spacing())
        .set("reference", "ground-truth image");
    Ok(Problem { reference, operator, sinogram })
}

fn append_metrics(dir: &Path, method: &str, t: Option<f64>, sigma: Option<f64>, psnr: f64, uce: Option<f64>) -> CliResult<()> {
    let path = dir.join("metrics.csv");
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    if fresh {
        writeln!(f, "method,temperature,prior_sigma,psnr,uce")?;
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(f, "{method},{},{},{psnr},{}", opt(t), opt(sigma), opt(uce))?;
    Ok(())
}

pub fn cmd_phantom(a: &PhantomArgs) -> CliResult<()> {
    let img: Image = shepp_logan_with(a.size, a.contrast.into())?;
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a.out.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| ".".into()),
    };
    ensure_dir(&dir)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_pgm(&img, &a.out)?;
    let mut cfg = ConfigLog::default();
    cfg.set("command", "phantom")
        .set("size", a.size)
        .set("contrast", format!("{:?}", PhantomContrast::from(a.contrast)))
        .set("out", a.out.display());
    cfg.write(&dir)
}

pub fn cmd_sinogram(a: &DataArgs) -> CliResult<()> {
    ensure_dir(&a.out_dir)?;
    let mut cfg = ConfigLog::default();
    cfg.set("command", "sinogram");
    let p = load_problem(a, &mut cfg)?;
    let mut out = create(&a.out_dir.join("sinogram.csv"))?;
    p.sinogram.write_csv(&mut out)?;
    out.flush()?;
    write_pgm(&p.reference, a.out_dir.join("reference.pgm"))?;
    cfg.write(&a.out_dir)
}

/// Runs FBP and returns its PSNR.
pub fn cmd_fbp(a: &DataArgs) -> CliResult<f64> {
    ensure_dir(&a.out_dir)?;
    let mut cfg = ConfigLog::default();
    cfg.set("command", "fbp").set("filter", "ram-lak");
    let p = load_problem(a, &mut cfg)?;
    let rec = fbp(&p.sinogram, p.reference.width(), FbpFilter::Ramp)?;
    let q = psnr(&rec, &p.reference, 1.0)?;
    write_pgm(&rec, a.out_dir.join("fbp.pgm"))?;
    append_metrics(&a.out_dir, "fbp", None, None, q, None)?;
    cfg.write(&a.out_dir)?;
    println!("fbp psnr={q:.4} dB");
    Ok(q)
}

fn arch_of(a: &TrainArgs, size: usize) -> ArchConfig {
    ArchConfig {
        image_size: size,
        input_channels: a.input_channels,
        channels: a.channels,
        depth: a.depth,
        bottleneck_convs: a.bottleneck_convs,
    }
}

fn log_train(cfg: &mut ConfigLog, a: &TrainArgs, arch: &ArchConfig, net: &DipNetwork) {
    cfg.set("architecture", arch)
        .set("num_weights", net.num_weights())
        .set("iters", a.iters)
        .set("lr", a.lr)
        .set("warmup", a.warmup)
        .set("optimizer", "adam(beta1=0.9, beta2=0.999, eps=1e-8)")
        .set("mc_train_samples", a.mc_train_samples)
        .set("mc_samples", a.mc_samples)
        .set("log_every", a.log_every)
        .set("likelihood", "0.5*||F x - y||^2 (unit noise variance)")
        .set("init_sigma_w", coldpost::mfvi::INIT_SIGMA);
}

fn write_history(path: &Path, history: &[HistoryEntry]) -> CliResult<()> {
    let mut out = create(path)?;
    write_history_csv(history, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Fixed streams of the run seed, shared by every training of a run.
const STREAM_NETWORK: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_PREDICT: u64 = 3;
const STREAM_BO: u64 = 4;

/// Network and initial parameters drawn from the run seed.
fn init_model(seed: u64, arch: ArchConfig) -> CliResult<(DipNetwork, VariationalParams)> {
    let mut rng = Rng::new(seed).split(STREAM_NETWORK);
    let net = DipNetwork::new(arch, &mut rng)?;
    let params = VariationalParams::init(&net, &mut rng);
    Ok((net, params))
}

#[derive(Debug, Clone)]
pub struct DipReport {
    pub psnr: f64,
    pub history: Vec<HistoryEntry>,
}

fn train_dip(a: &TrainArgs, p: &Problem, net: &DipNetwork, init: VariationalParams) -> CliResult<(Image, Vec<HistoryEntry>)> {
    let mut tc = TrainConfig::new(ObjectiveMode::Deterministic);
    tc.iterations = a.iters;
    tc.learning_rate = a.lr;
    tc.warmup = a.warmup;
    tc.log_every = a.log_every;
    let mut rng = Rng::new(a.data.seed).split(STREAM_TRAIN);
    let out = train(net, init, &tc, &p.operator, &p.sinogram, Some(&p.reference), &mut rng)?;
    let rec = predict_mean_weights(net, &out.params)?;
    Ok((rec, out.history))
}

pub fn cmd_dip(a: &TrainArgs) -> CliResult<DipReport> {
    let dir = &a.data.out_dir;
    ensure_dir(dir)?;
    let mut cfg = ConfigLog::default();
    cfg.set("command", "dip").set("mode", ObjectiveMode::Deterministic);
    let p = load_problem(&a.data, &mut cfg)?;
    let arch = arch_of(a, p.reference.width());
    let (net, init) = init_model(a.data.seed, arch.clone())?;
    log_train(&mut cfg, a, &arch, &net);
    cfg.write(dir)?;
    let (rec, history) = train_dip(a, &p, &net, init)?;
    let q = psnr(&rec, &p.reference, 1.0)?;
    write_pgm(&rec.clamped01(), dir.join("dip.pgm"))?;
    write_history(&dir.join("dip_history.csv"), &history)?;
    append_metrics(dir, "dip", None, None, q, None)?;
    println!("dip psnr={q:.4} dB");
    Ok(DipReport { psnr: q, history })
}

/// Outputs of one tempered training plus posterior prediction.
#[derive(Debug, Clone)]
pub struct MfviRun {
    pub temperature: f64,
    pub prior_sigma: f64,
    pub mean: Image,
    pub variance: Image,
    pub psnr: f64,
    pub uce: f64,
    pub history: Vec<HistoryEntry>,
}

fn run_mfvi(
    a: &TrainArgs,
    p: &Problem,
    net: &DipNetwork,
    init: VariationalParams,
    t: f64,
    sigma: f64,
    predict_rng: &mut Rng,
) -> coldpost::Result<MfviRun> {
    let prior = TemperedPrior::with_scaling(sigma, t, a.prior_scaling.into())?;
    let mut tc = TrainConfig::new(ObjectiveMode::FullyTempered(prior));
    tc.iterations = a.iters;
    tc.learning_rate = a.lr;
    tc.warmup = a.warmup;
    tc.log_every = a.log_every;
    tc.mc_train_samples = a.mc_train_samples;
    let mut rng = Rng::new(a.data.seed).split(STREAM_TRAIN);
    let out = train(net, init, &tc, &p.operator, &p.sinogram, Some(&p.reference), &mut rng)?;
    let (mean, variance) = predict(net, &out.params, a.mc_samples, predict_rng)?;
    let q = psnr(&mean.clamped01(), &p.reference, 1.0)?;
    let err = error_map(&mean, &p.reference)?;
    let bins = DEFAULT_UCE_BINS.min(err.pixels().len());
    let uce = calibration_bins(&err, &variance, bins)?.uce();
    Ok(MfviRun { temperature: t, prior_sigma: sigma, mean, variance, psnr: q, uce, history: out.history })
}

fn write_mfvi_outputs(dir: &Path, prefix: &str, r: &MfviRun, reference: &Image) -> CliResult<()> {
    write_pgm(&r.mean.clamped01(), dir.join(format!("{prefix}_mean.pgm")))?;
    let (lo, hi) = r.variance.min_max();
    let scaled = if hi > lo { r.variance.map(|v| (v - lo) / (hi - lo)) } else { r.variance.map(|_| 0.0) };
    write_pgm(&scaled, dir.join(format!("{prefix}_variance.pgm")))?;
    let mut side = create(&dir.join(format!("{prefix}_variance_scale.csv")))?;
    writeln!(side, "min,max\n{lo},{hi}")?;
    side.flush()?;
    let err = error_map(&r.mean.clamped01(), reference)?;
    write_pgm(&err.clamped01(), dir.join(format!("{prefix}_error.pgm")))?;
    write_history(&dir.join(format!("{prefix}_history.csv")), &r.history)?;
    let raw_err = error_map(&r.mean, reference)?;
    let bins = DEFAULT_UCE_BINS.min(raw_err.pixels().len());
    let mut cal = create(&dir.join(format!("{prefix}_calibration.csv")))?;
    calibration_bins(&raw_err, &r.variance, bins)?.write_csv(&mut cal)?;
    cal.flush()?;
    Ok(())
}

pub fn cmd_mfvi(a: &MfviArgs) -> CliResult<MfviRun> {
    let t = &a.train;
    let dir = &t.data.out_dir;
    ensure_dir(dir)?;
    if !a.allow_outside_box && !SearchBox::default().contains(a.temperature, a.prior_sigma) {
        return Err(CliError::Usage(format!(
            "T={} sigma={} outside the search box T in [1e-12, 1e-2], sigma in [1e-10, 1]; pass --unsafe to allow",
            a.temperature, a.prior_sigma
        )));
    }
    let mut cfg = ConfigLog::default();
    cfg.set("command", "mfvi");
    let p = load_problem(&t.data, &mut cfg)?;
    let arch = arch_of(t, p.reference.width());
    let (net, init) = init_model(t.data.seed, arch.clone())?;
    let prior = TemperedPrior::with_scaling(a.prior_sigma, a.temperature, t.prior_scaling.into())?;
    cfg.set("mode", ObjectiveMode::FullyTempered(prior))
        .set("temperature", a.temperature)
        .set("prior_sigma", a.prior_sigma)
        .set("prior_scaling", PriorScaling::from(t.prior_scaling))
        .set("sigma_T", prior.sigma_t())
        .set("uce_bins", DEFAULT_UCE_BINS);
    log_train(&mut cfg, t, &arch, &net);
    cfg.write(dir)?;
    let mut prng = Rng::new(t.data.seed).split(STREAM_PREDICT);
    let r = run_mfvi(t, &p, &net, init, a.temperature, a.prior_sigma, &mut prng)?;
    write_mfvi_outputs(dir, "mfvi", &r, &p.reference)?;
    append_metrics(dir, "mfvi", Some(r.temperature), Some(r.prior_sigma), r.psnr, Some(r.uce))?;
    println!("mfvi T={:e} sigma={:e} psnr={:.4} dB uce={:.6e}", r.temperature, r.prior_sigma, r.psnr, r.uce);
    Ok(r)
}

/// Summary of a Bayesian-optimization run.
#[derive(Debug, Clone)]
pub struct BoReport {
    pub fbp_psnr: f64,
    pub dip: Option<DipReport>,
    pub best: MfviRun,
    /// `(iteration, candidate, T, sigma, psnr, uce)` of every successful evaluation.
    pub evaluations: Vec<(usize, usize, f64, f64, f64, f64)>,
}

fn write_landscape(dir: &Path, name: &str, gp: &GpModel, bx: &SearchBox) -> CliResult<()> {
    let mut out = create(&dir.join(name))?;
    write_landscape_csv(gp, bx.log_t_range(), bx.log_sigma_range(), LANDSCAPE_RESOLUTION, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_bo(a: &BoArgs) -> CliResult<BoReport> {
    let t = &a.train;
    let dir = &t.data.out_dir;
    ensure_dir(dir)?;
    let bx = SearchBox::new(a.t_min, a.t_max, a.sigma_min, a.sigma_max)?;
    let init = default_init();
    if let Some(&(it, is)) = init.iter().find(|&&(it, is)| !bx.contains(it, is)) {
        return Err(CliError::Usage(format!("initial design point T={it}, sigma={is} lies outside the search box")));
    }
    let parallel = match thread_cap() {
        Some(cap) => a.parallel.min(cap),
        None => a.parallel,
    }
    .max(1);
    let config = BoConfig { iterations: a.bo_iterations, batch: a.batch, parallel, ..BoConfig::default() };

    let mut cfg = ConfigLog::default();
    cfg.set("command", "bo");
    let p = load_problem(&t.data, &mut cfg)?;
    let arch = arch_of(t, p.reference.width());
    let (net, init_params) = init_model(t.data.seed, arch.clone())?;
    let priors: HyperPriors = config.priors;
    cfg.set("mode", "fully_tempered")
        .set("prior_scaling", PriorScaling::from(t.prior_scaling))
        .set("search_box", format!("T in [{:e}, {:e}], sigma in [{:e}, {:e}] (natural-log coordinates)", bx.t_min, bx.t_max, bx.sigma_min, bx.sigma_max))
        .set("init_design", format!("{init:?}"))
        .set("bo_iterations", a.bo_iterations)
        .set("batch", a.batch)
        .set("parallel", parallel)
        .set("objective", "PSNR of the Monte Carlo predictive mean against the reference, maximized")
        .set("acquisition", "expected improvement, 32 Halton starts plus their reflections through the box center, merge radius 0.05")
        .set("gp_kernel", "s^2 exp(-|x-x'|^2 / (2 l^2))")
        .set(
            "gp_hyperpriors",
            format!(
                "c ~ N({}, {}^2); ln s^2 ~ N(ln {}, {}^2); ln l ~ N(ln {}, {}^2); noise ~ Gamma(shape {}, rate {})",
                priors.mean_mu,
                priors.mean_sd,
                priors.output_scale_median,
                priors.log_output_scale_sd,
                priors.length_scale_median,
                priors.log_length_scale_sd,
                priors.noise_shape,
                priors.noise_rate
            ),
        )
        .set("gp_fit", format!("{:?}", config.fit))
        .set("uce_bins", DEFAULT_UCE_BINS);
    log_train(&mut cfg, t, &arch, &net);
    cfg.write(dir)?;

    let fbp_rec = fbp(&p.sinogram, p.reference.width(), FbpFilter::Ramp)?;
    let fbp_psnr = psnr(&fbp_rec, &p.reference, 1.0)?;
    write_pgm(&fbp_rec, dir.join("fbp.pgm"))?;

    // every successful run, keyed by its evaluation coordinates
    let runs: Mutex<Vec<MfviRun>> = Mutex::new(Vec::new());
    let objective = |temp: f64, sigma: f64, mut rng: Rng| -> coldpost::Result<f64> {
        let r = run_mfvi(t, &p, &net, init_params.clone(), temp, sigma, &mut rng)?;
        let q = r.psnr;
        runs.lock().expect("no poisoned lock").push(r);
        Ok(q)
    };
    let mut landscape_err = None;
    let outcome = bo_loop(objective, &bx, &init, &config, &Rng::new(t.data.seed).split(STREAM_BO), |it, gp| {
        if landscape_err.is_none() {
            if let Err(e) = write_landscape(dir, &format!("gp_landscape_iter{it:02}.csv"), gp, &bx) {
                landscape_err = Some(e);
            }
        }
    })?;
    if let Some(e) = landscape_err {
        return Err(e);
    }
    let mut hist = create(&dir.join("bo_history.csv"))?;
    outcome.state.write_history_csv(&mut hist)?;
    hist.flush()?;
    if let Some(gp) = &outcome.final_gp {
        write_landscape(dir, "gp_landscape_final.csv", gp, &bx)?;
    }
    if let Some(msg) = &outcome.aborted {
        return Err(CliError::Numeric(format!("Bayesian optimization aborted: {msg}")));
    }

    let runs = runs.into_inner().expect("no poisoned lock");
    let find = |temp: f64, sigma: f64| runs.iter().find(|r| r.temperature == temp && r.prior_sigma == sigma);
    let mut evaluations = Vec::new();
    let mut metrics = create(&dir.join("bo_metrics.csv"))?;
    writeln!(metrics, "iteration,candidate_index,T,sigma,psnr,uce")?;
    for rec in outcome.state.records() {
        if let (Some(q), Some(r)) = (rec.psnr, find(rec.t, rec.sigma)) {
            writeln!(metrics, "{},{},{},{},{},{}", rec.iteration, rec.candidate_index, rec.t, rec.sigma, q, r.uce)?;
            evaluations.push((rec.iteration, rec.candidate_index, rec.t, rec.sigma, q, r.uce));
        }
    }
    metrics.flush()?;
    let (bt, bs, _) = outcome.best().ok_or_else(|| CliError::Numeric("no successful evaluation".into()))?;
    let best = find(bt, bs).cloned().expect("incumbent run recorded");
    write_mfvi_outputs(dir, "bo_best", &best, &p.reference)?;

    let warmest = evaluations.iter().fold(None, |acc: Option<(f64, f64)>, e| match acc {
        Some((tt, _)) if tt >= e.2 => acc,
        _ => Some((e.2, e.5)),
    });
    if let Some((tw, uce_w)) = warmest {
        if best.uce > uce_w {
            log::warn!("UCE at (T*, sigma*) = {:.4e} exceeds UCE at the warmest evaluated T={tw:e} ({uce_w:.4e})", best.uce);
        }
    }

    let dip = if a.skip_dip {
        None
    } else {
        let (rec, history) = train_dip(t, &p, &net, init_params.clone())?;
        let q = psnr(&rec, &p.reference, 1.0)?;
        write_pgm(&rec.clamped01(), dir.join("dip.pgm"))?;
        write_history(&dir.join("dip_history.csv"), &history)?;
        Some(DipReport { psnr: q, history })
    };

    let mut table = String::new();
    let _ = writeln!(table, "method,T,sigma,psnr,uce");
    let _ = writeln!(table, "fbp,,,{fbp_psnr},");
    if let Some(d) = &dip {
        let _ = writeln!(table, "dip,,,{},", d.psnr);
    }
    let _ = writeln!(table, "mfvi_bo,{},{},{},{}", best.temperature, best.prior_sigma, best.psnr, best.uce);
    fs::write(dir.join("report.csv"), &table)?;
    println!("{:<10} {:>12} {:>12} {:>10}", "method", "T", "sigma", "PSNR [dB]");
    println!("{:<10} {:>12} {:>12} {:>10.2}", "FBP", "-", "-", fbp_psnr);
    if let Some(d) = &dip {
        println!("{:<10} {:>12} {:>12} {:>10.2}", "DIP", "-", "-", d.psnr);
    }
    println!("{:<10} {:>12.3e} {:>12.3e} {:>10.2}", "MFVI@T*", best.temperature, best.prior_sigma, best.psnr);
    Ok(BoReport { fbp_psnr, dip, best, evaluations })
}
