//! Command-line front end.
//!
//! Every subcommand writes its primary output to `--out` and a flat
//! `key=value` manifest to `<out>.manifest`. The manifest records the full
//! argument vector, so `camproj rerun <manifest>` reproduces the run.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or parse failure, 4 numeric
//! abort, 5 check failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera_model::{image_to_camera, project_to_world, CameraParams, PixelObservation};
use crate::cpl::{
    finite_difference_jacobian, grad_world_point, jacobian_relative_error, Component, LossMode,
    ParamVector13,
};
use crate::datagen::{
    degrees_exact, generate_records, read_dataset, sample_config, write_dataset, ParamRanges,
    SyntheticRecord,
};
use crate::error::{Error, Result};
use crate::estimator::{
    checkpoint, evaluate, fit_parameters, mtl_train, EvalOptions, HeadScaling, MeanPredictor,
    MtlNet, Predictor, SolverConfig, SolverPredictor, Topology, TrainOptions, TrainingSample,
    TruthPredictor,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

/// Tolerance used by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "camproj",
    version,
    about = "Stereo camera projection loss toolkit"
)]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Primary output path (a manifest is written next to it).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample camera configurations and write a dataset CSV.
    Generate(GenerateArgs),
    /// Project pixels to the camera and world frames.
    Project(ProjectArgs),
    /// Recover camera parameters per record with the Adam solver.
    Calibrate(CalibrateArgs),
    /// Train the multi-task regressor.
    Train(TrainArgs),
    /// NMAE and hFOV accuracy of a predictor on a dataset.
    Evaluate(EvaluateArgs),
    /// Compare the analytic Jacobian with finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-execute the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    /// cvgl, cityscapes or tsinghua.
    #[arg(long, conflicts_with = "ranges")]
    pub preset: Option<String>,
    /// TOML file with custom parameter ranges.
    #[arg(long)]
    pub ranges: Option<PathBuf>,
}

impl RangeArgs {
    fn resolve(&self) -> Result<Option<ParamRanges>> {
        match (&self.preset, &self.ranges) {
            (Some(p), _) => ParamRanges::preset(p).map(Some),
            (None, Some(path)) => ParamRanges::from_toml(&fs::read_to_string(path)?).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub ranges: RangeArgs,
    #[arg(long, default_value_t = 50)]
    pub configs: usize,
    #[arg(long, default_value_t = 32)]
    pub points: usize,
    /// Standard deviation of pixel noise added to the observations.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Re-project every observation of a dataset with its ground truth.
    #[arg(long, conflicts_with_all = ["params", "pixel"])]
    pub dataset: Option<PathBuf>,
    /// fx,fy,u0,v0,b,d,theta_p_deg,tx,ty,tz
    #[arg(
        long,
        requires = "pixel",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub params: Vec<f64>,
    /// u,v or u,v,disparity
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub pixel: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InitMode {
    /// Start at the ground truth.
    Gt,
    /// Start at the ground truth with every free parameter scaled by `1 + perturb`.
    Perturb,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

impl OptimArgs {
    fn config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            early_stopping_patience: self.patience,
            seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Parameters held at their initial value, e.g. `b,fx,fy,u0,v0`.
    #[arg(long, value_delimiter = ',')]
    pub fix: Vec<Component>,
    #[arg(long, value_enum, default_value_t = InitMode::Perturb)]
    pub init: InitMode,
    #[arg(long, default_value_t = 0.05)]
    pub perturb: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Only fit the record with this config id.
    #[arg(long)]
    pub config_id: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// baseline, cpl-u or cpl-a.
    #[arg(long, default_value = "baseline")]
    pub mode: LossMode,
    /// sn (single trunk) or mn (one trunk per view).
    #[arg(long, default_value = "sn")]
    pub topology: String,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    /// EMA decay of the adaptive weights.
    #[arg(long, default_value_t = 0.99)]
    pub decay: f64,
    /// Scale camera heads from these ranges instead of the training targets.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BuiltinPredictor {
    Truth,
    Mean,
    Solver,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trained network; otherwise `--predictor` is used.
    #[arg(long, conflicts_with = "predictor")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub predictor: Option<BuiltinPredictor>,
    /// Dataset the mean predictor is fitted on (default: the evaluation set).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Image width in pixels for hFOV. Defaults to 112 only with `--preset cvgl`.
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Report signed bias instead of absolute error.
    #[arg(long)]
    pub signed: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value = "cvgl")]
    pub preset: String,
}

/// Failure with a chosen exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Parse { .. } => EXIT_IO,
            Error::InvalidConfig(_)
            | Error::InvalidRange { .. }
            | Error::EmptyRangeAfterGuard { .. }
            | Error::ShapeMismatch { .. }
            | Error::LengthMismatch(..)
            | Error::Empty(_)
            | Error::NonPositiveInput(_) => EXIT_USAGE,
            _ => EXIT_NUMERIC,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.into(),
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Ordered `key=value` record written next to every output.
#[derive(Debug, Default)]
struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Reads the argument vector recorded in a manifest.
pub fn manifest_argv(text: &str) -> Result<Vec<String>> {
    let mut args: Vec<(usize, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(i + 1, "expected key=value"));
        };
        if let Some(idx) = k.strip_prefix("argv.") {
            let idx = idx
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad argv index"))?;
            args.push((idx, v.to_string()));
        }
    }
    if args.is_empty() {
        return Err(Error::parse(1, "manifest records no argv"));
    }
    args.sort_by_key(|(i, _)| *i);
    if args.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
        return Err(Error::parse(1, "argv indices are not contiguous"));
    }
    Ok(args.into_iter().map(|(_, v)| v).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<SyntheticRecord>> {
    read_dataset(BufReader::new(fs::File::open(path)?))
}

fn params_line(p: &CameraParams) -> String {
    let a = p.to_array();
    let mut s = String::new();
    for (k, v) in a.iter().enumerate() {
        let v = if k == Component::ThetaP.index() {
            degrees_exact(*v)
        } else {
            *v
        };
        let _ = write!(s, "{}{v:.16e}", if k == 0 { "" } else { "," });
    }
    s
}

fn camera_header() -> String {
    Component::CAMERA
        .iter()
        .map(|c| {
            if *c == Component::ThetaP {
                "theta_p_deg".to_string()
            } else {
                c.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

struct Ctx<'a> {
    cli: &'a Cli,
    manifest: Manifest,
}

impl Ctx<'_> {
    fn out(&self, default: &str) -> PathBuf {
        self.cli
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(default))
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.cli.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn cmd_generate(ctx: &mut Ctx, a: &GenerateArgs) -> CmdResult<PathBuf> {
    let ranges = a
        .ranges
        .resolve()?
        .ok_or_else(|| usage("one of --preset or --ranges is required"))?;
    let out = ctx.out("dataset.csv");
    let records = generate_records(&ranges, a.configs, a.points, a.noise, ctx.cli.seed)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &records)?;
    fs::write(&out, buf).map_err(Error::from)?;

    println!("records={}", records.len());
    println!("points_per_record={}", a.points);
    for c in Component::CAMERA {
        let vals = records.iter().map(|r| {
            let v = r.params[c];
            if c == Component::ThetaP {
                degrees_exact(v)
            } else {
                v
            }
        });
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
        let [blo, bhi] = ranges.bound(c);
        println!("{}: observed [{lo}, {hi}] within [{blo}, {bhi}]", c);
    }
    ctx.manifest
        .set("preset", a.ranges.preset.as_deref().unwrap_or("custom"));
    ctx.manifest.set("configs", a.configs);
    ctx.manifest.set("points", a.points);
    ctx.manifest.set("noise", a.noise);
    Ok(out)
}

fn cmd_project(ctx: &mut Ctx, a: &ProjectArgs) -> CmdResult<PathBuf> {
    let out = ctx.out("projection.csv");
    let mut text = String::from("config_id,point,u,v,disparity,x_cam,y_cam,z_cam,X,Y,Z\n");
    let mut row = |id: usize, i: usize, o: &PixelObservation, p: &CameraParams| -> Result<()> {
        let c = image_to_camera(o, p)?;
        let w = project_to_world(o, p)?;
        let _ = writeln!(
            text,
            "{id},{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            o.u,
            o.v,
            o.effective_disparity(p),
            c.x_cam,
            c.y_cam,
            c.z_cam,
            w.x,
            w.y,
            w.z
        );
        Ok(())
    };
    if let Some(path) = &a.dataset {
        let records = load_records(path)?;
        for r in &records {
            let p = r.camera();
            for (i, o) in r.observations.observations().iter().enumerate() {
                row(r.config_id, i, o, &p)?;
            }
        }
        ctx.manifest.set("dataset", path.display());
    } else {
        if a.params.len() != 10 {
            return Err(usage("--params needs 10 values or use --dataset"));
        }
        let mut arr = [0.0; 10];
        arr.copy_from_slice(&a.params);
        arr[Component::ThetaP.index()] = arr[Component::ThetaP.index()].to_radians();
        let p = CameraParams::from_array(arr);
        p.validate()?;
        let o = match a.pixel.as_slice() {
            [u, v] => PixelObservation::new(*u, *v),
            [u, v, d] => PixelObservation::with_disparity(*u, *v, *d),
            _ => return Err(usage("--pixel takes u,v or u,v,disparity")),
        };
        row(0, 0, &o, &p)?;
    }
    fs::write(&out, &text).map_err(Error::from)?;
    print!(
        "{}",
        text.lines()
            .take(6)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    Ok(out)
}

fn cmd_calibrate(ctx: &mut Ctx, a: &CalibrateArgs) -> CmdResult<PathBuf> {
    if let Some(c) = a.fix.iter().find(|c| !c.is_camera()) {
        return Err(usage(format!("cannot fix world head `{c}`")));
    }
    let records = load_records(&a.dataset)?;
    let records: Vec<_> = match a.config_id {
        Some(id) => records.into_iter().filter(|r| r.config_id == id).collect(),
        None => records,
    };
    if records.is_empty() {
        return Err(usage("no matching records"));
    }
    let cfg = SolverConfig {
        fixed: a.fix.clone(),
        ..a.optim.config(ctx.cli.seed)
    };
    let out = ctx.out("calibration.csv");
    let mut text = format!(
        "config_id,converged,epochs,initial_loss,final_loss,{}\n",
        camera_header()
    );
    let mut trace = String::from("config_id,epoch,loss\n");
    let mut worst = [0.0f64; 10];
    for r in &records {
        let gt = r.camera();
        let mut init = gt.to_array();
        if a.init == InitMode::Perturb {
            for c in Component::CAMERA.iter().filter(|c| !a.fix.contains(c)) {
                init[c.index()] *= 1.0 + a.perturb;
            }
        }
        let fit = fit_parameters(
            &r.observations,
            &r.world,
            &CameraParams::from_array(init),
            &cfg,
        )
        .map_err(|e| {
            let f = Failure::from(e);
            Failure {
                code: f.code,
                msg: format!("config {}: {}", r.config_id, f.msg),
            }
        })?;
        ctx.log(format!(
            "config {}: {} epochs, loss {:.3e}",
            r.config_id, fit.epochs_run, fit.final_loss
        ));
        let _ = writeln!(
            text,
            "{},{},{},{:.16e},{:.16e},{}",
            r.config_id,
            fit.converged,
            fit.epochs_run,
            fit.loss_trace[0],
            fit.final_loss,
            params_line(&fit.params)
        );
        for (e, l) in fit.loss_trace.iter().enumerate() {
            let _ = writeln!(trace, "{},{},{l:.16e}", r.config_id, e + 1);
        }
        let (got, want) = (fit.params.to_array(), gt.to_array());
        for k in 0..10 {
            let mut err = (got[k] - want[k]).abs();
            if k == Component::ThetaP.index() {
                err = err.to_degrees();
            }
            worst[k] = worst[k].max(err);
        }
    }
    fs::write(&out, &text).map_err(Error::from)?;
    let trace_path = PathBuf::from(format!("{}.trace", out.display()));
    fs::write(&trace_path, &trace).map_err(Error::from)?;

    println!("records={}", records.len());
    for c in Component::CAMERA {
        let unit = if c == Component::ThetaP { " deg" } else { "" };
        println!("max_abs_error_{}={:.3e}{unit}", c, worst[c.index()]);
    }
    ctx.manifest.set("dataset", a.dataset.display());
    ctx.manifest.set(
        "fix",
        a.fix
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    ctx.manifest
        .set("init", format!("{:?}", a.init).to_lowercase());
    ctx.manifest.set("perturb", a.perturb);
    ctx.manifest.set("trace", trace_path.display());
    Ok(out)
}

fn epoch_log(history: &[crate::cpl::LossReport]) -> String {
    let mut out = String::from("epoch,total");
    for c in Component::ALL {
        let _ = write!(out, ",L_{c}");
    }
    let adaptive = history.iter().any(|r| r.weights.is_some());
    if adaptive {
        for c in Component::ALL {
            let _ = write!(out, ",alpha_{c}");
        }
    }
    out.push('\n');
    for (e, r) in history.iter().enumerate() {
        let _ = write!(out, "{},{:.16e}", e + 1, r.total);
        for v in r.per_param {
            let _ = write!(out, ",{v:.16e}");
        }
        if let Some(alpha) = r.weights {
            for v in alpha {
                let _ = write!(out, ",{v:.16e}");
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> CmdResult<PathBuf> {
    let topology = Topology::parse(&a.topology)?;
    let records = load_records(&a.dataset)?;
    let data: Vec<TrainingSample> = records.iter().map(TrainingSample::from_record).collect();
    let targets: Vec<ParamVector13> = data.iter().map(|s| s.target).collect();
    let scaling = match &a.preset {
        Some(p) => HeadScaling::from_ranges(&ParamRanges::preset(p)?, &targets)?,
        None => HeadScaling::from_targets(&targets)?,
    };
    let width = data.first().map_or(0, |s| s.features.len());
    let mut net = MtlNet::new(topology, width, &a.hidden, scaling, ctx.cli.seed)?;
    let feats: Vec<Vec<f64>> = data.iter().map(|s| s.features.clone()).collect();
    net.fit_input_normalization(&feats)?;
    let cfg = a.optim.config(ctx.cli.seed);
    let opts = TrainOptions {
        mode: a.mode,
        adaptive_decay: a.decay,
    };
    let outcome = mtl_train(net, &data, &cfg, &opts)?;
    if ctx.cli.verbose {
        for (e, r) in outcome.history.iter().enumerate() {
            ctx.log(format!("epoch {}: total {:.6e}", e + 1, r.total));
        }
    }

    let out = ctx.out("model.ckpt");
    checkpoint::save(&outcome.net, &out)?;
    let log_path = PathBuf::from(format!("{}.log", out.display()));
    fs::write(&log_path, epoch_log(&outcome.history)).map_err(Error::from)?;

    let last = outcome.history.last().map_or(f64::NAN, |r| r.total);
    println!("epochs_run={}", outcome.epochs_run);
    println!("stopped_early={}", outcome.stopped_early);
    println!("final_total={last:.6e}");
    ctx.manifest.set("dataset", a.dataset.display());
    ctx.manifest.set("mode", a.mode);
    ctx.manifest.set("topology", topology.name());
    ctx.manifest.set(
        "hidden",
        a.hidden
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    ctx.manifest.set("decay", a.decay);
    ctx.manifest.set("log", log_path.display());
    Ok(out)
}

fn cmd_evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> CmdResult<PathBuf> {
    let width = match (a.width, a.preset.as_deref()) {
        (Some(w), _) => w,
        (None, Some("cvgl")) => 112.0,
        (None, Some(p)) => {
            ParamRanges::preset(p)?;
            return Err(usage(format!("--width is required with preset `{p}`")));
        }
        (None, None) => return Err(usage("--width is required (or --preset cvgl)")),
    };
    let records = load_records(&a.dataset)?;
    let predictor: Box<dyn Predictor> = match (&a.checkpoint, a.predictor) {
        (Some(path), _) => {
            ctx.manifest.set("checkpoint", path.display());
            Box::new(checkpoint::load(path)?)
        }
        (None, Some(BuiltinPredictor::Truth)) => Box::new(TruthPredictor),
        (None, Some(BuiltinPredictor::Mean)) => {
            let fit_on = match &a.train {
                Some(p) => load_records(p)?,
                None => records.clone(),
            };
            Box::new(MeanPredictor::fit(&fit_on)?)
        }
        (None, Some(BuiltinPredictor::Solver)) => {
            let fit_on = match &a.train {
                Some(p) => load_records(p)?,
                None => records.clone(),
            };
            let init = MeanPredictor::fit(&fit_on)?.mean;
            let config = SolverConfig {
                seed: ctx.cli.seed,
                ..SolverConfig::default()
            };
            Box::new(SolverPredictor { init, config })
        }
        (None, None) => return Err(usage("one of --checkpoint or --predictor is required")),
    };
    let opts = EvalOptions {
        width,
        signed: a.signed,
    };
    let table = evaluate(predictor.as_ref(), &records, &opts)?;
    let out = ctx.out("eval.txt");
    let text = table.to_table();
    fs::write(&out, &text).map_err(Error::from)?;
    print!("{text}");
    ctx.manifest.set("dataset", a.dataset.display());
    ctx.manifest.set("width", width);
    ctx.manifest.set("signed", a.signed);
    if let Some(p) = a.predictor {
        ctx.manifest
            .set("predictor", format!("{p:?}").to_lowercase());
    }
    Ok(out)
}

/// Largest relative error between analytic and finite-difference
/// Jacobians over `samples` random configurations and pixels.
pub fn gradcheck(ranges: &ParamRanges, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidConfig("--samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let p = sample_config(ranges, seed.wrapping_add(i as u64))?;
        let u = rng.random_range(0.0..=2.0 * p.intrinsics.u0);
        let v = rng.random_range(0.0..=2.0 * p.intrinsics.v0);
        let o = PixelObservation::new(u, v);
        let a = grad_world_point(&o, &p)?;
        let n = finite_difference_jacobian(&o, &p)?;
        worst = worst.max(jacobian_relative_error(&a, &n));
    }
    Ok(worst)
}

fn cmd_gradcheck(ctx: &mut Ctx, a: &GradcheckArgs) -> CmdResult<PathBuf> {
    let ranges = ParamRanges::preset(&a.preset)?;
    let worst = gradcheck(&ranges, a.samples, ctx.cli.seed)?;
    let out = ctx.out("gradcheck.txt");
    let pass = worst <= GRADCHECK_TOLERANCE;
    let text = format!(
        "samples={}\nmax_relative_error={worst:.6e}\ntolerance={GRADCHECK_TOLERANCE:e}\npass={pass}\n",
        a.samples
    );
    fs::write(&out, &text).map_err(Error::from)?;
    print!("{text}");
    ctx.manifest.set("samples", a.samples);
    ctx.manifest.set("preset", &a.preset);
    if !pass {
        return Err(Failure {
            code: EXIT_CHECK,
            msg: format!("max relative error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"),
        });
    }
    Ok(out)
}

fn dispatch(cli: &Cli, argv: &[String]) -> CmdResult<()> {
    if let Command::Rerun { manifest } = &cli.command {
        let text = fs::read_to_string(manifest).map_err(Error::from)?;
        let args = manifest_argv(&text)?;
        return match run_inner(&args) {
            0 => Ok(()),
            code => Err(Failure {
                code,
                msg: String::new(),
            }),
        };
    }

    let start = Instant::now();
    let mut ctx = Ctx {
        cli,
        manifest: Manifest::default(),
    };
    let name = match &cli.command {
        Command::Generate(_) => "generate",
        Command::Project(_) => "project",
        Command::Calibrate(_) => "calibrate",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Gradcheck(_) => "gradcheck",
        Command::Rerun { .. } => unreachable!("handled above"),
    };
    ctx.manifest.set("subcommand", name);
    ctx.manifest.set("version", env!("CARGO_PKG_VERSION"));
    ctx.manifest.set("seed", cli.seed);
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(&mut ctx, a),
        Command::Project(a) => cmd_project(&mut ctx, a),
        Command::Calibrate(a) => cmd_calibrate(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(&mut ctx, a),
        Command::Rerun { .. } => unreachable!("handled above"),
    };
    // A failed check still leaves its report and manifest behind.
    let (out, failure) = match result {
        Ok(out) => (out, None),
        Err(f) if f.code == EXIT_CHECK => (ctx.out("gradcheck.txt"), Some(f)),
        Err(f) => return Err(f),
    };
    ctx.manifest.set("output", out.display());
    for (i, a) in argv.iter().enumerate() {
        ctx.manifest.set(&format!("argv.{i}"), a);
    }
    ctx.manifest.set(
        "duration_s",
        format!("{:.6}", start.elapsed().as_secs_f64()),
    );
    write_text(&manifest_path(&out), &ctx.manifest.render())?;
    failure.map_or(Ok(()), Err)
}

fn run_inner(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli, args) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            if !f.msg.is_empty() {
                eprintln!("camproj: {}", f.msg);
            }
            f.code
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    run_inner(&args)
}
