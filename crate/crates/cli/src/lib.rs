//! Command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand and maps the outcome to an exit code: 0 on success, 1 on a
//! runtime or data error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use spatialgrasp::augfusion::{augfusion, AugFusionConfig};
use spatialgrasp::bench::{
    emit_report, read_outcomes_jsonl, render_csv, render_json, report_from_outcomes, run_sweep,
    write_outcomes_jsonl, ReportFormat, SweepConfig,
};
use spatialgrasp::dataset::{convert_episodes, load_index, load_manifest, write_prompts_jsonl};
use spatialgrasp::geometry::{box_to_prompt_with, GraspBox, Intrinsics, PromptOptions, WidthAxis};
use spatialgrasp::io::{load_depth, load_image, save_image};
use spatialgrasp::policy::{
    parse_training_set, sample_actions_with, train_policy, trajectory_to_json, DenoiserParams, SampleOptions,
    TrainConfig,
};
use spatialgrasp::tensor::TensorFile;
use spatialgrasp::RandomStream;

#[derive(Debug, Parser)]
#[command(name = "spatialgrasp", version, about = "Grasp prompts, augmentation, diffusion policy and exposure benchmark")]
struct Cli {
    /// Root seed for every random stream the subcommand uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply AugFusion to a PPM image.
    Augment(AugmentArgs),
    /// Convert one grasp box into a grasp prompt.
    Prompt(PromptArgs),
    /// Convert annotated episodes into a JSON-lines prompt file.
    Convert(ConvertArgs),
    /// Train the diffusion denoiser.
    Train(TrainArgs),
    /// Sample an action trajectory from a trained denoiser.
    Sample(SampleArgs),
    /// Run the exposure sweep benchmark.
    Sweep(SweepArgs),
    /// Rebuild a report from an outcome log.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON AugFusion config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    W,
    H,
}

impl From<Axis> for WidthAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::W => WidthAxis::W,
            Axis::H => WidthAxis::H,
        }
    }
}

#[derive(Debug, Args)]
struct GeometryFlags {
    /// Depth sampler: bilinear or nearest.
    #[arg(long)]
    sampler: Option<String>,
    /// Box side that spans the gripper opening.
    #[arg(long, value_enum)]
    width_axis: Option<Axis>,
}

impl GeometryFlags {
    fn options(&self) -> PromptOptions {
        let mut opts = PromptOptions::default();
        if let Some(s) = &self.sampler {
            opts.sampler = s.clone();
        }
        if let Some(a) = self.width_axis {
            opts.width_axis = a.into();
        }
        opts
    }
}

#[derive(Debug, Args)]
struct PromptArgs {
    /// `x,y,w,h,theta[,confidence]` in pixels and radians.
    #[arg(long = "box", allow_hyphen_values = true)]
    grasp_box: String,
    #[arg(long)]
    depth: PathBuf,
    /// `fx,fy,cx,cy`.
    #[arg(long)]
    intrinsics: String,
    /// Multiplier applied to the depth file's values.
    #[arg(long, default_value_t = 1.0)]
    depth_scale: f64,
    #[command(flatten)]
    geometry: GeometryFlags,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// A single episode manifest.
    #[arg(long, conflicts_with = "index", required_unless_present = "index")]
    manifest: Option<PathBuf>,
    /// A dataset index listing several manifests.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    geometry: GeometryFlags,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `{"examples": [{"cond": [...], "actions": [[...], ...]}]}`.
    #[arg(long)]
    dataset: PathBuf,
    /// Parameter file; the sidecar goes to `<output>.json`.
    #[arg(long)]
    output: PathBuf,
    /// Per-epoch loss trace, a JSON list of `{epoch, rmse}`.
    #[arg(long)]
    loss_trace: Option<PathBuf>,
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    noise_draws: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    params: PathBuf,
    /// JSON array with the conditioning vector; zeros when omitted.
    #[arg(long)]
    cond: Option<PathBuf>,
    /// Clamp clean-sample estimates to `[-c, c]` at every step.
    #[arg(long)]
    clip_sample: Option<f64>,
    /// Trajectory JSON; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON sweep config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Per-trial outcome log (JSON lines).
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    pipeline: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<Usage>().is_some() || c.downcast_ref::<spatialgrasp::Error>().is_some_and(|e| e.is_usage())
    })
}

/// Runs the command line `argv` (including the program name).
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if is_usage(&e) {
                let _ = writeln!(err, "\nRun `spatialgrasp --help` for usage.");
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let seed = cli.seed;
    let command = cli.command;
    match cli.jobs {
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            // Stage stdout in a buffer: the writer cannot cross into the pool.
            let mut buf = Vec::new();
            let result = pool.install(|| execute(command, seed, &mut buf));
            out.write_all(&buf)?;
            result
        }
        None => execute(command, seed, out),
    }
}

fn execute(command: Command, seed: Option<u64>, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Augment(a) => augment(a, seed.unwrap_or(0)),
        Command::Prompt(a) => prompt(a, out),
        Command::Convert(a) => convert(a),
        Command::Train(a) => train(a, seed),
        Command::Sample(a) => sample(a, seed.unwrap_or(0), out),
        Command::Sweep(a) => sweep(a, seed),
        Command::Report(a) => report(a, out),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_floats(flag: &str, text: &str, lens: &[usize]) -> anyhow::Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("--{flag}: `{text}` is not a comma-separated list of numbers")))?;
    if !lens.contains(&values.len()) {
        return Err(usage(format!(
            "--{flag}: expected {} values, got {}",
            lens.iter().map(usize::to_string).collect::<Vec<_>>().join(" or "),
            values.len()
        )));
    }
    Ok(values)
}

fn augment(a: AugmentArgs, seed: u64) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => AugFusionConfig::default(),
    };
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    let image = load_image(&a.input)?;
    let augmented = augfusion(&image, &cfg, &RandomStream::new(seed))?;
    save_image(&augmented, &a.output)?;
    Ok(())
}

fn prompt(a: PromptArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let b = parse_floats("box", &a.grasp_box, &[5, 6])?;
    let k = parse_floats("intrinsics", &a.intrinsics, &[4])?;
    let grasp_box = GraspBox::new(b[0], b[1], b[2], b[3], b[4], b.get(5).copied().unwrap_or(1.0))?;
    let intr = Intrinsics::new(k[0], k[1], k[2], k[3])?;
    let depth = load_depth(&a.depth)?.scaled(a.depth_scale)?;
    let p = box_to_prompt_with(&grasp_box, &depth, &intr, &a.geometry.options())?;
    writeln!(out, "{}", p.to_json())?;
    Ok(())
}

fn convert(a: ConvertArgs) -> anyhow::Result<()> {
    let manifests = match (&a.manifest, &a.index) {
        (Some(m), _) => vec![load_manifest(m)?],
        (None, Some(i)) => load_index(i)?,
        (None, None) => return Err(usage("convert needs --manifest or --index")),
    };
    let prompts: Vec<_> = convert_episodes(&manifests, &a.geometry.options())?.concat();
    let mut buf = Vec::new();
    write_prompts_jsonl(&prompts, &mut buf)?;
    fs::write(&a.output, buf).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.noise_draws {
        cfg.noise_draws = v;
    }
    let dataset = parse_training_set(&read_text(&a.dataset)?)?;
    let trained = train_policy(&dataset, &cfg)?;
    trained.params.to_tensor_file().save(&a.output)?;
    if let Some(path) = &a.loss_trace {
        let mut text = serde_json::to_string_pretty(&trained.trace)?;
        text.push('\n');
        write_text(path, &text)?;
    }
    Ok(())
}

fn sample(a: SampleArgs, seed: u64, out: &mut dyn Write) -> anyhow::Result<()> {
    let params = DenoiserParams::from_tensor_file(&TensorFile::load(&a.params)?)?;
    let cond: Vec<f64> = match &a.cond {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => vec![0.0; params.config.cond_len],
    };
    let schedule = params.config.schedule()?;
    let opts = SampleOptions {
        clip_sample: a.clip_sample,
    };
    let traj = sample_actions_with(&params, &cond, &schedule, &mut RandomStream::new(seed), opts)?;
    let mut text = trajectory_to_json(&traj)?;
    text.push('\n');
    match &a.output {
        Some(p) => write_text(p, &text),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn sweep(a: SweepArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SweepConfig::from_json(&read_text(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => SweepConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scene_seed = s;
    }
    if let Some(n) = a.trials {
        cfg.trials_per_level = n;
    }
    if let Some(p) = a.pipeline {
        cfg.pipeline = p;
    }
    let run = run_sweep(&cfg)?;
    emit_report(&run.report, a.format.into(), &a.output)?;
    let mut log = Vec::new();
    write_outcomes_jsonl(&run.outcomes, &mut log)?;
    fs::write(&a.log, log).with_context(|| format!("writing {}", a.log.display()))?;
    Ok(())
}

fn report(a: ReportArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let outcomes = read_outcomes_jsonl(&read_text(&a.log)?)?;
    let report = report_from_outcomes(&outcomes)?;
    match &a.output {
        Some(p) => emit_report(&report, a.format.into(), p)?,
        None => {
            let text = match a.format {
                Format::Csv => render_csv(&report),
                Format::Json => render_json(&report)?,
            };
            out.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
