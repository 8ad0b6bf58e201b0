//! Exposure-sweep benchmark: synthetic scenes at each exposure level, a
//! grasp pipeline, pose-error judging, and TSR/GSR aggregation.
//!
//! Outcome log (one JSON object per line, ordered by level then trial):
//!
//! ```text
//! {"exposure_ms":10.0,"trial":0,"detected":true,"grasp_success":true,
//!  "task_success":true,"position_error_m":0.004,"angle_error_rad":0.02,
//!  "width_error_m":0.0}
//! ```
//!
//! The three error fields are `null` when no grasp was predicted.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augfusion::{simulate_exposure, EXPOSURE_LEVELS_MS};
use crate::dataset::{oracle_detector, DetectorNoise, RobotState, SceneSpec, SyntheticScene};
use crate::encoder::{assemble_features, attend_window, pooled_luminance, project_token, EncoderParams, TaskPromptEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{box_to_prompt_with, GraspPrompt, PromptOptions, Quaternion};
use crate::policy::{sample_actions_with, DenoiserParams, NoiseSchedule, SampleOptions};
use crate::raster::Image;
use crate::rng::RandomStream;
use crate::tensor::TensorFile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerance {
    pub position_m: f64,
    pub angle_rad: f64,
    /// Gripper opening error allowed for task completion.
    pub width_m: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            position_m: 0.02,
            angle_rad: 0.15,
            width_m: 0.01,
        }
    }
}

/// Files and knobs for the `policy` pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub encoder: PathBuf,
    pub denoiser: PathBuf,
    #[serde(default)]
    pub clip_sample: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub exposure_levels: Vec<f64>,
    pub trials_per_level: usize,
    pub reference_ms: f64,
    pub tolerance: Tolerance,
    pub scene_seed: u64,
    /// Probability that a correctly grasped object also completes the task.
    pub completion_rate: f64,
    pub pipeline: String,
    pub detector: DetectorNoise,
    pub scene: SceneSpec,
    pub prompt: PromptOptions,
    pub policy: Option<PolicySpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            exposure_levels: EXPOSURE_LEVELS_MS.to_vec(),
            trials_per_level: 100,
            reference_ms: 100.0,
            tolerance: Tolerance::default(),
            scene_seed: 0,
            completion_rate: 1.0,
            pipeline: "oracle".into(),
            detector: DetectorNoise::default(),
            scene: SceneSpec::default(),
            prompt: PromptOptions::default(),
            policy: None,
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.exposure_levels.is_empty() {
            return Err(Error::validation(None, "exposure_levels", "must not be empty"));
        }
        if let Some(v) = self.exposure_levels.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::validation(None, "exposure_levels", format!("level {v} is not positive")));
        }
        if self.trials_per_level == 0 {
            return Err(Error::validation(None, "trials_per_level", "must be at least 1"));
        }
        if !(self.reference_ms.is_finite() && self.reference_ms > 0.0) {
            return Err(Error::validation(None, "reference_ms", "must be positive"));
        }
        let t = &self.tolerance;
        for (field, v) in [
            ("tolerance.position_m", t.position_m),
            ("tolerance.angle_rad", t.angle_rad),
            ("tolerance.width_m", t.width_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(None, field, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.completion_rate) {
            return Err(Error::validation(None, "completion_rate", "must lie in [0, 1]"));
        }
        self.detector.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialOutcome {
    pub exposure_ms: f64,
    pub trial: usize,
    pub detected: bool,
    pub grasp_success: bool,
    pub task_success: bool,
    pub position_error_m: Option<f64>,
    pub angle_error_rad: Option<f64>,
    pub width_error_m: Option<f64>,
}

/// Position within `tol.position_m` and orientation within `tol.angle_rad`,
/// both inclusive.
pub fn judge_grasp(pred: &GraspPrompt, truth: &GraspPrompt, tol: &Tolerance) -> bool {
    position_error(pred, truth) <= tol.position_m && pred.orientation.geodesic_angle(&truth.orientation) <= tol.angle_rad
}

fn position_error(pred: &GraspPrompt, truth: &GraspPrompt) -> f64 {
    let d: Vec<f64> = pred.position.iter().zip(&truth.position).map(|(a, b)| a - b).collect();
    libm::sqrt(d.iter().map(|v| v * v).sum())
}

fn rate(outcomes: &[TrialOutcome], hit: impl Fn(&TrialOutcome) -> bool) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::usage("success rate of an empty outcome list"));
    }
    Ok(outcomes.iter().filter(|o| hit(o)).count() as f64 / outcomes.len() as f64)
}

pub fn compute_gsr(outcomes: &[TrialOutcome]) -> Result<f64> {
    rate(outcomes, |o| o.grasp_success)
}

pub fn compute_tsr(outcomes: &[TrialOutcome]) -> Result<f64> {
    rate(outcomes, |o| o.task_success)
}

/// What a pipeline sees for one trial.
pub struct PipelineInput<'a> {
    pub scene: &'a SyntheticScene,
    pub exposure_ms: f64,
    pub reference_ms: f64,
    image: OnceCell<Image>,
}

impl<'a> PipelineInput<'a> {
    pub fn new(scene: &'a SyntheticScene, exposure_ms: f64, reference_ms: f64) -> Self {
        Self {
            scene,
            exposure_ms,
            reference_ms,
            image: OnceCell::new(),
        }
    }

    /// The scene image after the exposure corruption, computed on first use.
    pub fn image(&self) -> Result<&Image> {
        if let Some(img) = self.image.get() {
            return Ok(img);
        }
        let img = simulate_exposure(&self.scene.image, self.exposure_ms, self.reference_ms)?;
        Ok(self.image.get_or_init(|| img))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Missed,
    /// Detected, but the pipeline produced no usable pose.
    Invalid,
    Grasp(GraspPrompt),
}

/// Scene to grasp prediction. Implementations must draw randomness only
/// from the stream they are handed.
pub trait GraspPipeline: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, input: &PipelineInput<'_>, rng: &mut RandomStream) -> Result<Prediction>;
}

/// Oracle detector followed by box-to-prompt geometry.
#[derive(Debug, Clone)]
pub struct OraclePipeline {
    pub noise: DetectorNoise,
    pub prompt: PromptOptions,
}

impl GraspPipeline for OraclePipeline {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, input: &PipelineInput<'_>, rng: &mut RandomStream) -> Result<Prediction> {
        match oracle_detector(input.scene, input.exposure_ms, &self.noise, rng) {
            None => Ok(Prediction::Missed),
            Some(b) => Ok(Prediction::Grasp(box_to_prompt_with(
                &b,
                &input.scene.depth,
                &input.scene.intrinsics,
                &self.prompt,
            )?)),
        }
    }
}

/// Oracle detection conditions the encoder; the last row of a sampled
/// action trajectory (position, quaternion xyzw, gripper) is the grasp.
pub struct PolicyPipeline {
    pub detector: OraclePipeline,
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
    pub schedule: NoiseSchedule,
    pub sample: SampleOptions,
}

impl PolicyPipeline {
    pub fn new(detector: OraclePipeline, encoder: EncoderParams, denoiser: DenoiserParams) -> Result<Self> {
        if denoiser.config.cond_len != encoder.config.conditioning_len() {
            return Err(Error::shape(format!(
                "denoiser expects conditioning of length {}, encoder produces {}",
                denoiser.config.cond_len,
                encoder.config.conditioning_len()
            )));
        }
        if denoiser.config.dims < 7 {
            return Err(Error::shape("policy actions need at least 7 dims (position and quaternion)"));
        }
        let schedule = denoiser.config.schedule()?;
        Ok(Self {
            detector,
            encoder,
            denoiser,
            schedule,
            sample: SampleOptions::default(),
        })
    }
}

impl GraspPipeline for PolicyPipeline {
    fn name(&self) -> &str {
        "policy"
    }

    fn predict(&self, input: &PipelineInput<'_>, rng: &mut RandomStream) -> Result<Prediction> {
        let detected = match self.detector.predict(input, rng)? {
            Prediction::Grasp(p) => p,
            other => return Ok(other),
        };
        let cfg = self.encoder.config;
        let home = RobotState {
            ee_position: [0.0; 3],
            ee_orientation: Quaternion::IDENTITY,
            gripper_status: 1.0,
        };
        let task = TaskPromptEmbedding {
            prompt_id: String::new(),
            vector: vec![0.0; cfg.task_len],
        };
        let visual = pooled_luminance(input.image()?, cfg.visual_len)?;
        let features = assemble_features(&cfg, &visual, &home, Some(&detected), &task)?;
        let token = project_token(&self.encoder, &features)?;
        let cond = attend_window(&self.encoder, [&token, &token])?;
        let actions = sample_actions_with(&self.denoiser, &cond, &self.schedule, rng, self.sample)?;
        let last = actions.row(actions.horizon() - 1);
        let pose = Quaternion::from_xyzw([last[3], last[4], last[5], last[6]])
            .and_then(|q| GraspPrompt::new([last[0], last[1], last[2]], q, detected.gripper_width, detected.confidence));
        Ok(pose.map_or(Prediction::Invalid, Prediction::Grasp))
    }
}

type PipelineFactory = dyn Fn(&SweepConfig) -> Result<Arc<dyn GraspPipeline>> + Send + Sync;

/// Named pipeline constructors.
pub struct PipelineRegistry {
    entries: BTreeMap<String, Box<PipelineFactory>>,
}

impl PipelineRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// `oracle` and `policy` (the latter reads `SweepConfig::policy`).
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("oracle", |cfg| {
            Ok(Arc::new(OraclePipeline {
                noise: cfg.detector.clone(),
                prompt: cfg.prompt.clone(),
            }))
        });
        r.register("policy", |cfg| {
            let spec = cfg
                .policy
                .as_ref()
                .ok_or_else(|| Error::validation(None, "policy", "the policy pipeline needs encoder and denoiser files"))?;
            let encoder = EncoderParams::from_tensor_file(&TensorFile::load(&spec.encoder)?)?;
            let denoiser = DenoiserParams::from_tensor_file(&TensorFile::load(&spec.denoiser)?)?;
            let detector = OraclePipeline {
                noise: cfg.detector.clone(),
                prompt: cfg.prompt.clone(),
            };
            let mut p = PolicyPipeline::new(detector, encoder, denoiser)?;
            p.sample.clip_sample = spec.clip_sample;
            Ok(Arc::new(p))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&SweepConfig) -> Result<Arc<dyn GraspPipeline>> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(factory));
    }

    pub fn build(&self, cfg: &SweepConfig) -> Result<Arc<dyn GraspPipeline>> {
        let factory = self.entries.get(&cfg.pipeline).ok_or_else(|| {
            Error::usage(format!(
                "unknown pipeline `{}` (known: {})",
                cfg.pipeline,
                self.names().join(", ")
            ))
        })?;
        factory(cfg)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelResult {
    pub exposure_ms: f64,
    pub tsr: f64,
    pub gsr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub levels: Vec<LevelResult>,
    pub avg_tsr: f64,
    pub avg_gsr: f64,
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub report: SweepReport,
    /// Ordered by level, then trial.
    pub outcomes: Vec<TrialOutcome>,
}

/// Groups outcomes by exposure level, in order of first appearance.
pub fn report_from_outcomes(outcomes: &[TrialOutcome]) -> Result<SweepReport> {
    let mut groups: Vec<(f64, Vec<TrialOutcome>)> = Vec::new();
    for o in outcomes {
        match groups.iter_mut().find(|(e, _)| e.to_bits() == o.exposure_ms.to_bits()) {
            Some((_, g)) => g.push(*o),
            None => groups.push((o.exposure_ms, vec![*o])),
        }
    }
    if groups.is_empty() {
        return Err(Error::usage("report over an empty outcome log"));
    }
    let levels = groups
        .iter()
        .map(|(e, g)| {
            Ok(LevelResult {
                exposure_ms: *e,
                tsr: compute_tsr(g)?,
                gsr: compute_gsr(g)?,
                n: g.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = levels.len() as f64;
    Ok(SweepReport {
        avg_tsr: levels.iter().map(|l| l.tsr).sum::<f64>() / k,
        avg_gsr: levels.iter().map(|l| l.gsr).sum::<f64>() / k,
        levels,
    })
}

/// Runs every trial at every level with the pipeline named in `cfg`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepRun> {
    run_sweep_with(cfg, PipelineRegistry::builtin().build(cfg)?.as_ref())
}

/// Trial `i` draws its scene from `scene/trial-i`, its pipeline randomness
/// from `detect/trial-i` and its completion roll from `complete/trial-i`.
/// The same streams are replayed at every exposure level, so levels differ
/// only through the exposure itself.
pub fn run_sweep_with(cfg: &SweepConfig, pipeline: &dyn GraspPipeline) -> Result<SweepRun> {
    cfg.validate()?;
    let root = RandomStream::new(cfg.scene_seed);
    let (scenes, detects, completes) = (root.fork("scene")?, root.fork("detect")?, root.fork("complete")?);
    let per_trial: Vec<Vec<TrialOutcome>> = (0..cfg.trials_per_level)
        .into_par_iter()
        .map(|trial| {
            let scene = SyntheticScene::generate(&cfg.scene, &mut scenes.fork_indexed("trial", trial))
                .map_err(|e| wrap(e, cfg.exposure_levels[0], trial))?;
            let completion_roll = completes.fork_indexed("trial", trial).uniform();
            cfg.exposure_levels
                .iter()
                .map(|&level| {
                    run_trial(cfg, pipeline, &scene, level, trial, &detects, completion_roll)
                        .map_err(|e| wrap(e, level, trial))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<TrialOutcome> = (0..cfg.exposure_levels.len())
        .flat_map(|l| per_trial.iter().map(move |row| row[l]))
        .collect();
    Ok(SweepRun {
        report: report_from_outcomes(&outcomes)?,
        outcomes,
    })
}

fn wrap(e: Error, level_ms: f64, trial: usize) -> Error {
    Error::Trial {
        level_ms,
        trial,
        source: Box::new(e),
    }
}

fn run_trial(
    cfg: &SweepConfig,
    pipeline: &dyn GraspPipeline,
    scene: &SyntheticScene,
    level: f64,
    trial: usize,
    detects: &RandomStream,
    completion_roll: f64,
) -> Result<TrialOutcome> {
    let input = PipelineInput::new(scene, level, cfg.reference_ms);
    let mut rng = detects.fork_indexed("trial", trial);
    let mut out = TrialOutcome {
        exposure_ms: level,
        trial,
        detected: false,
        grasp_success: false,
        task_success: false,
        position_error_m: None,
        angle_error_rad: None,
        width_error_m: None,
    };
    match pipeline.predict(&input, &mut rng)? {
        Prediction::Missed => {}
        Prediction::Invalid => out.detected = true,
        Prediction::Grasp(pred) => {
            let truth = &scene.object_pose;
            let width_err = (pred.gripper_width - truth.gripper_width).abs();
            out.detected = true;
            out.grasp_success = judge_grasp(&pred, truth, &cfg.tolerance);
            out.task_success = out.grasp_success && width_err <= cfg.tolerance.width_m && completion_roll < cfg.completion_rate;
            out.position_error_m = Some(position_error(&pred, truth));
            out.angle_error_rad = Some(pred.orientation.geodesic_angle(&truth.orientation));
            out.width_error_m = Some(width_err);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::usage(format!("unknown report format `{other}` (csv or json)"))),
        }
    }
}

fn percent(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// `metric,<levels...>,AVG` with TSR and GSR rows in percent.
pub fn render_csv(report: &SweepReport) -> String {
    let mut out = String::from("metric");
    for l in &report.levels {
        write!(out, ",{}", l.exposure_ms).expect("write to String");
    }
    out.push_str(",AVG\n");
    for (name, pick, avg) in [
        ("TSR", (|l: &LevelResult| l.tsr) as fn(&LevelResult) -> f64, report.avg_tsr),
        ("GSR", |l: &LevelResult| l.gsr, report.avg_gsr),
    ] {
        out.push_str(name);
        for l in &report.levels {
            write!(out, ",{}", percent(pick(l))).expect("write to String");
        }
        writeln!(out, ",{}", percent(avg)).expect("write to String");
    }
    out
}

pub fn render_json(report: &SweepReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_report(report: &SweepReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_outcomes_jsonl(outcomes: &[TrialOutcome], mut out: impl Write) -> Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut out, o)?;
        out.write_all(b"\n").map_err(|e| Error::io("<outcome log>", e))?;
    }
    Ok(())
}

pub fn read_outcomes_jsonl(text: &str) -> Result<Vec<TrialOutcome>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let o: TrialOutcome = serde_json::from_str(l)?;
            if o.task_success && !o.grasp_success {
                return Err(Error::validation(
                    None,
                    "task_success",
                    format!("line {}: task success without grasp success", i + 1),
                ));
            }
            Ok(o)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(pos: [f64; 3], q: Quaternion) -> GraspPrompt {
        GraspPrompt::new(pos, q, 0.05, 1.0).unwrap()
    }

    fn outcome(grasp: bool, task: bool) -> TrialOutcome {
        TrialOutcome {
            exposure_ms: 100.0,
            trial: 0,
            detected: grasp,
            grasp_success: grasp,
            task_success: task,
            position_error_m: None,
            angle_error_rad: None,
            width_error_m: None,
        }
    }

    #[test]
    fn judge_identity_and_thresholds() {
        let tol = Tolerance::default();
        let truth = prompt([0.0, 0.0, 0.5], Quaternion::IDENTITY);
        assert!(judge_grasp(&truth, &truth, &tol));

        let off = prompt([0.02, 0.0, 0.5], Quaternion::IDENTITY);
        assert!(judge_grasp(&off, &truth, &tol), "boundary is inclusive");
        let beyond = prompt([0.0201, 0.0, 0.5], Quaternion::IDENTITY);
        assert!(!judge_grasp(&beyond, &truth, &tol));

        let h = std::f64::consts::FRAC_PI_4;
        let turned = prompt([0.0, 0.0, 0.5], Quaternion::from_xyzw([0.0, 0.0, h.sin(), h.cos()]).unwrap());
        let tight = Tolerance { angle_rad: 0.1, ..tol };
        assert!(!judge_grasp(&turned, &truth, &tight));
    }

    #[test]
    fn rates() {
        let mut v: Vec<TrialOutcome> = (0..100).map(|i| outcome(i < 81, i < 70)).collect();
        assert_eq!(compute_gsr(&v).unwrap(), 0.81);
        assert_eq!(compute_tsr(&v).unwrap(), 0.70);
        v.iter_mut().for_each(|o| *o = outcome(false, false));
        assert_eq!(compute_gsr(&v).unwrap(), 0.0);
        assert!(compute_gsr(&[]).unwrap_err().is_usage());
        assert!(compute_tsr(&[]).unwrap_err().is_usage());
    }

    #[test]
    fn percent_rounds_to_one_decimal() {
        assert_eq!(percent(0.815), "81.5");
        assert_eq!(percent(1.0), "100.0");
        assert_eq!(percent(0.0), "0.0");
    }

    #[test]
    fn perfect_pipeline_scores_one() {
        let cfg = SweepConfig {
            trials_per_level: 20,
            detector: DetectorNoise::perfect(),
            ..SweepConfig::default()
        };
        let run = run_sweep(&cfg).unwrap();
        for l in &run.report.levels {
            assert_eq!((l.tsr, l.gsr, l.n), (1.0, 1.0, 20));
        }
        assert_eq!(run.outcomes.len(), 200);
    }

    #[test]
    fn csv_header_follows_levels() {
        let run = run_sweep(&SweepConfig {
            trials_per_level: 3,
            ..SweepConfig::default()
        })
        .unwrap();
        let csv = render_csv(&run.report);
        assert_eq!(csv.lines().next().unwrap(), "metric,10,20,40,60,80,100,120,140,160,170,AVG");
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn unknown_pipeline_is_usage_error() {
        let cfg = SweepConfig {
            pipeline: "yolo".into(),
            ..SweepConfig::default()
        };
        assert!(matches!(run_sweep(&cfg), Err(e) if e.is_usage()));
        let cfg = SweepConfig {
            pipeline: "policy".into(),
            ..SweepConfig::default()
        };
        assert!(matches!(run_sweep(&cfg), Err(Error::Validation { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = [
            SweepConfig {
                exposure_levels: vec![],
                ..SweepConfig::default()
            },
            SweepConfig {
                exposure_levels: vec![10.0, -1.0],
                ..SweepConfig::default()
            },
            SweepConfig {
                trials_per_level: 0,
                ..SweepConfig::default()
            },
            SweepConfig {
                tolerance: Tolerance {
                    angle_rad: 0.0,
                    ..Tolerance::default()
                },
                ..SweepConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(SweepConfig::from_json(r#"{"trials_per_level": 5, "bogus": 1}"#).is_err());
        assert_eq!(SweepConfig::from_json(r#"{"trials_per_level": 5}"#).unwrap().trials_per_level, 5);
    }

    struct Failing;

    impl GraspPipeline for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn predict(&self, input: &PipelineInput<'_>, _: &mut RandomStream) -> Result<Prediction> {
            if input.exposure_ms == 40.0 {
                Err(Error::Geometry("boom".into()))
            } else {
                Ok(Prediction::Missed)
            }
        }
    }

    #[test]
    fn pipeline_errors_carry_position() {
        let cfg = SweepConfig {
            trials_per_level: 2,
            ..SweepConfig::default()
        };
        let err = run_sweep_with(&cfg, &Failing).unwrap_err();
        assert!(matches!(err, Error::Trial { level_ms, .. } if level_ms == 40.0), "{err}");
    }

    #[test]
    fn outcome_log_round_trip_and_recount() {
        let run = run_sweep(&SweepConfig {
            trials_per_level: 10,
            ..SweepConfig::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_outcomes_jsonl(&run.outcomes, &mut buf).unwrap();
        let back = read_outcomes_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, run.outcomes);
        assert_eq!(report_from_outcomes(&back).unwrap(), run.report);
    }

    #[test]
    fn log_rejects_task_without_grasp() {
        let line = serde_json::to_string(&outcome(false, true)).unwrap();
        assert!(read_outcomes_jsonl(&line).is_err());
    }
}
