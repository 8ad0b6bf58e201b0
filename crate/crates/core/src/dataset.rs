//! Demonstration manifests, batch conversion of annotated grasp boxes into
//! grasp prompts, and synthetic scenes with an oracle detector for the
//! exposure benchmark.
//!
//! # Manifest schema (`schema_version` 1)
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "episode_id": "pick_big_000",
//!   "intrinsics": {"fx": 600, "fy": 600, "cx": 320, "cy": 240},
//!   "depth_scale": 1.0,
//!   "frames": [{
//!     "rgb_path": "rgb/000.ppm",
//!     "depth_path": "depth/000.pfm",
//!     "state": {"ee_position": [0.1, 0.0, 0.4],
//!               "ee_orientation": [0, 0, 0, 1],
//!               "gripper_status": 1.0},
//!     "grasp_box": {"x": 320, "y": 240, "w": 60, "h": 20, "theta": 0.0, "confidence": 0.9},
//!     "task_prompt": "pick_big"
//!   }]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. `grasp_box` may be
//! `null` or omitted; its `confidence` defaults to 1. Depth values are
//! multiplied by `depth_scale` to get meters.
//!
//! A dataset index lists episodes:
//! `{"schema_version": 1, "episodes": ["ep0/manifest.json", ...]}`.

use std::f64::consts::FRAC_PI_3;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_to_prompt, box_to_prompt_with, GraspBox, GraspPrompt, Intrinsics, PromptOptions, Quaternion};
use crate::io::{load_depth, ppm_dimensions};
use crate::raster::{DepthMap, Image};
use crate::rng::RandomStream;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub ee_position: [f64; 3],
    pub ee_orientation: Quaternion,
    /// 0 closed, 1 open.
    pub gripper_status: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    pub state: RobotState,
    pub grasp_box: Option<GraspBox>,
    pub task_prompt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub frames: Vec<Frame>,
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestWire {
    schema_version: u32,
    episode_id: String,
    intrinsics: Intrinsics,
    depth_scale: f64,
    frames: Vec<FrameWire>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameWire {
    rgb_path: String,
    depth_path: String,
    state: StateWire,
    #[serde(default)]
    grasp_box: Option<BoxWire>,
    task_prompt: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateWire {
    ee_position: [f64; 3],
    ee_orientation: [f64; 4],
    gripper_status: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxWire {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    theta: f64,
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

const UNIT_QUATERNION_TOL: f64 = 1e-6;

fn schema_error(e: serde_json::Error) -> Error {
    Error::validation(None, "schema", e.to_string())
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<EpisodeManifest> {
    let wire: ManifestWire = serde_json::from_str(text).map_err(schema_error)?;
    if wire.schema_version != SCHEMA_VERSION {
        return Err(Error::validation(
            None,
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", wire.schema_version),
        ));
    }
    if wire.episode_id.is_empty() {
        return Err(Error::validation(None, "episode_id", "must not be empty"));
    }
    wire.intrinsics
        .validate()
        .map_err(|e| Error::validation(None, "intrinsics", e.to_string()))?;
    if !(wire.depth_scale.is_finite() && wire.depth_scale > 0.0) {
        return Err(Error::validation(
            None,
            "depth_scale",
            format!("must be positive, got {}", wire.depth_scale),
        ));
    }
    if wire.frames.is_empty() {
        return Err(Error::validation(None, "frames", "must not be empty"));
    }
    let frames = wire
        .frames
        .into_iter()
        .enumerate()
        .map(|(i, f)| validate_frame(i, f, base_dir))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeManifest {
        episode_id: wire.episode_id,
        frames,
        intrinsics: wire.intrinsics,
        depth_scale: wire.depth_scale,
    })
}

fn validate_frame(i: usize, f: FrameWire, base: &Path) -> Result<Frame> {
    let resolve = |field: &str, rel: &str| -> Result<PathBuf> {
        let p = base.join(rel);
        if !p.is_file() {
            return Err(Error::validation(Some(i), field, format!("file {} does not exist", p.display())));
        }
        Ok(p)
    };
    let rgb_path = resolve("rgb_path", &f.rgb_path)?;
    let depth_path = resolve("depth_path", &f.depth_path)?;
    let s = f.state;
    if !s.ee_position.iter().all(|v| v.is_finite()) {
        return Err(Error::validation(Some(i), "state.ee_position", "must be finite"));
    }
    let ee_orientation = Quaternion::from_unit(s.ee_orientation, UNIT_QUATERNION_TOL)
        .map_err(|e| Error::validation(Some(i), "state.ee_orientation", e.to_string()))?;
    if !(0.0..=1.0).contains(&s.gripper_status) {
        return Err(Error::validation(
            Some(i),
            "state.gripper_status",
            format!("{} outside [0, 1]", s.gripper_status),
        ));
    }
    let grasp_box = f
        .grasp_box
        .map(|b| GraspBox::new(b.x, b.y, b.w, b.h, b.theta, b.confidence))
        .transpose()
        .map_err(|e| Error::validation(Some(i), "grasp_box", e.to_string()))?;
    Ok(Frame {
        rgb_path,
        depth_path,
        state: RobotState {
            ee_position: s.ee_position,
            ee_orientation,
            gripper_status: s.gripper_status,
        },
        grasp_box,
        task_prompt: f.task_prompt,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<EpisodeManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub schema_version: u32,
    pub episodes: Vec<String>,
}

/// Loads every manifest listed in a dataset index.
pub fn load_index(path: impl AsRef<Path>) -> Result<Vec<EpisodeManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text).map_err(schema_error)?;
    if index.schema_version != SCHEMA_VERSION {
        return Err(Error::validation(None, "schema_version", format!("unsupported version {}", index.schema_version)));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    index.episodes.iter().map(|rel| load_manifest(base.join(rel))).collect()
}

fn annotate(frame: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Frame {
        frame,
        source: Box::new(e),
    }
}

/// One prompt per annotated frame, in frame order. Either every annotated
/// frame converts or an error naming the first failing frame is returned.
pub fn convert_episode(manifest: &EpisodeManifest) -> Result<Vec<GraspPrompt>> {
    convert_episode_with(manifest, &PromptOptions::default())
}

pub fn convert_episode_with(manifest: &EpisodeManifest, opts: &PromptOptions) -> Result<Vec<GraspPrompt>> {
    let mut prompts = Vec::new();
    for (i, frame) in manifest.frames.iter().enumerate() {
        let Some(b) = &frame.grasp_box else { continue };
        let depth = load_depth(&frame.depth_path)
            .and_then(|d| d.scaled(manifest.depth_scale))
            .map_err(annotate(i))?;
        let rgb = fs::read(&frame.rgb_path).map_err(|e| annotate(i)(Error::io(&frame.rgb_path, e)))?;
        let (w, h) = ppm_dimensions(&rgb).map_err(annotate(i))?;
        if (w, h) != (depth.width(), depth.height()) {
            return Err(annotate(i)(Error::shape(format!(
                "depth map is {}x{} but image is {w}x{h}",
                depth.width(),
                depth.height()
            ))));
        }
        prompts.push(box_to_prompt_with(b, &depth, &manifest.intrinsics, opts).map_err(annotate(i))?);
    }
    Ok(prompts)
}

/// Converts several episodes in parallel; output follows input order.
pub fn convert_episodes(manifests: &[EpisodeManifest], opts: &PromptOptions) -> Result<Vec<Vec<GraspPrompt>>> {
    manifests
        .par_iter()
        .map(|m| {
            convert_episode_with(m, opts).map_err(|e| Error::Episode {
                episode: m.episode_id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn write_prompts_jsonl(prompts: &[GraspPrompt], mut out: impl Write) -> std::io::Result<()> {
    for p in prompts {
        writeln!(out, "{}", p.to_json())?;
    }
    Ok(())
}

pub fn read_prompts_jsonl(text: &str) -> Result<Vec<GraspPrompt>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(GraspPrompt::from_json)
        .collect()
}

/// Parameters for synthetic benchmark scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// Object top depth range in meters.
    pub depth_range: [f64; 2],
    /// How far the table lies behind the object top.
    pub table_offset: f64,
    /// Extra object footprint around the grasp box, in pixels per side.
    pub footprint_margin: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            intrinsics: Intrinsics {
                fx: 120.0,
                fy: 120.0,
                cx: 64.0,
                cy: 48.0,
            },
            depth_range: [0.45, 0.7],
            table_offset: 0.15,
            footprint_margin: 6.0,
        }
    }
}

/// A single object on a table with a known grasp.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub object_pose: GraspPrompt,
    pub nominal_box: GraspBox,
    pub image: Image,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
}

impl SyntheticScene {
    pub fn generate(spec: &SceneSpec, rng: &mut RandomStream) -> Result<Self> {
        let intr = spec.intrinsics;
        let z = rng.uniform_range(spec.depth_range[0], spec.depth_range[1]);
        let theta = rng.uniform_range(-FRAC_PI_3, FRAC_PI_3);
        let bw = rng.uniform_range(24.0, 40.0);
        let bh = rng.uniform_range(8.0, 16.0);
        let x = intr.cx + rng.uniform_range(-0.2, 0.2) * spec.width as f64;
        let y = intr.cy + rng.uniform_range(-0.2, 0.2) * spec.height as f64;
        let nominal_box = GraspBox::new(x, y, bw, bh, theta, 1.0)?;
        let object_rgb = [rng.uniform_range(0.2, 0.9), rng.uniform_range(0.2, 0.9), rng.uniform_range(0.2, 0.9)];

        let (half_u, half_v) = (bw / 2.0 + spec.footprint_margin, bh / 2.0 + spec.footprint_margin);
        let (s, c) = theta.sin_cos();
        let (w, h) = (spec.width, spec.height);
        let mut depth = Vec::with_capacity(w * h);
        let mut pixels = Vec::with_capacity(w * h * 3);
        let z_obj = z as f32;
        let z_table = (z + spec.table_offset) as f32;
        for j in 0..h {
            for i in 0..w {
                let (dx, dy) = (i as f64 - x, j as f64 - y);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                if u.abs() <= half_u && v.abs() <= half_v {
                    depth.push(z_obj);
                    // Shade across the object so blur and contrast have something to act on.
                    let shade = 0.85 + 0.15 * (u / half_u);
                    pixels.extend(object_rgb.map(|ch| (ch * shade) as f32));
                } else {
                    depth.push(z_table);
                    let g = 0.35 + 0.3 * (i as f64 / w as f64);
                    pixels.extend([g as f32, g as f32, (g * 0.9) as f32]);
                }
            }
        }
        let depth = DepthMap::new(w, h, depth)?;
        let image = Image::new(w, h, pixels)?;
        let object_pose = box_to_prompt(&nominal_box, &depth, &intr)?;
        Ok(Self {
            object_pose,
            nominal_box,
            image,
            depth,
            intrinsics: intr,
        })
    }
}

/// Detection miss probability, linear in `|ln(E / E0)|` and clamped to
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissCurve {
    pub at_reference: f64,
    pub per_log_unit: f64,
}

impl MissCurve {
    /// The curve through `(reference_ms, at_reference)` and
    /// `(anchor_ms, anchor_rate)`.
    pub fn through(reference_ms: f64, at_reference: f64, anchor_ms: f64, anchor_rate: f64) -> Self {
        let dist = (anchor_ms / reference_ms).ln().abs();
        Self {
            at_reference,
            per_log_unit: (anchor_rate - at_reference) / dist,
        }
    }
}

/// Oracle detector noise model. Every spread grows linearly with the log
/// distance from the reference exposure, so the model is symmetric on the
/// log-exposure axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoise {
    pub reference_ms: f64,
    /// Center noise at the reference exposure, pixels.
    pub sigma_px: f64,
    pub sigma_px_per_log: f64,
    /// Angle noise at the reference exposure, radians.
    pub sigma_theta: f64,
    pub sigma_theta_per_log: f64,
    pub miss: MissCurve,
    /// Added to the miss rate everywhere; stands in for clutter.
    pub clutter_miss: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            reference_ms: 100.0,
            sigma_px: 0.5,
            sigma_px_per_log: 1.5,
            sigma_theta: 0.02,
            sigma_theta_per_log: 0.05,
            miss: MissCurve {
                at_reference: 0.01,
                per_log_unit: 0.15,
            },
            clutter_miss: 0.0,
        }
    }
}

impl DetectorNoise {
    /// A detector with no noise and no misses.
    pub fn perfect() -> Self {
        Self {
            sigma_px: 0.0,
            sigma_px_per_log: 0.0,
            sigma_theta: 0.0,
            sigma_theta_per_log: 0.0,
            miss: MissCurve {
                at_reference: 0.0,
                per_log_unit: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("reference_ms", self.reference_ms),
            ("sigma_px", self.sigma_px),
            ("sigma_px_per_log", self.sigma_px_per_log),
            ("sigma_theta", self.sigma_theta),
            ("sigma_theta_per_log", self.sigma_theta_per_log),
            ("miss.at_reference", self.miss.at_reference),
            ("clutter_miss", self.clutter_miss),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(None, name, format!("must be finite and non-negative, got {v}")));
            }
        }
        if self.reference_ms <= 0.0 {
            return Err(Error::validation(None, "reference_ms", "must be positive"));
        }
        if !self.miss.per_log_unit.is_finite() {
            return Err(Error::validation(None, "miss.per_log_unit", "must be finite"));
        }
        Ok(())
    }

    pub fn log_distance(&self, exposure_ms: f64) -> f64 {
        (exposure_ms.ln() - self.reference_ms.ln()).abs()
    }

    pub fn sigma_px_at(&self, exposure_ms: f64) -> f64 {
        self.sigma_px + self.sigma_px_per_log * self.log_distance(exposure_ms)
    }

    pub fn sigma_theta_at(&self, exposure_ms: f64) -> f64 {
        self.sigma_theta + self.sigma_theta_per_log * self.log_distance(exposure_ms)
    }

    pub fn miss_rate_at(&self, exposure_ms: f64) -> f64 {
        let d = self.log_distance(exposure_ms);
        (self.miss.at_reference + self.miss.per_log_unit * d + self.clutter_miss).clamp(0.0, 1.0)
    }
}

/// Stand-in for the learned grasp detector: perturbs the scene's nominal box
/// according to `noise` at `exposure_ms`, or misses.
///
/// Exactly four values are drawn per call (miss uniform, then x, y and
/// angle normals) whether or not the detection is missed, so the same stream
/// at two exposures yields coupled outcomes.
pub fn oracle_detector(
    scene: &SyntheticScene,
    exposure_ms: f64,
    noise: &DetectorNoise,
    rng: &mut RandomStream,
) -> Option<GraspBox> {
    let u = rng.uniform();
    let (zx, zy, zt) = (rng.normal(), rng.normal(), rng.normal());
    let miss = noise.miss_rate_at(exposure_ms);
    if u < miss {
        return None;
    }
    let b = scene.nominal_box;
    let s_px = noise.sigma_px_at(exposure_ms);
    let s_th = noise.sigma_theta_at(exposure_ms);
    let max_x = (scene.depth.width() - 1) as f64;
    let max_y = (scene.depth.height() - 1) as f64;
    GraspBox::new(
        (b.x + s_px * zx).clamp(0.0, max_x),
        (b.y + s_px * zy).clamp(0.0, max_y),
        b.w,
        b.h,
        b.theta + s_th * zt,
        b.confidence * (1.0 - miss),
    )
    .ok()
}
