//! Observation encoder: per-timestep feature fusion, a linear token
//! projection, and single-head self-attention over a two-step window.
//!
//! Feature layout (length `F = visual_len + 8 + 10 + task_len`):
//!
//! | block        | contents                                                     |
//! |--------------|--------------------------------------------------------------|
//! | visual       | opaque feature vector                                        |
//! | robot state  | ee position (3), ee quaternion xyzw (4), gripper status (1)   |
//! | grasp prompt | position (3), quaternion (4), width (1), confidence (1), flag |
//! | task         | task prompt embedding                                        |
//!
//! The flag is 1 when a grasp prompt is present and 0 (with the rest of the
//! block zeroed) when absent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::RobotState;
use crate::error::{Error, Result};
use crate::geometry::GraspPrompt;
use crate::raster::Image;
use crate::rng::RandomStream;
use crate::tensor::{dot, Matrix, TensorFile};

pub const STATE_LEN: usize = 8;
pub const PROMPT_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub visual_len: usize,
    pub task_len: usize,
    pub token_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            visual_len: 32,
            task_len: 16,
            token_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn feature_len(&self) -> usize {
        self.visual_len + STATE_LEN + PROMPT_LEN + self.task_len
    }

    /// Length of the conditioning vector produced by [`attend_window`].
    pub fn conditioning_len(&self) -> usize {
        2 * self.token_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPromptEmbedding {
    pub prompt_id: String,
    pub vector: Vec<f64>,
}

/// Fixed vocabulary of task prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVocabulary {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl TaskVocabulary {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn register(&mut self, prompt_id: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(format!(
                "task embedding `{prompt_id}` has length {}, vocabulary uses {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(prompt_id.to_string(), vector);
        Ok(())
    }

    /// Registers `prompt_id` with a vector drawn uniformly from `[-1, 1]`,
    /// keyed by `(seed, prompt_id)`.
    pub fn register_seeded(&mut self, prompt_id: &str, seed: u64) -> Result<()> {
        let mut rng = RandomStream::new(seed).fork("task-prompt")?.fork(prompt_id)?;
        let v = (0..self.dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        self.register(prompt_id, v)
    }

    pub fn lookup(&self, prompt_id: &str) -> Result<TaskPromptEmbedding> {
        let vector = self
            .entries
            .get(prompt_id)
            .ok_or_else(|| Error::usage(format!("task prompt `{prompt_id}` is not registered")))?;
        Ok(TaskPromptEmbedding {
            prompt_id: prompt_id.to_string(),
            vector: vector.clone(),
        })
    }
}

/// Stand-in visual features: mean luma (Rec. 601 weights) of `len`
/// contiguous, near-equal runs of pixels in row-major order.
pub fn pooled_luminance(image: &Image, len: usize) -> Result<Vec<f64>> {
    let n = image.width() * image.height();
    if len == 0 || len > n {
        return Err(Error::usage(format!("cannot pool {n} pixels into {len} features")));
    }
    let luma: Vec<f64> = image
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect();
    Ok((0..len)
        .map(|k| {
            let run = &luma[k * n / len..(k + 1) * n / len];
            run.iter().sum::<f64>() / run.len() as f64
        })
        .collect())
}

pub fn assemble_features(
    cfg: &EncoderConfig,
    visual: &[f64],
    state: &RobotState,
    prompt: Option<&GraspPrompt>,
    task: &TaskPromptEmbedding,
) -> Result<Vec<f64>> {
    if visual.len() != cfg.visual_len {
        return Err(Error::shape(format!(
            "visual features have length {}, expected {}",
            visual.len(),
            cfg.visual_len
        )));
    }
    if task.vector.len() != cfg.task_len {
        return Err(Error::shape(format!(
            "task embedding has length {}, expected {}",
            task.vector.len(),
            cfg.task_len
        )));
    }
    let mut f = Vec::with_capacity(cfg.feature_len());
    f.extend_from_slice(visual);
    f.extend_from_slice(&state.ee_position);
    f.extend_from_slice(&state.ee_orientation.to_array());
    f.push(state.gripper_status);
    match prompt {
        Some(p) => {
            f.extend_from_slice(&p.position);
            f.extend_from_slice(&p.orientation.to_array());
            f.push(p.gripper_width);
            f.push(p.confidence);
            f.push(1.0);
        }
        None => f.extend_from_slice(&[0.0; PROMPT_LEN]),
    }
    f.extend_from_slice(&task.vector);
    debug_assert_eq!(f.len(), cfg.feature_len());
    Ok(f)
}

/// Projection and attention weights. The same struct doubles as the
/// gradient container in [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// `D x F`.
    pub projection: Matrix,
    pub bias: Vec<f64>,
    /// Query, key, value and output maps, each `D x D`.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Self {
        let (d, f) = (config.token_dim, config.feature_len());
        Self {
            config,
            projection: Matrix::zeros(d, f),
            bias: vec![0.0; d],
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
        }
    }

    /// Uniform initialization: `[-1/sqrt(F), 1/sqrt(F)]` for the projection
    /// and bias, `[-1/sqrt(D), 1/sqrt(D)]` for the attention maps.
    pub fn init(config: EncoderConfig, rng: &RandomStream) -> Self {
        let (d, f) = (config.token_dim, config.feature_len());
        let draw = |label: &str, rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut s = rng.fork(label).expect("static label");
            Matrix::from_fn(rows, cols, |_, _| s.uniform_range(-bound, bound))
        };
        let projection = draw("projection", d, f, f);
        let bias = draw("bias", 1, d, f).data().to_vec();
        Self {
            config,
            projection,
            bias,
            wq: draw("wq", d, d, d),
            wk: draw("wk", d, d, d),
            wv: draw("wv", d, d, d),
            wo: draw("wo", d, d, d),
        }
    }

    pub fn num_params(&self) -> usize {
        self.flatten().len()
    }

    /// Parameters in the order projection, bias, wq, wk, wv, wo.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.projection.data());
        v.extend_from_slice(&self.bias);
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            v.extend_from_slice(m.data());
        }
        v
    }

    pub fn unflatten(config: EncoderConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(config);
        if flat.len() != p.num_params() {
            return Err(Error::shape(format!(
                "encoder expects {} parameters, got {}",
                p.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(p.projection.data_mut());
        take(&mut p.bias);
        take(p.wq.data_mut());
        take(p.wk.data_mut());
        take(p.wv.data_mut());
        take(p.wo.data_mut());
        Ok(p)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let (d, f) = (self.config.token_dim, self.config.feature_len());
        let mut tf = TensorFile::new(
            "encoder",
            serde_json::json!({
                "D": d,
                "F": f,
                "P": self.config.task_len,
                "visual_len": self.config.visual_len,
            }),
        );
        tf.push("projection", &[d, f], self.projection.data());
        tf.push("bias", &[d], &self.bias);
        tf.push("wq", &[d, d], self.wq.data());
        tf.push("wk", &[d, d], self.wk.data());
        tf.push("wv", &[d, d], self.wv.data());
        tf.push("wo", &[d, d], self.wo.data());
        tf
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Self> {
        if tf.kind != "encoder" {
            return Err(Error::shape(format!("expected encoder tensors, found `{}`", tf.kind)));
        }
        let field = |k: &str| {
            tf.config
                .get(k)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::shape(format!("encoder config lacks `{k}`")))
        };
        let config = EncoderConfig {
            visual_len: field("visual_len")?,
            task_len: field("P")?,
            token_dim: field("D")?,
        };
        let (d, f) = (config.token_dim, config.feature_len());
        if field("F")? != f {
            return Err(Error::shape("encoder config F disagrees with its parts"));
        }
        let mut flat = Vec::new();
        flat.extend_from_slice(tf.get("projection", &[d, f])?);
        flat.extend_from_slice(tf.get("bias", &[d])?);
        for name in ["wq", "wk", "wv", "wo"] {
            flat.extend_from_slice(tf.get(name, &[d, d])?);
        }
        Self::unflatten(config, &flat)
    }

    fn check_token(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.config.token_dim {
            return Err(Error::shape(format!(
                "token has length {}, expected {}",
                t.len(),
                self.config.token_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationToken(pub Vec<f64>);

pub fn project_token(params: &EncoderParams, features: &[f64]) -> Result<ObservationToken> {
    if features.len() != params.config.feature_len() {
        return Err(Error::shape(format!(
            "feature vector has length {}, expected {}",
            features.len(),
            params.config.feature_len()
        )));
    }
    let mut t = params.projection.matvec(features);
    t.iter_mut().zip(&params.bias).for_each(|(v, b)| *v += b);
    Ok(ObservationToken(t))
}

/// Intermediate values of one attention pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    tokens: [Vec<f64>; 2],
    q: [Vec<f64>; 2],
    k: [Vec<f64>; 2],
    v: [Vec<f64>; 2],
    /// Row `i` holds query `i`'s weights over the two keys.
    pub weights: [[f64; 2]; 2],
    attended: [Vec<f64>; 2],
    pub output: Vec<f64>,
}

/// Scaled dot-product attention of the window `[previous, current]` with
/// itself, followed by the output map; returns both rows concatenated.
pub fn attend_window(params: &EncoderParams, tokens: [&ObservationToken; 2]) -> Result<Vec<f64>> {
    Ok(attend_window_traced(params, tokens)?.output)
}

pub fn attend_window_traced(params: &EncoderParams, tokens: [&ObservationToken; 2]) -> Result<AttentionTrace> {
    for t in tokens {
        params.check_token(&t.0)?;
    }
    let d = params.config.token_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let tokens = [tokens[0].0.clone(), tokens[1].0.clone()];
    let q = [params.wq.matvec(&tokens[0]), params.wq.matvec(&tokens[1])];
    let k = [params.wk.matvec(&tokens[0]), params.wk.matvec(&tokens[1])];
    let v = [params.wv.matvec(&tokens[0]), params.wv.matvec(&tokens[1])];
    let mut weights = [[0.0; 2]; 2];
    for i in 0..2 {
        let s = [dot(&q[i], &k[0]) * scale, dot(&q[i], &k[1]) * scale];
        let m = s[0].max(s[1]);
        let e = [(s[0] - m).exp(), (s[1] - m).exp()];
        let z = e[0] + e[1];
        weights[i] = [e[0] / z, e[1] / z];
    }
    let attended = [0, 1].map(|i| (0..d).map(|c| weights[i][0] * v[0][c] + weights[i][1] * v[1][c]).collect::<Vec<_>>());
    let mut output = params.wo.matvec(&attended[0]);
    output.extend(params.wo.matvec(&attended[1]));
    Ok(AttentionTrace {
        tokens,
        q,
        k,
        v,
        weights,
        attended,
        output,
    })
}

/// Forward pass of a full window: two feature vectors to conditioning.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    features: [Vec<f64>; 2],
    pub attention: AttentionTrace,
}

pub fn encode_window(params: &EncoderParams, features: [&[f64]; 2]) -> Result<EncodeTrace> {
    let t0 = project_token(params, features[0])?;
    let t1 = project_token(params, features[1])?;
    let attention = attend_window_traced(params, [&t0, &t1])?;
    Ok(EncodeTrace {
        features: [features[0].to_vec(), features[1].to_vec()],
        attention,
    })
}

/// Gradient of a scalar loss with respect to every encoder parameter, given
/// the loss gradient `grad_output` with respect to the conditioning vector.
pub fn backward(params: &EncoderParams, trace: &EncodeTrace, grad_output: &[f64]) -> Result<EncoderParams> {
    let d = params.config.token_dim;
    if grad_output.len() != 2 * d {
        return Err(Error::shape(format!("output gradient has length {}, expected {}", grad_output.len(), 2 * d)));
    }
    let a = &trace.attention;
    let scale = 1.0 / (d as f64).sqrt();
    let mut g = EncoderParams::zeros(params.config);
    let gy = [&grad_output[..d], &grad_output[d..]];

    let mut g_q = [vec![0.0; d], vec![0.0; d]];
    let mut g_k = [vec![0.0; d], vec![0.0; d]];
    let mut g_v = [vec![0.0; d], vec![0.0; d]];
    for i in 0..2 {
        g.wo.add_outer(gy[i], &a.attended[i]);
        let g_att = params.wo.t_matvec(gy[i]);
        let g_w = [dot(&g_att, &a.v[0]), dot(&g_att, &a.v[1])];
        for (gv_j, w) in g_v.iter_mut().zip(a.weights[i]) {
            gv_j.iter_mut().zip(&g_att).for_each(|(gv, ga)| *gv += w * ga);
        }
        let mean = a.weights[i][0] * g_w[0] + a.weights[i][1] * g_w[1];
        for j in 0..2 {
            let g_s = a.weights[i][j] * (g_w[j] - mean) * scale;
            g_q[i].iter_mut().zip(&a.k[j]).for_each(|(gq, kj)| *gq += g_s * kj);
            g_k[j].iter_mut().zip(&a.q[i]).for_each(|(gk, qi)| *gk += g_s * qi);
        }
    }
    for i in 0..2 {
        g.wq.add_outer(&g_q[i], &a.tokens[i]);
        g.wk.add_outer(&g_k[i], &a.tokens[i]);
        g.wv.add_outer(&g_v[i], &a.tokens[i]);
        let mut g_tok = params.wq.t_matvec(&g_q[i]);
        for (gt, x) in g_tok.iter_mut().zip(params.wk.t_matvec(&g_k[i])) {
            *gt += x;
        }
        for (gt, x) in g_tok.iter_mut().zip(params.wv.t_matvec(&g_v[i])) {
            *gt += x;
        }
        g.projection.add_outer(&g_tok, &trace.features[i]);
        g.bias.iter_mut().zip(&g_tok).for_each(|(gb, gt)| *gb += gt);
    }
    Ok(g)
}

/// Conditioning for every timestep of a sequence. Step `t` attends over the
/// tokens of steps `t - 1` and `t`; the first step repeats its own token.
pub fn encode_sequence(params: &EncoderParams, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let tokens = features
        .iter()
        .map(|f| project_token(params, f))
        .collect::<Result<Vec<_>>>()?;
    (0..tokens.len())
        .map(|t| attend_window(params, [&tokens[t.saturating_sub(1)], &tokens[t]]))
        .collect()
}
