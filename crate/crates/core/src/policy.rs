//! Diffusion action head: cosine noise schedule, deterministic DDIM
//! sampling, and a conditioned two-layer perceptron that predicts the
//! injected noise, trained by gradient descent on the batch RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::{Matrix, TensorFile};

pub const MAX_BETA: f64 = 0.999;
pub const TIME_EMBED_LEN: usize = 8;
const RMSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    offset: f64,
    alpha_bar: Vec<f64>,
    betas: Vec<f64>,
}

/// Cosine schedule with `alpha_bar[t] = f(t) / f(0)`,
/// `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`.
///
/// `betas[t - 1]` is the step from `t - 1` to `t`. Once a beta hits the
/// [`MAX_BETA`] clip, the remaining `alpha_bar` values follow the clipped
/// betas so that the two lists stay consistent.
pub fn build_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::usage("schedule needs at least one step"));
    }
    if !(offset.is_finite() && offset > 0.0) {
        return Err(Error::usage(format!("schedule offset must be positive, got {offset}")));
    }
    let f = |t: usize| {
        let u = (t as f64 / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
        let c = u.cos();
        c * c
    };
    let f0 = f(0);
    let mut alpha_bar = vec![1.0];
    let mut betas = Vec::with_capacity(steps);
    let mut clipped = false;
    for t in 1..=steps {
        let prev = alpha_bar[t - 1];
        let raw = f(t) / f0;
        let beta = (1.0 - raw / prev).min(MAX_BETA);
        clipped |= beta == MAX_BETA;
        betas.push(beta);
        alpha_bar.push(if clipped { prev * (1.0 - beta) } else { raw });
    }
    Ok(NoiseSchedule {
        steps,
        offset,
        alpha_bar,
        betas,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::usage(format!("step {t} beyond schedule length {}", self.steps)));
        }
        Ok(())
    }
}

/// `horizon x dims` action sequence, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTrajectory(Matrix);

impl ActionTrajectory {
    pub fn new(horizon: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 || dims == 0 {
            return Err(Error::shape("trajectory needs a positive horizon and action dimension"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::usage(format!("trajectory value {v} is not finite")));
        }
        Ok(Self(Matrix::from_vec(horizon, dims, values)?))
    }

    pub fn zeros(horizon: usize, dims: usize) -> Self {
        Self(Matrix::zeros(horizon, dims))
    }

    pub fn horizon(&self) -> usize {
        self.0.rows()
    }

    pub fn dims(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn row(&self, step: usize) -> &[f64] {
        self.0.row(step)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn unchecked(horizon: usize, dims: usize, values: Vec<f64>) -> Self {
        Self(Matrix::from_vec(horizon, dims, values).expect("length matches shape"))
    }
}

fn check_same_shape(x: &ActionTrajectory, m: &Matrix, what: &str) -> Result<()> {
    if m.shape() != x.as_matrix().shape() {
        return Err(Error::shape(format!(
            "{what} has shape {:?}, trajectory is {:?}",
            m.shape(),
            x.as_matrix().shape()
        )));
    }
    Ok(())
}

/// Samples the forward marginal `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn forward_diffuse(x0: &ActionTrajectory, t: usize, schedule: &NoiseSchedule, noise: &Matrix) -> Result<ActionTrajectory> {
    schedule.check_step(t)?;
    check_same_shape(x0, noise, "noise")?;
    let ab = schedule.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0.values().iter().zip(noise.data()).map(|(x, e)| a * x + b * e).collect();
    Ok(ActionTrajectory::unchecked(x0.horizon(), x0.dims(), values))
}

/// One deterministic DDIM update from `t` to `t_prev`.
pub fn ddim_step(
    x_t: &ActionTrajectory,
    eps_pred: &Matrix,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<ActionTrajectory> {
    if t_prev >= t {
        return Err(Error::usage(format!("DDIM must step backwards, got {t} -> {t_prev}")));
    }
    schedule.check_step(t)?;
    check_same_shape(x_t, eps_pred, "noise prediction")?;
    let (ab, ab_prev) = (schedule.alpha_bar[t], schedule.alpha_bar[t_prev]);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let x0_hat = x_t.values().iter().zip(eps_pred.data()).map(|(x, e)| (x - sb * e) / sa);
    let values = if t_prev == 0 {
        x0_hat.collect()
    } else {
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        x0_hat.zip(eps_pred.data()).map(|(x0, e)| pa * x0 + pb * e).collect()
    };
    Ok(ActionTrajectory::unchecked(x_t.horizon(), x_t.dims(), values))
}

/// Sinusoidal features of `t / T` at frequencies `pi * 2^k`, `k = 0..4`,
/// laid out as `[sin, cos]` pairs.
pub fn timestep_embedding(t: usize, steps: usize) -> [f64; TIME_EMBED_LEN] {
    let tau = t as f64 / steps as f64;
    let mut out = [0.0; TIME_EMBED_LEN];
    for k in 0..TIME_EMBED_LEN / 2 {
        let w = std::f64::consts::PI * f64::from(1u32 << k);
        out[2 * k] = (w * tau).sin();
        out[2 * k + 1] = (w * tau).cos();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub horizon: usize,
    pub dims: usize,
    pub cond_len: usize,
    pub hidden: usize,
    /// Schedule length; also normalizes the timestep embedding.
    pub steps: usize,
    /// Schedule offset the model was trained with.
    #[serde(default = "default_offset")]
    pub offset: f64,
}

fn default_offset() -> f64 {
    0.008
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            dims: 8,
            cond_len: 256,
            hidden: 64,
            steps: 16,
            offset: default_offset(),
        }
    }
}

impl DenoiserConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.offset)
    }

    pub fn action_len(&self) -> usize {
        self.horizon * self.dims
    }

    pub fn input_len(&self) -> usize {
        self.action_len() + TIME_EMBED_LEN + self.cond_len
    }

    pub fn num_params(&self) -> usize {
        let (n, h, o) = (self.input_len(), self.hidden, self.action_len());
        h * n + h + o * h + o
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.dims == 0 || self.hidden == 0 || self.steps == 0 {
            return Err(Error::usage(format!("degenerate denoiser config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl DenoiserParams {
    pub fn zeros(config: DenoiserConfig) -> Self {
        let (n, h, o) = (config.input_len(), config.hidden, config.action_len());
        Self {
            config,
            w1: Matrix::zeros(h, n),
            b1: vec![0.0; h],
            w2: Matrix::zeros(o, h),
            b2: vec![0.0; o],
        }
    }

    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(config: DenoiserConfig, rng: &RandomStream) -> Self {
        let (n, h, o) = (config.input_len(), config.hidden, config.action_len());
        let draw = |label: &str, rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let mut s = rng.fork(label).expect("static label");
            Matrix::from_fn(rows, cols, |_, _| s.uniform_range(-bound, bound))
        };
        Self {
            config,
            w1: draw("w1", h, n),
            b1: vec![0.0; h],
            w2: draw("w2", o, h),
            b2: vec![0.0; o],
        }
    }

    fn parts(&self) -> [&[f64]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.data_mut(), &mut self.b1, self.w2.data_mut(), &mut self.b2]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts().concat()
    }

    pub fn unflatten(config: DenoiserConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != config.num_params() {
            return Err(Error::shape(format!(
                "denoiser needs {} parameters, got {}",
                config.num_params(),
                flat.len()
            )));
        }
        let mut p = Self::zeros(config);
        let mut rest = flat;
        for part in p.parts_mut() {
            let (head, tail) = rest.split_at(part.len());
            part.copy_from_slice(head);
            rest = tail;
        }
        Ok(p)
    }

    /// `self -= rate * grad`.
    pub fn descend(&mut self, rate: f64, grad: &DenoiserParams) {
        for (p, g) in self.parts_mut().into_iter().zip(grad.parts()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= rate * gi;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let c = self.config;
        let (n, h, o) = (c.input_len(), c.hidden, c.action_len());
        let mut tf = TensorFile::new("denoiser", serde_json::to_value(c).expect("plain struct"));
        tf.push("w1", &[h, n], self.w1.data());
        tf.push("b1", &[h], &self.b1);
        tf.push("w2", &[o, h], self.w2.data());
        tf.push("b2", &[o], &self.b2);
        tf
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Self> {
        if tf.kind != "denoiser" {
            return Err(Error::shape(format!("expected denoiser tensors, found `{}`", tf.kind)));
        }
        let c: DenoiserConfig = serde_json::from_value(tf.config.clone())?;
        c.validate()?;
        let (n, h, o) = (c.input_len(), c.hidden, c.action_len());
        let mut flat = Vec::with_capacity(c.num_params());
        flat.extend_from_slice(tf.get("w1", &[h, n])?);
        flat.extend_from_slice(tf.get("b1", &[h])?);
        flat.extend_from_slice(tf.get("w2", &[o, h])?);
        flat.extend_from_slice(tf.get("b2", &[o])?);
        Self::unflatten(c, &flat)
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct DenoiserTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

fn denoiser_input(params: &DenoiserParams, x_t: &ActionTrajectory, t: usize, cond: &[f64]) -> Result<Vec<f64>> {
    let c = &params.config;
    if (x_t.horizon(), x_t.dims()) != (c.horizon, c.dims) {
        return Err(Error::shape(format!(
            "trajectory is {}x{}, denoiser expects {}x{}",
            x_t.horizon(),
            x_t.dims(),
            c.horizon,
            c.dims
        )));
    }
    if cond.len() != c.cond_len {
        return Err(Error::shape(format!(
            "conditioning has length {}, denoiser expects {}",
            cond.len(),
            c.cond_len
        )));
    }
    if t > c.steps {
        return Err(Error::usage(format!("step {t} beyond denoiser schedule length {}", c.steps)));
    }
    let mut input = Vec::with_capacity(c.input_len());
    input.extend_from_slice(x_t.values());
    input.extend_from_slice(&timestep_embedding(t, c.steps));
    input.extend_from_slice(cond);
    Ok(input)
}

pub fn denoiser_forward_traced(
    params: &DenoiserParams,
    x_t: &ActionTrajectory,
    t: usize,
    cond: &[f64],
) -> Result<DenoiserTrace> {
    let input = denoiser_input(params, x_t, t, cond)?;
    let mut hidden = params.w1.matvec(&input);
    for (h, b) in hidden.iter_mut().zip(&params.b1) {
        *h = (*h + b).tanh();
    }
    let mut output = params.w2.matvec(&hidden);
    for (y, b) in output.iter_mut().zip(&params.b2) {
        *y += b;
    }
    Ok(DenoiserTrace { input, hidden, output })
}

pub fn denoiser_forward(params: &DenoiserParams, x_t: &ActionTrajectory, t: usize, cond: &[f64]) -> Result<Matrix> {
    let trace = denoiser_forward_traced(params, x_t, t, cond)?;
    Matrix::from_vec(params.config.horizon, params.config.dims, trace.output)
}

/// Accumulates the parameter gradient of a forward pass into `grad` and
/// returns the gradient with respect to the conditioning vector.
pub fn denoiser_backward(
    params: &DenoiserParams,
    trace: &DenoiserTrace,
    grad_output: &[f64],
    grad: &mut DenoiserParams,
) -> Result<Vec<f64>> {
    if grad_output.len() != params.config.action_len() {
        return Err(Error::shape(format!(
            "output gradient has length {}, expected {}",
            grad_output.len(),
            params.config.action_len()
        )));
    }
    grad.w2.add_outer(grad_output, &trace.hidden);
    for (g, d) in grad.b2.iter_mut().zip(grad_output) {
        *g += d;
    }
    let mut g_pre = params.w2.t_matvec(grad_output);
    for (g, h) in g_pre.iter_mut().zip(&trace.hidden) {
        *g *= 1.0 - h * h;
    }
    grad.w1.add_outer(&g_pre, &trace.input);
    for (g, d) in grad.b1.iter_mut().zip(&g_pre) {
        *g += d;
    }
    let g_input = params.w1.t_matvec(&g_pre);
    let cond_start = params.config.action_len() + TIME_EMBED_LEN;
    Ok(g_input[cond_start..].to_vec())
}

/// One supervised denoising example: the network sees `(x_t, t, cond)` and
/// should output `noise`.
#[derive(Debug, Clone)]
pub struct NoisedSample {
    pub x_t: ActionTrajectory,
    pub t: usize,
    pub cond: Vec<f64>,
    pub noise: Matrix,
}

/// Batch RMSE `sqrt(mean((eps_hat - eps)^2))` and its parameter gradient.
pub fn rmse_loss_and_grad(params: &DenoiserParams, batch: &[NoisedSample]) -> Result<(f64, DenoiserParams)> {
    if batch.is_empty() {
        return Err(Error::usage("loss over an empty batch"));
    }
    let traces = batch
        .iter()
        .map(|s| denoiser_forward_traced(params, &s.x_t, s.t, &s.cond))
        .collect::<Result<Vec<_>>>()?;
    let count = (batch.len() * params.config.action_len()) as f64;
    let mut residuals = Vec::with_capacity(batch.len());
    let mut sum_sq = 0.0;
    for (trace, s) in traces.iter().zip(batch) {
        check_same_shape(&s.x_t, &s.noise, "target noise")?;
        let r: Vec<f64> = trace.output.iter().zip(s.noise.data()).map(|(y, e)| y - e).collect();
        sum_sq += r.iter().map(|v| v * v).sum::<f64>();
        residuals.push(r);
    }
    let rmse = (sum_sq / count).sqrt();
    // d rmse = d mse / (2 rmse), d mse / d y = 2 r / count.
    let scale = 1.0 / (count * rmse.max(RMSE_FLOOR));
    let mut grad = DenoiserParams::zeros(params.config);
    for (trace, r) in traces.iter().zip(&mut residuals) {
        r.iter_mut().for_each(|v| *v *= scale);
        denoiser_backward(params, trace, r, &mut grad)?;
    }
    Ok((rmse, grad))
}

/// Draws `t` uniformly from `1..=T` and unit Gaussian noise, then diffuses.
pub fn noised_sample(
    x0: &ActionTrajectory,
    cond: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
) -> NoisedSample {
    let t = 1 + rng.below(schedule.steps as u64) as usize;
    let noise = Matrix::from_fn(x0.horizon(), x0.dims(), |_, _| rng.normal());
    let x_t = forward_diffuse(x0, t, schedule, &noise).expect("shapes agree by construction");
    NoisedSample {
        x_t,
        t,
        cond: cond.to_vec(),
        noise,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fresh `(t, noise)` draws per example per epoch.
    pub noise_draws: usize,
    pub hidden: usize,
    pub steps: usize,
    pub offset: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            noise_draws: 1,
            hidden: 64,
            steps: 16,
            offset: 0.008,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub params: DenoiserParams,
    pub schedule: NoiseSchedule,
    /// Size-weighted mean of the batch RMSEs in each epoch.
    pub trace: Vec<EpochLoss>,
}

/// Minibatch gradient descent on the batch RMSE.
///
/// Streams: `init` seeds the weights; epoch `e` uses `epoch-e`, whose
/// `shuffle` child orders the data and whose `batch-b` children draw each
/// sample's `(t, noise)` in batch order.
pub fn train_policy(dataset: &[(Vec<f64>, ActionTrajectory)], cfg: &TrainConfig) -> Result<TrainedPolicy> {
    let Some((cond0, traj0)) = dataset.first() else {
        return Err(Error::usage("training dataset is empty"));
    };
    if cfg.batch_size == 0 || cfg.noise_draws == 0 {
        return Err(Error::usage("batch size and noise draws must be positive"));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::usage(format!("invalid learning rate {}", cfg.learning_rate)));
    }
    let schedule = build_schedule(cfg.steps, cfg.offset)?;
    let config = DenoiserConfig {
        horizon: traj0.horizon(),
        dims: traj0.dims(),
        cond_len: cond0.len(),
        hidden: cfg.hidden,
        steps: cfg.steps,
        offset: cfg.offset,
    };
    config.validate()?;
    for (i, (cond, traj)) in dataset.iter().enumerate() {
        if cond.len() != config.cond_len || (traj.horizon(), traj.dims()) != (config.horizon, config.dims) {
            return Err(Error::shape(format!("training example {i} disagrees with example 0 in shape")));
        }
    }

    let root = RandomStream::new(cfg.seed);
    let mut params = DenoiserParams::init(config, &root.fork("init")?);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len() * cfg.noise_draws).map(|i| i % dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let es = root.fork_indexed("epoch", epoch);
        let mut shuffle = es.fork("shuffle")?;
        for i in (1..order.len()).rev() {
            let j = shuffle.below(i as u64 + 1) as usize;
            order.swap(i, j);
        }
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut bs = es.fork_indexed("batch", b);
            let batch: Vec<NoisedSample> = chunk
                .iter()
                .map(|&i| noised_sample(&dataset[i].1, &dataset[i].0, &schedule, &mut bs))
                .collect();
            let (rmse, grad) = rmse_loss_and_grad(&params, &batch)?;
            params.descend(cfg.learning_rate, &grad);
            weighted += rmse * chunk.len() as f64;
        }
        trace.push(EpochLoss {
            epoch,
            rmse: weighted / order.len() as f64,
        });
    }
    Ok(TrainedPolicy { params, schedule, trace })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleWire {
    cond: Vec<f64>,
    actions: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSetWire {
    examples: Vec<ExampleWire>,
}

fn trajectory_from_rows(rows: &[Vec<f64>]) -> Result<ActionTrajectory> {
    let dims = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dims) {
        return Err(Error::shape("trajectory rows differ in length"));
    }
    ActionTrajectory::new(rows.len(), dims, rows.concat())
}

/// Parses `{"examples": [{"cond": [...], "actions": [[...], ...]}, ...]}`,
/// one action row per horizon step.
pub fn parse_training_set(text: &str) -> Result<Vec<(Vec<f64>, ActionTrajectory)>> {
    let wire: TrainingSetWire = serde_json::from_str(text)?;
    wire.examples
        .into_iter()
        .enumerate()
        .map(|(i, ex)| {
            let traj = trajectory_from_rows(&ex.actions).map_err(|e| Error::validation(None, "actions", format!("example {i}: {e}")))?;
            Ok((ex.cond, traj))
        })
        .collect()
}

pub fn training_set_to_json(dataset: &[(Vec<f64>, ActionTrajectory)]) -> Result<String> {
    let wire = TrainingSetWire {
        examples: dataset
            .iter()
            .map(|(c, x)| ExampleWire {
                cond: c.clone(),
                actions: (0..x.horizon()).map(|r| x.row(r).to_vec()).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&wire)?)
}

/// `{"horizon": H, "dims": D, "actions": [[...], ...]}`.
pub fn trajectory_to_json(x: &ActionTrajectory) -> Result<String> {
    let actions: Vec<&[f64]> = (0..x.horizon()).map(|r| x.row(r)).collect();
    Ok(serde_json::to_string(&serde_json::json!({
        "horizon": x.horizon(),
        "dims": x.dims(),
        "actions": actions,
    }))?)
}

pub fn trajectory_from_json(text: &str) -> Result<ActionTrajectory> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Wire {
        horizon: usize,
        dims: usize,
        actions: Vec<Vec<f64>>,
    }
    let w: Wire = serde_json::from_str(text)?;
    let x = trajectory_from_rows(&w.actions)?;
    if (x.horizon(), x.dims()) != (w.horizon, w.dims) {
        return Err(Error::shape("trajectory header disagrees with its rows"));
    }
    Ok(x)
}

/// Batch RMSE over `draws` fresh `(t, noise)` draws per example.
pub fn evaluate_rmse(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    dataset: &[(Vec<f64>, ActionTrajectory)],
    draws: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    let batch: Vec<NoisedSample> = (0..draws)
        .flat_map(|_| dataset.iter())
        .map(|(c, x)| noised_sample(x, c, schedule, rng))
        .collect();
    Ok(rmse_loss_and_grad(params, &batch)?.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    /// Clamp each step's clean-sample estimate to `[-c, c]` before
    /// re-noising. The first step out of a near-zero `alpha_bar[T]` divides
    /// by `sqrt(alpha_bar[T])`, so without a clamp small prediction errors
    /// there are amplified by orders of magnitude.
    pub clip_sample: Option<f64>,
}

/// Runs DDIM from a unit Gaussian draw at `T` down to 0.
pub fn sample_actions(
    params: &DenoiserParams,
    cond: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
) -> Result<ActionTrajectory> {
    sample_actions_with(params, cond, schedule, rng, SampleOptions::default())
}

pub fn sample_actions_with(
    params: &DenoiserParams,
    cond: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
    opts: SampleOptions,
) -> Result<ActionTrajectory> {
    let c = params.config;
    if c.steps != schedule.steps {
        return Err(Error::shape(format!(
            "denoiser was built for {} steps, schedule has {}",
            c.steps, schedule.steps
        )));
    }
    if let Some(clip) = opts.clip_sample {
        if !(clip.is_finite() && clip > 0.0) {
            return Err(Error::usage(format!("clip_sample must be positive, got {clip}")));
        }
    }
    let init = (0..c.action_len()).map(|_| rng.normal()).collect();
    let mut x = ActionTrajectory::unchecked(c.horizon, c.dims, init);
    for t in (1..=schedule.steps).rev() {
        let eps = denoiser_forward(params, &x, t, cond)?;
        x = match opts.clip_sample {
            None => ddim_step(&x, &eps, t, t - 1, schedule)?,
            Some(clip) => clipped_ddim_step(&x, &eps, t, t - 1, schedule, clip),
        };
    }
    Ok(x)
}

fn clipped_ddim_step(
    x_t: &ActionTrajectory,
    eps: &Matrix,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    clip: f64,
) -> ActionTrajectory {
    let (ab, ab_prev) = (schedule.alpha_bar[t], schedule.alpha_bar[t_prev]);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let values = x_t
        .values()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| {
            let x0 = ((x - sb * e) / sa).clamp(-clip, clip);
            if t_prev == 0 {
                x0
            } else {
                pa * x0 + pb * e
            }
        })
        .collect();
    ActionTrajectory::unchecked(x_t.horizon(), x_t.dims(), values)
}

/// Largest relative error between an analytic gradient and central
/// differences, `|a - n| / max(|a|, |n|, 1e-6)`, over every parameter.
///
/// `loss_fn` returns the loss and its analytic gradient at the given point.
pub fn finite_diff_check<F>(loss_fn: F, params: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, analytic) = loss_fn(params);
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient has length {}, parameters {}",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = loss_fn(&probe).0;
        probe[i] = params[i] - step;
        let down = loss_fn(&probe).0;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
