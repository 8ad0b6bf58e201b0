//! Domain-randomized augmentation that either chains corruptions
//! sequentially or blends several corruption chains with Dirichlet weights,
//! plus the exposure model used by the benchmark.
//!
//! One call to [`augfusion`] draws a gate value `xi` uniformly from `[0, 1)`:
//!
//! * `xi < beta`: a single chain of `k` primitives is applied in order and the
//!   blend factor is forced to 1, so the output is the chain result.
//! * otherwise: `k` chains are built, chain `i` with a random length in
//!   `1..=k`, and mixed as `sum_i w_i * chain_i(x)` from a zero accumulator.
//!
//! The output is `lambda * branch + (1 - lambda) * x`, clamped to `[0, 1]`.
//!
//! Stream layout (all forks of the caller's stream): `gate` for `xi`,
//! `weights` for the Dirichlet draw, `sequential` for the sequential chain and
//! `chain-{i}` for mixture chain `i`. Within a chain, step `j` draws the
//! primitive index and severity from the chain stream and hands the
//! primitive its own fork `step-{j}`.

mod primitives;

use serde::{Deserialize, Serialize};

pub use primitives::{
    apply_primitive, Brightness, Contrast, ExposureGain, Gamma, GaussianBlur, GaussianNoise, Primitive,
    PrimitiveRegistry, SaturationShift,
};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng::RandomStream;

/// The camera exposure levels of the benchmark sweep, in milliseconds.
pub const EXPOSURE_LEVELS_MS: [f64; 10] = [10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 170.0];

const DISPLAY_GAMMA: f64 = 2.2;

/// One entry of the augmentation set: a primitive and the range its
/// severity is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpSpec {
    pub name: String,
    pub severity: [f64; 2],
}

impl OpSpec {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            severity: [lo, hi],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugFusionConfig {
    /// Number of chains, and the sequential chain length.
    pub k: usize,
    /// Symmetric Dirichlet concentration.
    pub alpha: f64,
    /// Gate threshold: probability of the sequential branch.
    pub beta: f64,
    /// Blend between the augmented branch and the original.
    pub lambda: f64,
    pub ops: Vec<OpSpec>,
}

impl Default for AugFusionConfig {
    fn default() -> Self {
        Self {
            k: 3,
            alpha: 1.0,
            beta: 0.5,
            lambda: 0.8,
            ops: default_ops(),
        }
    }
}

/// Default severity ranges for the builtin primitives.
pub fn default_ops() -> Vec<OpSpec> {
    vec![
        OpSpec::new("brightness", 0.1, 0.6),
        OpSpec::new("contrast", 0.1, 0.6),
        OpSpec::new("gamma", 0.1, 0.7),
        OpSpec::new("exposure_gain", 0.1, 0.8),
        OpSpec::new("gaussian_blur", 0.1, 0.5),
        OpSpec::new("gaussian_noise", 0.05, 0.4),
        OpSpec::new("saturation_shift", 0.1, 0.8),
    ]
}

impl AugFusionConfig {
    pub fn validate(&self, registry: &PrimitiveRegistry) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation(None, "k", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::validation(None, "alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::validation(None, "beta", format!("must lie in [0, 1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation(None, "lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        if self.ops.is_empty() {
            return Err(Error::validation(None, "ops", "must not be empty"));
        }
        for op in &self.ops {
            if !registry.contains(&op.name) {
                return Err(Error::validation(None, "ops", format!("unknown primitive `{}`", op.name)));
            }
            let [lo, hi] = op.severity;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::validation(
                    None,
                    "ops",
                    format!("severity range [{lo}, {hi}] of `{}` must satisfy 0 <= lo <= hi <= 1", op.name),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate(PrimitiveRegistry::builtin())?;
        Ok(cfg)
    }
}

/// Point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights(Vec<f64>);

impl MixWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Symmetric Dirichlet sample from normalized Gamma(alpha) draws.
pub fn sample_dirichlet(alpha: f64, k: usize, rng: &mut RandomStream) -> Result<MixWeights> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::usage(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    if k == 0 {
        return Err(Error::usage("Dirichlet dimension must be at least 1"));
    }
    let draws: Vec<f64> = (0..k).map(|_| rng.gamma(alpha)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        return Ok(MixWeights(draws.into_iter().map(|g| g / total).collect()));
    }
    // Every Gamma draw underflowed (tiny alpha): the limit is a vertex.
    let mut w = vec![0.0; k];
    w[rng.below(k as u64) as usize] = 1.0;
    Ok(MixWeights(w))
}

/// Applies `len` primitives drawn from `ops`, in order.
pub fn apply_chain(
    image: &Image,
    ops: &[OpSpec],
    len: usize,
    stream: &mut RandomStream,
    registry: &PrimitiveRegistry,
) -> Result<Image> {
    let mut x = image.clone();
    for step in 0..len {
        let op = &ops[stream.below(ops.len() as u64) as usize];
        let severity = stream.uniform_range(op.severity[0], op.severity[1]);
        let mut prim_rng = stream.fork_indexed("step", step);
        x = registry.apply(&x, &op.name, severity, &mut prim_rng)?;
    }
    Ok(x)
}

/// Which branch a call took; returned by [`augfusion_traced`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Sequential,
    Mixture,
}

pub fn augfusion(image: &Image, cfg: &AugFusionConfig, rng: &RandomStream) -> Result<Image> {
    augfusion_with(image, cfg, rng, PrimitiveRegistry::builtin()).map(|(img, _)| img)
}

pub fn augfusion_traced(image: &Image, cfg: &AugFusionConfig, rng: &RandomStream) -> Result<(Image, Branch)> {
    augfusion_with(image, cfg, rng, PrimitiveRegistry::builtin())
}

pub fn augfusion_with(
    image: &Image,
    cfg: &AugFusionConfig,
    rng: &RandomStream,
    registry: &PrimitiveRegistry,
) -> Result<(Image, Branch)> {
    cfg.validate(registry)?;
    let xi = rng.fork("gate")?.uniform();
    let weights = sample_dirichlet(cfg.alpha, cfg.k, &mut rng.fork("weights")?)?;

    let (branch, lambda, augmented) = if xi < cfg.beta {
        let chain = apply_chain(image, &cfg.ops, cfg.k, &mut rng.fork("sequential")?, registry)?;
        let data: Vec<f64> = chain.data().iter().map(|&v| f64::from(v)).collect();
        (Branch::Sequential, 1.0, data)
    } else {
        let mut mix = vec![0.0f64; image.data().len()];
        for (i, &w) in weights.as_slice().iter().enumerate() {
            let mut stream = rng.fork_indexed("chain", i);
            let len = 1 + stream.below(cfg.k as u64) as usize;
            let chain = apply_chain(image, &cfg.ops, len, &mut stream, registry)?;
            for (acc, &v) in mix.iter_mut().zip(chain.data()) {
                *acc += w * f64::from(v);
            }
        }
        (Branch::Mixture, cfg.lambda, mix)
    };

    let out = augmented
        .iter()
        .zip(image.data())
        .map(|(&a, &x)| (lambda * a + (1.0 - lambda) * f64::from(x)) as f32)
        .collect();
    Ok((Image::from_clamped(image.width(), image.height(), out), branch))
}

/// Gain in linear light: undo display gamma, scale, reapply, clamp.
pub(crate) fn apply_linear_gain(image: &Image, gain: f64) -> Image {
    image.map(|v| {
        let linear = f64::from(v).powf(DISPLAY_GAMMA) * gain;
        linear.powf(1.0 / DISPLAY_GAMMA) as f32
    })
}

/// Renders `image`, captured at `reference_ms`, as if exposed for
/// `exposure_ms`.
pub fn simulate_exposure(image: &Image, exposure_ms: f64, reference_ms: f64) -> Result<Image> {
    for (what, v) in [("exposure", exposure_ms), ("reference exposure", reference_ms)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::usage(format!("{what} must be positive, got {v}")));
        }
    }
    Ok(apply_linear_gain(image, exposure_ms / reference_ms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Image {
        let (w, h) = (16, 12);
        let data = (0..w * h * 3).map(|i| ((i * 53) % 97) as f32 / 96.0).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn dirichlet_single_coordinate() {
        for alpha in [0.01, 1.0, 50.0] {
            let w = sample_dirichlet(alpha, 1, &mut RandomStream::new(3)).unwrap();
            assert_eq!(w.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut rng = RandomStream::new(8);
        for &alpha in &[1e-3, 0.1, 1.0, 10.0] {
            for k in 1..6 {
                let w = sample_dirichlet(alpha, k, &mut rng).unwrap();
                let sum: f64 = w.as_slice().iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(w.as_slice().iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn dirichlet_rejects_bad_alpha() {
        for alpha in [0.0, -1.0, f64::NAN] {
            assert!(sample_dirichlet(alpha, 3, &mut RandomStream::new(0)).unwrap_err().is_usage());
        }
    }

    #[test]
    fn lambda_zero_mixture_is_identity() {
        let cfg = AugFusionConfig {
            beta: 0.0,
            lambda: 0.0,
            ..Default::default()
        };
        let img = scene();
        for seed in 0..20 {
            let (out, branch) = augfusion_traced(&img, &cfg, &RandomStream::new(seed)).unwrap();
            assert_eq!(branch, Branch::Mixture);
            assert_eq!(out, img);
        }
    }

    #[test]
    fn beta_one_is_pure_chain() {
        let cfg = AugFusionConfig {
            beta: 1.0,
            lambda: 0.0,
            ..Default::default()
        };
        let img = scene();
        for seed in 0..10 {
            let rng = RandomStream::new(seed);
            let (out, branch) = augfusion_traced(&img, &cfg, &rng).unwrap();
            assert_eq!(branch, Branch::Sequential);
            let mut stream = rng.fork("sequential").unwrap();
            let chain = apply_chain(&img, &cfg.ops, cfg.k, &mut stream, PrimitiveRegistry::builtin()).unwrap();
            assert_eq!(out, chain);
        }
    }

    #[test]
    fn deterministic_and_clamped() {
        let cfg = AugFusionConfig::default();
        let img = scene();
        for seed in 0..10 {
            let rng = RandomStream::new(seed);
            let a = augfusion(&img, &cfg, &rng).unwrap();
            assert_eq!(a, augfusion(&img, &cfg, &rng).unwrap());
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn config_validation() {
        let reg = PrimitiveRegistry::builtin();
        let bad = [
            AugFusionConfig { k: 0, ..Default::default() },
            AugFusionConfig { alpha: 0.0, ..Default::default() },
            AugFusionConfig { beta: 1.1, ..Default::default() },
            AugFusionConfig { lambda: -0.1, ..Default::default() },
            AugFusionConfig { ops: vec![], ..Default::default() },
            AugFusionConfig { ops: vec![OpSpec::new("swirl", 0.0, 1.0)], ..Default::default() },
            AugFusionConfig { ops: vec![OpSpec::new("gamma", 0.8, 0.2)], ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate(reg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn config_json() {
        let text = r#"{"k":2,"alpha":0.5,"beta":0.3,"lambda":1.0,
            "ops":[{"name":"gaussian_noise","severity":[0.1,0.2]}]}"#;
        let cfg = AugFusionConfig::from_json(text).unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.ops[0], OpSpec::new("gaussian_noise", 0.1, 0.2));
        let partial = AugFusionConfig::from_json(r#"{"k":2}"#).unwrap();
        assert_eq!(partial, AugFusionConfig { k: 2, ..AugFusionConfig::default() });
        assert!(AugFusionConfig::from_json(r#"{"k":2,"kk":1}"#).is_err());
    }

    #[test]
    fn unit_exposure_is_near_identity() {
        let img = scene();
        let out = simulate_exposure(&img, 100.0, 100.0).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn exposure_saturates() {
        let img = Image::filled(1, 1, [0.9, 0.9, 0.9]).unwrap();
        let out = simulate_exposure(&img, 400.0, 100.0).unwrap();
        assert_eq!(out.pixel(0, 0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn exposure_rejects_non_positive() {
        let img = scene();
        assert!(simulate_exposure(&img, 0.0, 100.0).unwrap_err().is_usage());
        assert!(simulate_exposure(&img, 10.0, -1.0).is_err());
    }

    #[test]
    fn exposure_monotone_in_time() {
        let img = scene();
        let outs: Vec<Image> = EXPOSURE_LEVELS_MS
            .iter()
            .map(|&e| simulate_exposure(&img, e, 100.0).unwrap())
            .collect();
        for pair in outs.windows(2) {
            assert!(pair[0].data().iter().zip(pair[1].data()).all(|(a, b)| a <= b));
        }
    }
}
