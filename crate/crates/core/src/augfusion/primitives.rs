//! Photometric corruption primitives and their registry.
//!
//! Severity runs over `[0, 1]`. Zero is the identity for every primitive;
//! [`apply_primitive`] short-circuits it so the identity holds bit-for-bit.
//! Primitives with a direction (brighter or darker, more or less contrast)
//! draw it from the stream.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng::RandomStream;

pub trait Primitive: Send + Sync {
    fn name(&self) -> &'static str;

    /// Applies the primitive at `severity` in `(0, 1]`. The result is
    /// clamped to `[0, 1]` by the caller's image constructor.
    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image;
}

fn direction(rng: &mut RandomStream) -> f64 {
    if rng.uniform() < 0.5 {
        -1.0
    } else {
        1.0
    }
}

fn map_f64(image: &Image, f: impl Fn(f64) -> f64) -> Image {
    image.map(|v| f(f64::from(v)) as f32)
}

/// Additive lighting shift of up to half the dynamic range.
pub struct Brightness;

impl Primitive for Brightness {
    fn name(&self) -> &'static str {
        "brightness"
    }

    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image {
        let delta = direction(rng) * 0.5 * severity;
        map_f64(image, |v| v + delta)
    }
}

/// Scales deviations from the image mean.
pub struct Contrast;

impl Primitive for Contrast {
    fn name(&self) -> &'static str {
        "contrast"
    }

    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image {
        let factor = if direction(rng) > 0.0 {
            1.0 + 2.0 * severity
        } else {
            1.0 - 0.8 * severity
        };
        let data = image.data();
        let mean = data.iter().map(|&v| f64::from(v)).sum::<f64>() / data.len() as f64;
        map_f64(image, |v| mean + (v - mean) * factor)
    }
}

/// Power-law tone curve with exponent in `[2^-1.5, 2^1.5]`.
pub struct Gamma;

impl Primitive for Gamma {
    fn name(&self) -> &'static str {
        "gamma"
    }

    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image {
        let exponent = (direction(rng) * 1.5 * severity).exp2();
        map_f64(image, |v| v.powf(exponent))
    }
}

/// Linear-light gain of up to three stops either way.
pub struct ExposureGain;

impl Primitive for ExposureGain {
    fn name(&self) -> &'static str {
        "exposure_gain"
    }

    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image {
        let gain = (direction(rng) * 3.0 * severity).exp2();
        super::apply_linear_gain(image, gain)
    }
}

/// Separable Gaussian blur, sigma up to 3 px, edges clamped.
pub struct GaussianBlur;

impl Primitive for GaussianBlur {
    fn name(&self) -> &'static str {
        "gaussian_blur"
    }

    fn apply(&self, image: &Image, severity: f64, _rng: &mut RandomStream) -> Image {
        let sigma = 3.0 * severity;
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= total);

        let (w, h) = (image.width(), image.height());
        let src: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();
        // Each output is the center value plus weighted differences from it,
        // which leaves constant regions exactly unchanged.
        let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let center = src[(y * w + x) * 3 + c];
                        let mut acc = 0.0;
                        for (k, wk) in (-radius..=radius).zip(&kernel) {
                            let (sx, sy) = if horizontal {
                                ((x as isize + k).clamp(0, w as isize - 1) as usize, y)
                            } else {
                                (x, (y as isize + k).clamp(0, h as isize - 1) as usize)
                            };
                            acc += wk * (src[(sy * w + sx) * 3 + c] - center);
                        }
                        out[(y * w + x) * 3 + c] = center + acc;
                    }
                }
            }
            out
        };
        let blurred = pass(&pass(&src, true), false);
        Image::from_clamped(w, h, blurred.into_iter().map(|v| v as f32).collect())
    }
}

/// Additive i.i.d. Gaussian sensor noise, sigma up to 0.2.
pub struct GaussianNoise;

impl Primitive for GaussianNoise {
    fn name(&self) -> &'static str {
        "gaussian_noise"
    }

    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image {
        let sigma = 0.2 * severity;
        let data = image
            .data()
            .iter()
            .map(|&v| (f64::from(v) + sigma * rng.normal()) as f32)
            .collect();
        Image::from_clamped(image.width(), image.height(), data)
    }
}

/// Pushes colors toward or away from their Rec. 601 luma.
pub struct SaturationShift;

impl Primitive for SaturationShift {
    fn name(&self) -> &'static str {
        "saturation_shift"
    }

    fn apply(&self, image: &Image, severity: f64, rng: &mut RandomStream) -> Image {
        let factor = 1.0 + direction(rng) * severity;
        let mut data = Vec::with_capacity(image.data().len());
        for px in image.data().chunks_exact(3) {
            let [r, g, b] = [px[0], px[1], px[2]].map(f64::from);
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            data.extend([r, g, b].map(|c| (luma + (c - luma) * factor) as f32));
        }
        Image::from_clamped(image.width(), image.height(), data)
    }
}

/// Name-indexed primitive set.
#[derive(Clone)]
pub struct PrimitiveRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Primitive>>,
}

impl PrimitiveRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> &'static Self {
        static BUILTIN: OnceLock<PrimitiveRegistry> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            let mut r = Self::empty();
            r.register(Arc::new(Brightness));
            r.register(Arc::new(Contrast));
            r.register(Arc::new(Gamma));
            r.register(Arc::new(ExposureGain));
            r.register(Arc::new(GaussianBlur));
            r.register(Arc::new(GaussianNoise));
            r.register(Arc::new(SaturationShift));
            r
        })
    }

    pub fn register(&mut self, primitive: Arc<dyn Primitive>) {
        self.entries.insert(primitive.name(), primitive);
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn Primitive>> {
        self.entries.get(name).ok_or_else(|| {
            Error::usage(format!(
                "unknown augmentation primitive `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// Applies `name` at `severity`; severity 0 returns the input unchanged.
    pub fn apply(&self, image: &Image, name: &str, severity: f64, rng: &mut RandomStream) -> Result<Image> {
        let primitive = self.get(name)?;
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::usage(format!("severity {severity} outside [0, 1]")));
        }
        if severity == 0.0 {
            return Ok(image.clone());
        }
        Ok(primitive.apply(image, severity, rng))
    }
}

/// [`PrimitiveRegistry::apply`] against the builtin registry.
pub fn apply_primitive(image: &Image, name: &str, severity: f64, rng: &mut RandomStream) -> Result<Image> {
    PrimitiveRegistry::builtin().apply(image, name, severity, rng)
}
