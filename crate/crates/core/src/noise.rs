//! Camera noise simulation and measurement preprocessing: per-pixel mixed
//! Poisson-Gaussian statistics X = Poisson(I) + Normal(0, σ²) + black level,
//! dark-frame stacks, background subtraction, gain rescaling, and per-pixel
//! readout-variance estimation from dark stacks.
//!
//! All simulation works directly in photoelectron counts. The gain layer
//! (counts = ADU × gain_inv) only matters when ingesting external camera
//! data, which keeps simulated and experimental paths statistically
//! identical.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::field::RealField;

/// Stream index offset separating dark-frame RNG streams from data-frame
/// streams drawn from the same seed.
const DARK_STREAM_BASE: u64 = 1 << 32;

/// Camera statistics: per-pixel readout variance σ_k² (counts²), system gain,
/// constant black-level offset (counts), and the RNG seed all frames derive
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    variance: RealField,
    gain_inv: f64,
    black_level: f64,
    seed: u64,
}

impl NoiseModel {
    pub fn new(variance: RealField, gain_inv: f64, black_level: f64, seed: u64) -> Result<Self> {
        if let Some(bad) = variance.as_slice().iter().find(|&&v| !(v >= 0.0)) {
            return Err(Error::Argument(format!(
                "readout variance must be ≥ 0 everywhere, found {bad}"
            )));
        }
        if !(gain_inv > 0.0) {
            return Err(Error::Argument(format!("gain_inv must be > 0, got {gain_inv}")));
        }
        if !(black_level >= 0.0) {
            return Err(Error::Argument(format!("black_level must be ≥ 0, got {black_level}")));
        }
        Ok(Self { variance, gain_inv, black_level, seed })
    }

    /// Uniform readout noise of standard deviation `sigma` counts on an
    /// `height × width` sensor.
    pub fn uniform_sigma(
        sigma: f64,
        height: usize,
        width: usize,
        pitch: f64,
        gain_inv: f64,
        black_level: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Argument(format!("sigma must be ≥ 0, got {sigma}")));
        }
        Self::new(
            RealField::constant(height, width, pitch, sigma * sigma),
            gain_inv,
            black_level,
            seed,
        )
    }

    /// Per-pixel readout variance map σ_k².
    pub fn variance(&self) -> &RealField {
        &self.variance
    }

    pub fn gain_inv(&self) -> f64 {
        self.gain_inv
    }

    pub fn black_level(&self) -> f64 {
        self.black_level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent, reproducible RNG stream for one frame; frames may be
    /// sampled in parallel in any order with identical results.
    pub fn frame_rng(&self, frame_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_index);
        rng
    }
}

/// One noisy exposure of the expected intensity `i` (counts):
/// X_k = Poisson(I_k) + Normal(0, σ_k²) + black_level.
pub fn sample_frame(i: &RealField, model: &NoiseModel, rng: &mut impl Rng) -> Result<RealField> {
    model.variance.check_same_shape(i, "sample_frame")?;
    if let Some(bad) = i.as_slice().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::Domain(format!(
            "sample_frame: expected intensity must be ≥ 0, found {bad}"
        )));
    }
    let mut out = Vec::with_capacity(i.len());
    for (&mean, &var) in i.as_slice().iter().zip(model.variance.as_slice()) {
        let shot = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::Domain(format!("Poisson(λ={mean}): {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        let read = if var > 0.0 {
            Normal::new(0.0, var.sqrt())
                .map_err(|e| Error::Domain(format!("Normal(σ²={var}): {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        out.push(shot + read + model.black_level);
    }
    RealField::new(i.height(), i.width(), i.pitch(), out)
}

/// Frame sampled on its own deterministic stream, `frame_index` of the
/// model's seed.
pub fn sample_frame_indexed(
    i: &RealField,
    model: &NoiseModel,
    frame_index: u64,
) -> Result<RealField> {
    sample_frame(i, model, &mut model.frame_rng(frame_index))
}

/// `count` dark exposures (zero illumination): Normal(0, σ_k²) + black_level.
/// Uses a dedicated stream range so dark frames never collide with data
/// frames from the same seed.
pub fn sample_dark_stack(model: &NoiseModel, count: usize) -> Result<Vec<RealField>> {
    let (h, w) = model.variance.shape();
    let zero = RealField::zeros(h, w, model.variance.pitch());
    (0..count)
        .map(|k| sample_frame(&zero, model, &mut model.frame_rng(DARK_STREAM_BASE + k as u64)))
        .collect()
}

/// Background-subtract and convert to photoelectron counts:
/// (raw − dark_mean) × gain_inv. Output may be negative; that is expected
/// after background subtraction and is deliberately not cropped here.
pub fn preprocess(raw: &RealField, dark_mean: &RealField, gain_inv: f64) -> Result<RealField> {
    raw.check_same_shape(dark_mean, "preprocess")?;
    if !(gain_inv > 0.0) {
        return Err(Error::Argument(format!("gain_inv must be > 0, got {gain_inv}")));
    }
    let data = raw
        .as_slice()
        .iter()
        .zip(dark_mean.as_slice())
        .map(|(&r, &d)| (r - d) * gain_inv)
        .collect();
    RealField::new(raw.height(), raw.width(), raw.pitch(), data)
}

/// Per-pixel mean of a dark stack, the background image subtracted from every
/// measurement.
pub fn mean_frame(stack: &[RealField]) -> Result<RealField> {
    let first = stack
        .first()
        .ok_or_else(|| Error::Argument("mean_frame: empty stack".into()))?;
    let mut acc = vec![0.0; first.len()];
    for frame in stack {
        first.check_same_shape(frame, "mean_frame")?;
        for (a, &v) in acc.iter_mut().zip(frame.as_slice()) {
            *a += v;
        }
    }
    let n = stack.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    RealField::new(first.height(), first.width(), first.pitch(), acc)
}

/// Per-pixel unbiased sample variance (n−1 denominator) of a dark stack,
/// estimating the readout variance map σ_k². The stack must already be in
/// the same count units as preprocessed measurements.
pub fn estimate_variance_map(stack: &[RealField]) -> Result<RealField> {
    if stack.len() < 2 {
        return Err(Error::Argument(format!(
            "variance estimation needs at least 2 dark frames, got {}",
            stack.len()
        )));
    }
    let mean = mean_frame(stack)?;
    let mut acc = vec![0.0; mean.len()];
    for frame in stack {
        for ((a, &v), &m) in acc.iter_mut().zip(frame.as_slice()).zip(mean.as_slice()) {
            let d = v - m;
            *a += d * d;
        }
    }
    let denom = (stack.len() - 1) as f64;
    for a in &mut acc {
        *a /= denom;
    }
    RealField::new(mean.height(), mean.width(), mean.pitch(), acc)
}
