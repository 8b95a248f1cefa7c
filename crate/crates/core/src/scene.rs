//! Procedural test scenes: a ground-truth object with both amplitude and
//! phase contrast (bar chart overlaid with smooth phase blobs), a tapered
//! disc illumination probe, and the scan geometry connecting them.
//!
//! The default scene is desk-scale: 128×128 object, 64×64 probe window,
//! ~20 Fermat-spiral positions at 60% linear overlap. The pixel pitch is
//! 27.6 µm (a 4×-binned version of the reference camera's 6.9 µm): at 6.9 µm
//! a 64-pixel window undersamples the 37.7 mm transfer function's phase,
//! while at 27.6 µm the propagator is well sampled and the diffracted probe
//! still fits the window.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::propagation::PropagatorSpec;
use crate::scan::{fermat_spiral, order_tsp, scale_for_overlap, ScanPattern};

/// Full description of a simulated measurement scene. All physical
/// quantities are SI; `_counts` fields are in photoelectron counts.
/// A JSON config may specify any subset of fields; missing ones take the
/// stock values below, and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub object_height: usize,
    pub object_width: usize,
    pub probe_height: usize,
    pub probe_width: usize,
    pub pitch_m: f64,
    pub wavelength_m: f64,
    pub distance_m: f64,
    pub probe_radius_m: f64,
    /// Quadratic defocus phase at the probe edge, radians.
    pub probe_defocus_rad: f64,
    pub n_positions: usize,
    pub target_overlap: f64,
    pub sigma_counts: f64,
    pub black_level_counts: f64,
    pub gain_inv_e_per_adu: f64,
    pub scene_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let pitch = 27.6e-6;
        Self {
            object_height: 128,
            object_width: 128,
            probe_height: 64,
            probe_width: 64,
            pitch_m: pitch,
            wavelength_m: 561e-9,
            distance_m: 37.7e-3,
            probe_radius_m: 10.0 * pitch,
            probe_defocus_rad: PROBE_DEFOCUS_RAD,
            n_positions: 20,
            target_overlap: 0.6,
            sigma_counts: 1.5,
            black_level_counts: 0.0,
            gain_inv_e_per_adu: 1.0,
            scene_seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.probe_height > self.object_height || self.probe_width > self.object_width {
            return Err(Error::Config(format!(
                "probe window {}x{} larger than object {}x{}",
                self.probe_height, self.probe_width, self.object_height, self.object_width
            )));
        }
        for (name, v) in [
            ("pitch_m", self.pitch_m),
            ("wavelength_m", self.wavelength_m),
            ("probe_radius_m", self.probe_radius_m),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.target_overlap) {
            return Err(Error::Config(format!(
                "target_overlap must be in [0, 1), got {}",
                self.target_overlap
            )));
        }
        if self.n_positions == 0 {
            return Err(Error::Config("n_positions must be ≥ 1".into()));
        }
        if !(self.sigma_counts >= 0.0) {
            return Err(Error::Config(format!(
                "sigma_counts must be ≥ 0, got {}",
                self.sigma_counts
            )));
        }
        // The defocus phase gradient peaks at 2κ/R; keep it under π per
        // pixel so the probe is sampled without aliasing.
        let radius_px = self.probe_radius_m / self.pitch_m;
        let max_defocus = std::f64::consts::PI * radius_px / 2.0;
        if !self.probe_defocus_rad.is_finite() || self.probe_defocus_rad.abs() > max_defocus {
            return Err(Error::Config(format!(
                "probe_defocus_rad {} exceeds the sampling limit ±{max_defocus:.2} \
                 for a {radius_px:.1}-pixel probe radius",
                self.probe_defocus_rad
            )));
        }
        Ok(())
    }

    pub fn propagator_spec(&self) -> PropagatorSpec {
        PropagatorSpec {
            wavelength: self.wavelength_m,
            distance: self.distance_m,
            height: self.probe_height,
            width: self.probe_width,
            pitch: self.pitch_m,
        }
    }
}

/// Ground-truth object: amplitude is a bar chart (vertical bars of random
/// width at two contrast levels crossed by a few dimming horizontal stripes),
/// phase is a sum of smooth Gaussian blobs spanning roughly ±1 rad.
/// Deterministic in `scene_seed`.
pub fn ground_truth_object(spec: &SceneSpec) -> Result<ComplexField> {
    spec.validate()?;
    let (h, w) = (spec.object_height, spec.object_width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.scene_seed);

    let mut amplitude = vec![1.0f64; h * w];
    let mut col = 0usize;
    let mut dim = false;
    while col < w {
        let bar = rng.random_range(6..=14).min(w - col);
        if dim {
            let level = rng.random_range(0.3..0.7);
            for r in 0..h {
                for c in col..col + bar {
                    amplitude[r * w + c] = level;
                }
            }
        }
        dim = !dim;
        col += bar;
    }
    for _ in 0..3 {
        let stripe_h = rng.random_range(4..=8);
        let top = rng.random_range(0..h.saturating_sub(stripe_h).max(1));
        let factor = rng.random_range(0.5..0.9);
        for r in top..(top + stripe_h).min(h) {
            for c in 0..w {
                amplitude[r * w + c] *= factor;
            }
        }
    }

    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(10.0..24.0),
                rng.random_range(-1.2..1.2),
            )
        })
        .collect();

    Ok(ComplexField::from_fn(h, w, spec.pitch_m, |r, c| {
        let mut phase = 0.0;
        for &(br, bc, sigma, amp) in &blobs {
            let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
            phase += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        Complex64::from_polar(amplitude[r * w + c], phase)
    }))
}

/// Default defocus phase at the probe edge, in radians. Mild curvature
/// spreads each exposure over enough camera pixels to condition flat-start
/// phase retrieval, while keeping the per-frame dynamic range high enough
/// that low photon budgets genuinely starve the reconstruction instead of
/// merely flattening every frame into the readout floor.
pub const PROBE_DEFOCUS_RAD: f64 = 3.0;

/// Ground-truth illumination: a logistic-tapered disc of the nominal probe
/// radius with a quadratic defocus phase, centered in the probe window.
/// Total photon budget is normalized to 1; callers rescale to the budget
/// they want.
pub fn ground_truth_probe(spec: &SceneSpec) -> Result<ComplexField> {
    spec.validate()?;
    let (h, w) = (spec.probe_height, spec.probe_width);
    let radius = spec.probe_radius_m;
    let taper = 2.0 * spec.pitch_m;
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let field = ComplexField::from_fn(h, w, spec.pitch_m, |r, c| {
        let d = ((r as f64 - cy) * spec.pitch_m).hypot((c as f64 - cx) * spec.pitch_m);
        let amp = 1.0 / (1.0 + ((d - radius) / taper).exp());
        let phase = spec.probe_defocus_rad * (d / radius).powi(2);
        Complex64::from_polar(amp, phase)
    });
    let norm = field.norm();
    if norm == 0.0 {
        return Err(Error::Domain("probe recipe produced a zero field".into()));
    }
    Ok(field.scaled(Complex64::new(1.0 / norm, 0.0)))
}

/// Hard uniform disc of the nominal radius with flat phase: the solver's
/// initial probe guess for calibration runs. Budget normalized to 1.
pub fn nominal_disc_probe(spec: &SceneSpec) -> Result<ComplexField> {
    spec.validate()?;
    let (h, w) = (spec.probe_height, spec.probe_width);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let field = ComplexField::from_fn(h, w, spec.pitch_m, |r, c| {
        let d = ((r as f64 - cy) * spec.pitch_m).hypot((c as f64 - cx) * spec.pitch_m);
        if d <= spec.probe_radius_m {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let norm = field.norm();
    if norm == 0.0 {
        return Err(Error::Domain("disc radius smaller than one pixel".into()));
    }
    Ok(field.scaled(Complex64::new(1.0 / norm, 0.0)))
}

/// The scene's scan geometry: a travel-ordered Fermat spiral calibrated to
/// the target overlap, snapped to integer probe-window offsets in object
/// coordinates. Also returns the physical pattern for CSV export.
pub fn scan_positions(spec: &SceneSpec) -> Result<(Vec<(usize, usize)>, ScanPattern)> {
    spec.validate()?;
    let pattern = if spec.n_positions == 1 {
        fermat_spiral(1, spec.pitch_m, spec.probe_radius_m, spec.target_overlap)?
    } else {
        let scale =
            scale_for_overlap(spec.probe_radius_m, spec.target_overlap, spec.n_positions)?;
        order_tsp(&fermat_spiral(
            spec.n_positions,
            scale,
            spec.probe_radius_m,
            spec.target_overlap,
        )?)
    };
    let positions = snap_positions(spec, &pattern)?;
    Ok((positions, pattern))
}

/// Convert physical pattern coordinates (meters, origin at pattern center)
/// to integer top-left probe-window offsets, centering the pattern on the
/// object.
pub fn snap_positions(spec: &SceneSpec, pattern: &ScanPattern) -> Result<Vec<(usize, usize)>> {
    let base_r = (spec.object_height - spec.probe_height) as f64 / 2.0;
    let base_c = (spec.object_width - spec.probe_width) as f64 / 2.0;
    let mut out = Vec::with_capacity(pattern.len());
    for &(x, y) in pattern.positions() {
        let r = (base_r + y / spec.pitch_m).round();
        let c = (base_c + x / spec.pitch_m).round();
        let max_r = (spec.object_height - spec.probe_height) as f64;
        let max_c = (spec.object_width - spec.probe_width) as f64;
        if !(0.0..=max_r).contains(&r) || !(0.0..=max_c).contains(&c) {
            return Err(Error::OutOfBounds {
                what: "snapped scan position",
                row: r as i64,
                col: c as i64,
                height: spec.object_height - spec.probe_height + 1,
                width: spec.object_width - spec.probe_width + 1,
            });
        }
        out.push((r as usize, c as usize));
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(
            "scan positions collide after pixel snapping; widen the pattern or enlarge pixels"
                .into(),
        ));
    }
    Ok(out)
}
