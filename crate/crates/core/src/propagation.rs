//! Scalar free-space propagation between the object plane and the camera
//! plane by the angular spectrum method, plus its exact adjoint for gradient
//! back-propagation.
//!
//! The transfer function H(fx, fy) = exp(i·2π·d·√(1/λ² − fx² − fy²)) is a pure
//! phase on the propagating band; evanescent components are hard-zeroed, so
//! |H| ∈ {0, 1} everywhere and propagation is unitary on band-limited fields.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{fft2, ifft2, ComplexField};

/// Geometry of a propagation step. `distance` may be negative for
/// back-propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorSpec {
    pub wavelength: f64,
    pub distance: f64,
    pub height: usize,
    pub width: usize,
    pub pitch: f64,
}

impl PropagatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) {
            return Err(Error::Argument(format!(
                "wavelength must be > 0, got {}",
                self.wavelength
            )));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::Argument(format!("pitch must be > 0, got {}", self.pitch)));
        }
        if !self.distance.is_finite() {
            return Err(Error::Argument(format!(
                "distance must be finite, got {}",
                self.distance
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Argument(format!(
                "propagator grid must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Precomputed angular spectrum operator. Immutable after construction and
/// safe to share across the per-position parallel passes.
#[derive(Debug, Clone)]
pub struct Propagator {
    spec: PropagatorSpec,
    transfer: ComplexField,
}

/// DFT sample frequency for index k of n samples at the given pitch, with the
/// usual wraparound ordering (non-negative frequencies first).
fn dft_freq(k: usize, n: usize, pitch: f64) -> f64 {
    let k = k as i64;
    let n_i = n as i64;
    let signed = if k <= (n_i - 1) / 2 { k } else { k - n_i };
    signed as f64 / (n as f64 * pitch)
}

pub fn build_propagator(spec: PropagatorSpec) -> Result<Propagator> {
    spec.validate()?;
    let inv_lambda_sq = 1.0 / (spec.wavelength * spec.wavelength);
    let transfer = ComplexField::from_fn(spec.height, spec.width, spec.pitch, |r, c| {
        let fy = dft_freq(r, spec.height, spec.pitch);
        let fx = dft_freq(c, spec.width, spec.pitch);
        let arg = inv_lambda_sq - fx * fx - fy * fy;
        if arg < 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(1.0, std::f64::consts::TAU * spec.distance * arg.sqrt())
        }
    });
    Ok(Propagator { spec, transfer })
}

impl Propagator {
    pub fn spec(&self) -> &PropagatorSpec {
        &self.spec
    }

    /// Transfer function sampled on the DFT frequency grid.
    pub fn transfer(&self) -> &ComplexField {
        &self.transfer
    }

    fn check_field(&self, field: &ComplexField) -> Result<()> {
        if field.shape() != (self.spec.height, self.spec.width) {
            return Err(Error::ShapeMismatch {
                what: "propagate",
                expected_h: self.spec.height,
                expected_w: self.spec.width,
                got_h: field.height(),
                got_w: field.width(),
            });
        }
        Ok(())
    }

    /// ifft2(H ⊙ fft2(field)).
    pub fn propagate(&self, field: &ComplexField) -> Result<ComplexField> {
        self.check_field(field)?;
        Ok(ifft2(&fft2(field).hadamard(&self.transfer)))
    }

    /// ifft2(conj(H) ⊙ fft2(field)); exact adjoint of [`Propagator::propagate`]
    /// with respect to the standard inner product.
    pub fn propagate_adjoint(&self, field: &ComplexField) -> Result<ComplexField> {
        self.check_field(field)?;
        let conj_h = self.transfer.map(|z| z.conj());
        Ok(ifft2(&fft2(field).hadamard(&conj_h)))
    }
}
