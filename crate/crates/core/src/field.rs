//! Dense 2-D complex and real fields on a uniform square-pixel grid, plus the
//! elementary array operations the rest of the crate is built from: region
//! extract/accumulate (an exactly adjoint pair) and unitary 2-D FFTs.
//!
//! Fields are immutable in normal use; operations return new values. Storage
//! is row-major `f64` / `Complex64`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

pub const ZERO_C: Complex64 = Complex64::new(0.0, 0.0);

/// 2-D complex-valued field with a physical pixel pitch in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    data: Vec<Complex64>,
    height: usize,
    width: usize,
    pitch: f64,
}

/// 2-D real-valued field (intensity frames, variance maps) with pixel pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    data: Vec<f64>,
    height: usize,
    width: usize,
    pitch: f64,
}

fn check_shape(height: usize, width: usize, pitch: f64, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!(
            "field shape must be at least 1x1, got {height}x{width}"
        )));
    }
    if !(pitch > 0.0) {
        return Err(Error::Argument(format!("pixel pitch must be > 0, got {pitch}")));
    }
    if len != height * width {
        return Err(Error::Argument(format!(
            "data length {len} does not match {height}x{width}"
        )));
    }
    Ok(())
}

macro_rules! common_field_impl {
    ($ty:ident, $scalar:ty, $zero:expr) => {
        impl $ty {
            pub fn new(height: usize, width: usize, pitch: f64, data: Vec<$scalar>) -> Result<Self> {
                check_shape(height, width, pitch, data.len())?;
                Ok(Self { data, height, width, pitch })
            }

            pub fn zeros(height: usize, width: usize, pitch: f64) -> Self {
                Self::new(height, width, pitch, vec![$zero; height * width])
                    .expect("zeros: shape checked by caller")
            }

            pub fn from_fn(
                height: usize,
                width: usize,
                pitch: f64,
                mut f: impl FnMut(usize, usize) -> $scalar,
            ) -> Self {
                let mut data = Vec::with_capacity(height * width);
                for r in 0..height {
                    for c in 0..width {
                        data.push(f(r, c));
                    }
                }
                Self::new(height, width, pitch, data).expect("from_fn: consistent shape")
            }

            pub fn constant(height: usize, width: usize, pitch: f64, value: $scalar) -> Self {
                Self::new(height, width, pitch, vec![value; height * width])
                    .expect("constant: consistent shape")
            }

            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }

            /// (height, width) pair.
            #[inline]
            pub fn shape(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            #[inline]
            pub fn pitch(&self) -> f64 {
                self.pitch
            }

            #[inline]
            pub fn len(&self) -> usize {
                self.data.len()
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            #[inline]
            pub fn idx(&self, row: usize, col: usize) -> usize {
                debug_assert!(row < self.height && col < self.width);
                row * self.width + col
            }

            #[inline]
            pub fn get(&self, row: usize, col: usize) -> $scalar {
                self.data[self.idx(row, col)]
            }

            #[inline]
            pub fn set(&mut self, row: usize, col: usize, value: $scalar) {
                let i = self.idx(row, col);
                self.data[i] = value;
            }

            pub fn as_slice(&self) -> &[$scalar] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [$scalar] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<$scalar> {
                self.data
            }

            /// New field with the same shape and pitch, data mapped element-wise.
            pub fn map(&self, f: impl Fn($scalar) -> $scalar) -> Self {
                Self {
                    data: self.data.iter().map(|&v| f(v)).collect(),
                    height: self.height,
                    width: self.width,
                    pitch: self.pitch,
                }
            }

            pub fn same_shape(&self, other: &Self) -> bool {
                self.height == other.height && self.width == other.width
            }

            pub fn check_same_shape(&self, other: &Self, what: &'static str) -> Result<()> {
                if self.same_shape(other) {
                    Ok(())
                } else {
                    Err(Error::ShapeMismatch {
                        what,
                        expected_h: self.height,
                        expected_w: self.width,
                        got_h: other.height,
                        got_w: other.width,
                    })
                }
            }
        }
    };
}

common_field_impl!(ComplexField, Complex64, ZERO_C);
common_field_impl!(RealField, f64, 0.0);

impl ComplexField {
    /// Squared L2 norm, `Σ |z|²`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Complex inner product `⟨self, other⟩ = Σ conj(self)·other`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Element-wise product, `self ⊙ other`.
    pub fn hadamard(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
            height: self.height,
            width: self.width,
            pitch: self.pitch,
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        self.map(|z| z * factor)
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    /// Element-wise product with a real weight field.
    pub fn weighted(&self, weights: &RealField) -> Self {
        debug_assert!(self.height == weights.height && self.width == weights.width);
        Self {
            data: self
                .data
                .iter()
                .zip(&weights.data)
                .map(|(z, &w)| z * w)
                .collect(),
            height: self.height,
            width: self.width,
            pitch: self.pitch,
        }
    }

    /// Add `other` in place.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Per-pixel squared modulus as a real field.
    pub fn intensity(&self) -> RealField {
        RealField {
            data: self.data.iter().map(|z| z.norm_sqr()).collect(),
            height: self.height,
            width: self.width,
            pitch: self.pitch,
        }
    }
}

impl RealField {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }
}

/// Copy of the `shape` sub-region of `field` whose top-left pixel sits at
/// `(top, left)`. Pitch is preserved.
pub fn extract_region(
    field: &ComplexField,
    top_left: (usize, usize),
    shape: (usize, usize),
) -> Result<ComplexField> {
    let (top, left) = top_left;
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::Argument("extract_region: empty shape".into()));
    }
    if top + h > field.height || left + w > field.width {
        return Err(Error::OutOfBounds {
            what: "extract_region",
            row: (top + h) as i64 - 1,
            col: (left + w) as i64 - 1,
            height: field.height,
            width: field.width,
        });
    }
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let start = (top + r) * field.width + left;
        data.extend_from_slice(&field.data[start..start + w]);
    }
    Ok(ComplexField {
        data,
        height: h,
        width: w,
        pitch: field.pitch,
    })
}

/// Adjoint of [`extract_region`]: adds `patch` element-wise into `target` at
/// `(top, left)`, leaving all other pixels unchanged.
pub fn accumulate_region(
    target: &ComplexField,
    top_left: (usize, usize),
    patch: &ComplexField,
) -> Result<ComplexField> {
    let mut out = target.clone();
    accumulate_region_mut(&mut out, top_left, patch)?;
    Ok(out)
}

/// In-place form of [`accumulate_region`] used by the solver's gradient
/// accumulation buffer.
pub fn accumulate_region_mut(
    target: &mut ComplexField,
    top_left: (usize, usize),
    patch: &ComplexField,
) -> Result<()> {
    let (top, left) = top_left;
    if top + patch.height > target.height || left + patch.width > target.width {
        return Err(Error::OutOfBounds {
            what: "accumulate_region",
            row: (top + patch.height) as i64 - 1,
            col: (left + patch.width) as i64 - 1,
            height: target.height,
            width: target.width,
        });
    }
    for r in 0..patch.height {
        let t0 = (top + r) * target.width + left;
        let p0 = r * patch.width;
        for c in 0..patch.width {
            target.data[t0 + c] += patch.data[p0 + c];
        }
    }
    Ok(())
}

thread_local! {
    // rustfft's planner caches plans by length internally; one per thread
    // avoids lock contention in the per-position parallel passes.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn fft2_dir(field: &ComplexField, direction: FftDirection) -> ComplexField {
    let (h, w) = field.shape();
    let mut buf = field.data.clone();

    let row_fft = plan(w, direction);
    let mut scratch = vec![ZERO_C; row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let mut cols = vec![ZERO_C; h * w];
    transpose(&buf, &mut cols, h, w);
    let col_fft = plan(h, direction);
    scratch.resize(col_fft.get_inplace_scratch_len().max(1), ZERO_C);
    for col in cols.chunks_exact_mut(h) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    transpose(&cols, &mut buf, w, h);

    // Unitary normalization: 1/sqrt(HW) in each direction so Parseval holds.
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for z in &mut buf {
        *z *= scale;
    }
    ComplexField {
        data: buf,
        height: h,
        width: w,
        pitch: field.pitch,
    }
}

/// Unitary forward DFT (scaled by `1/sqrt(HW)`).
pub fn fft2(field: &ComplexField) -> ComplexField {
    fft2_dir(field, FftDirection::Forward)
}

/// Unitary inverse DFT (also scaled by `1/sqrt(HW)`), exact inverse of [`fft2`].
pub fn ifft2(field: &ComplexField) -> ComplexField {
    fft2_dir(field, FftDirection::Inverse)
}
