//! On-disk artifact formats: the PGA1 binary array container used for
//! objects, probes, frames, and variance maps; PNG renders of complex fields;
//! and content hashing for manifest integrity.
//!
//! PGA1 layout (all little-endian): magic `PGA1`, u8 dtype (0 = f64 real,
//! 1 = f64 complex interleaved re/im), u8 ndim, ndim u64 dims, row-major f64
//! payload, then a single f64 trailer holding the pixel pitch in meters.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};

const MAGIC: [u8; 4] = *b"PGA1";
const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

/// Any array the PGA1 container can hold. Stacks store their frames
/// contiguously with dims `[n, height, width]`; all frames share one pitch.
#[derive(Debug, Clone, PartialEq)]
pub enum Pga1Array {
    Real(RealField),
    Complex(ComplexField),
    RealStack(Vec<RealField>),
    ComplexStack(Vec<ComplexField>),
}

impl Pga1Array {
    fn dtype(&self) -> u8 {
        match self {
            Pga1Array::Real(_) | Pga1Array::RealStack(_) => DTYPE_REAL,
            Pga1Array::Complex(_) | Pga1Array::ComplexStack(_) => DTYPE_COMPLEX,
        }
    }

    fn dims(&self) -> Result<Vec<u64>> {
        match self {
            Pga1Array::Real(f) => Ok(vec![f.height() as u64, f.width() as u64]),
            Pga1Array::Complex(f) => Ok(vec![f.height() as u64, f.width() as u64]),
            Pga1Array::RealStack(frames) => {
                let (h, w) = stack_shape(frames.iter().map(|f| f.shape()))?;
                Ok(vec![frames.len() as u64, h as u64, w as u64])
            }
            Pga1Array::ComplexStack(frames) => {
                let (h, w) = stack_shape(frames.iter().map(|f| f.shape()))?;
                Ok(vec![frames.len() as u64, h as u64, w as u64])
            }
        }
    }

    fn pitch(&self) -> f64 {
        match self {
            Pga1Array::Real(f) => f.pitch(),
            Pga1Array::Complex(f) => f.pitch(),
            Pga1Array::RealStack(frames) => frames[0].pitch(),
            Pga1Array::ComplexStack(frames) => frames[0].pitch(),
        }
    }
}

fn stack_shape(mut shapes: impl Iterator<Item = (usize, usize)>) -> Result<(usize, usize)> {
    let first = shapes
        .next()
        .ok_or_else(|| Error::Argument("cannot write an empty frame stack".into()))?;
    for s in shapes {
        if s != first {
            return Err(Error::Argument(format!(
                "stack frames disagree on shape: {}x{} vs {}x{}",
                first.0, first.1, s.0, s.1
            )));
        }
    }
    Ok(first)
}

pub fn write_pga1(path: impl AsRef<Path>, array: &Pga1Array) -> Result<()> {
    let dims = array.dims()?;
    let count: u64 = dims.iter().product();
    let values_per_elem = if array.dtype() == DTYPE_COMPLEX { 2 } else { 1 };
    let mut bytes =
        Vec::with_capacity(4 + 2 + dims.len() * 8 + (count as usize) * values_per_elem * 8 + 8);
    bytes.extend_from_slice(&MAGIC);
    bytes.push(array.dtype());
    bytes.push(dims.len() as u8);
    for d in &dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    match array {
        Pga1Array::Real(f) => push_real(&mut bytes, f.as_slice()),
        Pga1Array::RealStack(frames) => {
            for f in frames {
                push_real(&mut bytes, f.as_slice());
            }
        }
        Pga1Array::Complex(f) => push_complex(&mut bytes, f.as_slice()),
        Pga1Array::ComplexStack(frames) => {
            for f in frames {
                push_complex(&mut bytes, f.as_slice());
            }
        }
    }
    bytes.extend_from_slice(&array.pitch().to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

fn push_real(bytes: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_complex(bytes: &mut Vec<u8>, values: &[Complex64]) {
    for z in values {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                message: format!(
                    "truncated while reading {what}: expected {n} more bytes, file has {}",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("take returned 8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("take returned 8 bytes")))
    }
}

pub fn read_pga1(path: impl AsRef<Path>) -> Result<Pga1Array> {
    let bytes = fs::read(&path)?;
    let mut r = Reader { bytes: &bytes, offset: 0 };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected \"PGA1\"", String::from_utf8_lossy(magic)),
        });
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_REAL && dtype != DTYPE_COMPLEX {
        return Err(Error::Format {
            offset: 4,
            message: format!("unknown dtype code {dtype}"),
        });
    }
    let ndim = r.u8("ndim")?;
    if ndim != 2 && ndim != 3 {
        return Err(Error::Format {
            offset: 5,
            message: format!("unsupported ndim {ndim}, expected 2 or 3"),
        });
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 0..ndim {
        let d = r.u64(&format!("dim {i}"))?;
        if d == 0 {
            return Err(Error::Format {
                offset: (6 + 8 * i as usize) as u64,
                message: format!("dim {i} is zero"),
            });
        }
        dims.push(d as usize);
    }
    let count: usize = dims.iter().product();
    let values_per_elem = if dtype == DTYPE_COMPLEX { 2 } else { 1 };
    let payload_offset = r.offset;
    let payload_bytes = count * values_per_elem * 8;
    if bytes.len() != payload_offset + payload_bytes + 8 {
        return Err(Error::Format {
            offset: payload_offset as u64,
            message: format!(
                "payload + trailer length mismatch: expected {} bytes, file has {}",
                payload_offset + payload_bytes + 8,
                bytes.len()
            ),
        });
    }

    let mut values = Vec::with_capacity(count * values_per_elem);
    for i in 0..count * values_per_elem {
        values.push(r.f64(&format!("payload value {i}"))?);
    }
    let pitch = r.f64("pitch trailer")?;
    if !(pitch > 0.0) {
        return Err(Error::Format {
            offset: (payload_offset + payload_bytes) as u64,
            message: format!("pitch trailer must be > 0, got {pitch}"),
        });
    }

    let to_complex = |vals: &[f64]| -> Vec<Complex64> {
        vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    };

    match (dtype, ndim) {
        (DTYPE_REAL, 2) => Ok(Pga1Array::Real(RealField::new(dims[0], dims[1], pitch, values)?)),
        (DTYPE_COMPLEX, 2) => Ok(Pga1Array::Complex(ComplexField::new(
            dims[0],
            dims[1],
            pitch,
            to_complex(&values),
        )?)),
        (DTYPE_REAL, 3) => {
            let per = dims[1] * dims[2];
            let frames = values
                .chunks_exact(per)
                .map(|c| RealField::new(dims[1], dims[2], pitch, c.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Pga1Array::RealStack(frames))
        }
        (DTYPE_COMPLEX, 3) => {
            let per = dims[1] * dims[2] * 2;
            let frames = values
                .chunks_exact(per)
                .map(|c| ComplexField::new(dims[1], dims[2], pitch, to_complex(c)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Pga1Array::ComplexStack(frames))
        }
        _ => unreachable!("dtype and ndim validated above"),
    }
}

/// Read a file that must hold a 2-D complex array.
pub fn read_complex_field(path: impl AsRef<Path>) -> Result<ComplexField> {
    match read_pga1(&path)? {
        Pga1Array::Complex(f) => Ok(f),
        other => Err(Error::Format {
            offset: 4,
            message: format!(
                "{} holds a {} array, expected 2-D complex",
                path.as_ref().display(),
                describe(&other)
            ),
        }),
    }
}

/// Read a file that must hold a 2-D real array.
pub fn read_real_field(path: impl AsRef<Path>) -> Result<RealField> {
    match read_pga1(&path)? {
        Pga1Array::Real(f) => Ok(f),
        other => Err(Error::Format {
            offset: 4,
            message: format!(
                "{} holds a {} array, expected 2-D real",
                path.as_ref().display(),
                describe(&other)
            ),
        }),
    }
}

/// Read a file that must hold a 3-D real frame stack.
pub fn read_real_stack(path: impl AsRef<Path>) -> Result<Vec<RealField>> {
    match read_pga1(&path)? {
        Pga1Array::RealStack(frames) => Ok(frames),
        other => Err(Error::Format {
            offset: 4,
            message: format!(
                "{} holds a {} array, expected 3-D real stack",
                path.as_ref().display(),
                describe(&other)
            ),
        }),
    }
}

fn describe(a: &Pga1Array) -> &'static str {
    match a {
        Pga1Array::Real(_) => "2-D real",
        Pga1Array::Complex(_) => "2-D complex",
        Pga1Array::RealStack(_) => "3-D real stack",
        Pga1Array::ComplexStack(_) => "3-D complex stack",
    }
}

/// Render a complex field as an 8-bit RGB PNG: hue encodes phase, brightness
/// encodes amplitude relative to the field maximum, saturation is full.
pub fn render_complex_png(field: &ComplexField, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = field.shape();
    let max_amp = field.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let z = field.get(r, c);
            let value = if max_amp > 0.0 { z.norm() / max_amp } else { 0.0 };
            let mut phase = z.arg();
            if phase < 0.0 {
                phase += std::f64::consts::TAU;
            }
            let hue = phase / std::f64::consts::TAU;
            img.put_pixel(c as u32, r as u32, image::Rgb(hsv_to_rgb(hue, 1.0, value)));
        }
    }
    img.save(path.as_ref())
        .map_err(|e| Error::Argument(format!("PNG write failed: {e}")))?;
    Ok(())
}

/// `h` in [0,1), `s` and `v` in [0,1]; standard hexcone conversion.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let q8 = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    [q8(r), q8(g), q8(b)]
}

/// Hex-encoded SHA-256 of a file's contents, for manifest integrity checks.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
