//! Ptychographic forward model: (object, probe, scan position) to predicted
//! camera intensity, and the adjoint pass turning a per-pixel loss derivative
//! dL/dI into Wirtinger gradients with respect to object and probe.
//!
//! Gradient convention: all complex gradients g here are derivatives with
//! respect to the conjugated parameter, so for a real loss L and parameter
//! θ = x + iy the real partials are ∂L/∂x = 2·Re g and ∂L/∂y = 2·Im g. The
//! finite-difference tests below pin this convention.

use crate::error::{Error, Result};
use crate::field::{accumulate_region_mut, extract_region, ComplexField, RealField};
use crate::propagation::{build_propagator, Propagator, PropagatorSpec};

/// Immutable description of one ptychographic measurement setup: a complex
/// object, a smaller complex probe, integer pixel scan offsets (top-left of
/// the probe window in object coordinates), and the object-to-camera
/// propagation geometry.
#[derive(Debug, Clone)]
pub struct Scenario {
    object: ComplexField,
    probe: ComplexField,
    positions: Vec<(usize, usize)>,
    propagator: Propagator,
}

/// Cached per-position forward pass: the extracted object patch and the field
/// at the camera. Reused by the backward pass so object and probe gradients
/// share one propagation adjoint.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub top_left: (usize, usize),
    pub object_patch: ComplexField,
    pub detector: ComplexField,
}

/// Wirtinger gradients produced by one backward pass, in probe-window
/// coordinates. `object_patch` must be scattered to object coordinates at
/// `top_left` by the caller (or via [`Scenario::gradient_object`]).
#[derive(Debug, Clone)]
pub struct PositionGradients {
    pub top_left: (usize, usize),
    pub object_patch: ComplexField,
    pub probe: ComplexField,
}

impl Scenario {
    pub fn new(
        object: ComplexField,
        probe: ComplexField,
        positions: Vec<(usize, usize)>,
        propagator_spec: PropagatorSpec,
    ) -> Result<Self> {
        if propagator_spec.height != probe.height() || propagator_spec.width != probe.width() {
            return Err(Error::ShapeMismatch {
                what: "propagator grid vs probe",
                expected_h: probe.height(),
                expected_w: probe.width(),
                got_h: propagator_spec.height,
                got_w: propagator_spec.width,
            });
        }
        if positions.is_empty() {
            return Err(Error::Argument("scenario needs at least one scan position".into()));
        }
        for &(top, left) in &positions {
            if top + probe.height() > object.height() || left + probe.width() > object.width() {
                return Err(Error::OutOfBounds {
                    what: "scan position probe window",
                    row: (top + probe.height()) as i64 - 1,
                    col: (left + probe.width()) as i64 - 1,
                    height: object.height(),
                    width: object.width(),
                });
            }
        }
        let propagator = build_propagator(propagator_spec)?;
        Ok(Self { object, probe, positions, propagator })
    }

    pub fn object(&self) -> &ComplexField {
        &self.object
    }

    pub fn probe(&self) -> &ComplexField {
        &self.probe
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    /// Swap in a new object estimate (same shape required).
    pub fn replace_object(&mut self, object: ComplexField) -> Result<()> {
        self.object.check_same_shape(&object, "replace_object")?;
        self.object = object;
        Ok(())
    }

    /// Swap in a new probe estimate (same shape required).
    pub fn replace_probe(&mut self, probe: ComplexField) -> Result<()> {
        self.probe.check_same_shape(&probe, "replace_probe")?;
        self.probe = probe;
        Ok(())
    }

    fn position(&self, index: usize) -> Result<(usize, usize)> {
        self.positions
            .get(index)
            .copied()
            .ok_or(Error::IndexOutOfRange { index, len: self.positions.len() })
    }

    /// Run the forward model at one position: exit wave P ⊙ O_patch
    /// propagated to the camera.
    pub fn forward(&self, position_index: usize) -> Result<ForwardPass> {
        let top_left = self.position(position_index)?;
        let object_patch = extract_region(&self.object, top_left, self.probe.shape())?;
        let exit = self.probe.hadamard(&object_patch);
        let detector = self.propagator.propagate(&exit)?;
        Ok(ForwardPass { top_left, object_patch, detector })
    }

    /// Noise-free predicted camera intensity I = |propagate(P ⊙ O_patch)|².
    pub fn predict_intensity(&self, position_index: usize) -> Result<RealField> {
        Ok(self.forward(position_index)?.detector.intensity())
    }

    /// Backward pass: given dL/dI at the camera, produce Wirtinger gradients
    /// for the object patch and the probe. One adjoint propagation serves
    /// both: with B = propagate_adjoint(dL_dI ⊙ E),
    /// g_object = conj(P) ⊙ B and g_probe = conj(O_patch) ⊙ B.
    pub fn backward(&self, pass: &ForwardPass, dl_di: &RealField) -> Result<PositionGradients> {
        if dl_di.shape() != pass.detector.shape() {
            return Err(Error::ShapeMismatch {
                what: "dL/dI vs camera",
                expected_h: pass.detector.height(),
                expected_w: pass.detector.width(),
                got_h: dl_di.height(),
                got_w: dl_di.width(),
            });
        }
        let back = self.propagator.propagate_adjoint(&pass.detector.weighted(dl_di))?;
        Ok(PositionGradients {
            top_left: pass.top_left,
            object_patch: self.probe.conj().hadamard(&back),
            probe: pass.object_patch.conj().hadamard(&back),
        })
    }

    /// Object gradient scattered into full object coordinates.
    pub fn gradient_object(&self, position_index: usize, dl_di: &RealField) -> Result<ComplexField> {
        let pass = self.forward(position_index)?;
        let grads = self.backward(&pass, dl_di)?;
        let mut full = ComplexField::zeros(self.object.height(), self.object.width(), self.object.pitch());
        accumulate_region_mut(&mut full, grads.top_left, &grads.object_patch)?;
        Ok(full)
    }

    /// Probe gradient for one position, in probe-window coordinates.
    pub fn gradient_probe(&self, position_index: usize, dl_di: &RealField) -> Result<ComplexField> {
        let pass = self.forward(position_index)?;
        Ok(self.backward(&pass, dl_di)?.probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const WAVELENGTH: f64 = 561e-9;
    const DISTANCE: f64 = 37.7e-3;
    const PITCH: f64 = 6.9e-6;

    fn prop_spec(h: usize, w: usize) -> PropagatorSpec {
        PropagatorSpec {
            wavelength: WAVELENGTH,
            distance: DISTANCE,
            height: h,
            width: w,
            pitch: PITCH,
        }
    }

    fn random_complex(h: usize, w: usize, rng: &mut impl Rng) -> ComplexField {
        ComplexField::from_fn(h, w, PITCH, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_scenario(seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let object = random_complex(16, 16, &mut rng);
        let probe = random_complex(8, 8, &mut rng);
        Scenario::new(object, probe, vec![(0, 0), (5, 7)], prop_spec(8, 8)).unwrap()
    }

    /// L(θ) = Σ_positions Σ_px I, the simplest loss (dL/dI ≡ 1).
    fn total_intensity(s: &Scenario) -> f64 {
        (0..s.positions().len())
            .map(|k| s.predict_intensity(k).unwrap().sum())
            .sum()
    }

    #[test]
    fn zero_probe_gives_zero_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let object = random_complex(16, 16, &mut rng);
        let probe = ComplexField::zeros(8, 8, PITCH);
        let s = Scenario::new(object, probe, vec![(2, 3)], prop_spec(8, 8)).unwrap();
        assert_eq!(s.predict_intensity(0).unwrap().sum(), 0.0);
    }

    #[test]
    fn unit_object_total_intensity_equals_probe_energy() {
        // Probe spectra on this grid sit entirely inside the propagating
        // band, so propagation is exactly unitary and Σ I = Σ |P|².
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let object = ComplexField::constant(16, 16, PITCH, Complex64::new(1.0, 0.0));
        let probe = random_complex(8, 8, &mut rng);
        let energy = probe.norm_sq();
        let s = Scenario::new(object, probe, vec![(4, 4)], prop_spec(8, 8)).unwrap();
        let total = s.predict_intensity(0).unwrap().sum();
        assert!((total - energy).abs() < 1e-12 * energy);
    }

    #[test]
    fn intensity_invariant_under_global_object_phase() {
        let s = random_scenario(9);
        let i0 = s.predict_intensity(1).unwrap();
        let mut rotated = s.clone();
        rotated
            .replace_object(s.object().scaled(Complex64::from_polar(1.0, 1.234)))
            .unwrap();
        let i1 = rotated.predict_intensity(1).unwrap();
        for (a, b) in i0.as_slice().iter().zip(i1.as_slice()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_dl_di_gives_zero_gradients() {
        let s = random_scenario(10);
        let zero = RealField::zeros(8, 8, PITCH);
        assert_eq!(s.gradient_object(0, &zero).unwrap().norm(), 0.0);
        assert_eq!(s.gradient_probe(0, &zero).unwrap().norm(), 0.0);
    }

    #[test]
    fn unit_object_probe_gradient_is_backpropagated_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let object = ComplexField::constant(16, 16, PITCH, Complex64::new(1.0, 0.0));
        let probe = random_complex(8, 8, &mut rng);
        let s = Scenario::new(object, probe, vec![(3, 3)], prop_spec(8, 8)).unwrap();
        let dl_di = RealField::from_fn(8, 8, PITCH, |_, _| rng.random::<f64>());
        let pass = s.forward(0).unwrap();
        let expected = s
            .propagator()
            .propagate_adjoint(&pass.detector.weighted(&dl_di))
            .unwrap();
        let g = s.gradient_probe(0, &dl_di).unwrap();
        for (a, b) in g.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn object_gradient_carries_conjugate_probe_factor() {
        // For a fixed back-propagated field B, the object gradient is
        // conj(P) ⊙ B, so rotating the probe by e^{iφ} while holding B fixed
        // rotates the gradient by e^{-iφ}.
        let s = random_scenario(12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dl_di = RealField::from_fn(8, 8, PITCH, |_, _| rng.random::<f64>());
        let pass = s.forward(0).unwrap();
        let back = s
            .propagator()
            .propagate_adjoint(&pass.detector.weighted(&dl_di))
            .unwrap();
        let phi = Complex64::from_polar(1.0, 0.77);
        let g_base = s.probe().conj().hadamard(&back);
        let g_rotated = s.probe().scaled(phi).conj().hadamard(&back);
        for (a, b) in g_rotated.as_slice().iter().zip(g_base.as_slice()) {
            assert!((a - b * phi.conj()).norm() < 1e-14);
        }
        // End to end, where the camera field also picks up the probe phase,
        // the two rotations cancel: the object gradient is invariant to a
        // global probe phase.
        let mut rotated = s.clone();
        rotated.replace_probe(s.probe().scaled(phi)).unwrap();
        let g0 = s.gradient_object(0, &dl_di).unwrap();
        let g1 = rotated.gradient_object(0, &dl_di).unwrap();
        for (a, b) in g0.as_slice().iter().zip(g1.as_slice()) {
            assert!((a - b).norm() <= 1e-13 * a.norm().max(1.0));
        }
    }

    #[test]
    fn object_phase_rotation_rotates_gradient() {
        let s = random_scenario(14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let dl_di = RealField::from_fn(8, 8, PITCH, |_, _| rng.random::<f64>() - 0.5);
        let phi = Complex64::from_polar(1.0, -0.41);
        let mut rotated = s.clone();
        rotated.replace_object(s.object().scaled(phi)).unwrap();
        let g0 = s.gradient_object(1, &dl_di).unwrap();
        let g1 = rotated.gradient_object(1, &dl_di).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g0.as_slice()) {
            assert!((a - b * phi).norm() <= 1e-13 * b.norm().max(1.0));
        }
    }

    #[test]
    fn adjoint_is_linear_in_dl_di() {
        let s = random_scenario(16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d1 = RealField::from_fn(8, 8, PITCH, |_, _| rng.random::<f64>() - 0.5);
        let d2 = RealField::from_fn(8, 8, PITCH, |_, _| rng.random::<f64>() - 0.5);
        let (a, b) = (0.7, -1.3);
        let combined = RealField::from_fn(8, 8, PITCH, |r, c| a * d1.get(r, c) + b * d2.get(r, c));
        let g1 = s.gradient_object(0, &d1).unwrap();
        let g2 = s.gradient_object(0, &d2).unwrap();
        let gc = s.gradient_object(0, &combined).unwrap();
        for i in 0..gc.len() {
            let want = g1.as_slice()[i] * a + g2.as_slice()[i] * b;
            assert!((gc.as_slice()[i] - want).norm() <= 1e-12 * want.norm().max(1.0));
        }
    }

    /// Central finite differences on L = Σ I against the analytic gradients,
    /// pinning the ∂L/∂Re = 2·Re g convention.
    #[test]
    fn finite_difference_object_gradient() {
        let s = random_scenario(18);
        let ones = RealField::constant(8, 8, PITCH, 1.0);
        let mut analytic = ComplexField::zeros(16, 16, PITCH);
        for k in 0..s.positions().len() {
            analytic.add_assign(&s.gradient_object(k, &ones).unwrap());
        }
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..8 {
            let idx = rng.random_range(0..s.object().len());
            let imag = rng.random::<bool>();
            let fd = {
                let perturb = |delta: f64| -> f64 {
                    let mut obj = s.object().clone();
                    let z = obj.as_mut_slice()[idx];
                    obj.as_mut_slice()[idx] = if imag {
                        Complex64::new(z.re, z.im + delta)
                    } else {
                        Complex64::new(z.re + delta, z.im)
                    };
                    let mut s2 = s.clone();
                    s2.replace_object(obj).unwrap();
                    total_intensity(&s2)
                };
                (perturb(h) - perturb(-h)) / (2.0 * h)
            };
            let g = analytic.as_slice()[idx];
            let predicted = if imag { 2.0 * g.im } else { 2.0 * g.re };
            let rel = (fd - predicted).abs() / fd.abs().max(1e-12);
            assert!(rel <= 1e-6, "object component {idx} (imag {imag}): fd {fd} vs {predicted}, rel {rel}");
        }
    }

    #[test]
    fn finite_difference_probe_gradient() {
        let s = random_scenario(20);
        let ones = RealField::constant(8, 8, PITCH, 1.0);
        let mut analytic = ComplexField::zeros(8, 8, PITCH);
        for k in 0..s.positions().len() {
            analytic.add_assign(&s.gradient_probe(k, &ones).unwrap());
        }
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..8 {
            let idx = rng.random_range(0..s.probe().len());
            let imag = rng.random::<bool>();
            let fd = {
                let perturb = |delta: f64| -> f64 {
                    let mut probe = s.probe().clone();
                    let z = probe.as_mut_slice()[idx];
                    probe.as_mut_slice()[idx] = if imag {
                        Complex64::new(z.re, z.im + delta)
                    } else {
                        Complex64::new(z.re + delta, z.im)
                    };
                    let mut s2 = s.clone();
                    s2.replace_probe(probe).unwrap();
                    total_intensity(&s2)
                };
                (perturb(h) - perturb(-h)) / (2.0 * h)
            };
            let g = analytic.as_slice()[idx];
            let predicted = if imag { 2.0 * g.im } else { 2.0 * g.re };
            let rel = (fd - predicted).abs() / fd.abs().max(1e-12);
            assert!(rel <= 1e-6, "probe component {idx} (imag {imag}): fd {fd} vs {predicted}, rel {rel}");
        }
    }

    #[test]
    fn invalid_position_index() {
        let s = random_scenario(22);
        assert!(matches!(
            s.predict_intensity(2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn out_of_bounds_position_rejected_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let object = random_complex(16, 16, &mut rng);
        let probe = random_complex(8, 8, &mut rng);
        assert!(Scenario::new(object, probe, vec![(9, 0)], prop_spec(8, 8)).is_err());
    }

    #[test]
    fn probe_propagator_shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let object = random_complex(16, 16, &mut rng);
        let probe = random_complex(8, 8, &mut rng);
        assert!(Scenario::new(object, probe, vec![(0, 0)], prop_spec(8, 9)).is_err());
    }
}
