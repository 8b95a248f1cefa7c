//! Maximum-likelihood data-fidelity losses for three camera noise models
//! (pure Poisson, constant-variance Gaussian, and mixed Poisson-Gaussian),
//! their derivatives with respect to predicted intensity, and the L1
//! regularizers used to stabilize reconstruction.
//!
//! Gradient conventions. Loss functions return dL/dI, a real field the
//! forward module turns into Wirtinger parameter gradients g (real partials
//! are 2·Re g, 2·Im g). Regularizers return packed real gradients directly:
//! at each pixel `re` is ∂R/∂Re and `im` is ∂R/∂Im. The solver therefore
//! combines them as total packed gradient = 2·g_fidelity + Σ reg gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fft2, ifft2, ComplexField, RealField};

/// Guard for `√(X/I)` and divisions as I → 0 in the Poisson gradient.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// L1 smoothing `|z| ≈ √(|z|² + ε²)`, in field-amplitude units. Keeps
/// regularizer gradients defined at zero; used for both value and gradient so
/// finite differences of the value match the gradient exactly.
pub const DEFAULT_EPSILON_L1: f64 = 1e-8;

/// Minimum healthy fidelity-to-regularizer ratio; below this the data term no
/// longer dominates and the solver logs a warning.
pub const DOMINANCE_THRESHOLD: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Poisson,
    Gaussian,
    Mixed,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LossVariant::Poisson => "poisson",
            LossVariant::Gaussian => "gaussian",
            LossVariant::Mixed => "mixed",
        };
        f.write_str(name)
    }
}

/// A data-fidelity loss choice: which likelihood, whether negative measured
/// values are forced to zero first, and the numerical guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossKind {
    pub variant: LossVariant,
    pub zero_crop: bool,
    pub epsilon: f64,
}

impl LossKind {
    /// The Poisson likelihood needs √X, so cropping is not optional here.
    pub fn poisson() -> Self {
        Self { variant: LossVariant::Poisson, zero_crop: true, epsilon: DEFAULT_EPSILON }
    }

    pub fn gaussian(zero_crop: bool) -> Self {
        Self { variant: LossVariant::Gaussian, zero_crop, epsilon: DEFAULT_EPSILON }
    }

    pub fn mixed(zero_crop: bool) -> Self {
        Self { variant: LossVariant::Mixed, zero_crop, epsilon: DEFAULT_EPSILON }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("loss epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.variant == LossVariant::Poisson && !self.zero_crop {
            return Err(Error::Config(
                "the Poisson loss takes √X and requires zero_crop".into(),
            ));
        }
        Ok(())
    }

    /// Evaluate the configured loss. `variance` is the per-pixel σ² map,
    /// required by the mixed loss and ignored by the others.
    pub fn evaluate(
        &self,
        measured: &RealField,
        predicted: &RealField,
        variance: Option<&RealField>,
    ) -> Result<(f64, RealField)> {
        self.validate()?;
        let cropped;
        let x = if self.zero_crop {
            cropped = measured.map(|v| v.max(0.0));
            &cropped
        } else {
            measured
        };
        match self.variant {
            LossVariant::Poisson => loss_poisson(x, predicted, self.epsilon),
            LossVariant::Gaussian => loss_gaussian(x, predicted),
            LossVariant::Mixed => {
                let var = variance.ok_or_else(|| {
                    Error::Config("mixed loss requires a per-pixel variance map".into())
                })?;
                loss_mixed(x, predicted, var)
            }
        }
    }
}

fn check_pair(x: &RealField, i: &RealField, what: &'static str) -> Result<()> {
    x.check_same_shape(i, what)
}

fn check_nonnegative(i: &RealField, what: &str) -> Result<()> {
    if let Some(bad) = i.as_slice().iter().find(|&&v| v < 0.0) {
        return Err(Error::Domain(format!(
            "{what}: predicted intensity must be non-negative, found {bad}"
        )));
    }
    Ok(())
}

/// Poisson negative log-likelihood (up to constants in X):
/// value = Σ (√X − √I)², dL/dI = 1 − √(X / max(I, ε)).
/// Negative X is cropped to zero internally; √ of a negative is undefined.
pub fn loss_poisson(x: &RealField, i: &RealField, epsilon: f64) -> Result<(f64, RealField)> {
    check_pair(x, i, "loss_poisson")?;
    check_nonnegative(i, "loss_poisson")?;
    let mut value = 0.0;
    let mut dl = Vec::with_capacity(i.len());
    for (&xk, &ik) in x.as_slice().iter().zip(i.as_slice()) {
        let xk = xk.max(0.0);
        let d = xk.sqrt() - ik.sqrt();
        value += d * d;
        dl.push(1.0 - (xk / ik.max(epsilon)).sqrt());
    }
    Ok((value, RealField::new(i.height(), i.width(), i.pitch(), dl)?))
}

/// Constant-variance Gaussian negative log-likelihood (up to constants):
/// value = Σ (X − I)², dL/dI = 2(I − X). Accepts any real X.
pub fn loss_gaussian(x: &RealField, i: &RealField) -> Result<(f64, RealField)> {
    check_pair(x, i, "loss_gaussian")?;
    let mut value = 0.0;
    let mut dl = Vec::with_capacity(i.len());
    for (&xk, &ik) in x.as_slice().iter().zip(i.as_slice()) {
        let r = xk - ik;
        value += r * r;
        dl.push(-2.0 * r);
    }
    Ok((value, RealField::new(i.height(), i.width(), i.pitch(), dl)?))
}

/// Mixed Poisson-Gaussian negative log-likelihood under the Gaussian
/// approximation with per-pixel total variance I + σ²:
/// value = Σ [ln(I + σ²) + (X − I)²/(I + σ²)],
/// dL/dI = 1/(I+σ²) − 2(X−I)/(I+σ²) − (X−I)²/(I+σ²)².
/// Accepts negative X unchanged; that is the point of this loss.
pub fn loss_mixed(x: &RealField, i: &RealField, variance: &RealField) -> Result<(f64, RealField)> {
    check_pair(x, i, "loss_mixed")?;
    i.check_same_shape(variance, "loss_mixed variance")?;
    check_nonnegative(i, "loss_mixed")?;
    if let Some(bad) = variance.as_slice().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!(
            "loss_mixed: variance map must be strictly positive, found {bad} \
             (bad dark calibration?)"
        )));
    }
    let mut value = 0.0;
    let mut dl = Vec::with_capacity(i.len());
    for ((&xk, &ik), &vk) in x.as_slice().iter().zip(i.as_slice()).zip(variance.as_slice()) {
        let total = ik + vk;
        let r = xk - ik;
        value += total.ln() + r * r / total;
        dl.push(1.0 / total - 2.0 * r / total - r * r / (total * total));
    }
    Ok((value, RealField::new(i.height(), i.width(), i.pitch(), dl)?))
}

/// Weights and geometry for the three reconstruction regularizers. Defaults
/// follow the reference configuration: α ≈ 100 on probe support, β = 1e-4 on
/// object amplitude, γ = 1e-3 on object Fourier magnitude. The support
/// radius must come from the experiment geometry; the default suits the
/// stock scene (1.4 × its 276 µm probe radius) and anything that actually
/// constrains the probe needs the radius set smaller than the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub support_radius_m: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self { alpha: 100.0, beta: 1e-4, gamma: 1e-3, support_radius_m: 3.9e-4 }
    }
}

impl RegularizerWeights {
    /// Defaults with the support disc sized to the given probe radius.
    pub fn for_probe_radius(probe_radius_m: f64) -> Self {
        Self { support_radius_m: 1.4 * probe_radius_m, ..Self::default() }
    }
}

impl RegularizerWeights {
    pub fn none() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0, support_radius_m: 1.5e-3 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("regularizer weight {name} must be ≥ 0, got {v}")));
            }
        }
        if !(self.support_radius_m > 0.0) {
            return Err(Error::Config(format!(
                "support radius must be > 0, got {}",
                self.support_radius_m
            )));
        }
        Ok(())
    }
}

#[inline]
fn smooth_abs(z: num_complex::Complex64, eps: f64) -> f64 {
    (z.norm_sqr() + eps * eps).sqrt()
}

/// L1 penalty on probe amplitude outside a centered disc of the given
/// physical radius: value = α Σ_{outside} √(|P|² + ε²), packed real gradient
/// α·P/√(|P|² + ε²) outside the disc and zero inside.
pub fn reg_probe_support(
    probe: &ComplexField,
    radius_m: f64,
    alpha: f64,
    eps: f64,
) -> (f64, ComplexField) {
    if alpha == 0.0 {
        return (0.0, ComplexField::zeros(probe.height(), probe.width(), probe.pitch()));
    }
    let mask = support_mask(probe.height(), probe.width(), probe.pitch(), radius_m);
    let mut value = 0.0;
    let mut grad = ComplexField::zeros(probe.height(), probe.width(), probe.pitch());
    for (idx, (&z, &inside)) in probe.as_slice().iter().zip(&mask).enumerate() {
        if !inside {
            let s = smooth_abs(z, eps);
            value += alpha * s;
            grad.as_mut_slice()[idx] = z * (alpha / s);
        }
    }
    (value, grad)
}

/// True for pixels whose center lies within `radius_m` of the grid center
/// (grid center is between pixels for even sizes).
pub fn support_mask(height: usize, width: usize, pitch: f64, radius_m: f64) -> Vec<bool> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let mut mask = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let dy = (r as f64 - cy) * pitch;
            let dx = (c as f64 - cx) * pitch;
            mask.push(dy.hypot(dx) <= radius_m);
        }
    }
    mask
}

/// L1 penalty on object amplitude: value = β Σ √(|O|² + ε²), packed real
/// gradient β·O/√(|O|² + ε²).
pub fn reg_object_amplitude(object: &ComplexField, beta: f64, eps: f64) -> (f64, ComplexField) {
    if beta == 0.0 {
        return (0.0, ComplexField::zeros(object.height(), object.width(), object.pitch()));
    }
    let mut value = 0.0;
    let mut grad = ComplexField::zeros(object.height(), object.width(), object.pitch());
    for (g, &z) in grad.as_mut_slice().iter_mut().zip(object.as_slice()) {
        let s = smooth_abs(z, eps);
        value += beta * s;
        *g = z * (beta / s);
    }
    (value, grad)
}

/// L1 penalty on the object's Fourier magnitudes: value = γ Σ √(|Ô|² + ε²)
/// with Ô the unitary DFT of O; the packed real gradient is transported back
/// through the unitary transform, grad_O = ifft2(γ·Ô/√(|Ô|² + ε²)).
pub fn reg_object_fourier(object: &ComplexField, gamma: f64, eps: f64) -> (f64, ComplexField) {
    if gamma == 0.0 {
        return (0.0, ComplexField::zeros(object.height(), object.width(), object.pitch()));
    }
    let hat = fft2(object);
    let mut value = 0.0;
    let mut grad_hat = ComplexField::zeros(object.height(), object.width(), object.pitch());
    for (g, &z) in grad_hat.as_mut_slice().iter_mut().zip(hat.as_slice()) {
        let s = smooth_abs(z, eps);
        value += gamma * s;
        *g = z * (gamma / s);
    }
    (value, ifft2(&grad_hat))
}

/// Ratio of fidelity to total regularizer value; +∞ when regularizers
/// contribute nothing. The solver warns below [`DOMINANCE_THRESHOLD`].
pub fn fidelity_dominance_ratio(fidelity: f64, reg_values: &[f64]) -> f64 {
    let total: f64 = reg_values.iter().sum();
    if total == 0.0 {
        f64::INFINITY
    } else {
        fidelity / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const PITCH: f64 = 6.9e-6;

    fn single(v: f64) -> RealField {
        RealField::constant(1, 1, PITCH, v)
    }

    fn eval_value(kind: &LossKind, x: f64, i: f64, var: f64) -> f64 {
        let v = single(var);
        kind.evaluate(&single(x), &single(i), Some(&v)).unwrap().0
    }

    /// Golden-section minimizer of a 1-D unimodal function on [a, b].
    fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while (b - a).abs() > 1e-11 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn poisson_perfect_fit() {
        let x = RealField::constant(2, 2, PITCH, 3.0);
        let (v, dl) = loss_poisson(&x, &x, DEFAULT_EPSILON).unwrap();
        assert_eq!(v, 0.0);
        for &g in dl.as_slice() {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_single_pixel() {
        let (v, dl) = loss_poisson(&single(4.0), &single(1.0), DEFAULT_EPSILON).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert!((dl.get(0, 0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn poisson_crops_negative_measurement() {
        let i = 2.5;
        let (v, dl) = loss_poisson(&single(-3.0), &single(i), DEFAULT_EPSILON).unwrap();
        assert!((v - i).abs() < 1e-14);
        assert!((dl.get(0, 0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn poisson_rejects_negative_intensity() {
        assert!(matches!(
            loss_poisson(&single(1.0), &single(-0.5), DEFAULT_EPSILON),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gaussian_single_pixel_and_symmetry() {
        let (v, dl) = loss_gaussian(&single(3.0), &single(1.0)).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(dl.get(0, 0), -4.0);
        let (v_swapped, _) = loss_gaussian(&single(1.0), &single(3.0)).unwrap();
        assert_eq!(v, v_swapped);
    }

    #[test]
    fn mixed_single_pixel_hand_computed() {
        let (v, _) = loss_mixed(&single(0.0), &single(1.0), &single(2.25)).unwrap();
        let want = 3.25f64.ln() + 1.0 / 3.25;
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn mixed_at_perfect_fit() {
        let i = RealField::constant(2, 3, PITCH, 7.0);
        let var = RealField::constant(2, 3, PITCH, 2.25);
        let (v, dl) = loss_mixed(&i, &i, &var).unwrap();
        let want = 6.0 * (7.0f64 + 2.25).ln();
        assert!((v - want).abs() < 1e-12);
        for &g in dl.as_slice() {
            assert!((g - 1.0 / 9.25).abs() < 1e-14);
            assert!(g > 0.0);
        }
    }

    #[test]
    fn mixed_rejects_bad_variance() {
        assert!(matches!(
            loss_mixed(&single(1.0), &single(1.0), &single(0.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            loss_mixed(&single(1.0), &single(1.0), &single(-1.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mixed_requires_variance_map_via_kind() {
        let kind = LossKind::mixed(false);
        assert!(matches!(
            kind.evaluate(&single(1.0), &single(1.0), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn poisson_kind_requires_crop() {
        let bad = LossKind { variant: LossVariant::Poisson, zero_crop: false, epsilon: 1e-12 };
        assert!(bad.validate().is_err());
        assert!(LossKind::poisson().validate().is_ok());
    }

    // All three dL/dI formulas against scalar central finite differences of
    // the value, the independent oracle for the analytic derivatives.
    #[test]
    fn gradients_match_scalar_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        for _ in 0..200 {
            let x: f64 = rng.random_range(0.5..5.0);
            let i: f64 = rng.random_range(0.5..5.0);
            let var: f64 = rng.random_range(0.5..3.0);
            for kind in [LossKind::poisson(), LossKind::gaussian(false), LossKind::mixed(false)] {
                let (_, dl) = kind
                    .evaluate(&single(x), &single(i), Some(&single(var)))
                    .unwrap();
                let fd = (eval_value(&kind, x, i + h, var) - eval_value(&kind, x, i - h, var))
                    / (2.0 * h);
                let g = dl.get(0, 0);
                let rel = (fd - g).abs() / g.abs().max(1e-8);
                assert!(rel <= 1e-8, "{kind:?} at X={x} I={i} var={var}: fd {fd} vs {g}");
            }
        }
    }

    // Pixel-wise minimizers located by golden-section search must be
    // stationary points of the analytic derivative.
    #[test]
    fn mixed_minimizer_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            // X ≥ 0.6 keeps the minimizer interior (at smaller X the
            // derivative can stay positive on all of I ≥ 0, putting the
            // constrained minimum on the boundary).
            let x: f64 = rng.random_range(0.6..50.0);
            let var: f64 = rng.random_range(0.5..4.0);
            let value = |i: f64| {
                let total = i + var;
                total.ln() + (x - i) * (x - i) / total
            };
            let i_star = golden_section(0.0, x + var + 10.0, value);
            let (_, dl) = loss_mixed(&single(x), &single(i_star), &single(var)).unwrap();
            assert!(
                dl.get(0, 0).abs() < 1e-7,
                "X={x} var={var}: dL/dI({i_star}) = {}",
                dl.get(0, 0)
            );
        }
    }

    #[test]
    fn poisson_and_gaussian_minimized_at_measurement() {
        for x in [0.5, 2.0, 17.0] {
            let (_, dlp) = loss_poisson(&single(x), &single(x), DEFAULT_EPSILON).unwrap();
            assert!(dlp.get(0, 0).abs() < 1e-12);
            let (vp0, _) = loss_poisson(&single(x), &single(x), DEFAULT_EPSILON).unwrap();
            let (vp1, _) = loss_poisson(&single(x), &single(x * 1.1), DEFAULT_EPSILON).unwrap();
            assert!(vp0 < vp1);
            let (_, dlg) = loss_gaussian(&single(x), &single(x)).unwrap();
            assert_eq!(dlg.get(0, 0), 0.0);
        }
    }

    // With vanishing readout variance and large counts, the mixed loss's
    // pixel-wise minimizer must approach the Poisson MLE minimizer I* = X.
    #[test]
    fn mixed_reduces_to_poisson_at_high_counts() {
        let var = 1e-9;
        for x in [600.0, 1500.0, 5000.0] {
            let value = |i: f64| {
                let total = i + var;
                total.ln() + (x - i) * (x - i) / total
            };
            let i_star = golden_section(x * 0.5, x * 1.5, value);
            let rel = (i_star - x).abs() / x;
            assert!(rel < 1e-3, "X={x}: mixed minimizer {i_star}, rel gap {rel}");
        }
    }

    #[test]
    fn support_reg_zero_outside_support() {
        let n = 16;
        let radius = 4.0 * PITCH;
        let mask = support_mask(n, n, PITCH, radius);
        let probe = ComplexField::from_fn(n, n, PITCH, |r, c| {
            if mask[r * n + c] {
                Complex64::new(1.0, 0.5)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let outside_count = mask.iter().filter(|&&m| !m).count() as f64;
        let (v, grad) = reg_probe_support(&probe, radius, 100.0, DEFAULT_EPSILON_L1);
        assert!(v <= 100.0 * outside_count * DEFAULT_EPSILON_L1 + 1e-12);
        for (g, &inside) in grad.as_slice().iter().zip(&mask) {
            if inside {
                assert_eq!(*g, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn support_reg_is_homogeneous_outside() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let probe = ComplexField::from_fn(12, 12, PITCH, |_, _| {
            Complex64::new(rng.random::<f64>() + 0.5, rng.random::<f64>())
        });
        let radius = 3.0 * PITCH;
        let (v1, _) = reg_probe_support(&probe, radius, 100.0, DEFAULT_EPSILON_L1);
        let (v2, _) = reg_probe_support(&probe.scaled(Complex64::new(2.0, 0.0)), radius, 100.0, DEFAULT_EPSILON_L1);
        assert!((v2 - 2.0 * v1).abs() < 1e-9 * v1);
    }

    #[test]
    fn amplitude_reg_examples() {
        let zero = ComplexField::zeros(3, 3, PITCH);
        let (v0, _) = reg_object_amplitude(&zero, 1e-4, DEFAULT_EPSILON_L1);
        assert!(v0 <= 9.0 * 1e-4 * DEFAULT_EPSILON_L1 * 1.001);

        let mut o = ComplexField::zeros(1, 1, PITCH);
        o.set(0, 0, Complex64::new(3.0, 4.0));
        let (v, _) = reg_object_amplitude(&o, 1e-4, DEFAULT_EPSILON_L1);
        assert!((v - 5e-4).abs() < 1e-12);

        let rotated = o.scaled(Complex64::from_polar(1.0, 2.1));
        let (vr, _) = reg_object_amplitude(&rotated, 1e-4, DEFAULT_EPSILON_L1);
        assert!((vr - v).abs() < 1e-15);
    }

    #[test]
    fn fourier_reg_constant_object() {
        let c = Complex64::new(0.8, -0.3);
        let o = ComplexField::constant(8, 8, PITCH, c);
        let (v, _) = reg_object_fourier(&o, 1e-3, DEFAULT_EPSILON_L1);
        // Unitary DFT of a constant concentrates everything at DC with
        // magnitude |c|·√(HW); remaining pixels contribute only ε each.
        let want = 1e-3 * c.norm() * 8.0;
        let slack = 63.0 * 1e-3 * DEFAULT_EPSILON_L1;
        assert!((v - want).abs() <= slack + 1e-12, "value {v}, want ≈ {want}");
    }

    // Packed real gradient of each regularizer against central finite
    // differences of its value.
    #[test]
    fn regularizer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let field = ComplexField::from_fn(8, 8, PITCH, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let radius = 2.0 * PITCH;
        let cases: Vec<(&str, Box<dyn Fn(&ComplexField) -> (f64, ComplexField)>)> = vec![
            ("support", Box::new(move |f| reg_probe_support(f, radius, 100.0, DEFAULT_EPSILON_L1))),
            ("amplitude", Box::new(|f| reg_object_amplitude(f, 1e-4, DEFAULT_EPSILON_L1))),
            ("fourier", Box::new(|f| reg_object_fourier(f, 1e-3, DEFAULT_EPSILON_L1))),
        ];
        let h = 1e-7;
        for (name, reg) in &cases {
            let (_, grad) = reg(&field);
            for _ in 0..8 {
                let idx = rng.random_range(0..field.len());
                let imag = rng.random::<bool>();
                let perturb = |delta: f64| -> f64 {
                    let mut f = field.clone();
                    let z = f.as_mut_slice()[idx];
                    f.as_mut_slice()[idx] = if imag {
                        Complex64::new(z.re, z.im + delta)
                    } else {
                        Complex64::new(z.re + delta, z.im)
                    };
                    reg(&f).0
                };
                let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                let g = grad.as_slice()[idx];
                let predicted = if imag { g.im } else { g.re };
                let rel = (fd - predicted).abs() / fd.abs().max(1e-9);
                assert!(rel <= 1e-6, "{name} component {idx} (imag {imag}): fd {fd} vs {predicted}");
            }
        }
    }

    #[test]
    fn dominance_ratio_examples() {
        assert_eq!(fidelity_dominance_ratio(1000.0, &[2.0, 3.0]), 200.0);
        assert!(fidelity_dominance_ratio(1000.0, &[2.0, 3.0]) >= DOMINANCE_THRESHOLD);
        assert_eq!(fidelity_dominance_ratio(50.0, &[1.0]), 50.0);
        assert!(fidelity_dominance_ratio(50.0, &[1.0]) < DOMINANCE_THRESHOLD);
        assert!(fidelity_dominance_ratio(50.0, &[]).is_infinite());
        assert!(fidelity_dominance_ratio(50.0, &[0.0, 0.0]).is_infinite());
    }

    #[test]
    fn weights_validation() {
        assert!(RegularizerWeights::default().validate().is_ok());
        assert!(RegularizerWeights { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(RegularizerWeights { support_radius_m: 0.0, ..Default::default() }
            .validate()
            .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Cropping can only matter when some measurement is negative.
        #[test]
        fn prop_zero_crop_noop_on_nonnegative_data(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = RealField::from_fn(4, 4, PITCH, |_, _| rng.random_range(0.0..10.0));
            let i = RealField::from_fn(4, 4, PITCH, |_, _| rng.random_range(0.1..10.0));
            let var = RealField::constant(4, 4, PITCH, 2.25);
            for (raw, cropped) in [
                (LossKind::gaussian(false), LossKind::gaussian(true)),
                (LossKind::mixed(false), LossKind::mixed(true)),
            ] {
                let a = raw.evaluate(&x, &i, Some(&var)).unwrap();
                let b = cropped.evaluate(&x, &i, Some(&var)).unwrap();
                prop_assert_eq!(a.0, b.0);
                prop_assert_eq!(a.1.as_slice(), b.1.as_slice());
            }
        }

        #[test]
        fn prop_mixed_derivative_brackets_minimizer(x0 in 1.0f64..100.0) {
            // The mixed loss is pixel-wise unimodal with an interior minimum
            // for X ≥ 1: the derivative is negative below it and positive
            // above it.
            let var = 2.25;
            let (_, dl_lo) = loss_mixed(&single(x0), &single(x0 * 0.5), &single(var)).unwrap();
            let (_, dl_hi) = loss_mixed(&single(x0), &single(x0 * 1.5 + var), &single(var)).unwrap();
            prop_assert!(dl_lo.get(0, 0) < 0.0);
            prop_assert!(dl_hi.get(0, 0) > 0.0);
        }
    }
}
