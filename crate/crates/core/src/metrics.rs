//! Reconstruction quality metrics: the complex correlation coefficient
//! against ground truth (invariant to global phase and positive scale),
//! photon-budget accounting for the probe, and global-phase alignment for
//! visual comparisons.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::ComplexField;

/// Optional pixel mask restricting evaluation to the well-illuminated area;
/// `None` evaluates the full field.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRegion {
    mask: Option<Vec<bool>>,
}

impl EvalRegion {
    pub fn full() -> Self {
        Self { mask: None }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask: Some(mask) }
    }

    /// Union of probe footprints: a pixel is evaluated if at least one scan
    /// position illuminates it with probe intensity above `threshold` times
    /// the probe's peak intensity.
    pub fn from_probe_footprints(
        object_shape: (usize, usize),
        probe: &ComplexField,
        positions: &[(usize, usize)],
        threshold: f64,
    ) -> Result<Self> {
        let (oh, ow) = object_shape;
        let peak = probe.as_slice().iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        if peak == 0.0 {
            return Err(Error::Domain("probe is identically zero".into()));
        }
        let cutoff = threshold * peak;
        let mut mask = vec![false; oh * ow];
        for &(top, left) in positions {
            if top + probe.height() > oh || left + probe.width() > ow {
                return Err(Error::OutOfBounds {
                    what: "eval region probe window",
                    row: (top + probe.height()) as i64 - 1,
                    col: (left + probe.width()) as i64 - 1,
                    height: oh,
                    width: ow,
                });
            }
            for r in 0..probe.height() {
                for c in 0..probe.width() {
                    if probe.get(r, c).norm_sqr() >= cutoff {
                        mask[(top + r) * ow + (left + c)] = true;
                    }
                }
            }
        }
        Ok(Self { mask: Some(mask) })
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    fn check(&self, field: &ComplexField, what: &'static str) -> Result<()> {
        if let Some(m) = &self.mask {
            if m.len() != field.len() {
                return Err(Error::ShapeMismatch {
                    what,
                    expected_h: field.height(),
                    expected_w: field.width(),
                    got_h: m.len() / field.width().max(1),
                    got_w: field.width(),
                });
            }
        }
        Ok(())
    }

    fn includes(&self, idx: usize) -> bool {
        match &self.mask {
            None => true,
            Some(m) => m[idx],
        }
    }
}

/// Complex correlation C = |⟨O_gt, O⟩| / (‖O_gt‖·‖O‖) over the region.
/// Always in [0, 1]; 1 for fields equal up to global phase and positive
/// scale.
pub fn correlation(ground_truth: &ComplexField, other: &ComplexField, region: &EvalRegion) -> Result<f64> {
    ground_truth.check_same_shape(other, "correlation")?;
    region.check(ground_truth, "correlation region")?;
    let mut inner = Complex64::new(0.0, 0.0);
    let mut norm_gt = 0.0;
    let mut norm_other = 0.0;
    for (idx, (a, b)) in ground_truth.as_slice().iter().zip(other.as_slice()).enumerate() {
        if region.includes(idx) {
            inner += a.conj() * b;
            norm_gt += a.norm_sqr();
            norm_other += b.norm_sqr();
        }
    }
    if norm_gt == 0.0 || norm_other == 0.0 {
        return Err(Error::Domain(
            "correlation undefined: a field is identically zero on the region".into(),
        ));
    }
    Ok(inner.norm() / (norm_gt.sqrt() * norm_other.sqrt()))
}

/// Total expected photon count in one exposure, Σ|P|².
pub fn photon_budget(probe: &ComplexField) -> f64 {
    probe.norm_sq()
}

/// Probe rescaled so its photon budget equals `budget`.
pub fn rescale_to_budget(probe: &ComplexField, budget: f64) -> Result<ComplexField> {
    if !(budget >= 0.0) {
        return Err(Error::Argument(format!("photon budget must be ≥ 0, got {budget}")));
    }
    let current = photon_budget(probe);
    if current == 0.0 {
        return Err(Error::Domain("cannot rescale an identically zero probe".into()));
    }
    let factor = (budget / current).sqrt();
    Ok(probe.map(|z| z * factor))
}

/// Rotate `field` by the global phase that best aligns it with `reference`
/// (used for visual side-by-side renders; the correlation metric itself needs
/// no alignment).
pub fn align_global_phase(reference: &ComplexField, field: &ComplexField) -> Result<ComplexField> {
    reference.check_same_shape(field, "align_global_phase")?;
    let inner = field.inner(reference);
    if inner.norm() == 0.0 {
        return Ok(field.clone());
    }
    let phase = inner / inner.norm();
    Ok(field.scaled(phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const PITCH: f64 = 6.9e-6;

    fn random_field(h: usize, w: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::from_fn(h, w, PITCH, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn self_correlation_is_one() {
        let f = random_field(8, 8, 1);
        let c = correlation(&f, &f, &EvalRegion::full()).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_and_scale_invariance() {
        let f = random_field(8, 8, 2);
        let g = f.scaled(Complex64::from_polar(3.7, 1.9));
        let c = correlation(&f, &g, &EvalRegion::full()).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_fields_correlate_to_zero() {
        let mut a = ComplexField::zeros(4, 4, PITCH);
        let mut b = ComplexField::zeros(4, 4, PITCH);
        a.set(0, 0, Complex64::new(1.0, 0.0));
        b.set(3, 3, Complex64::new(0.0, 2.0));
        let c = correlation(&a, &b, &EvalRegion::full()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn zero_field_rejected() {
        let f = random_field(4, 4, 3);
        let z = ComplexField::zeros(4, 4, PITCH);
        assert!(correlation(&f, &z, &EvalRegion::full()).is_err());
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = random_field(6, 6, 4);
        let b = random_field(6, 6, 5);
        let cab = correlation(&a, &b, &EvalRegion::full()).unwrap();
        let cba = correlation(&b, &a, &EvalRegion::full()).unwrap();
        assert!((cab - cba).abs() < 1e-14);
    }

    #[test]
    fn masked_correlation_ignores_outside() {
        let a = random_field(4, 4, 6);
        let mut b = a.clone();
        // Corrupt one pixel, then exclude it from the region.
        b.set(3, 3, Complex64::new(100.0, -50.0));
        let mut mask = vec![true; 16];
        mask[15] = false;
        let c = correlation(&a, &b, &EvalRegion::from_mask(mask)).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let c_full = correlation(&a, &b, &EvalRegion::full()).unwrap();
        assert!(c_full < 0.9);
    }

    #[test]
    fn footprint_region_covers_probe_windows_only() {
        let probe = ComplexField::constant(2, 2, PITCH, Complex64::new(1.0, 0.0));
        let region =
            EvalRegion::from_probe_footprints((4, 4), &probe, &[(0, 0), (2, 2)], 0.5).unwrap();
        let mask = region.mask().unwrap();
        let want: Vec<bool> = vec![
            true, true, false, false,
            true, true, false, false,
            false, false, true, true,
            false, false, true, true,
        ];
        assert_eq!(mask, &want[..]);
    }

    #[test]
    fn photon_budget_examples() {
        let z = ComplexField::zeros(3, 3, PITCH);
        assert_eq!(photon_budget(&z), 0.0);
        let p = random_field(8, 8, 7);
        let doubled = p.scaled(Complex64::new(2.0, 0.0));
        assert!((photon_budget(&doubled) - 4.0 * photon_budget(&p)).abs() < 1e-9);
        let scaled = rescale_to_budget(&p, 3.4e5).unwrap();
        assert!((photon_budget(&scaled) - 3.4e5).abs() < 1e-9 * 3.4e5);
    }

    #[test]
    fn align_phase_minimizes_difference() {
        let f = random_field(8, 8, 8);
        let rotated = f.scaled(Complex64::from_polar(1.0, 2.3));
        let aligned = align_global_phase(&f, &rotated).unwrap();
        let err: f64 = f
            .as_slice()
            .iter()
            .zip(aligned.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-12 * f.norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_correlation_in_unit_interval(seed in 0u64..1000) {
            let a = random_field(6, 7, seed);
            let b = random_field(6, 7, seed ^ 0xabcd);
            let c = correlation(&a, &b, &EvalRegion::full()).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
        }

        #[test]
        fn prop_identical_masking_invariance(seed in 0u64..1000) {
            // Masking both fields identically (zeroing outside the region)
            // must not change the masked correlation.
            let a = random_field(5, 5, seed);
            let b = random_field(5, 5, seed ^ 0x1234);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
            let mask: Vec<bool> = (0..25).map(|_| rng.random::<bool>()).collect();
            prop_assume!(mask.iter().any(|&m| m));
            let region = EvalRegion::from_mask(mask.clone());
            let zero_outside = |f: &ComplexField| {
                let mut g = f.clone();
                for (i, keep) in mask.iter().enumerate() {
                    if !keep {
                        g.as_mut_slice()[i] = Complex64::new(0.0, 0.0);
                    }
                }
                g
            };
            let c1 = correlation(&a, &b, &region).unwrap();
            let c2 = correlation(&zero_outside(&a), &zero_outside(&b), &region).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-12);
        }
    }
}
