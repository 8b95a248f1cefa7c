//! Reconstruction loop: full-batch ADAM over the complex object (and
//! optionally the probe) with an exponentially decaying learning rate.
//!
//! Each epoch evaluates every scan position, sums the fidelity loss and its
//! Wirtinger gradients, adds the regularizer gradients, and applies one ADAM
//! step. Complex parameters are optimized as independent real/imaginary
//! pairs, so the packed real gradient fed to ADAM is twice the Wirtinger
//! gradient for the fidelity term (the regularizer functions already return
//! packed real gradients).

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dataset::DiffractionDataset;
use crate::error::{Error, Result};
use crate::field::{accumulate_region_mut, ComplexField};
use crate::forward::Scenario;
use crate::loss::{
    fidelity_dominance_ratio, reg_object_amplitude, reg_object_fourier, reg_probe_support,
    support_mask, LossKind, RegularizerWeights, DEFAULT_EPSILON_L1, DOMINANCE_THRESHOLD,
};

/// Learning-rate schedule and ADAM constants. The rate at epoch n is
/// lr0·e^(−decay·n), evaluated in closed form so logged values are exact.
/// JSON configs may specify any subset of fields; the rest keep defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl Default for OptimizerSchedule {
    fn default() -> Self {
        Self { lr0: 0.1, decay: 0.03, epochs: 100, beta1: 0.9, beta2: 0.999, eps_adam: 1e-8 }
    }
}

impl OptimizerSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(self.decay >= 0.0) {
            return Err(Error::Config(format!("decay must be >= 0, got {}", self.decay)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::Config(format!("eps_adam must be > 0, got {}", self.eps_adam)));
        }
        Ok(())
    }

    /// lr_n = lr0·e^(−decay·n).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * (-self.decay * epoch as f64).exp()
    }
}

/// Which parameters the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    ObjectOnly,
    JointProbeObject,
}

/// Starting point for the object estimate.
#[derive(Debug, Clone)]
pub enum InitialObject {
    /// Uniform amplitude 1, phase 0.
    UniformOne,
    Supplied(ComplexField),
}

#[derive(Debug, Clone)]
pub struct ReconstructionConfig {
    pub loss: LossKind,
    pub regs: RegularizerWeights,
    pub schedule: OptimizerSchedule,
    pub mode: ReconstructionMode,
    pub initial_object: InitialObject,
    /// Starting probe; `None` uses the dataset's calibrated probe.
    pub initial_probe: Option<ComplexField>,
}

impl ReconstructionConfig {
    /// Object-only reconstruction with the dataset probe, default schedule,
    /// and default regularizer weights.
    pub fn object_only(loss: LossKind) -> Self {
        Self {
            loss,
            regs: RegularizerWeights::default(),
            schedule: OptimizerSchedule::default(),
            mode: ReconstructionMode::ObjectOnly,
            initial_object: InitialObject::UniformOne,
            initial_probe: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.regs.validate()?;
        self.schedule.validate()
    }
}

/// State of one epoch as evaluated before its ADAM step.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub fidelity: f64,
    pub reg_support: f64,
    pub reg_amplitude: f64,
    pub reg_fourier: f64,
    /// Fidelity / Σ regularizers; `None` when no regularizer is active
    /// (the ratio is +∞).
    pub dominance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub object: ComplexField,
    pub probe: ComplexField,
    pub epochs: Vec<EpochRecord>,
    /// Epochs whose dominance ratio fell below [`DOMINANCE_THRESHOLD`].
    pub dominance_warnings: usize,
    pub wall_ms: u128,
}

/// First and second moment accumulators for a vector of complex parameters,
/// with real and imaginary parts tracked independently.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Complex64>,
    v: Vec<Complex64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![Complex64::ZERO; len], v: vec![Complex64::ZERO; len], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected ADAM update. `grads` is the packed real gradient:
/// re = ∂L/∂Re(p), im = ∂L/∂Im(p).
pub fn adam_step(
    params: &mut [Complex64],
    grads: &[Complex64],
    state: &mut AdamState,
    schedule: &OptimizerSchedule,
    lr: f64,
) {
    assert_eq!(params.len(), grads.len(), "adam_step: params vs grads length");
    assert_eq!(params.len(), state.m.len(), "adam_step: params vs state length");
    state.t += 1;
    let (b1, b2, eps) = (schedule.beta1, schedule.beta2, schedule.eps_adam);
    let mc = 1.0 - b1.powi(state.t as i32);
    let vc = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        m.re = b1 * m.re + (1.0 - b1) * g.re;
        m.im = b1 * m.im + (1.0 - b1) * g.im;
        v.re = b2 * v.re + (1.0 - b2) * g.re * g.re;
        v.im = b2 * v.im + (1.0 - b2) * g.im * g.im;
        p.re -= lr * (m.re / mc) / ((v.re / vc).sqrt() + eps);
        p.im -= lr * (m.im / mc) / ((v.im / vc).sqrt() + eps);
    }
}

struct EpochPass {
    fidelity: f64,
    object_grad: ComplexField,
    probe_grad: ComplexField,
}

/// Evaluate all positions once: total fidelity plus packed real gradients
/// for object and probe (fidelity contribution only, already doubled from
/// the Wirtinger form). Positions are processed in parallel but reduced in
/// index order, so results are bit-reproducible regardless of thread count.
fn epoch_pass(
    scenario: &Scenario,
    dataset: &DiffractionDataset,
    loss: &LossKind,
) -> Result<EpochPass> {
    let per_position: Vec<(f64, crate::forward::PositionGradients)> = (0..dataset
        .positions
        .len())
        .into_par_iter()
        .map(|k| {
            let pass = scenario.forward(k)?;
            let predicted = pass.detector.intensity();
            let (value, dl_di) =
                loss.evaluate(&dataset.frames[k], &predicted, dataset.variance_map.as_ref())?;
            let grads = scenario.backward(&pass, &dl_di)?;
            Ok((value, grads))
        })
        .collect::<Result<_>>()?;

    let object = scenario.object();
    let probe = scenario.probe();
    let mut fidelity = 0.0;
    let mut object_grad = ComplexField::zeros(object.height(), object.width(), object.pitch());
    let mut probe_grad = ComplexField::zeros(probe.height(), probe.width(), probe.pitch());
    for (value, grads) in &per_position {
        fidelity += value;
        accumulate_region_mut(&mut object_grad, grads.top_left, &grads.object_patch)?;
        probe_grad.add_assign(&grads.probe);
    }
    // Packed real gradient = 2 × Wirtinger gradient.
    let two = Complex64::new(2.0, 0.0);
    Ok(EpochPass {
        fidelity,
        object_grad: object_grad.scaled(two),
        probe_grad: probe_grad.scaled(two),
    })
}

fn check_finite(value: f64, grad: &ComplexField, epoch: usize, lr: f64) -> Result<()> {
    let bad_grad = grad
        .as_slice()
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite());
    if !value.is_finite() || bad_grad {
        return Err(Error::Divergence { epoch, lr });
    }
    Ok(())
}

/// Run the configured number of full-batch epochs and return the final
/// estimates with the per-epoch log. Deterministic given dataset and config.
pub fn reconstruct(
    dataset: &DiffractionDataset,
    config: &ReconstructionConfig,
) -> Result<ReconstructionReport> {
    let started = Instant::now();
    config.validate()?;
    dataset.validate()?;
    if config.loss.variant == crate::loss::LossVariant::Mixed && dataset.variance_map.is_none() {
        return Err(Error::Config(
            "mixed loss requires the dataset's per-pixel variance map, but none is present".into(),
        ));
    }

    let object = match &config.initial_object {
        InitialObject::UniformOne => ComplexField::constant(
            dataset.object_height,
            dataset.object_width,
            dataset.probe.pitch(),
            Complex64::ONE,
        ),
        InitialObject::Supplied(o) => {
            if o.shape() != (dataset.object_height, dataset.object_width) {
                return Err(Error::ShapeMismatch {
                    what: "initial object vs dataset",
                    expected_h: dataset.object_height,
                    expected_w: dataset.object_width,
                    got_h: o.height(),
                    got_w: o.width(),
                });
            }
            o.clone()
        }
    };
    let probe = match &config.initial_probe {
        Some(p) => {
            dataset.probe.check_same_shape(p, "initial probe vs dataset probe")?;
            p.clone()
        }
        None => dataset.probe.clone(),
    };
    let mut scenario = Scenario::new(
        object,
        probe,
        dataset.positions.clone(),
        dataset.propagator_spec.clone(),
    )?;

    let joint = config.mode == ReconstructionMode::JointProbeObject;
    // ADAM's variance normalization makes step sizes ~lr in absolute
    // parameter units. The object is O(1) by convention, but probe pixel
    // amplitudes scale with the photon budget, so the probe block gets its
    // learning rate scaled by the initial probe's RMS amplitude over the
    // support disc (fixed once, keeping runs deterministic).
    let probe_lr_scale = {
        let p = scenario.probe();
        let inside = support_mask(p.height(), p.width(), p.pitch(), config.regs.support_radius_m)
            .iter()
            .filter(|&&b| b)
            .count()
            .max(1);
        (p.norm_sq() / inside as f64).sqrt()
    };
    let mut object_state = AdamState::new(dataset.object_height * dataset.object_width);
    let mut probe_state = AdamState::new(dataset.probe.len());
    let mut records = Vec::with_capacity(config.schedule.epochs);
    let mut dominance_warnings = 0usize;

    for epoch in 0..config.schedule.epochs {
        let lr = config.schedule.lr_at(epoch);
        let pass = epoch_pass(&scenario, dataset, &config.loss)?;

        let (amp_value, amp_grad) =
            reg_object_amplitude(scenario.object(), config.regs.beta, DEFAULT_EPSILON_L1);
        let (fourier_value, fourier_grad) =
            reg_object_fourier(scenario.object(), config.regs.gamma, DEFAULT_EPSILON_L1);
        let (support_value, support_grad) = if joint {
            reg_probe_support(
                scenario.probe(),
                config.regs.support_radius_m,
                config.regs.alpha,
                DEFAULT_EPSILON_L1,
            )
        } else {
            (0.0, ComplexField::zeros(1, 1, 1.0))
        };

        let mut object_grad = pass.object_grad;
        object_grad.add_assign(&amp_grad);
        object_grad.add_assign(&fourier_grad);
        check_finite(pass.fidelity, &object_grad, epoch, lr)?;

        let reg_values = [support_value, amp_value, fourier_value];
        let ratio = fidelity_dominance_ratio(pass.fidelity, &reg_values);
        let dominance = ratio.is_finite().then_some(ratio);
        if ratio < DOMINANCE_THRESHOLD {
            dominance_warnings += 1;
            log::warn!(
                "epoch {epoch}: fidelity/regularizer ratio {ratio:.3} below {DOMINANCE_THRESHOLD}"
            );
        }
        records.push(EpochRecord {
            epoch,
            lr,
            fidelity: pass.fidelity,
            reg_support: support_value,
            reg_amplitude: amp_value,
            reg_fourier: fourier_value,
            dominance,
        });

        let mut object = scenario.object().clone();
        adam_step(
            object.as_mut_slice(),
            object_grad.as_slice(),
            &mut object_state,
            &config.schedule,
            lr,
        );
        scenario.replace_object(object)?;

        if joint {
            let mut probe_grad = pass.probe_grad;
            probe_grad.add_assign(&support_grad);
            check_finite(pass.fidelity, &probe_grad, epoch, lr)?;
            let mut probe = scenario.probe().clone();
            adam_step(
                probe.as_mut_slice(),
                probe_grad.as_slice(),
                &mut probe_state,
                &config.schedule,
                lr * probe_lr_scale,
            );
            scenario.replace_probe(probe)?;
        }
    }

    Ok(ReconstructionReport {
        object: scenario.object().clone(),
        probe: scenario.probe().clone(),
        epochs: records,
        dominance_warnings,
        wall_ms: started.elapsed().as_millis(),
    })
}

/// Joint reconstruction outcome for illumination calibration.
#[derive(Debug, Clone)]
pub struct ProbeCalibration {
    pub probe: ComplexField,
    /// Probe energy outside the support disc as a fraction of total energy.
    pub outside_support_fraction: f64,
    pub report: ReconstructionReport,
}

/// Recover the illumination from a high-SNR dataset by joint probe/object
/// optimization under the support penalty. Warns when more than 5% of the
/// recovered probe energy lies outside the support disc.
pub fn calibrate_probe(
    dataset: &DiffractionDataset,
    config: &ReconstructionConfig,
) -> Result<ProbeCalibration> {
    if config.mode != ReconstructionMode::JointProbeObject {
        return Err(Error::Config(
            "probe calibration requires joint probe/object mode".into(),
        ));
    }
    let report = reconstruct(dataset, config)?;
    let outside_support_fraction =
        energy_outside_support(&report.probe, config.regs.support_radius_m);
    if outside_support_fraction > 0.05 {
        log::warn!(
            "calibrated probe has {:.1}% of its energy outside the {:.3e} m support disc",
            100.0 * outside_support_fraction,
            config.regs.support_radius_m
        );
    }
    Ok(ProbeCalibration { probe: report.probe.clone(), outside_support_fraction, report })
}

/// Fraction of |P|² lying outside the centered disc of the given radius.
pub fn energy_outside_support(probe: &ComplexField, radius_m: f64) -> f64 {
    let mask = support_mask(probe.height(), probe.width(), probe.pitch(), radius_m);
    let total = probe.norm_sq();
    if total == 0.0 {
        return 0.0;
    }
    let outside: f64 = probe
        .as_slice()
        .iter()
        .zip(&mask)
        .filter(|(_, &inside)| !inside)
        .map(|(z, _)| z.norm_sqr())
        .sum();
    outside / total
}
