//! Photon-budget sweep: for every (budget, loss variant, seed) cell, simulate
//! a dataset, reconstruct it, and score the result against the ground truth,
//! producing one CSV table of correlation versus illumination intensity.
//!
//! The result table is deterministic: runs are collected in grid order and
//! timing (the one nondeterministic column) is emitted as a separate sidecar
//! table so the main CSV is byte-identical across repeats and thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::simulate;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::{correlation, EvalRegion};
use crate::scene::SceneSpec;
use crate::solver::{reconstruct, OptimizerSchedule, ReconstructionConfig};

/// The four loss treatments compared by the sweep. Cropping (forcing negative
/// background-subtracted counts to zero) is mandatory for the Poisson loss,
/// and the mixed loss is run both ways to isolate what cropping alone costs.
/// The Gaussian loss runs on raw data; it needs no crop to stay real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariant {
    PoissonCrop,
    MixedCrop,
    MixedRaw,
    Gaussian,
}

impl SweepVariant {
    pub const ALL: [SweepVariant; 4] = [
        SweepVariant::PoissonCrop,
        SweepVariant::MixedCrop,
        SweepVariant::MixedRaw,
        SweepVariant::Gaussian,
    ];

    pub fn loss(self) -> LossKind {
        match self {
            SweepVariant::PoissonCrop => LossKind::poisson(),
            SweepVariant::MixedCrop => LossKind::mixed(true),
            SweepVariant::MixedRaw => LossKind::mixed(false),
            SweepVariant::Gaussian => LossKind::gaussian(false),
        }
    }

    /// Stable label used in CSV output and CLI arguments.
    pub fn label(self) -> &'static str {
        match self {
            SweepVariant::PoissonCrop => "poisson+crop",
            SweepVariant::MixedCrop => "mixed+crop",
            SweepVariant::MixedRaw => "mixed+raw",
            SweepVariant::Gaussian => "gaussian",
        }
    }
}

impl std::fmt::Display for SweepVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for SweepVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepVariant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown sweep variant {s:?}; expected one of poisson+crop, \
                     mixed+crop, mixed+raw, gaussian"
                ))
            })
    }
}

/// Full description of one sweep: the scene to simulate, the photon-budget
/// grid, the loss variants to compare, one noise seed per repetition, and the
/// optimizer schedule shared by every run.
/// JSON configs may specify any subset of fields; the rest keep the
/// desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub scene: SceneSpec,
    /// Total photons per exposure, sorted ascending.
    pub budgets: Vec<f64>,
    pub variants: Vec<SweepVariant>,
    /// One simulation per seed at every (budget, variant) cell.
    pub seeds: Vec<u64>,
    pub schedule: OptimizerSchedule,
    /// Probe-footprint intensity threshold (relative to the footprint peak)
    /// defining the region scored by the correlation metric.
    pub footprint_threshold: f64,
}

impl SweepSpec {
    /// The desk-scale default: the standard scene, half-decade budgets across
    /// the low-SNR transition plus one high-budget anchor, all four variants,
    /// three seeds, and a gentle long schedule that converges from a flat
    /// start at every budget.
    pub fn desk_default() -> Self {
        Self {
            scene: SceneSpec::default(),
            budgets: vec![1e3, 10f64.powf(3.5), 1e4, 10f64.powf(4.5), 1e5, 1e9],
            variants: SweepVariant::ALL.to_vec(),
            seeds: vec![40, 41, 42],
            schedule: OptimizerSchedule {
                lr0: 0.025,
                decay: 0.002,
                epochs: 1500,
                ..OptimizerSchedule::default()
            },
            footprint_threshold: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.schedule.validate()?;
        if self.budgets.is_empty() {
            return Err(Error::Config("sweep needs at least one photon budget".into()));
        }
        if self.budgets.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Config("sweep budgets must be positive and finite".into()));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep budgets must be strictly ascending".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("sweep needs at least one loss variant".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("sweep seeds must be distinct".into()));
        }
        if !(self.footprint_threshold > 0.0 && self.footprint_threshold < 1.0) {
            return Err(Error::Config(format!(
                "footprint_threshold must lie in (0, 1), got {}",
                self.footprint_threshold
            )));
        }
        Ok(())
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self::desk_default()
    }
}

/// Outcome of one sweep cell. A diverged reconstruction is recorded with NaN
/// correlation and fidelity rather than aborting the remaining cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub budget: f64,
    pub variant: SweepVariant,
    pub seed: u64,
    pub correlation: f64,
    pub final_fidelity: f64,
    pub wall_ms: u128,
}

/// Run every (budget, variant, seed) cell of the sweep. Cells run in parallel
/// across the rayon pool; records are returned in grid order (budget outermost,
/// then variant, then seed) regardless of thread count.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRecord>> {
    spec.validate()?;
    let cells: Vec<(f64, SweepVariant, u64)> = spec
        .budgets
        .iter()
        .flat_map(|&budget| {
            spec.variants.iter().flat_map(move |&variant| {
                spec.seeds.iter().map(move |&seed| (budget, variant, seed))
            })
        })
        .collect();
    cells
        .into_par_iter()
        .map(|(budget, variant, seed)| run_cell(spec, budget, variant, seed))
        .collect()
}

fn run_cell(
    spec: &SweepSpec,
    budget: f64,
    variant: SweepVariant,
    seed: u64,
) -> Result<SweepRecord> {
    let start = std::time::Instant::now();
    let sim = simulate(&spec.scene, budget, seed)?;
    let config = ReconstructionConfig {
        schedule: spec.schedule.clone(),
        ..ReconstructionConfig::object_only(variant.loss())
    };
    let (c, fidelity) = match reconstruct(&sim.dataset, &config) {
        Ok(report) => {
            let region = EvalRegion::from_probe_footprints(
                (spec.scene.object_height, spec.scene.object_width),
                &sim.dataset.probe,
                &sim.dataset.positions,
                spec.footprint_threshold,
            )?;
            let c = correlation(&sim.ground_truth_object, &report.object, &region)?;
            let fidelity = report.epochs.last().map_or(f64::NAN, |e| e.fidelity);
            (c, fidelity)
        }
        Err(Error::Divergence { .. }) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(SweepRecord {
        budget,
        variant,
        seed,
        correlation: c,
        final_fidelity: fidelity,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Render the deterministic result table: one `budget,variant,seed,C,
/// final_fidelity` row per record, formatted identically across repeats.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("budget,variant,seed,C,final_fidelity\n");
    for r in records {
        out.push_str(&format!(
            "{:.6e},{},{},{:.6},{:.6e}\n",
            r.budget, r.variant, r.seed, r.correlation, r.final_fidelity
        ));
    }
    out
}

/// Render the timing sidecar (`budget,variant,seed,wall_ms`). Kept separate
/// from the result table because wall time varies run to run.
pub fn sweep_timing_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("budget,variant,seed,wall_ms\n");
    for r in records {
        out.push_str(&format!(
            "{:.6e},{},{},{}\n",
            r.budget, r.variant, r.seed, r.wall_ms
        ));
    }
    out
}

/// Mean correlation over seeds for one (budget, variant) cell of `records`.
/// NaN records (diverged runs) poison the mean, which is the conservative
/// reading for trend checks.
pub fn mean_correlation(records: &[SweepRecord], budget: f64, variant: SweepVariant) -> f64 {
    let cs: Vec<f64> = records
        .iter()
        .filter(|r| r.budget == budget && r.variant == variant)
        .map(|r| r.correlation)
        .collect();
    if cs.is_empty() {
        return f64::NAN;
    }
    cs.iter().sum::<f64>() / cs.len() as f64
}

/// Standard error of the seed-to-seed correlation spread for one cell;
/// NaN when fewer than two records exist.
pub fn correlation_se(records: &[SweepRecord], budget: f64, variant: SweepVariant) -> f64 {
    let cs: Vec<f64> = records
        .iter()
        .filter(|r| r.budget == budget && r.variant == variant)
        .map(|r| r.correlation)
        .collect();
    if cs.len() < 2 {
        return f64::NAN;
    }
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let var = cs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (cs.len() - 1) as f64;
    (var / cs.len() as f64).sqrt()
}
