//! Command-line front end for the ptychography engine: simulate noisy
//! measurement runs, calibrate camera readout noise from dark frames,
//! reconstruct objects under a chosen likelihood, jointly refine the probe,
//! and run the photon-budget sweep that compares loss variants across SNR.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ptycho_core::dataset::{load_dataset, save_dataset, simulate, SimulatedData};
use ptycho_core::io::{
    read_complex_field, read_real_stack, render_complex_png, write_pga1, Pga1Array,
};
use ptycho_core::loss::{LossKind, RegularizerWeights};
use ptycho_core::metrics::{correlation, rescale_to_budget, EvalRegion};
use ptycho_core::noise::{estimate_variance_map, mean_frame, sample_dark_stack, NoiseModel};
use ptycho_core::scene::{nominal_disc_probe, SceneSpec};
use ptycho_core::solver::{
    calibrate_probe, reconstruct, InitialObject, OptimizerSchedule, ReconstructionConfig,
    ReconstructionMode, ReconstructionReport,
};
use ptycho_core::sweep::{run_sweep, sweep_csv, sweep_timing_csv, SweepSpec};

#[derive(Parser)]
#[command(
    name = "ptycho",
    version,
    about = "Ptychographic simulation and maximum-likelihood reconstruction"
)]
struct Cli {
    /// Worker threads for the global pool (default: all cores). Sweep cells
    /// and per-position work share this one pool.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a noisy measurement run into a dataset directory.
    Simulate {
        /// Scene description JSON; omit for the stock desk-scale scene.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Total photons per exposure.
        #[arg(long, default_value_t = 1e6)]
        photons: f64,
        /// Noise seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the per-pixel readout variance map from dark frames.
    Darkcal {
        /// Scene description JSON (readout σ, window size); omit for stock.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Existing dark stack (PGA1 real stack). Simulated when omitted.
        #[arg(long)]
        stack: Option<PathBuf>,
        /// Number of simulated dark frames.
        #[arg(long, default_value_t = 300)]
        frames: usize,
        /// Seed for the simulated stack.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the object from a dataset directory.
    Reconstruct {
        /// Dataset directory produced by `simulate`.
        dataset: PathBuf,
        /// Output directory for the report and rendered fields.
        #[arg(long)]
        out: PathBuf,
        /// Data-fidelity likelihood.
        #[arg(long, value_enum)]
        loss: LossArg,
        /// Force negative measured intensities to zero before fitting.
        /// Implied for the Poisson loss, which needs √X to stay real.
        #[arg(long)]
        zero_crop: bool,
        /// Override the schedule's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Optimizer/regularizer overrides JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Jointly refine probe and object from a high-SNR dataset, starting
    /// from a flat disc probe guess.
    CalibrateProbe {
        /// Dataset directory produced by `simulate`.
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the schedule's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Optimizer/regularizer overrides JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the photon-budget sweep and write its CSV tables.
    Sweep {
        /// Sweep description JSON; omit for the stock desk-scale sweep.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for sweep.csv and sweep_timing.csv.
        #[arg(long)]
        out: PathBuf,
        /// Override the sweep schedule's epoch count (quick smoke runs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the correlation C between two complex PGA1 fields.
    Eval {
        /// Reference field (PGA1 complex).
        ground_truth: PathBuf,
        /// Field to score (PGA1 complex).
        candidate: PathBuf,
        /// Restrict scoring to the probe footprints of this dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Footprint intensity threshold relative to the footprint peak.
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Poisson,
    Gaussian,
    Mixed,
}

impl LossArg {
    fn to_kind(self, zero_crop: bool) -> LossKind {
        match self {
            LossArg::Poisson => LossKind::poisson(),
            LossArg::Gaussian => LossKind::gaussian(zero_crop),
            LossArg::Mixed => LossKind::mixed(zero_crop),
        }
    }
}

/// Optional overrides accepted by `reconstruct` and `calibrate-probe`
/// through `--config`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReconOverrides {
    schedule: Option<OptimizerSchedule>,
    regs: Option<RegularizerWeights>,
}

/// Everything `reconstruct` writes besides the field files; enough to rerun
/// the command and reproduce its outputs.
#[derive(Serialize)]
struct ReconReportFile<'a> {
    dataset: String,
    loss: LossKind,
    mode: ReconstructionMode,
    schedule: &'a OptimizerSchedule,
    regs: &'a RegularizerWeights,
    dominance_warnings: usize,
    wall_ms: u128,
    epochs: &'a [ptycho_core::solver::EpochRecord],
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("failed to size the worker pool")?;
    }
    match cli.command {
        Command::Simulate { config, photons, seed, out } => cmd_simulate(config, photons, seed, out),
        Command::Darkcal { config, stack, frames, seed, out } => {
            cmd_darkcal(config, stack, frames, seed, out)
        }
        Command::Reconstruct { dataset, out, loss, zero_crop, epochs, config } => {
            cmd_reconstruct(dataset, out, loss, zero_crop, epochs, config)
        }
        Command::CalibrateProbe { dataset, out, epochs, config } => {
            cmd_calibrate_probe(dataset, out, epochs, config)
        }
        Command::Sweep { config, out, epochs } => cmd_sweep(config, out, epochs),
        Command::Eval { ground_truth, candidate, dataset, threshold } => {
            cmd_eval(ground_truth, candidate, dataset, threshold)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn load_scene(config: Option<&PathBuf>) -> Result<SceneSpec> {
    match config {
        Some(p) => read_json(p, "scene config"),
        None => Ok(SceneSpec::default()),
    }
}

fn load_overrides(config: Option<&PathBuf>) -> Result<ReconOverrides> {
    match config {
        Some(p) => read_json(p, "reconstruction config"),
        None => Ok(ReconOverrides::default()),
    }
}

fn cmd_simulate(config: Option<PathBuf>, photons: f64, seed: u64, out: PathBuf) -> Result<()> {
    let scene = load_scene(config.as_ref())?;
    let data = simulate(&scene, photons, seed)?;
    save_dataset(&out, &data)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    println!(
        "wrote {} frames ({} photons/exposure, seed {seed}) to {}",
        data.dataset.frames.len(),
        photons,
        out.display()
    );
    Ok(())
}

fn cmd_darkcal(
    config: Option<PathBuf>,
    stack_path: Option<PathBuf>,
    frames: usize,
    seed: u64,
    out: PathBuf,
) -> Result<()> {
    let scene = load_scene(config.as_ref())?;
    let stack = match &stack_path {
        Some(p) => read_real_stack(p).with_context(|| format!("reading dark stack {}", p.display()))?,
        None => {
            let model = NoiseModel::uniform_sigma(
                scene.sigma_counts,
                scene.probe_height,
                scene.probe_width,
                scene.pitch_m,
                scene.gain_inv_e_per_adu,
                scene.black_level_counts,
                seed,
            )?;
            sample_dark_stack(&model, frames)?
        }
    };
    let map = estimate_variance_map(&stack)?;
    let dark_mean = mean_frame(&stack)?;
    let map_mean = map.as_slice().iter().sum::<f64>() / map.len() as f64;

    fs::create_dir_all(&out)?;
    write_pga1(out.join("variance_map.pga1"), &Pga1Array::Real(map))?;
    write_pga1(out.join("dark_mean.pga1"), &Pga1Array::Real(dark_mean))?;
    let provenance = serde_json::json!({
        "frames": stack.len(),
        "seed": seed,
        "stack": stack_path.as_ref().map(|p| p.display().to_string()),
        "scene": scene,
        "variance_mean": map_mean,
    });
    fs::write(out.join("darkcal.json"), serde_json::to_string_pretty(&provenance)?)?;
    println!("variance map mean {map_mean:.4} over {} frames -> {}", stack.len(), out.display());
    Ok(())
}

fn write_recon_outputs(
    out: &Path,
    dataset_dir: &Path,
    loss: LossKind,
    config: &ReconstructionConfig,
    report: &ReconstructionReport,
) -> Result<()> {
    fs::create_dir_all(out)?;
    write_pga1(out.join("object.pga1"), &Pga1Array::Complex(report.object.clone()))?;
    render_complex_png(&report.object, out.join("object.png"))?;
    render_complex_png(&report.probe, out.join("probe.png"))?;
    let file = ReconReportFile {
        dataset: dataset_dir.display().to_string(),
        loss,
        mode: config.mode,
        schedule: &config.schedule,
        regs: &config.regs,
        dominance_warnings: report.dominance_warnings,
        wall_ms: report.wall_ms,
        epochs: &report.epochs,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

fn cmd_reconstruct(
    dataset_dir: PathBuf,
    out: PathBuf,
    loss: LossArg,
    zero_crop: bool,
    epochs: Option<usize>,
    config: Option<PathBuf>,
) -> Result<()> {
    let data = load_dataset(&dataset_dir)
        .with_context(|| format!("loading dataset {}", dataset_dir.display()))?;
    let kind = loss.to_kind(zero_crop);
    if matches!(loss, LossArg::Mixed) && data.dataset.variance_map.is_none() {
        bail!(
            "the mixed loss needs the per-pixel readout variance map, but {} has no \
             variance_map.pga1; run `ptycho darkcal` and add it to the dataset",
            dataset_dir.display()
        );
    }
    let overrides = load_overrides(config.as_ref())?;
    let mut recon_config = ReconstructionConfig::object_only(kind);
    if let Some(s) = overrides.schedule {
        recon_config.schedule = s;
    }
    if let Some(r) = overrides.regs {
        recon_config.regs = r;
    }
    if let Some(n) = epochs {
        recon_config.schedule.epochs = n;
    }
    let report = reconstruct(&data.dataset, &recon_config)?;
    write_recon_outputs(&out, &dataset_dir, kind, &recon_config, &report)?;
    let final_fidelity = report.epochs.last().map_or(f64::NAN, |e| e.fidelity);
    println!(
        "reconstructed {} epochs in {} ms (final fidelity {final_fidelity:.6e}, {} dominance warnings) -> {}",
        report.epochs.len(),
        report.wall_ms,
        report.dominance_warnings,
        out.display()
    );
    Ok(())
}

fn cmd_calibrate_probe(
    dataset_dir: PathBuf,
    out: PathBuf,
    epochs: Option<usize>,
    config: Option<PathBuf>,
) -> Result<()> {
    let data: SimulatedData = load_dataset(&dataset_dir)
        .with_context(|| format!("loading dataset {}", dataset_dir.display()))?;
    let scene = &data.scene;
    let overrides = load_overrides(config.as_ref())?;
    let disc = rescale_to_budget(&nominal_disc_probe(scene)?, data.photon_budget)?;
    let mut recon_config = ReconstructionConfig {
        loss: LossKind::poisson(),
        regs: overrides
            .regs
            .unwrap_or_else(|| RegularizerWeights::for_probe_radius(scene.probe_radius_m)),
        schedule: overrides.schedule.unwrap_or_else(|| OptimizerSchedule {
            lr0: 0.02,
            decay: 0.002,
            epochs: 600,
            ..OptimizerSchedule::default()
        }),
        mode: ReconstructionMode::JointProbeObject,
        initial_object: InitialObject::UniformOne,
        initial_probe: Some(disc),
    };
    if let Some(n) = epochs {
        recon_config.schedule.epochs = n;
    }
    let calibration = calibrate_probe(&data.dataset, &recon_config)?;

    fs::create_dir_all(&out)?;
    write_pga1(out.join("probe.pga1"), &Pga1Array::Complex(calibration.probe.clone()))?;
    render_complex_png(&calibration.probe, out.join("probe.png"))?;
    // For simulated datasets the stored probe is the ground truth the
    // calibration is trying to rediscover from its disc start.
    let c = correlation(&data.dataset.probe, &calibration.probe, &EvalRegion::full())?;
    let summary = serde_json::json!({
        "dataset": dataset_dir.display().to_string(),
        "probe_correlation": c,
        "outside_support_fraction": calibration.outside_support_fraction,
        "dominance_warnings": calibration.report.dominance_warnings,
        "wall_ms": calibration.report.wall_ms,
        "schedule": recon_config.schedule,
        "regs": recon_config.regs,
    });
    fs::write(out.join("calibration.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "calibrated probe: C = {c:.4}, outside-support energy {:.4} -> {}",
        calibration.outside_support_fraction,
        out.display()
    );
    Ok(())
}

fn cmd_sweep(config: Option<PathBuf>, out: PathBuf, epochs: Option<usize>) -> Result<()> {
    let mut spec = match config.as_ref() {
        Some(p) => read_json::<SweepSpec>(p, "sweep config")?,
        None => SweepSpec::desk_default(),
    };
    if let Some(n) = epochs {
        spec.schedule.epochs = n;
    }
    let records = run_sweep(&spec)?;

    fs::create_dir_all(&out)?;
    fs::write(out.join("sweep.csv"), sweep_csv(&records))?;
    fs::write(out.join("sweep_timing.csv"), sweep_timing_csv(&records))?;
    fs::write(out.join("sweep_spec.json"), serde_json::to_string_pretty(&spec)?)?;

    println!("budget        variant       mean C");
    for &budget in &spec.budgets {
        for &variant in &spec.variants {
            let mean = ptycho_core::sweep::mean_correlation(&records, budget, variant);
            println!("{budget:12.4e}  {:12}  {mean:.4}", variant.label());
        }
    }
    println!("{} rows -> {}", records.len(), out.join("sweep.csv").display());
    Ok(())
}

fn cmd_eval(
    truth_path: PathBuf,
    candidate_path: PathBuf,
    dataset: Option<PathBuf>,
    threshold: f64,
) -> Result<()> {
    let truth = read_complex_field(&truth_path)
        .with_context(|| format!("reading {}", truth_path.display()))?;
    let candidate = read_complex_field(&candidate_path)
        .with_context(|| format!("reading {}", candidate_path.display()))?;
    let region = match dataset {
        Some(dir) => {
            let data = load_dataset(&dir)
                .with_context(|| format!("loading dataset {}", dir.display()))?;
            EvalRegion::from_probe_footprints(
                truth.shape(),
                &data.dataset.probe,
                &data.dataset.positions,
                threshold,
            )?
        }
        None => EvalRegion::full(),
    };
    let c = correlation(&truth, &candidate, &region)?;
    println!("C = {c:.6}");
    Ok(())
}
