//! Diffraction datasets: simulation of noisy measurement sets from a scene,
//! and their on-disk layout (PGA1 arrays, positions CSV, JSON manifest with
//! content hashes binding every file).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::forward::Scenario;
use crate::io::{
    read_pga1, read_real_field, read_real_stack, sha256_file, write_pga1, Pga1Array,
};
use crate::metrics::rescale_to_budget;
use crate::noise::{preprocess, sample_frame_indexed, NoiseModel};
use crate::propagation::PropagatorSpec;
use crate::scan::{read_positions_csv, write_positions_csv, ScanPattern};
use crate::scene::{ground_truth_object, ground_truth_probe, scan_positions, SceneSpec};

/// Everything a reconstruction needs: preprocessed frames (photoelectron
/// counts, possibly negative), the scan offsets they were recorded at, the
/// known illumination, the propagation geometry, and optionally the readout
/// variance map (required by the mixed loss).
#[derive(Debug, Clone)]
pub struct DiffractionDataset {
    pub frames: Vec<RealField>,
    pub positions: Vec<(usize, usize)>,
    pub probe: ComplexField,
    pub variance_map: Option<RealField>,
    pub propagator_spec: PropagatorSpec,
    pub object_height: usize,
    pub object_width: usize,
}

impl DiffractionDataset {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.positions.len() {
            return Err(Error::Config(format!(
                "{} frames but {} positions",
                self.frames.len(),
                self.positions.len()
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::Config("dataset has no frames".into()));
        }
        let camera = self.probe.shape();
        for (k, f) in self.frames.iter().enumerate() {
            if f.shape() != camera {
                return Err(Error::ShapeMismatch {
                    what: "dataset frame vs probe window",
                    expected_h: camera.0,
                    expected_w: camera.1,
                    got_h: f.shape().0,
                    got_w: f.shape().1,
                });
            }
            let _ = k;
        }
        if let Some(v) = &self.variance_map {
            if v.shape() != camera {
                return Err(Error::ShapeMismatch {
                    what: "variance map vs probe window",
                    expected_h: camera.0,
                    expected_w: camera.1,
                    got_h: v.shape().0,
                    got_w: v.shape().1,
                });
            }
        }
        if (self.propagator_spec.height, self.propagator_spec.width) != camera {
            return Err(Error::ShapeMismatch {
                what: "propagator vs probe window",
                expected_h: camera.0,
                expected_w: camera.1,
                got_h: self.propagator_spec.height,
                got_w: self.propagator_spec.width,
            });
        }
        for &(r, c) in &self.positions {
            if r + camera.0 > self.object_height || c + camera.1 > self.object_width {
                return Err(Error::OutOfBounds {
                    what: "dataset scan position",
                    row: (r + camera.0) as i64 - 1,
                    col: (c + camera.1) as i64 - 1,
                    height: self.object_height,
                    width: self.object_width,
                });
            }
        }
        Ok(())
    }
}

/// A freshly simulated dataset together with the ground truth that produced
/// it (kept out of [`DiffractionDataset`] so the solver cannot touch it).
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: DiffractionDataset,
    pub ground_truth_object: ComplexField,
    pub ground_truth_probe: ComplexField,
    pub pattern: ScanPattern,
    pub scene: SceneSpec,
    pub photon_budget: f64,
    pub noise_seed: u64,
}

/// Simulate a complete measurement run: ground-truth scene, probe rescaled
/// to the photon budget, per-position noisy exposures, background
/// subtraction, and the true readout variance map in preprocessed count
/// units. Deterministic in (scene, budget, noise_seed); frames draw from
/// per-frame RNG streams so the set is independent of evaluation order.
pub fn simulate(scene: &SceneSpec, photon_budget: f64, noise_seed: u64) -> Result<SimulatedData> {
    scene.validate()?;
    if !(photon_budget > 0.0) {
        return Err(Error::Argument(format!(
            "photon budget must be > 0, got {photon_budget}"
        )));
    }
    let object = ground_truth_object(scene)?;
    let probe = rescale_to_budget(&ground_truth_probe(scene)?, photon_budget)?;
    let (positions, pattern) = scan_positions(scene)?;
    let scenario = Scenario::new(object, probe, positions.clone(), scene.propagator_spec())?;

    let model = NoiseModel::uniform_sigma(
        scene.sigma_counts,
        scene.probe_height,
        scene.probe_width,
        scene.pitch_m,
        scene.gain_inv_e_per_adu,
        scene.black_level_counts,
        noise_seed,
    )?;
    let dark_mean = RealField::constant(
        scene.probe_height,
        scene.probe_width,
        scene.pitch_m,
        scene.black_level_counts,
    );

    let mut frames = Vec::with_capacity(positions.len());
    for k in 0..positions.len() {
        let intensity = scenario.predict_intensity(k)?;
        let raw = sample_frame_indexed(&intensity, &model, k as u64)?;
        frames.push(preprocess(&raw, &dark_mean, scene.gain_inv_e_per_adu)?);
    }

    // Background subtraction leaves variance; the gain factor scales it
    // quadratically into preprocessed count units.
    let g2 = scene.gain_inv_e_per_adu * scene.gain_inv_e_per_adu;
    let variance_map = model.variance().map(|v| v * g2);

    let dataset = DiffractionDataset {
        frames,
        positions,
        probe: scenario.probe().clone(),
        variance_map: Some(variance_map),
        propagator_spec: scene.propagator_spec(),
        object_height: scene.object_height,
        object_width: scene.object_width,
    };
    Ok(SimulatedData {
        ground_truth_object: scenario.object().clone(),
        ground_truth_probe: scenario.probe().clone(),
        dataset,
        pattern,
        scene: scene.clone(),
        photon_budget,
        noise_seed,
    })
}

const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    sha256: String,
}

/// Binds every file of a dataset directory by content hash, along with the
/// provenance needed to regenerate it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene: SceneSpec,
    pub photon_budget: f64,
    pub noise_seed: u64,
    files: Vec<ManifestEntry>,
}

const FILE_OBJECT: &str = "ground_truth_object.pga1";
const FILE_PROBE: &str = "probe.pga1";
const FILE_FRAMES: &str = "frames.pga1";
const FILE_VARIANCE: &str = "variance_map.pga1";
const FILE_POSITIONS: &str = "positions.csv";

/// Write a simulated dataset as a directory: ground truth object, probe,
/// frame stack, variance map, physical positions CSV, and a manifest with
/// the SHA-256 of every file.
pub fn save_dataset(dir: impl AsRef<Path>, data: &SimulatedData) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_pga1(
        dir.join(FILE_OBJECT),
        &Pga1Array::Complex(data.ground_truth_object.clone()),
    )?;
    write_pga1(dir.join(FILE_PROBE), &Pga1Array::Complex(data.dataset.probe.clone()))?;
    write_pga1(
        dir.join(FILE_FRAMES),
        &Pga1Array::RealStack(data.dataset.frames.clone()),
    )?;
    if let Some(v) = &data.dataset.variance_map {
        write_pga1(dir.join(FILE_VARIANCE), &Pga1Array::Real(v.clone()))?;
    }
    write_positions_csv(&data.pattern, dir.join(FILE_POSITIONS))?;

    let mut files = Vec::new();
    for name in [FILE_OBJECT, FILE_PROBE, FILE_FRAMES, FILE_VARIANCE, FILE_POSITIONS] {
        let path = dir.join(name);
        if path.exists() {
            files.push(ManifestEntry {
                file: name.to_string(),
                sha256: sha256_file(&path)?,
            });
        }
    }
    let manifest = DatasetManifest {
        scene: data.scene.clone(),
        photon_budget: data.photon_budget,
        noise_seed: data.noise_seed,
        files,
    };
    fs::write(
        dir.join(MANIFEST_NAME),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Read a dataset directory back, verifying every file against the manifest
/// hashes before trusting its contents.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SimulatedData> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
    for entry in &manifest.files {
        let path = dir.join(&entry.file);
        let actual = sha256_file(&path)?;
        if actual != entry.sha256 {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "{}: content hash {} does not match manifest {} (corrupt or edited dataset)",
                    path.display(),
                    actual,
                    entry.sha256
                ),
            });
        }
    }
    let scene = manifest.scene.clone();
    let ground_truth_object = match read_pga1(dir.join(FILE_OBJECT))? {
        Pga1Array::Complex(f) => f,
        _ => {
            return Err(Error::Format {
                offset: 4,
                message: format!("{FILE_OBJECT} must be 2-D complex"),
            })
        }
    };
    let probe = match read_pga1(dir.join(FILE_PROBE))? {
        Pga1Array::Complex(f) => f,
        _ => {
            return Err(Error::Format {
                offset: 4,
                message: format!("{FILE_PROBE} must be 2-D complex"),
            })
        }
    };
    let frames = read_real_stack(dir.join(FILE_FRAMES))?;
    let variance_map = if dir.join(FILE_VARIANCE).exists() {
        Some(read_real_field(dir.join(FILE_VARIANCE))?)
    } else {
        None
    };
    let pattern = read_positions_csv(
        dir.join(FILE_POSITIONS),
        scene.probe_radius_m,
        scene.target_overlap,
    )?;
    let positions = crate::scene::snap_positions(&scene, &pattern)?;

    let dataset = DiffractionDataset {
        frames,
        positions,
        probe: probe.clone(),
        variance_map,
        propagator_spec: scene.propagator_spec(),
        object_height: scene.object_height,
        object_width: scene.object_width,
    };
    dataset.validate()?;
    Ok(SimulatedData {
        dataset,
        ground_truth_object,
        ground_truth_probe: probe,
        pattern,
        photon_budget: manifest.photon_budget,
        noise_seed: manifest.noise_seed,
        scene,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_scene() -> SceneSpec {
        SceneSpec {
            object_height: 48,
            object_width: 48,
            probe_height: 24,
            probe_width: 24,
            probe_radius_m: 4.0 * 27.6e-6,
            probe_defocus_rad: 5.0,
            n_positions: 6,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let scene = small_scene();
        let a = simulate(&scene, 1e5, 42).unwrap();
        let b = simulate(&scene, 1e5, 42).unwrap();
        for (fa, fb) in a.dataset.frames.iter().zip(&b.dataset.frames) {
            assert_eq!(fa.as_slice(), fb.as_slice());
        }
        let c = simulate(&scene, 1e5, 43).unwrap();
        assert_ne!(
            a.dataset.frames[0].as_slice(),
            c.dataset.frames[0].as_slice()
        );
    }

    #[test]
    fn frames_concentrate_at_prediction_when_bright() {
        // At a huge budget and σ = 0 the relative Poisson spread 1/√I on
        // bright pixels is about 3e-5, so frames are essentially the
        // noise-free prediction.
        let scene = SceneSpec { sigma_counts: 0.0, ..small_scene() };
        let data = simulate(&scene, 1e12, 1).unwrap();
        let object = ground_truth_object(&scene).unwrap();
        let probe = rescale_to_budget(&ground_truth_probe(&scene).unwrap(), 1e12).unwrap();
        let scenario = Scenario::new(
            object,
            probe,
            data.dataset.positions.clone(),
            scene.propagator_spec(),
        )
        .unwrap();
        let mut bright_checked = 0usize;
        for (k, frame) in data.dataset.frames.iter().enumerate() {
            let predicted = scenario.predict_intensity(k).unwrap();
            for (x, i) in frame.as_slice().iter().zip(predicted.as_slice()) {
                if *i > 1e9 {
                    assert!(
                        (x - i).abs() / i < 2e-4,
                        "bright pixel off: X={x} I={i}"
                    );
                    bright_checked += 1;
                }
            }
        }
        assert!(bright_checked > 10, "scene produced too few bright pixels");
    }

    #[test]
    fn dataset_round_trips_through_directory() {
        let dir = tempdir().unwrap();
        let data = simulate(&small_scene(), 1e4, 5).unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.dataset.frames.len(), data.dataset.frames.len());
        for (a, b) in back.dataset.frames.iter().zip(&data.dataset.frames) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
        assert_eq!(back.dataset.positions, data.dataset.positions);
        assert_eq!(
            back.ground_truth_object.as_slice(),
            data.ground_truth_object.as_slice()
        );
        assert_eq!(back.photon_budget, data.photon_budget);
    }

    #[test]
    fn tampered_file_fails_hash_check() {
        let dir = tempdir().unwrap();
        let data = simulate(&small_scene(), 1e4, 6).unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let victim = dir.path().join(FILE_FRAMES);
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 9;
        bytes[last] ^= 0xff;
        fs::write(&victim, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("hash"), "{message}");
            }
            other => panic!("expected hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn manifest_lists_all_files() {
        let dir = tempdir().unwrap();
        let data = simulate(&small_scene(), 1e4, 7).unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap())
                .unwrap();
        let names: Vec<&str> = manifest.files.iter().map(|e| e.file.as_str()).collect();
        for required in [FILE_OBJECT, FILE_PROBE, FILE_FRAMES, FILE_VARIANCE, FILE_POSITIONS] {
            assert!(names.contains(&required), "manifest missing {required}");
        }
    }

    #[test]
    fn simulated_budget_matches_probe_energy() {
        let data = simulate(&small_scene(), 3.4e5, 8).unwrap();
        let budget = crate::metrics::photon_budget(&data.dataset.probe);
        assert!((budget - 3.4e5).abs() < 1e-6 * 3.4e5);
    }

    #[test]
    fn rejects_nonpositive_budget() {
        assert!(simulate(&small_scene(), 0.0, 1).is_err());
        assert!(simulate(&small_scene(), -1.0, 1).is_err());
    }
}
