//! Experiment configuration: one JSON document, dot-path overrides, and a
//! content hash stamped on every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::detector::{DetectorKind, GratingParams, SweepAxis};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::harness::io::Target;
use crate::learner::{Mode, Solver};
use crate::stimuli::{MotionProgram, StimulusKind, StimulusSpec, Transform2D, WorldParams};

/// Environment variable naming the root under which `output_dir` is resolved.
pub const OUTPUT_ROOT_ENV: &str = "SIMMOTION_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub mode: Mode,
    #[serde(rename = "K")]
    pub k: usize,
    pub theta_hat0: f64,
    pub solver: Solver,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            mode: Mode::Sm,
            k: 1,
            theta_hat0: 1.0,
            solver: Solver::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteningConfig {
    pub enabled: bool,
    /// Eigenvalue floor relative to the largest covariance eigenvalue.
    pub epsilon: f64,
    /// Number of leading frames the transform is fitted on.
    pub fit_frames: usize,
}

impl Default for WhiteningConfig {
    fn default() -> Self {
        WhiteningConfig {
            enabled: true,
            epsilon: 1e-5,
            fit_frames: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub kmeans_max_iter: usize,
    /// Use at most this many feature vectors (0 = all).
    pub max_samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            k: 2,
            kmeans_max_iter: 100,
            max_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub grating: GratingParams,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::Cartoon,
            grating: GratingParams::default(),
            axis: SweepAxis::Contrast,
            values: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivConfig {
    pub streams: usize,
    pub taus: Vec<usize>,
    /// Detectors at offsets −w..w are summed; frames get 2w + 3 pixels.
    pub half_widths: Vec<usize>,
    pub steps: usize,
    pub periodic: bool,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            streams: 100,
            taus: vec![1, 2, 4],
            half_widths: vec![5, 21],
            steps: 16,
            periodic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotateDemoConfig {
    pub steps: usize,
    /// Rotation per iteration in radians, after the operator is scaled to the
    /// norm of the analytic generator. Defaults to the training step.
    pub theta: f64,
    /// Operator index inside the checkpoint.
    pub operator: usize,
    /// Gaussian half-width of the bar in pixels.
    pub bar_width: f64,
}

impl Default for RotateDemoConfig {
    fn default() -> Self {
        RotateDemoConfig {
            steps: 8,
            theta: 0.05,
            operator: 0,
            bar_width: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_target_cosine: Option<f64>,
    pub max_principal_angle_deg: Option<f64>,
    pub max_sign_inversion_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub stimulus: StimulusSpec,
    /// Frames generated per seed.
    #[serde(rename = "T")]
    pub steps: usize,
    pub features: FeatureKind,
    pub learner: LearnerConfig,
    pub seeds: Vec<u64>,
    pub whitening: WhiteningConfig,
    /// Upper bound on learner updates (frame pairs consumed).
    pub max_updates: Option<u64>,
    /// Snapshot W every this many updates (0 disables).
    pub checkpoint_interval: u64,
    pub snapshot_steps: Vec<u64>,
    pub trace_every: u64,
    pub probe_size: usize,
    pub probe_interval: u64,
    pub target: Target,
    pub output_dir: String,
    pub thresholds: Thresholds,
    pub baseline: BaselineConfig,
    pub detector: DetectorConfig,
    pub equiv: EquivConfig,
    pub rotate_demo: RotateDemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            stimulus: StimulusSpec::default(),
            steps: 1000,
            features: FeatureKind::Standard,
            learner: LearnerConfig::default(),
            seeds: vec![0],
            whitening: WhiteningConfig::default(),
            max_updates: None,
            checkpoint_interval: 0,
            snapshot_steps: Vec::new(),
            trace_every: 0,
            probe_size: 256,
            probe_interval: 0,
            target: Target::Cartoon,
            output_dir: "runs/default".into(),
            thresholds: Thresholds::default(),
            baseline: BaselineConfig::default(),
            detector: DetectorConfig::default(),
            equiv: EquivConfig::default(),
            rotate_demo: RotateDemoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `a.b.c=value` overrides. The value is parsed as JSON when
    /// possible and taken as a string otherwise.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            set_path(&mut v, path, value)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stimulus.validate()?;
        if self.steps < 2 {
            return Err(Error::invalid("T must be at least 2"));
        }
        if self.learner.k == 0 {
            return Err(Error::invalid("learner.K must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        if !(self.whitening.epsilon >= 0.0) {
            return Err(Error::invalid("whitening.epsilon must be non-negative"));
        }
        if self.equiv.taus.iter().any(|&t| t == 0 || t >= self.equiv.steps) {
            return Err(Error::invalid("equiv.taus must lie in 1..steps"));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form, with the
    /// output directory left out so relocating a run keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        let text = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        format!("{digest:x}")[..16].to_owned()
    }

    /// `output_dir` resolved against the output root environment variable.
    pub fn output_path(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        root.join(&self.output_dir)
    }

    /// Side length when frames are square patches.
    pub fn patch_side(&self) -> Option<usize> {
        (self.stimulus.kind == StimulusKind::NoiseImage2d).then_some(self.stimulus.n)
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::invalid(format!("{path}: {key} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert((*key).to_owned(), value);
            return Ok(());
        }
        cur = obj.entry((*key).to_owned()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::invalid("empty override path"))
}

/// Named configurations shipped with the crate.
pub mod presets {
    use super::*;

    fn fine_world_1d() -> WorldParams {
        WorldParams {
            correlation_length: 0.25,
            samples_per_pixel: 16,
            blur_sigma: 1.1,
        }
    }

    fn fine_world_2d() -> WorldParams {
        WorldParams {
            correlation_length: 0.25,
            samples_per_pixel: 4,
            blur_sigma: 1.1,
        }
    }

    /// SM, K=1, 1D subpixel translations uniform in [−0.5, 0.5].
    pub fn translation_1d() -> ExperimentConfig {
        ExperimentConfig {
            name: "translation_1d".into(),
            stimulus: StimulusSpec {
                kind: StimulusKind::NoiseWorld1d,
                n: 5,
                motion: MotionProgram::Uniform { amplitude: 0.5 },
                world: fine_world_1d(),
                world_length: Some(20_000),
                segment_length: Some(100),
                ..Default::default()
            },
            steps: 203_000,
            max_updates: Some(200_000),
            learner: LearnerConfig {
                mode: Mode::Sm,
                k: 1,
                ..Default::default()
            },
            whitening: WhiteningConfig {
                enabled: true,
                epsilon: 3e-3,
                fit_frames: 50_000,
            },
            snapshot_steps: vec![10_000, 50_000, 200_000],
            probe_interval: 10_000,
            baseline: BaselineConfig {
                k: 2,
                ..Default::default()
            },
            target: Target::Cartoon,
            output_dir: "runs/translation_1d".into(),
            thresholds: Thresholds {
                min_target_cosine: Some(0.9),
                max_principal_angle_deg: Some(10.0),
                max_sign_inversion_cosine: None,
            },
            ..Default::default()
        }
    }

    /// Same world with n = 9 pixels.
    pub fn translation_1d_n9() -> ExperimentConfig {
        let mut c = translation_1d();
        c.name = "translation_1d_n9".into();
        c.stimulus.n = 9;
        c.output_dir = "runs/translation_1d_n9".into();
        c
    }

    /// NSM, K=2, symmetric 1D translations uniform in [−0.25, 0.25].
    pub fn nsm_1d() -> ExperimentConfig {
        let mut c = translation_1d();
        c.name = "nsm_1d".into();
        c.stimulus.motion = MotionProgram::Uniform { amplitude: 0.25 };
        c.learner.mode = Mode::Nsm;
        c.learner.k = 2;
        c.output_dir = "runs/nsm_1d".into();
        c.thresholds = Thresholds {
            min_target_cosine: Some(0.9),
            max_principal_angle_deg: None,
            max_sign_inversion_cosine: Some(-0.9),
        };
        c
    }

    fn image_2d(transform: Transform2D, motion: MotionProgram) -> ExperimentConfig {
        ExperimentConfig {
            stimulus: StimulusSpec {
                kind: StimulusKind::NoiseImage2d,
                n: 5,
                motion,
                transform,
                world: fine_world_2d(),
                segment_length: Some(10),
                ..Default::default()
            },
            steps: 44_445,
            whitening: WhiteningConfig {
                enabled: true,
                epsilon: 1e-5,
                fit_frames: 20_000,
            },
            ..Default::default()
        }
    }

    /// NSM, K=2, ±0.05 rad rotations of 5×5 patches.
    pub fn rotation_2d() -> ExperimentConfig {
        let mut c = image_2d(Transform2D::Rotation, MotionProgram::Signed { magnitude: 0.05 });
        c.name = "rotation_2d".into();
        c.learner = LearnerConfig {
            mode: Mode::Nsm,
            k: 2,
            ..Default::default()
        };
        c.target = Target::Rotation;
        c.output_dir = "runs/rotation_2d".into();
        c.thresholds = Thresholds {
            min_target_cosine: Some(0.8),
            max_principal_angle_deg: None,
            max_sign_inversion_cosine: Some(-0.8),
        };
        c
    }

    /// NSM, K=4, cardinal translations of 5×5 patches.
    pub fn translation_2d() -> ExperimentConfig {
        let mut c = image_2d(Transform2D::Translation, MotionProgram::Cardinal { max_step: 0.25 });
        c.name = "translation_2d".into();
        c.learner = LearnerConfig {
            mode: Mode::Nsm,
            k: 4,
            ..Default::default()
        };
        c.target = Target::Cardinal;
        c.output_dir = "runs/translation_2d".into();
        c.thresholds = Thresholds {
            min_target_cosine: Some(0.8),
            ..Default::default()
        };
        c
    }

    /// Contrast sweep of the cartoon detector on a drifting grating.
    pub fn contrast_sweep() -> ExperimentConfig {
        ExperimentConfig {
            name: "contrast_sweep".into(),
            output_dir: "runs/contrast_sweep".into(),
            target: Target::None,
            ..Default::default()
        }
    }

    /// Velocity sweep at delay τ = 2.
    pub fn velocity_sweep() -> ExperimentConfig {
        ExperimentConfig {
            name: "velocity_sweep".into(),
            output_dir: "runs/velocity_sweep".into(),
            target: Target::None,
            detector: DetectorConfig {
                kind: DetectorKind::Hrd,
                grating: GratingParams {
                    n: 5,
                    wavelength: 8.0,
                    temporal_frequency: 0.05,
                    contrast: 1.0,
                    steps: 4000,
                    tau: 2,
                    phase0: 0.0,
                },
                axis: SweepAxis::Velocity,
                values: (1..=60).map(|k| 0.05 * k as f64).collect(),
            },
            ..Default::default()
        }
    }

    pub fn equivalence() -> ExperimentConfig {
        ExperimentConfig {
            name: "equivalence".into(),
            output_dir: "runs/equivalence".into(),
            target: Target::None,
            ..Default::default()
        }
    }

    pub fn all() -> Vec<ExperimentConfig> {
        vec![
            translation_1d(),
            translation_1d_n9(),
            nsm_1d(),
            rotation_2d(),
            translation_2d(),
            contrast_sweep(),
            velocity_sweep(),
            equivalence(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        for c in presets::all() {
            let text = serde_json::to_string_pretty(&c).unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        }
    }

    #[test]
    fn overrides_follow_dot_paths() {
        let c = presets::translation_1d();
        let o = c
            .with_overrides(&["learner.K=2".into(), "learner.mode=nsm".into(), "stimulus.motion.amplitude=0.1".into()])
            .unwrap();
        assert_eq!(o.learner.k, 2);
        assert_eq!(o.learner.mode, Mode::Nsm);
        assert_eq!(o.stimulus.motion, MotionProgram::Uniform { amplitude: 0.1 });
        assert_ne!(o.hash(), c.hash());
    }

    #[test]
    fn bad_overrides_are_invalid_config() {
        let c = ExperimentConfig::default();
        for bad in ["learner.K=0", "learner.bogus=1", "nonsense", "T=1"] {
            let e = c.with_overrides(&[bad.into()]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = presets::rotation_2d();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn shipped_config_files_match_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for c in presets::all() {
            let path = dir.join(format!("{}.json", c.name));
            assert_eq!(ExperimentConfig::load(&path).unwrap(), c, "{}", path.display());
        }
    }
}
