use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dreamer::train::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::pipeline::PlanFlags;
use crate::safety::SafetyConfig;
use crate::scene::RolloutConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "data".into(),
            checkpoint: "checkpoint.json".into(),
            report: "report.json".into(),
        }
    }
}

/// Ablation switches. The first four shape the world model at training
/// time; the last three select planning stages at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub use_pe: bool,
    pub use_pp: bool,
    pub refine_agents: bool,
    pub refine_maps: bool,
    pub use_fif: bool,
    pub use_scl: bool,
    pub use_ats: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            use_pe: true,
            use_pp: true,
            refine_agents: true,
            refine_maps: true,
            use_fif: true,
            use_scl: true,
            use_ats: true,
        }
    }
}

impl Flags {
    pub const NAMES: [&'static str; 7] = [
        "use_pe",
        "use_pp",
        "refine_agents",
        "refine_maps",
        "use_fif",
        "use_scl",
        "use_ats",
    ];

    pub fn plan(&self) -> PlanFlags {
        PlanFlags {
            use_fif: self.use_fif,
            use_scl: self.use_scl,
            use_ats: self.use_ats,
        }
    }

    pub fn set(&mut self, name: &str, value: bool) -> Result<()> {
        let slot = match name {
            "use_pe" => &mut self.use_pe,
            "use_pp" => &mut self.use_pp,
            "refine_agents" => &mut self.refine_agents,
            "refine_maps" => &mut self.refine_maps,
            "use_fif" => &mut self.use_fif,
            "use_scl" => &mut self.use_scl,
            "use_ats" => &mut self.use_ats,
            _ => return Err(Error::invalid("flag", format!("unknown flag {name}"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Scenario counts and seeds of the four dataset splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenarios: usize,
    pub adversarial_train_scenarios: usize,
    pub eval_scenarios: usize,
    pub adversarial_eval_scenarios: usize,
    /// Added to the run seed for the training splits.
    pub train_seed_offset: u64,
    pub adversarial_train_seed_offset: u64,
    pub eval_seed_offset: u64,
    pub adversarial_eval_seed_offset: u64,
    pub n_agents: usize,
    pub n_map_elements: usize,
    pub duration: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_scenarios: 200,
            adversarial_train_scenarios: 100,
            eval_scenarios: 50,
            adversarial_eval_scenarios: 50,
            train_seed_offset: 0,
            adversarial_train_seed_offset: 5_000,
            eval_seed_offset: 10_000,
            adversarial_eval_seed_offset: 20_000,
            n_agents: 8,
            n_map_elements: 8,
            duration: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub scl_epochs: usize,
    pub scl_weight: f64,
    pub scl_lr: f64,
    /// Frames of each training scenario used as samples.
    pub frames: Vec<usize>,
}

impl Default for MotionTraining {
    fn default() -> Self {
        MotionTraining {
            epochs: 8,
            batch: 4,
            lr: 1e-3,
            scl_epochs: 3,
            scl_weight: 2.0,
            scl_lr: 3e-4,
            frames: vec![3, 5, 7, 9, 11, 13],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub dreamer: TrainConfig,
    pub motion: MotionTraining,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            dreamer: TrainConfig {
                optimizer: OptimizerKind::adam(1e-3),
                ..Default::default()
            },
            motion: MotionTraining::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Start frames of the forecasting and motion evaluations.
    pub forecast_frames: Vec<usize>,
    /// Frame at which each adversarial scene is planned.
    pub plan_frame: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            forecast_frames: vec![3, 8, 13],
            plan_frame: 3,
        }
    }
}

/// Everything a CLI command needs, loaded from TOML and overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for per-scenario evaluation.
    pub jobs: usize,
    pub paths: Paths,
    pub rollout: RolloutConfig,
    pub safety: SafetyConfig,
    pub flags: Flags,
    pub data: DataConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 1,
            paths: Paths::default(),
            rollout: RolloutConfig::default(),
            safety: SafetyConfig::default(),
            flags: Flags::default(),
            data: DataConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "config".into(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Override one key by its dotted path, e.g. `train.motion.epochs=2`.
    /// The value is parsed as a TOML value, falling back to a string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = |reason: String| Error::invalid("override", reason);
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {assignment:?}")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| bad(e.to_string()))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut root;
        for part in parents {
            node = node.get_mut(*part).ok_or_else(|| bad(format!("unknown key {key}")))?;
        }
        let table = node.as_table_mut().ok_or_else(|| bad(format!("{key}: not a table")))?;
        if !table.contains_key(*last) {
            return Err(bad(format!("unknown key {key}")));
        }
        table.insert(last.to_string(), value);
        *self = root.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.rollout.validate()?;
        self.safety.validate()?;
        if self.jobs == 0 {
            return Err(Error::invalid("run config", "jobs must be at least 1"));
        }
        let d = &self.data;
        let ranges = [
            (d.train_seed_offset, d.train_scenarios),
            (d.adversarial_train_seed_offset, d.adversarial_train_scenarios),
            (d.eval_seed_offset, d.eval_scenarios),
            (d.adversarial_eval_seed_offset, d.adversarial_eval_scenarios),
        ];
        for (i, a) in ranges.iter().enumerate() {
            for b in &ranges[i + 1..] {
                if a.1 > 0 && b.1 > 0 && a.0 < b.0 + b.1 as u64 && b.0 < a.0 + a.1 as u64 {
                    return Err(Error::invalid("run config", "dataset split seed ranges overlap"));
                }
            }
        }
        let need = self.rollout.h.max(self.rollout.m) + self.rollout.f.max(crate::scene::PLAN_STEPS) + 1;
        if d.duration < need {
            return Err(Error::invalid(
                "run config",
                format!("scenario duration {} < {need} frames", d.duration),
            ));
        }
        let last = d.duration - crate::scene::PLAN_STEPS - 1;
        let frames = self.eval.forecast_frames.iter().chain(&self.train.motion.frames).chain([&self.eval.plan_frame]);
        for &t in frames {
            if t < self.rollout.h || t > last {
                return Err(Error::invalid(
                    "run config",
                    format!("frame {t} outside {}..={last}", self.rollout.h),
                ));
            }
        }
        if self.train.motion.epochs > 0 && self.train.motion.batch == 0 {
            return Err(Error::invalid("run config", "motion batch must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over everything that affects results (paths and worker
    /// count excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.jobs = 1;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn dotted_overrides() {
        let mut c = RunConfig::default();
        c.set("train.motion.epochs=2").unwrap();
        c.set("safety.theta = 0.75").unwrap();
        c.set("paths.dataset=/tmp/x").unwrap();
        c.set("flags.use_ats=false").unwrap();
        assert_eq!(c.train.motion.epochs, 2);
        assert_eq!(c.safety.theta, 0.75);
        assert_eq!(c.paths.dataset, PathBuf::from("/tmp/x"));
        assert!(!c.flags.use_ats);
        assert!(c.set("train.nope=1").is_err());
        assert!(c.set("seed").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
    }

    #[test]
    fn hash_ignores_paths_and_jobs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.report = "elsewhere.json".into();
        b.jobs = 4;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overlapping_splits_fail_validation() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.data.eval_seed_offset = 150;
        assert!(c.validate().is_err());
    }
}
