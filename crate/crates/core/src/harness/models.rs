use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::TrainingReport;
use crate::dreamer::train::{train as train_dreamer, TrainConfig};
use crate::dreamer::{DreamerCheckpoint, DreamerConfig, DreamerParams};
use crate::error::{Error, Result};
use crate::motion::train::{train as train_motion, MotionSample, MotionTrainConfig};
use crate::motion::{MotionCheckpoint, MotionConfig, MotionParams};
use crate::nn::OptimizerKind;
use crate::pipeline::forecast;
use crate::scene::SceneLayout;
use crate::sim::Episode;

/// Trained world model plus the imitation and safety-tuned planners.
#[derive(Clone, Debug)]
pub struct Models {
    pub dreamer: DreamerParams,
    pub motion: MotionParams,
    pub motion_scl: MotionParams,
}

impl Models {
    /// Planner weights for a run.
    pub fn planner(&self, use_scl: bool) -> &MotionParams {
        if use_scl {
            &self.motion_scl
        } else {
            &self.motion
        }
    }

    pub fn layout(&self) -> SceneLayout {
        self.dreamer.config.layout
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub dreamer: DreamerCheckpoint,
    pub motion: MotionCheckpoint,
    pub motion_scl: MotionCheckpoint,
}

impl Checkpoint {
    pub fn new(models: &Models, config_hash: String) -> Self {
        Checkpoint {
            config_hash,
            dreamer: models.dreamer.checkpoint(),
            motion: models.motion.checkpoint(),
            motion_scl: models.motion_scl.checkpoint(),
        }
    }

    pub fn models(&self) -> Result<Models> {
        Ok(Models {
            dreamer: DreamerParams::from_checkpoint(&self.dreamer)?,
            motion: MotionParams::from_checkpoint(&self.motion)?,
            motion_scl: MotionParams::from_checkpoint(&self.motion_scl)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: format!("checkpoint {}", path.display()),
            reason: e.to_string(),
        })
    }
}

/// World-model configuration implied by the run's ablation flags.
pub fn dreamer_config(cfg: &RunConfig) -> DreamerConfig {
    DreamerConfig {
        window: cfg.rollout.m,
        use_pe: cfg.flags.use_pe,
        use_pp: cfg.flags.use_pp,
        refine_agents: cfg.flags.refine_agents,
        refine_maps: cfg.flags.refine_maps,
        ..Default::default()
    }
}

/// Run `f` over `items` on `jobs` workers, keeping input order.
pub fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Train the world model, then the motion network on history windows, then
/// on history plus world-model forecasts, then a copy under the safety loss.
pub fn train_models(
    cfg: &RunConfig,
    train: &[Episode],
    adversarial: &[Episode],
    mut log: impl FnMut(&str),
) -> Result<(Models, TrainingReport)> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut dreamer = DreamerParams::new(dreamer_config(cfg), seed)?;
    let dcfg = TrainConfig {
        seed: cfg.train.dreamer.seed.wrapping_add(seed),
        ..cfg.train.dreamer.clone()
    };
    let dreamer_report = train_dreamer(&mut dreamer, train, &dcfg, |e, l| log(&format!("dreamer epoch {e}: loss {l:.5}")))?;

    let mc = &cfg.train.motion;
    let mut motion = MotionParams::new(
        MotionConfig {
            history: cfg.rollout.h,
            horizon: cfg.rollout.f,
            ..Default::default()
        },
        seed.wrapping_add(1),
    )?;
    let episodes: Vec<&Episode> = train.iter().chain(adversarial).collect();
    let windows: Vec<(&Episode, usize)> = episodes
        .iter()
        .flat_map(|e| mc.frames.iter().map(move |&t| (*e, t)))
        .collect();
    let history: Vec<MotionSample> = windows
        .iter()
        .map(|(e, t)| motion.history_sample(e, *t))
        .collect::<Result<_>>()?;
    let stage = |epochs: usize, lr: f64, offset: u64, scl_weight: f64| MotionTrainConfig {
        epochs,
        batch: mc.batch,
        optimizer: OptimizerKind::adam(lr),
        seed: seed.wrapping_add(offset),
        scl_weight,
        safety: cfg.safety,
        ..Default::default()
    };
    let motion_history = train_motion(&mut motion, &history, &stage(mc.epochs, mc.lr, 2, 0.0), |e, l| {
        log(&format!("motion (history) epoch {e}: loss {l:.5}"))
    })?;

    let forecasts = |params: &MotionParams| -> Result<Vec<MotionSample>> {
        par_map(cfg.jobs, &windows, |(e, t)| {
            let fc = forecast(e, *t, &cfg.rollout, &dreamer, params)?;
            params.forecast_sample(e, *t, &fc.frame_refs(), &fc.steps)
        })
    };
    let mut mixed = history.clone();
    mixed.extend(forecasts(&motion)?);
    let motion_mixed = train_motion(&mut motion, &mixed, &stage(mc.epochs, mc.lr, 3, 0.0), |e, l| {
        log(&format!("motion (history + forecast) epoch {e}: loss {l:.5}"))
    })?;

    let mut motion_scl = motion.clone();
    let mut tuned = history;
    tuned.extend(forecasts(&motion)?);
    let motion_scl_report = train_motion(
        &mut motion_scl,
        &tuned,
        &stage(mc.scl_epochs, mc.scl_lr, 4, mc.scl_weight),
        |e, l| log(&format!("motion (safety) epoch {e}: loss {l:.5}")),
    )?;

    let report = TrainingReport {
        dreamer: dreamer_report,
        motion_history,
        motion_mixed,
        motion_scl: motion_scl_report,
        history_samples: windows.len(),
        forecast_samples: windows.len(),
    };
    Ok((
        Models {
            dreamer,
            motion,
            motion_scl,
        },
        report,
    ))
}
