//! Imitation training of the motion network, with an optional safety term
//! on the ego plan.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MotionInput, MotionParams};
use crate::alignment::EgoMotionStep;
use crate::dreamer::train::TrainReport;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::nn::{Gradients, Graph, Mat, Optimizer, OptimizerKind, Var};
use crate::safety::{sav, SafetyConfig};
use crate::scene::{AgentAnchor, EgoAnchor, InstanceSet, Trajectory};
use crate::sim::Episode;

pub const SMOOTH_L1_BETA: f64 = 1.0;
pub const SCORE_WEIGHT: f64 = 0.1;

/// Ground-truth agents around the ego over the plan horizon.
#[derive(Clone, Debug)]
pub struct SafetyScene {
    pub ego: EgoAnchor,
    pub agents: Vec<AgentAnchor>,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Clone, Debug)]
pub struct MotionSample {
    pub input: MotionInput,
    /// Per slot: target offsets in the agent's own frame, `T·2` values.
    agent_targets: Vec<Option<Vec<f64>>>,
    ego_target: Mat,
    pub scene: SafetyScene,
}

impl MotionParams {
    /// Sample for frame `t` built from the observed history.
    pub fn history_sample(&self, episode: &Episode, t: usize) -> Result<MotionSample> {
        let m = self.config.history;
        if t < m || t >= episode.len() {
            return Err(Error::HorizonOverrun {
                requested: t,
                duration: episode.len(),
            });
        }
        let frames: Vec<&InstanceSet> = (t - m..=t).map(|k| &episode.frames[k]).collect();
        let steps: Vec<EgoMotionStep> = (t - m..t).map(|k| episode.ego_step(k)).collect();
        let input = self.prepare(&frames, &steps, m)?;
        self.with_targets(input, episode, t)
    }

    /// Sample for frame `t` built from the observed history followed by
    /// forecast frames.
    pub fn forecast_sample(
        &self,
        episode: &Episode,
        t: usize,
        futures: &[&InstanceSet],
        future_steps: &[EgoMotionStep],
    ) -> Result<MotionSample> {
        let m = self.config.history;
        if t < m || t >= episode.len() {
            return Err(Error::HorizonOverrun {
                requested: t,
                duration: episode.len(),
            });
        }
        let stack: Vec<&InstanceSet> = (t - m..=t).map(|k| &episode.frames[k]).chain(futures.iter().copied()).collect();
        let steps: Vec<EgoMotionStep> = (t - m..t).map(|k| episode.ego_step(k)).chain(future_steps.iter().copied()).collect();
        let input = self.prepare(&stack, &steps, m)?;
        self.with_targets(input, episode, t)
    }

    fn with_targets(&self, input: MotionInput, episode: &Episode, t: usize) -> Result<MotionSample> {
        let steps = self.config.steps;
        let plan = &episode.conditions[t].planned_trajectory;
        plan.validate(steps)?;
        let ego_target = Mat::from_vec(1, 2 * steps, plan.waypoints.iter().flat_map(|w| [w.x, w.y]).collect());
        let current = &episode.frames[t];
        let mut agents = Vec::new();
        let mut trajectories = Vec::new();
        let agent_targets = input
            .agent_frames
            .iter()
            .enumerate()
            .map(|(s, frame)| {
                let frame = (*frame)?;
                let future = episode.agent_future(t, s, steps)?;
                agents.push(current.agents[s].anchor.clone());
                trajectories.push(Trajectory::new(future.iter().map(|a| a.center2()).collect(), plan.dt));
                Some(
                    future
                        .iter()
                        .flat_map(|a| {
                            let p = frame.to_local(a.center2());
                            [p.x, p.y]
                        })
                        .collect(),
                )
            })
            .collect();
        Ok(MotionSample {
            input,
            agent_targets,
            ego_target,
            scene: SafetyScene {
                ego: current.ego.clone(),
                agents,
                trajectories,
            },
        })
    }

    /// Imitation loss, plus the safety surrogate when `safety` is given as
    /// `(weight, config)`.
    pub fn loss(&self, g: &mut Graph, sample: &MotionSample, safety: Option<(f64, &SafetyConfig)>) -> Var {
        let cfg = &self.config;
        let (k_modes, t_steps) = (cfg.modes, cfg.steps);
        let width = cfg.traj_width();
        let out = self.forward(g, &sample.input);
        let na = sample.agent_targets.len();

        let offsets = g.value(out.agent_offsets).clone();
        let n_valid = sample.agent_targets.iter().flatten().count();
        let mut target = Mat::zeros(na, width);
        let mut weight = Mat::zeros(na, width);
        let mut best = Mat::zeros(na, k_modes);
        let mut score_weight = Mat::zeros(na, k_modes);
        for (s, tgt) in sample.agent_targets.iter().enumerate() {
            let Some(tgt) = tgt else { continue };
            let row = offsets.row(s);
            let err = |m: usize| -> f64 {
                (0..t_steps)
                    .map(|j| {
                        let c = 2 * (m * t_steps + j);
                        (row[c] - tgt[2 * j]).hypot(row[c + 1] - tgt[2 * j + 1])
                    })
                    .sum()
            };
            let k = (0..k_modes).min_by(|a, b| err(*a).total_cmp(&err(*b))).unwrap_or(0);
            for m in 0..k_modes {
                for (j, v) in tgt.iter().enumerate() {
                    target.set(s, m * 2 * t_steps + j, *v);
                }
            }
            for j in 0..2 * t_steps {
                weight.set(s, k * 2 * t_steps + j, 1.0 / (n_valid * t_steps) as f64);
            }
            best.set(s, k, 1.0);
            for m in 0..k_modes {
                score_weight.set(s, m, SCORE_WEIGHT / (n_valid * k_modes) as f64);
            }
        }
        let la = g.smooth_l1(out.agent_offsets, target, weight, SMOOTH_L1_BETA);
        let ls = g.bce_with_logits(out.scores, best, score_weight);
        let le = g.smooth_l1(
            out.ego,
            sample.ego_target.clone(),
            Mat::filled(1, 2 * t_steps, 1.0 / t_steps as f64),
            SMOOTH_L1_BETA,
        );
        let l = g.add(la, ls);
        let mut l = g.add(l, le);

        if let Some((w, safety)) = safety {
            let e = g.value(out.ego);
            let plan = Trajectory::new(
                (0..t_steps).map(|j| Vec2::new(e.data[2 * j], e.data[2 * j + 1])).collect(),
                cfg.dt,
            );
            let sc = &sample.scene;
            let v = sav(&plan, &sc.agents, &sc.trajectories, safety, &sc.ego);
            let nonzero = v.steps.iter().filter(|s| s.norm() != 0.0).count();
            if nonzero > 0 {
                let mut c = Mat::zeros(1, 2 * t_steps);
                for (j, s) in v.steps.iter().enumerate() {
                    let n = s.norm();
                    if n != 0.0 {
                        c.set(0, 2 * j, -w * s.x / n / nonzero as f64);
                        c.set(0, 2 * j + 1, -w * s.y / n / nonzero as f64);
                    }
                }
                let ls = g.dot_const(out.ego, c);
                l = g.add(l, ls);
            }
        }
        l
    }

    /// Mean loss and gradient over a batch.
    pub fn train_step(&self, batch: &[&MotionSample], safety: Option<(f64, &SafetyConfig)>) -> (f64, Gradients) {
        let mut total = 0.0;
        let mut grads = Gradients::default();
        for s in batch {
            let mut g = Graph::new();
            let l = self.loss(&mut g, s, safety);
            total += g.value(l).data[0];
            grads.accumulate(g.backward(l));
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        (total / n, grads)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub seed: u64,
    /// Weight of the safety surrogate; zero trains on imitation only.
    pub scl_weight: f64,
    pub safety: SafetyConfig,
}

impl Default for MotionTrainConfig {
    fn default() -> Self {
        MotionTrainConfig {
            epochs: 10,
            batch: 4,
            optimizer: OptimizerKind::adam(1e-3),
            clip_norm: 5.0,
            seed: 0,
            scl_weight: 0.0,
            safety: SafetyConfig::default(),
        }
    }
}

/// Train on a fixed pool of samples, reshuffled every epoch.
pub fn train(
    params: &mut MotionParams,
    samples: &[MotionSample],
    cfg: &MotionTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer).with_clip(cfg.clip_norm);
    let safety = (cfg.scl_weight > 0.0).then_some((cfg.scl_weight, &cfg.safety));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&MotionSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = params.train_step(&batch, safety);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NaNLoss {
                    step: opt.steps() as usize,
                    detail: format!("motion epoch {epoch}, loss {loss}"),
                });
            }
            opt.step(&mut params.store, &grads);
            sum += loss;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    report.steps = opt.steps();
    Ok(report)
}
