//! Teacher-forced training of the decoder on ground-truth windows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{agent_residual_target, DecoderInput, DreamerParams, AGENT_RESIDUAL};
use crate::alignment::{identity_projection, project_instances};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Graph, Mat, Optimizer, OptimizerKind, Var};
use crate::sim::Episode;

pub const REGRESSION_WEIGHT: f64 = 1.0;
pub const EXISTENCE_WEIGHT: f64 = 0.2;
pub const SMOOTH_L1_BETA: f64 = 0.1;

/// Decoder inputs for frame `t` plus regression and existence targets for
/// frame `t + 1`.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: DecoderInput,
    agent_target: Mat,
    agent_weight: Mat,
    map_target: Mat,
    map_weight: Mat,
    existence: Mat,
}

impl DreamerParams {
    /// Teacher-forced sample predicting frame `t + 1` of `episode`.
    pub fn sample(&self, episode: &Episode, t: usize) -> Result<TrainSample> {
        let m = self.config.window;
        if t < m || t + 1 >= episode.len() {
            return Err(Error::HorizonOverrun {
                requested: t + 1,
                duration: episode.len(),
            });
        }
        let window: Vec<_> = (t - m..=t).map(|k| &episode.frames[k]).collect();
        let steps: Vec<_> = (t - m..t).map(|k| episode.ego_step(k)).collect();
        let step = episode.ego_step(t);
        let current = &episode.frames[t];
        let projected = if self.config.use_pp {
            project_instances(current, &step)
        } else {
            identity_projection(current)
        };
        let input = self.prepare(&window, &steps, &projected, &episode.conditions[t])?;
        let target = &episode.frames[t + 1];
        let layout = &self.config.layout;
        let (na, nm, p2) = (layout.agent_slots, layout.map_slots, 2 * layout.map_points);

        let mut agent_target = Mat::zeros(na, AGENT_RESIDUAL);
        let mut agent_weight = Mat::zeros(na, AGENT_RESIDUAL);
        let mut map_target = Mat::zeros(nm, p2);
        let mut map_weight = Mat::zeros(nm, p2);
        let mut existence = Mat::zeros(na + nm, 1);
        let mut regressed = 0usize;
        for (i, (p, tg)) in projected.agents.iter().zip(&target.agents).enumerate() {
            existence.set(i, 0, tg.anchor.existence.round());
            if self.config.refine_agents && p.is_present() && tg.anchor.is_present() {
                agent_target.row_mut(i).copy_from_slice(&agent_residual_target(p, &tg.anchor));
                agent_weight.row_mut(i).iter_mut().for_each(|w| *w = 1.0);
                regressed += 1;
            }
        }
        for (i, (p, tg)) in projected.maps.iter().zip(&target.maps).enumerate() {
            existence.set(na + i, 0, tg.anchor.existence.round());
            if self.config.refine_maps && p.is_present() && tg.anchor.is_present() {
                for (k, (a, b)) in p.points.iter().zip(&tg.anchor.points).enumerate() {
                    map_target.set(i, 2 * k, b.x - a.x);
                    map_target.set(i, 2 * k + 1, b.y - a.y);
                }
                map_weight.row_mut(i).iter_mut().for_each(|w| *w = 1.0);
                regressed += 1;
            }
        }
        let scale = REGRESSION_WEIGHT / regressed.max(1) as f64;
        agent_weight.scale_assign(scale);
        map_weight.scale_assign(scale);
        Ok(TrainSample {
            input,
            agent_target,
            agent_weight,
            map_target,
            map_weight,
            existence,
        })
    }

    /// Scalar loss node for one sample.
    pub fn loss(&self, g: &mut Graph, sample: &TrainSample) -> Var {
        let out = self.forward(g, &sample.input);
        let la = g.smooth_l1(
            out.agent_residual,
            sample.agent_target.clone(),
            sample.agent_weight.clone(),
            SMOOTH_L1_BETA,
        );
        let lm = g.smooth_l1(out.map_residual, sample.map_target.clone(), sample.map_weight.clone(), SMOOTH_L1_BETA);
        let n = sample.existence.rows;
        let lb = g.bce_with_logits(
            out.existence_logit,
            sample.existence.clone(),
            Mat::filled(n, 1, EXISTENCE_WEIGHT / n as f64),
        );
        let l = g.add(la, lm);
        g.add(l, lb)
    }

    /// Mean loss and gradient over a batch.
    pub fn train_step(&self, batch: &[TrainSample]) -> Result<(f64, Gradients)> {
        let parts: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|s| {
                let mut g = Graph::new();
                let l = self.loss(&mut g, s);
                (g.value(l).data[0], g.backward(l))
            })
            .collect();
        let mut total = 0.0;
        let mut grads = Gradients::default();
        for (l, g) in parts {
            total += l;
            grads.accumulate(g);
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Random windows drawn from each scenario per epoch.
    pub windows_per_scenario: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            windows_per_scenario: 1,
            batch: 4,
            optimizer: OptimizerKind::adam(1e-3),
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Train on random teacher-forced windows of `episodes`.
pub fn train(
    params: &mut DreamerParams,
    episodes: &[Episode],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer).with_clip(cfg.clip_norm);
    let m = params.config.window;
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut picks = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            if ep.len() < m + 2 {
                continue;
            }
            for _ in 0..cfg.windows_per_scenario {
                picks.push((e, rng.gen_range(m..ep.len() - 1)));
            }
        }
        picks.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in picks.chunks(cfg.batch.max(1)) {
            let batch = chunk
                .iter()
                .map(|&(e, t)| params.sample(&episodes[e], t))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = params.train_step(&batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NaNLoss {
                    step: opt.steps() as usize,
                    detail: format!("epoch {epoch}, loss {loss}"),
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
