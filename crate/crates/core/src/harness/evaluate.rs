use super::config::RunConfig;
use super::models::{par_map, Models};
use super::report::{
    average, ApEntry, AtsReport, AtsScene, ForecastReport, ForecasterMetrics, MotionReport, PlanVariant,
    PlanningReport, ProvenanceCount,
};
use super::scoring::{center_ap, chamfer, FrameDetections, AP_THRESHOLDS};
use crate::alignment::{project_instances, projected_frame};
use crate::dreamer::{rollout, DreamerParams, ScriptedPlanner};
use crate::error::Result;
use crate::motion::{motion_metrics, AgentPrediction, AgentTruth, MotionOutput};
use crate::pipeline::{ground_truth_agents, history_queue, plan_scene, PlanFlags};
use crate::safety::collision_detect;
use crate::scene::{InstanceSet, RolloutConfig, PLAN_STEPS};
use crate::selection::Provenance;
use crate::sim::Episode;

/// Planning horizons, seconds.
pub const PLAN_HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

/// The ablation ladder, from no optional stage to all of them.
pub const LADDER: [PlanFlags; 4] = [
    PlanFlags {
        use_fif: false,
        use_scl: false,
        use_ats: false,
    },
    PlanFlags {
        use_fif: true,
        use_scl: false,
        use_ats: false,
    },
    PlanFlags {
        use_fif: true,
        use_scl: true,
        use_ats: false,
    },
    PlanFlags {
        use_fif: true,
        use_scl: true,
        use_ats: true,
    },
];

/// Per-horizon accumulators for one forecaster.
#[derive(Clone, Default)]
struct ForecastAcc {
    l2_sum: Vec<f64>,
    l2_n: Vec<usize>,
    chamfer_sum: Vec<f64>,
    chamfer_n: Vec<usize>,
    detections: Vec<FrameDetections>,
}

impl ForecastAcc {
    fn new(f: usize) -> Self {
        ForecastAcc {
            l2_sum: vec![0.0; f],
            l2_n: vec![0; f],
            chamfer_sum: vec![0.0; f],
            chamfer_n: vec![0; f],
            detections: Vec::new(),
        }
    }

    fn add(&mut self, k: usize, pred: &InstanceSet, truth: &InstanceSet) {
        let mut det = FrameDetections::default();
        for (p, t) in pred.agents.iter().zip(&truth.agents) {
            if t.anchor.is_present() {
                self.l2_sum[k] += (p.anchor.center2() - t.anchor.center2()).norm();
                self.l2_n[k] += 1;
                det.truth.push(t.anchor.center2());
            }
            if p.anchor.is_present() {
                det.predictions.push((p.anchor.existence, p.anchor.center2()));
            }
        }
        for (p, t) in pred.maps.iter().zip(&truth.maps) {
            if t.anchor.is_present() {
                self.chamfer_sum[k] += chamfer(&p.anchor.points, &t.anchor.points);
                self.chamfer_n[k] += 1;
            }
        }
        self.detections.push(det);
    }

    fn merge(&mut self, other: ForecastAcc) {
        for k in 0..self.l2_sum.len() {
            self.l2_sum[k] += other.l2_sum[k];
            self.l2_n[k] += other.l2_n[k];
            self.chamfer_sum[k] += other.chamfer_sum[k];
            self.chamfer_n[k] += other.chamfer_n[k];
        }
        self.detections.extend(other.detections);
    }

    fn finish(self) -> ForecasterMetrics {
        let ratio = |s: &[f64], n: &[usize]| s.iter().zip(n).map(|(s, n)| s / (*n).max(1) as f64).collect::<Vec<_>>();
        let (l2, l2_avg) = average(ratio(&self.l2_sum, &self.l2_n));
        let (chamfer, chamfer_avg) = average(ratio(&self.chamfer_sum, &self.chamfer_n));
        let ap: Vec<ApEntry> = AP_THRESHOLDS
            .iter()
            .map(|&t| ApEntry {
                threshold_m: t,
                ap: center_ap(&self.detections, t),
            })
            .collect();
        let (_, map_ap) = average(ap.iter().map(|a| a.ap).collect());
        ForecasterMetrics {
            l2,
            l2_avg,
            ap,
            map_ap,
            chamfer,
            chamfer_avg,
        }
    }
}

/// Copy-and-paste, iterated projection and world-model forecasts of one
/// window, each `f` frames long in the true future ego frames.
pub fn forecasts(
    episode: &Episode,
    t: usize,
    config: &RolloutConfig,
    dreamer: &DreamerParams,
) -> Result<[Vec<InstanceSet>; 3]> {
    let current = &episode.frames[t];
    let copy = vec![current.clone(); config.f];
    let mut projection = Vec::with_capacity(config.f);
    let mut frame = current.clone();
    for k in 0..config.f {
        frame = projected_frame(&frame, &project_instances(&frame, &episode.ego_step(t + k)));
        projection.push(frame.clone());
    }
    let (mut queue, mut log) = history_queue(episode, t, config)?;
    let mut planner = ScriptedPlanner::from_episode(episode, t);
    let world = rollout(&mut queue, &mut log, config, dreamer, &mut planner)?.frames;
    Ok([copy, projection, world])
}

pub fn evaluate_forecast(cfg: &RunConfig, episodes: &[Episode], dreamer: &DreamerParams) -> Result<ForecastReport> {
    let f = cfg.rollout.f;
    let windows: Vec<(&Episode, usize)> = episodes
        .iter()
        .flat_map(|e| cfg.eval.forecast_frames.iter().map(move |&t| (e, t)))
        .collect();
    let parts = par_map(cfg.jobs, &windows, |(e, t)| {
        let preds = forecasts(e, *t, &cfg.rollout, dreamer)?;
        let mut accs = [ForecastAcc::new(f), ForecastAcc::new(f), ForecastAcc::new(f)];
        for (acc, pred) in accs.iter_mut().zip(&preds) {
            for k in 0..f {
                acc.add(k, &pred[k], &e.frames[t + k + 1]);
            }
        }
        Ok(accs)
    })?;
    let mut total = [ForecastAcc::new(f), ForecastAcc::new(f), ForecastAcc::new(f)];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let [copy_paste, projection, dreamer] = total.map(ForecastAcc::finish);
    Ok(ForecastReport {
        horizons_s: (1..=f).map(|k| k as f64 * cfg.rollout.dt).collect(),
        windows: windows.len(),
        copy_paste,
        projection,
        dreamer,
    })
}

fn predictions(out: &MotionOutput, current: &InstanceSet, key: impl Fn(u32) -> u64) -> Vec<AgentPrediction> {
    out.agents
        .iter()
        .zip(&current.agents)
        .filter_map(|(p, slot)| {
            p.as_ref().map(|p| AgentPrediction {
                id: key(slot.anchor.id),
                center: slot.anchor.center2(),
                trajectory: p.clone(),
            })
        })
        .collect()
}

/// Baseline against refined agent predictions of the imitation planner,
/// pooled over every evaluation window.
/// `None` when the split has no agents to score.
pub fn evaluate_motion(cfg: &RunConfig, episodes: &[Episode], models: &Models) -> Result<Option<MotionReport>> {
    let windows: Vec<(usize, usize)> = (0..episodes.len())
        .flat_map(|e| cfg.eval.forecast_frames.iter().map(move |&t| (e, t)))
        .collect();
    let flags = PlanFlags {
        use_fif: true,
        ..Default::default()
    };
    let parts = par_map(cfg.jobs, &windows, |&(e, t)| {
        let ep = &episodes[e];
        let plan = plan_scene(ep, t, &cfg.rollout, &models.dreamer, &models.motion, flags, &cfg.safety)?;
        let key = |id: u32| ((e * 1000 + t) as u64) << 32 | id as u64;
        let current = &ep.frames[t];
        let (agents, futures) = ground_truth_agents(ep, t, PLAN_STEPS);
        let truth: Vec<AgentTruth> = agents
            .iter()
            .zip(futures)
            .map(|(a, f)| AgentTruth {
                id: key(a.id),
                center: a.center2(),
                future: f.waypoints,
            })
            .collect();
        Ok((predictions(&plan.base, current, key), predictions(&plan.refined, current, key), truth))
    })?;
    let mut base = Vec::new();
    let mut refined = Vec::new();
    let mut truth = Vec::new();
    for (b, r, t) in parts {
        base.extend(b);
        refined.extend(r);
        truth.extend(t);
    }
    if truth.is_empty() {
        return Ok(None);
    }
    Ok(Some(MotionReport {
        windows: windows.len(),
        base: motion_metrics(&base, &truth)?,
        refined: motion_metrics(&refined, &truth)?,
    }))
}

/// Collision flags and L2 of one executed plan per horizon.
#[derive(Clone, Copy)]
struct SceneScore {
    collision: [bool; 3],
    l2: [f64; 3],
}

fn score(episode: &Episode, t: usize, executed: &crate::scene::Trajectory) -> SceneScore {
    let (agents, futures) = ground_truth_agents(episode, t, PLAN_STEPS);
    let hits = collision_detect(executed, &episode.frames[t].ego, &agents, &futures);
    let truth = &episode.conditions[t].planned_trajectory;
    let mut s = SceneScore {
        collision: [false; 3],
        l2: [0.0; 3],
    };
    for (h, horizon) in PLAN_HORIZONS.iter().enumerate() {
        let k = ((horizon / truth.dt).round() as usize).min(executed.len());
        s.collision[h] = hits[..k].iter().any(|&c| c);
        s.l2[h] = (0..k)
            .map(|j| (executed.waypoints[j] - truth.waypoints[j]).norm())
            .sum::<f64>()
            / k.max(1) as f64;
    }
    s
}

fn variant(flags: PlanFlags, scores: &[SceneScore]) -> PlanVariant {
    let n = scores.len().max(1) as f64;
    let (l2, l2_avg) = average((0..3).map(|h| scores.iter().map(|s| s.l2[h]).sum::<f64>() / n).collect());
    let (collision, collision_avg) =
        average((0..3).map(|h| scores.iter().filter(|s| s.collision[h]).count() as f64 / n).collect());
    PlanVariant {
        flags,
        scenes: scores.len(),
        l2,
        l2_avg,
        collision,
        collision_avg,
    }
}

/// Open-loop planning on `episodes` for every ladder rung and the configured
/// flags, plus selection statistics of the full pipeline.
pub fn evaluate_planning(
    cfg: &RunConfig,
    split: &str,
    episodes: &[Episode],
    seeds: &[u64],
    models: &Models,
) -> Result<(PlanningReport, AtsReport)> {
    let t = cfg.eval.plan_frame;
    let configured = cfg.flags.plan();
    let mut variants: Vec<PlanFlags> = LADDER.to_vec();
    if !variants.contains(&configured) {
        variants.push(configured);
    }
    let per_scene = par_map(cfg.jobs, episodes, |ep| {
        variants
            .iter()
            .map(|&flags| {
                let plan = plan_scene(
                    ep,
                    t,
                    &cfg.rollout,
                    &models.dreamer,
                    models.planner(flags.use_scl),
                    flags,
                    &cfg.safety,
                )?;
                Ok((score(ep, t, &plan.executed), plan.selection))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let scores = |i: usize| -> Vec<SceneScore> {
        per_scene
            .iter()
            .map(|v| v[i].0)
            .collect()
    };
    let ladder: Vec<PlanVariant> = (0..LADDER.len()).map(|i| variant(LADDER[i], &scores(i))).collect();
    let ci = variants.iter().position(|f| *f == configured).expect("configured flags evaluated");
    let planning = PlanningReport {
        split: split.to_string(),
        horizons_s: PLAN_HORIZONS.to_vec(),
        baseline: ladder[0].clone(),
        pipeline: variant(configured, &scores(ci)),
        ladder,
    };

    let full = LADDER.len() - 1;
    let details: Vec<AtsScene> = per_scene
        .iter()
        .zip(seeds)
        .filter_map(|(v, &seed)| {
            v[full].1.as_ref().map(|r| AtsScene {
                seed,
                chosen: r.chosen,
                fallback: r.fallback,
                candidates: r.candidates.clone(),
            })
        })
        .collect();
    let candidates = Provenance::PREFERENCE
        .iter()
        .map(|&p| {
            let reports: Vec<_> = details
                .iter()
                .flat_map(|d| d.candidates.iter().filter(|c| c.provenance == p))
                .collect();
            ProvenanceCount {
                provenance: p,
                chosen: details.iter().filter(|d| d.chosen == p).count(),
                mean_scl: reports.iter().map(|c| c.scl).sum::<f64>() / reports.len().max(1) as f64,
                eligible: reports.iter().filter(|c| c.eligible()).count(),
            }
        })
        .collect();
    let ats = AtsReport {
        flags: LADDER[full],
        scenes: details.len(),
        fallbacks: details.iter().filter(|d| d.fallback).count(),
        candidates,
        details,
    };
    Ok((planning, ats))
}
