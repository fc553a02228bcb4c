//! Per-scene inference chains shared by training and evaluation.

use crate::alignment::EgoMotionStep;
use crate::dreamer::{rollout, DreamerParams, StepLog};
use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::memory::InstanceMemoryQueue;
use crate::motion::{predict_motion, refine_motion, FmpPlanner, MotionOutput, MotionParams};
use crate::safety::SafetyConfig;
use crate::scene::{AgentAnchor, InstanceSet, RolloutConfig, Trajectory};
use crate::selection::{select, CandidateSet, SelectionReport};
use crate::sim::Episode;
use serde::{Deserialize, Serialize};

/// Queue holding frames `t - h ..= t` of an episode and the matching step log.
pub fn history_queue(episode: &Episode, t: usize, config: &RolloutConfig) -> Result<(InstanceMemoryQueue, StepLog)> {
    config.validate()?;
    if t < config.h || t >= episode.len() {
        return Err(Error::InsufficientHistory {
            first: t as i64 - config.h as i64,
            last: t as i64,
            held: format!("0..{}", episode.len()),
        });
    }
    let mut queue = InstanceMemoryQueue::for_rollout(config);
    for k in t - config.h..=t {
        queue.push(episode.frames[k].clone())?;
    }
    let log = StepLog::new(
        (t - config.h) as i64,
        (t - config.h..t).map(|k| episode.ego_step(k)).collect(),
    );
    Ok((queue, log))
}

/// World-model forecast driven by the motion network as planner.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub frames: Vec<InstanceSet>,
    /// `steps[0]` leads from the current frame to `frames[0]`.
    pub steps: Vec<EgoMotionStep>,
    /// The planner's ego trajectory at the last forecast frame, in that frame.
    pub final_plan: Trajectory,
}

impl Forecast {
    /// Pose of each forecast frame in the current frame.
    pub fn poses(&self) -> Vec<Pose2> {
        let mut pose = Pose2::IDENTITY;
        self.steps
            .iter()
            .map(|s| {
                pose = pose.compose(&s.pose());
                pose
            })
            .collect()
    }

    pub fn frame_refs(&self) -> Vec<&InstanceSet> {
        self.frames.iter().collect()
    }

    /// Ego path through the forecast frames continued by the final plan,
    /// `steps` waypoints in the current frame.
    pub fn ego_candidate(&self, steps: usize) -> Trajectory {
        let poses = self.poses();
        let last = poses.last().copied().unwrap_or(Pose2::IDENTITY);
        let pts = poses
            .iter()
            .map(|p| p.translation())
            .chain(self.final_plan.waypoints.iter().map(|w| last.to_parent(*w)))
            .take(steps)
            .collect();
        Trajectory::new(pts, self.final_plan.dt)
    }
}

/// Roll the world model forward from frame `t` with the motion network
/// choosing each action.
pub fn forecast(
    episode: &Episode,
    t: usize,
    config: &RolloutConfig,
    dreamer: &DreamerParams,
    motion: &MotionParams,
) -> Result<Forecast> {
    let (mut queue, mut log) = history_queue(episode, t, config)?;
    let mut planner = FmpPlanner::new(motion);
    let r = rollout(&mut queue, &mut log, config, dreamer, &mut planner)?;
    let final_plan = planner.predict(&queue, &log)?.ego;
    Ok(Forecast {
        steps: r.plans.iter().map(|p| p.ego_step()).collect(),
        frames: r.frames,
        final_plan,
    })
}

/// Switches for the optional planning stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFlags {
    /// Refine predictions and the plan on world-model forecasts.
    pub use_fif: bool,
    /// Plan with the weights fine-tuned under the safety loss.
    pub use_scl: bool,
    /// Choose among candidate plans and apply the safety adjustment.
    pub use_ats: bool,
}

/// Everything produced while planning one scene.
#[derive(Clone, Debug)]
pub struct ScenePlan {
    pub base: MotionOutput,
    pub refined: MotionOutput,
    pub candidates: CandidateSet,
    pub selection: Option<SelectionReport>,
    /// The trajectory the ego would drive.
    pub executed: Trajectory,
}

/// Plan frame `t` of `episode`. `motion` is the planner selected for the
/// run; with FIF off the refined output and the future candidate fall back
/// to the base prediction.
pub fn plan_scene(
    episode: &Episode,
    t: usize,
    rollout_config: &RolloutConfig,
    dreamer: &DreamerParams,
    motion: &MotionParams,
    flags: PlanFlags,
    safety: &SafetyConfig,
) -> Result<ScenePlan> {
    let m = motion.config.history;
    if t < m || t >= episode.len() {
        return Err(Error::InsufficientHistory {
            first: t as i64 - m as i64,
            last: t as i64,
            held: format!("0..{}", episode.len()),
        });
    }
    let steps_n = motion.config.steps;
    let window: Vec<&InstanceSet> = (t - m..=t).map(|k| &episode.frames[k]).collect();
    let steps: Vec<EgoMotionStep> = (t - m..t).map(|k| episode.ego_step(k)).collect();
    let base = predict_motion(&window, &steps, motion)?;
    let current = &episode.frames[t];
    let (refined, future) = if flags.use_fif {
        let fc = forecast(episode, t, rollout_config, dreamer, motion)?;
        let refined = refine_motion(&window, &steps, &fc.frame_refs(), &fc.steps, motion)?;
        let future = fc.ego_candidate(steps_n);
        (refined, future)
    } else {
        (base.clone(), base.ego.clone())
    };
    let candidates = CandidateSet {
        base: base.ego.clone(),
        future,
        refined: refined.ego.clone(),
    };
    let (selection, executed) = if flags.use_ats {
        let (agents, base_trajs) = base.best_modes(current);
        let (_, refined_trajs) = refined.best_modes(current);
        let report = select(&candidates, &current.ego, &agents, &base_trajs, &refined_trajs, safety);
        let executed = report.final_trajectory.clone();
        (Some(report), executed)
    } else {
        (None, refined.ego.clone())
    };
    Ok(ScenePlan {
        base,
        refined,
        candidates,
        selection,
        executed,
    })
}

/// Agents present at frame `t` that stay present for `steps` frames, with
/// their true future centres in frame `t`.
pub fn ground_truth_agents(episode: &Episode, t: usize, steps: usize) -> (Vec<AgentAnchor>, Vec<Trajectory>) {
    let frame = &episode.frames[t];
    let dt = episode.dt();
    frame
        .agents
        .iter()
        .enumerate()
        .filter_map(|(s, slot)| {
            let future = episode.agent_future(t, s, steps)?;
            Some((
                slot.anchor.clone(),
                Trajectory::new(future.iter().map(|a| a.center2()).collect(), dt),
            ))
        })
        .unzip()
}
