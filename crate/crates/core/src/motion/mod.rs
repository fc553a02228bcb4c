//! Multimodal agent motion prediction and ego planning from a short stack
//! of frames: either the observed history or world-model forecasts.

mod metrics;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{motion_metrics, AgentPrediction, AgentTruth, MotionMetrics, HIT_THRESHOLD};

use crate::alignment::EgoMotionStep;
use crate::dreamer::{agent_input, history_input, map_input, PlanStep, Planner, StepLog, AGENT_INPUT, HISTORY_INPUT};
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};
use crate::memory::InstanceMemoryQueue;
use crate::nn::{AttnMask, FeedForward, Graph, LayerNorm, Linear, Mat, Mlp, MultiHeadAttention, ParamId, ParamStore, Var};
use crate::scene::{ActionCondition, AgentAnchor, InstanceSet, MultiModalTrajectory, SceneLayout, Trajectory, PLAN_STEPS};
use crate::sim::steering_from_plan;

/// Per-frame agent token: the slot's anchor relative to its current anchor,
/// followed by its position in that frame's own ego coordinates.
pub const AGENT_TOKEN: usize = HISTORY_INPUT + 3;
pub const EGO_TOKEN: usize = 6;
pub const EGO_QUERY: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub blocks: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    /// Trajectory modes per agent.
    pub modes: usize,
    /// Waypoints per trajectory.
    pub steps: usize,
    /// Frames before the reference frame the network accepts.
    pub history: usize,
    /// Frames after the reference frame the network accepts.
    pub horizon: usize,
    pub dt: f64,
    pub layout: SceneLayout,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            blocks: 2,
            heads: 4,
            dim: 64,
            ffn_dim: 128,
            modes: 6,
            steps: PLAN_STEPS,
            history: 3,
            horizon: 4,
            dt: 0.5,
            layout: SceneLayout::default(),
        }
    }
}

impl MotionConfig {
    /// Small model used by gradient checks and fast tests.
    pub fn tiny(layout: SceneLayout) -> Self {
        MotionConfig {
            blocks: 2,
            heads: 2,
            dim: 8,
            ffn_dim: 16,
            layout,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("motion config", reason));
        if self.blocks == 0 || self.heads == 0 || self.dim == 0 || self.modes == 0 || self.steps == 0 {
            return bad("blocks, heads, dim, modes and steps must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        Ok(())
    }

    fn offsets(&self) -> usize {
        self.history + self.horizon + 1
    }

    fn traj_width(&self) -> usize {
        self.modes * self.steps * 2
    }
}

#[derive(Clone, Debug)]
struct Block {
    temporal: MultiHeadAttention,
    temporal_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    self_norm: LayerNorm,
    ffn: FeedForward,
    ffn_norm: LayerNorm,
}

#[derive(Clone, Debug)]
struct Layers {
    agent_embed: Linear,
    map_embed: Linear,
    ego_embed: Linear,
    token_embed: Linear,
    ego_token_embed: Linear,
    e_offset: ParamId,
    blocks: Vec<Block>,
    traj: Mlp,
    traj_gain: ParamId,
    score: Linear,
    ego: Mlp,
    ego_gain: ParamId,
}

/// One weight set shared by the history-driven planner and the
/// forecast-driven refinement pass.
#[derive(Clone, Debug)]
pub struct MotionParams {
    pub config: MotionConfig,
    pub store: ParamStore,
    layers: Layers,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MotionCheckpoint {
    pub config: MotionConfig,
    pub params: ParamStore,
}

impl MotionParams {
    pub fn new(config: MotionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut s = ParamStore::new();
        let c = config.dim;
        let t2 = config.steps * 2;
        let layers = Layers {
            agent_embed: Linear::new(&mut s, "embed.agent", AGENT_INPUT, c, rng),
            map_embed: Linear::new(&mut s, "embed.map", map_input_len(&config.layout), c, rng),
            ego_embed: Linear::new(&mut s, "embed.ego", EGO_QUERY, c, rng),
            token_embed: Linear::new(&mut s, "embed.token", AGENT_TOKEN, c, rng),
            ego_token_embed: Linear::new(&mut s, "embed.ego_token", EGO_TOKEN, c, rng),
            e_offset: s.add_xavier("embed.offset", config.offsets(), c, rng),
            blocks: (0..config.blocks)
                .map(|b| {
                    let n = |part: &str| format!("block{b}.{part}");
                    Block {
                        temporal: MultiHeadAttention::new(&mut s, &n("temporal"), c, config.heads, rng),
                        temporal_norm: LayerNorm::new(&mut s, &n("temporal_norm"), c),
                        self_attn: MultiHeadAttention::new(&mut s, &n("self"), c, config.heads, rng),
                        self_norm: LayerNorm::new(&mut s, &n("self_norm"), c),
                        ffn: FeedForward::new(&mut s, &n("ffn"), c, config.ffn_dim, rng),
                        ffn_norm: LayerNorm::new(&mut s, &n("ffn_norm"), c),
                    }
                })
                .collect(),
            traj: Mlp::new(&mut s, "head.traj", c, c, config.traj_width(), rng),
            traj_gain: s.add("head.traj_gain", Mat::filled(1, config.traj_width(), 1.0)),
            score: Linear::new(&mut s, "head.score", c, config.modes, rng),
            ego: Mlp::zero_out(&mut s, "head.ego", c, c, t2, rng),
            ego_gain: s.add("head.ego_gain", Mat::filled(1, t2, 1.0)),
        };
        Ok(MotionParams {
            config,
            store: s,
            layers,
        })
    }

    pub fn from_checkpoint(ckpt: &MotionCheckpoint) -> Result<Self> {
        let mut p = MotionParams::new(ckpt.config.clone(), 0)?;
        p.store.load_from(&ckpt.params)?;
        if !ckpt.params.ids().all(|id| ckpt.params.get(id).is_finite()) {
            return Err(Error::invalid("motion checkpoint", "non-finite weights"));
        }
        Ok(p)
    }

    pub fn checkpoint(&self) -> MotionCheckpoint {
        MotionCheckpoint {
            config: self.config.clone(),
            params: self.store.clone(),
        }
    }

    /// Zero every trajectory, score and ego head weight, gains included.
    pub fn zero_heads(&mut self) {
        self.store.zero_prefix("head.");
    }
}

fn map_input_len(layout: &SceneLayout) -> usize {
    2 * layout.map_points + 4
}

/// Pose of every frame of a stack in the reference frame.
fn stack_poses(len: usize, steps: &[EgoMotionStep], reference: usize) -> Vec<Pose2> {
    let mut poses = vec![Pose2::IDENTITY; len];
    for k in reference + 1..len {
        poses[k] = poses[k - 1].compose(&steps[k - 1].pose());
    }
    for k in (0..reference).rev() {
        poses[k] = poses[k + 1].compose(&steps[k].pose().inverse());
    }
    poses
}

/// Numeric network inputs for one frame stack.
#[derive(Clone, Debug)]
pub struct MotionInput {
    agent_query: Mat,
    map_query: Mat,
    ego_query: Mat,
    query_valid: Vec<bool>,
    agent_tokens: Mat,
    ego_tokens: Mat,
    token_valid: Vec<bool>,
    token_offset: Vec<usize>,
    agent_prior: Mat,
    ego_prior: Mat,
    /// Current pose of each present agent slot in the reference frame.
    agent_frames: Vec<Option<Pose2>>,
    stack: usize,
}

impl MotionInput {
    pub fn agent_frames(&self) -> &[Option<Pose2>] {
        &self.agent_frames
    }
}

impl MotionParams {
    /// Assemble inputs for `frames` (oldest first), where `steps[j]` moves
    /// the ego from `frames[j]` to `frames[j + 1]` and predictions are made
    /// for `frames[reference]`.
    pub fn prepare(&self, frames: &[&InstanceSet], steps: &[EgoMotionStep], reference: usize) -> Result<MotionInput> {
        let cfg = &self.config;
        let layout = &cfg.layout;
        let l = frames.len();
        if l == 0 || reference >= l || steps.len() + 1 != l {
            return Err(Error::ShapeMismatch(format!(
                "{l} frames, {} steps, reference {reference}",
                steps.len()
            )));
        }
        if reference > cfg.history || l - 1 - reference > cfg.horizon {
            return Err(Error::ShapeMismatch(format!(
                "stack spans {} frames before and {} after the reference; the network accepts {} and {}",
                reference,
                l - 1 - reference,
                cfg.history,
                cfg.horizon
            )));
        }
        for f in frames {
            if f.agents.len() != layout.agent_slots || f.maps.len() != layout.map_slots {
                return Err(Error::ShapeMismatch(format!(
                    "frame {} has {}/{} slots, layout {}/{}",
                    f.frame_index,
                    f.agents.len(),
                    f.maps.len(),
                    layout.agent_slots,
                    layout.map_slots
                )));
            }
        }
        let na = layout.agent_slots;
        let (k_modes, t_steps, dt) = (cfg.modes, cfg.steps, cfg.dt);
        let current = frames[reference];
        let poses = stack_poses(l, steps, reference);
        let offset = |k: usize| k + cfg.history - reference;

        let mut agent_rows = Vec::with_capacity(na);
        let mut agent_tokens = Vec::with_capacity(na * l);
        let mut token_valid = Vec::with_capacity((na + 1) * l);
        let mut token_offset = Vec::with_capacity((na + 1) * l);
        let mut agent_prior = Mat::zeros(na, cfg.traj_width());
        let mut agent_frames = Vec::with_capacity(na);
        for s in 0..na {
            let now = &current.agents[s].anchor;
            agent_rows.push(agent_input(now).to_vec());
            let present = now.is_present();
            let frame = Pose2::new(now.center[0], now.center[1], now.heading.angle());
            agent_frames.push(present.then_some(frame));
            for (k, pose) in poses.iter().enumerate() {
                let raw = &frames[k].agents[s].anchor;
                let rel = raw.in_frame(&pose.inverse()).in_frame(&frame);
                let mut row = history_input(&rel).to_vec();
                let c = raw.center2();
                row.extend([c.x / 20.0, c.y / 20.0, (-c.norm() / 5.0).exp()]);
                agent_tokens.push(row);
                token_valid.push(present && raw.is_present());
                token_offset.push(offset(k));
            }
            if present {
                let v = frame.vector_to_local(now.velocity2());
                for m in 0..k_modes {
                    for j in 0..t_steps {
                        let col = 2 * (m * t_steps + j);
                        let tau = (j + 1) as f64 * dt;
                        agent_prior.set(s, col, v.x * tau);
                        agent_prior.set(s, col + 1, v.y * tau);
                    }
                }
            }
        }
        let mut ego_tokens = Vec::with_capacity(l);
        for (k, pose) in poses.iter().enumerate() {
            let e = &frames[k].ego;
            ego_tokens.push(vec![
                pose.x / 20.0,
                pose.y / 20.0,
                5.0 * pose.yaw.sin(),
                5.0 * (pose.yaw.cos() - 1.0),
                e.speed() / 10.0,
                2.0 * e.angular_velocity,
            ]);
            token_valid.push(true);
            token_offset.push(offset(k));
        }
        let ego = &current.ego;
        let ego_query = Mat::from_vec(1, EGO_QUERY, vec![ego.speed() / 10.0, 2.0 * ego.angular_velocity, ego.velocity[1] / 2.0]);
        let speed = ego.speed();
        let ego_prior = Mat::from_vec(
            1,
            2 * t_steps,
            (0..t_steps).flat_map(|j| [speed * (j + 1) as f64 * dt, 0.0]).collect(),
        );
        let query_valid = current
            .agents
            .iter()
            .map(|a| a.anchor.is_present())
            .chain(current.maps.iter().map(|m| m.anchor.is_present()))
            .chain([true])
            .collect();
        Ok(MotionInput {
            agent_query: Mat::from_rows(&agent_rows),
            map_query: Mat::from_rows(&current.maps.iter().map(|m| map_input(&m.anchor)).collect::<Vec<_>>()),
            ego_query,
            query_valid,
            agent_tokens: Mat::from_rows(&agent_tokens),
            ego_tokens: Mat::from_rows(&ego_tokens),
            token_valid,
            token_offset,
            agent_prior,
            ego_prior,
            agent_frames,
            stack: l,
        })
    }
}

/// Graph outputs of one motion pass.
pub struct MotionVars {
    /// Agent offsets in each agent's own frame, `A × (K·T·2)`.
    pub agent_offsets: Var,
    /// Mode logits, `A × K`.
    pub scores: Var,
    /// Ego waypoints in the reference frame, `1 × (T·2)`.
    pub ego: Var,
}

impl MotionParams {
    pub fn forward(&self, g: &mut Graph, input: &MotionInput) -> MotionVars {
        let cfg = &self.config;
        let l = &self.layers;
        let s = &self.store;
        let (na, nm) = (cfg.layout.agent_slots, cfg.layout.map_slots);
        let len = input.stack;

        let embed = |g: &mut Graph, lin: &Linear, m: &Mat| {
            let x = g.input(m.clone());
            let y = lin.forward(g, s, x);
            g.tanh(y)
        };
        let aq = embed(g, &l.agent_embed, &input.agent_query);
        let mq = embed(g, &l.map_embed, &input.map_query);
        let eq = embed(g, &l.ego_embed, &input.ego_query);
        let mut x = g.concat_rows(&[aq, mq, eq]);

        let ta = embed(g, &l.token_embed, &input.agent_tokens);
        let te = embed(g, &l.ego_token_embed, &input.ego_tokens);
        let tokens = g.concat_rows(&[ta, te]);
        let off = g.param(s, l.e_offset);
        let off = g.gather_rows(off, input.token_offset.clone());
        let tokens = g.add(tokens, off);

        let ranges = (0..na)
            .map(|i| (i * len, len))
            .chain((0..nm).map(|_| (0, 0)))
            .chain([(na * len, len)])
            .collect();
        let temporal_mask = AttnMask {
            key_valid: Some(input.token_valid.clone()),
            ranges: Some(ranges),
        };
        let self_mask = AttnMask::with_valid(input.query_valid.clone());

        for b in &l.blocks {
            let a = b.temporal.forward(g, s, x, tokens, tokens, &temporal_mask);
            let y = g.add(x, a);
            x = b.temporal_norm.forward(g, s, y);
            let a = b.self_attn.forward(g, s, x, x, x, &self_mask);
            let y = g.add(x, a);
            x = b.self_norm.forward(g, s, y);
            let f = b.ffn.forward(g, s, x);
            let y = g.add(x, f);
            x = b.ffn_norm.forward(g, s, y);
        }

        let xa = g.slice_rows(x, 0, na);
        let xe = g.slice_rows(x, na + nm, 1);

        let gain = g.param(s, l.traj_gain);
        let gain = g.gather_rows(gain, vec![0; na]);
        let prior = g.mul_const(gain, input.agent_prior.clone());
        let resid = l.traj.forward(g, s, xa);
        let agent_offsets = g.add(prior, resid);
        let scores = l.score.forward(g, s, xa);

        let eg = g.param(s, l.ego_gain);
        let ego_prior = g.mul_const(eg, input.ego_prior.clone());
        let ego_resid = l.ego.forward(g, s, xe);
        let ego = g.add(ego_prior, ego_resid);
        MotionVars {
            agent_offsets,
            scores,
            ego,
        }
    }
}

/// Predictions expressed in the reference frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionOutput {
    /// One entry per agent slot; `None` for empty slots.
    pub agents: Vec<Option<MultiModalTrajectory>>,
    pub ego: Trajectory,
}

impl MotionOutput {
    /// Present slots with their anchors and highest-scoring trajectories.
    pub fn best_modes<'a>(&'a self, current: &'a InstanceSet) -> (Vec<AgentAnchor>, Vec<Trajectory>) {
        self.agents
            .iter()
            .zip(&current.agents)
            .filter_map(|(p, slot)| p.as_ref().map(|p| (slot.anchor.clone(), p.best().clone())))
            .unzip()
    }
}

impl MotionParams {
    /// Run the network over an aligned frame stack.
    pub fn run(&self, frames: &[&InstanceSet], steps: &[EgoMotionStep], reference: usize) -> Result<MotionOutput> {
        let input = self.prepare(frames, steps, reference)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &input);
        Ok(self.decode(&g, &out, &input))
    }

    fn decode(&self, g: &Graph, out: &MotionVars, input: &MotionInput) -> MotionOutput {
        let cfg = &self.config;
        let (k_modes, t_steps, dt) = (cfg.modes, cfg.steps, cfg.dt);
        let offs = g.value(out.agent_offsets);
        let scores = g.value(out.scores);
        let agents = input
            .agent_frames
            .iter()
            .enumerate()
            .map(|(s, frame)| {
                frame.map(|frame| {
                    let row = offs.row(s);
                    let modes = (0..k_modes)
                        .map(|m| {
                            let pts = (0..t_steps)
                                .map(|j| {
                                    let c = 2 * (m * t_steps + j);
                                    frame.to_parent(Vec2::new(row[c], row[c + 1]))
                                })
                                .collect();
                            Trajectory::new(pts, dt)
                        })
                        .collect();
                    MultiModalTrajectory {
                        modes,
                        scores: scores.row(s).to_vec(),
                    }
                })
            })
            .collect();
        let e = g.value(out.ego);
        let ego = Trajectory::new((0..t_steps).map(|j| Vec2::new(e.data[2 * j], e.data[2 * j + 1])).collect(), dt);
        MotionOutput { agents, ego }
    }
}

/// Predict from the observed history. `frames` ends with the current frame;
/// `steps[j]` moves the ego from `frames[j]` to `frames[j + 1]`.
pub fn predict_motion(frames: &[&InstanceSet], steps: &[EgoMotionStep], params: &MotionParams) -> Result<MotionOutput> {
    if frames.is_empty() {
        return Err(Error::ShapeMismatch("no frames".into()));
    }
    params.run(frames, steps, frames.len() - 1)
}

/// Predict for the last frame of `history` with forecast frames appended.
/// `history` and `history_steps` are as for [`predict_motion`];
/// `future_steps[0]` moves the ego from the current frame to `futures[0]`.
pub fn refine_motion(
    history: &[&InstanceSet],
    history_steps: &[EgoMotionStep],
    futures: &[&InstanceSet],
    future_steps: &[EgoMotionStep],
    params: &MotionParams,
) -> Result<MotionOutput> {
    if history.is_empty() {
        return Err(Error::ShapeMismatch("no current frame".into()));
    }
    let stack: Vec<&InstanceSet> = history.iter().chain(futures).copied().collect();
    let steps: Vec<EgoMotionStep> = history_steps.iter().chain(future_steps).copied().collect();
    params.run(&stack, &steps, history.len() - 1)
}

/// Action condition implied by an ego trajectory.
pub fn to_action_condition(ego_traj: &Trajectory, prev_speed: f64) -> ActionCondition {
    let speed = match ego_traj.waypoints.first() {
        Some(w) => w.norm() / ego_traj.dt,
        None => prev_speed,
    };
    ActionCondition {
        speed,
        planned_trajectory: ego_traj.clone(),
        steering: steering_from_plan(&ego_traj.waypoints),
    }
}

/// The motion network acting as the rollout's planner. Each call plans from
/// the newest queue frames.
#[derive(Clone, Debug)]
pub struct FmpPlanner<'a> {
    params: &'a MotionParams,
    /// Output of the most recent call.
    pub last: Option<MotionOutput>,
}

impl<'a> FmpPlanner<'a> {
    pub fn new(params: &'a MotionParams) -> Self {
        FmpPlanner { params, last: None }
    }

    /// Motion output for the queue's newest frame.
    pub fn predict(&self, queue: &InstanceMemoryQueue, log: &StepLog) -> Result<MotionOutput> {
        let t = queue.newest_index().ok_or(Error::InsufficientHistory {
            first: 0,
            last: 0,
            held: "nothing".into(),
        })?;
        let m = self.params.config.history;
        let window = queue.window(t, m)?;
        let steps = log.range(t - m as i64, t)?;
        predict_motion(&window, &steps, self.params)
    }
}

impl Planner for FmpPlanner<'_> {
    fn plan(&mut self, queue: &InstanceMemoryQueue, log: &StepLog) -> Result<PlanStep> {
        let out = self.predict(queue, log)?;
        let ego = &queue.newest().expect("non-empty queue").ego;
        let step = PlanStep {
            condition: to_action_condition(&out.ego, ego.speed()),
            yaw_rate: ego.angular_velocity,
        };
        self.last = Some(out);
        Ok(step)
    }
}

#[cfg(test)]
mod tests;
