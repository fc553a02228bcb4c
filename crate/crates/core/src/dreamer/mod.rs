//! Sparse dreamer: an attention decoder that forecasts the next frame as a
//! residual over the kinematic projection, and the autoregressive rollout
//! built on it.

mod embed;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embed::{
    action_tokens, agent_input, condition_vector, fourier_embed, fourier_features, history_input, map_input, pose_input,
    ACTION_TOKEN, AGENT_INPUT, HISTORY_INPUT,
};

use crate::alignment::{identity_projection, project_instances, EgoMotionStep, ProjectedAnchors};
use crate::error::{Error, Result};
use crate::geometry::{Heading, Pose2, Vec2};
use crate::memory::InstanceMemoryQueue;
use crate::nn::{AttnMask, FeedForward, Graph, LayerNorm, Linear, Mat, Mlp, MultiHeadAttention, ParamId, ParamStore, Var};
use crate::scene::{
    ActionCondition, AgentAnchor, AgentSlot, EgoAnchor, InstanceFeature, InstanceSet, MapAnchor, MapSlot, RolloutConfig,
    SceneLayout, PLAN_STEPS,
};

/// Agent residual layout: center (3), heading (2), velocity (3), all in
/// the projected anchor's own frame.
pub const AGENT_RESIDUAL: usize = 8;
/// Existence logit offset carried over from the projected anchor.
pub const EXISTENCE_PRIOR: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DreamerConfig {
    pub blocks: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    /// Decoder window: the decoder sees `window + 1` frames.
    pub window: usize,
    pub n_freq: usize,
    pub plan_steps: usize,
    pub layout: SceneLayout,
    pub use_pe: bool,
    pub use_pp: bool,
    pub refine_agents: bool,
    pub refine_maps: bool,
}

impl Default for DreamerConfig {
    fn default() -> Self {
        DreamerConfig {
            blocks: 3,
            heads: 4,
            dim: 64,
            ffn_dim: 128,
            window: 3,
            n_freq: 4,
            plan_steps: PLAN_STEPS,
            layout: SceneLayout::default(),
            use_pe: true,
            use_pp: true,
            refine_agents: true,
            refine_maps: true,
        }
    }
}

impl DreamerConfig {
    /// Small model used by gradient checks and fast tests.
    pub fn tiny(layout: SceneLayout) -> Self {
        DreamerConfig {
            blocks: 2,
            heads: 2,
            dim: 8,
            ffn_dim: 16,
            layout: SceneLayout { feature_dim: 8, ..layout },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("dreamer config", reason));
        if self.blocks == 0 || self.heads == 0 || self.dim == 0 || self.n_freq == 0 || self.window == 0 {
            return bad("blocks, heads, dim, window and n_freq must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.layout.feature_dim != self.dim {
            return bad(format!("feature_dim {} != dim {}", self.layout.feature_dim, self.dim));
        }
        if 6 * self.n_freq > ACTION_TOKEN {
            return bad(format!("n_freq {} too large for action tokens", self.n_freq));
        }
        Ok(())
    }

    fn slots(&self) -> usize {
        self.layout.agent_slots + self.layout.map_slots
    }
}

#[derive(Clone, Debug)]
struct Block {
    self_attn: MultiHeadAttention,
    self_norm: LayerNorm,
    pre_attn: Option<(MultiHeadAttention, LayerNorm)>,
    temporal: MultiHeadAttention,
    temporal_norm: LayerNorm,
    action: MultiHeadAttention,
    action_norm: LayerNorm,
    ffn: FeedForward,
    ffn_norm: LayerNorm,
}

#[derive(Clone, Debug)]
struct Layers {
    agent_embed: Linear,
    map_embed: Linear,
    history_embed: Linear,
    e_time: ParamId,
    e_pos: Linear,
    action_embed: Linear,
    action_type: ParamId,
    blocks: Vec<Block>,
    agent_refine: Mlp,
    map_refine: Mlp,
    classify: Linear,
}

/// All learnable decoder weights plus the embedding tables.
#[derive(Clone, Debug)]
pub struct DreamerParams {
    pub config: DreamerConfig,
    pub store: ParamStore,
    layers: Layers,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DreamerCheckpoint {
    pub config: DreamerConfig,
    pub params: ParamStore,
}

impl DreamerParams {
    pub fn new(config: DreamerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = config.dim;
        let rng = &mut rng;
        let map_in = embed::map_input_len(config.layout.map_points);
        let layers = Layers {
            agent_embed: Linear::new(&mut s, "embed.agent", AGENT_INPUT, c, rng),
            map_embed: Linear::new(&mut s, "embed.map", map_in, c, rng),
            history_embed: Linear::new(&mut s, "embed.history", HISTORY_INPUT, c, rng),
            e_time: s.add_xavier("embed.time", config.window + 1, c, rng),
            e_pos: Linear::new(&mut s, "embed.pos", embed::pose_input_len(config.n_freq), c, rng),
            action_embed: Linear::new(&mut s, "embed.action", ACTION_TOKEN, c, rng),
            action_type: s.add_xavier("embed.action_type", config.plan_steps + 2, c, rng),
            blocks: (0..config.blocks)
                .map(|b| {
                    let n = |part: &str| format!("block{b}.{part}");
                    Block {
                        self_attn: MultiHeadAttention::new(&mut s, &n("self"), c, config.heads, rng),
                        self_norm: LayerNorm::new(&mut s, &n("self_norm"), c),
                        pre_attn: (b > 0).then(|| {
                            (
                                MultiHeadAttention::new(&mut s, &n("pre"), c, config.heads, rng),
                                LayerNorm::new(&mut s, &n("pre_norm"), c),
                            )
                        }),
                        temporal: MultiHeadAttention::new(&mut s, &n("temporal"), c, config.heads, rng),
                        temporal_norm: LayerNorm::new(&mut s, &n("temporal_norm"), c),
                        action: MultiHeadAttention::new(&mut s, &n("action"), c, config.heads, rng),
                        action_norm: LayerNorm::new(&mut s, &n("action_norm"), c),
                        ffn: FeedForward::new(&mut s, &n("ffn"), c, config.ffn_dim, rng),
                        ffn_norm: LayerNorm::new(&mut s, &n("ffn_norm"), c),
                    }
                })
                .collect(),
            agent_refine: Mlp::zero_out(&mut s, "head.agent_refine", c, c, AGENT_RESIDUAL, rng),
            map_refine: Mlp::zero_out(&mut s, "head.map_refine", c, c, 2 * config.layout.map_points, rng),
            classify: Linear::zeros(&mut s, "head.classify", c, 1),
        };
        Ok(DreamerParams {
            config,
            store: s,
            layers,
        })
    }

    pub fn from_checkpoint(ckpt: &DreamerCheckpoint) -> Result<Self> {
        let mut p = DreamerParams::new(ckpt.config.clone(), 0)?;
        p.store.load_from(&ckpt.params)?;
        if !ckpt.params.ids().all(|id| ckpt.params.get(id).is_finite()) {
            return Err(Error::invalid("dreamer checkpoint", "non-finite weights"));
        }
        Ok(p)
    }

    pub fn checkpoint(&self) -> DreamerCheckpoint {
        DreamerCheckpoint {
            config: self.config.clone(),
            params: self.store.clone(),
        }
    }

    /// Zero the refinement and classification heads.
    pub fn zero_heads(&mut self) {
        self.store.zero_prefix("head.");
    }

    /// Latent feature of an agent anchor.
    pub fn embed_agent(&self, anchor: &AgentAnchor) -> InstanceFeature {
        let mut g = Graph::new();
        let x = g.input(Mat::from_vec(1, AGENT_INPUT, agent_input(anchor).to_vec()));
        let y = self.layers.agent_embed.forward(&mut g, &self.store, x);
        let y = g.tanh(y);
        InstanceFeature {
            embedding: g.value(y).data.clone(),
        }
    }

    /// Latent feature of a map anchor.
    pub fn embed_map(&self, anchor: &MapAnchor) -> InstanceFeature {
        let mut g = Graph::new();
        let row = map_input(anchor);
        let x = g.input(Mat::from_vec(1, row.len(), row));
        let y = self.layers.map_embed.forward(&mut g, &self.store, x);
        let y = g.tanh(y);
        InstanceFeature {
            embedding: g.value(y).data.clone(),
        }
    }

    /// Positional embedding rows for historical frames given their poses in
    /// the current frame (age order).
    pub fn positional_embedding(&self, poses: &[Pose2]) -> PositionalEmbedding {
        let mut g = Graph::new();
        let rows: Vec<Vec<f64>> = poses.iter().map(|p| pose_input(p, self.config.n_freq)).collect();
        let x = g.input(Mat::from_rows(&rows));
        let y = self.layers.e_pos.forward(&mut g, &self.store, x);
        let m = g.value(y);
        PositionalEmbedding {
            rows: (0..m.rows).map(|i| m.row(i).to_vec()).collect(),
        }
    }
}

/// Per-historical-frame embedding derived from the frame's displacement
/// relative to the current frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEmbedding {
    pub rows: Vec<Vec<f64>>,
}

/// Numeric decoder inputs for one step.
#[derive(Clone, Debug)]
pub struct DecoderInput {
    agent_query: Mat,
    map_query: Mat,
    query_valid: Vec<bool>,
    history_agents: Mat,
    history_maps: Mat,
    history_valid: Vec<bool>,
    pose: Mat,
    action: Mat,
    prior: Mat,
    projected: ProjectedAnchors,
}

impl DecoderInput {
    pub fn projected(&self) -> &ProjectedAnchors {
        &self.projected
    }
}

/// Pose of each window frame in the newest frame, newest first.
fn window_poses(steps: &[EgoMotionStep]) -> Vec<Pose2> {
    let m = steps.len();
    let mut out = vec![Pose2::IDENTITY];
    let mut current_in_old = Pose2::IDENTITY;
    for a in 1..=m {
        current_in_old = steps[m - a].pose().compose(&current_in_old);
        out.push(current_in_old.inverse());
    }
    out
}

impl DreamerParams {
    /// Assemble decoder inputs. `window` holds frames `t-m ..= t` oldest
    /// first; `steps[j]` is the ego motion from `window[j]` to `window[j+1]`.
    pub fn prepare(
        &self,
        window: &[&InstanceSet],
        steps: &[EgoMotionStep],
        projected: &ProjectedAnchors,
        condition: &ActionCondition,
    ) -> Result<DecoderInput> {
        let cfg = &self.config;
        let layout = &cfg.layout;
        let m = cfg.window;
        if window.len() != m + 1 || steps.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} frames and {m} steps, got {} and {}",
                m + 1,
                window.len(),
                steps.len()
            )));
        }
        for f in window {
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
        if projected.agents.len() != layout.agent_slots || projected.maps.len() != layout.map_slots {
            return Err(Error::ShapeMismatch("projected anchors are not slot-aligned with the window".into()));
        }
        if condition.planned_trajectory.len() != cfg.plan_steps {
            return Err(Error::ShapeMismatch(format!(
                "plan has {} steps, expected {}",
                condition.planned_trajectory.len(),
                cfg.plan_steps
            )));
        }

        let (na, nm) = (layout.agent_slots, layout.map_slots);
        let current = window[m];
        let agent_query = Mat::from_rows(&projected.agents.iter().map(|a| agent_input(a).to_vec()).collect::<Vec<_>>());
        let map_query = Mat::from_rows(&projected.maps.iter().map(map_input).collect::<Vec<_>>());
        let query_valid: Vec<bool> = projected
            .agents
            .iter()
            .map(AgentAnchor::is_present)
            .chain(projected.maps.iter().map(MapAnchor::is_present))
            .collect();

        let poses = window_poses(steps);
        let mut hist_agents = Vec::with_capacity(na * (m + 1));
        let mut hist_maps = Vec::with_capacity(nm * (m + 1));
        let mut valid_agents = Vec::with_capacity(na * (m + 1));
        let mut valid_maps = Vec::with_capacity(nm * (m + 1));
        for s in 0..na {
            let now = &current.agents[s].anchor;
            let frame = Pose2::new(now.center[0], now.center[1], now.heading.angle());
            for (age, pose) in poses.iter().enumerate() {
                let a = &window[m - age].agents[s].anchor;
                let rel = a.in_frame(&pose.inverse()).in_frame(&frame);
                hist_agents.push(history_input(&rel).to_vec());
                valid_agents.push(a.is_present());
            }
        }
        for s in 0..nm {
            for (age, pose) in poses.iter().enumerate() {
                let a = &window[m - age].maps[s].anchor;
                hist_maps.push(map_input(&a.in_frame(&pose.inverse())));
                valid_maps.push(a.is_present());
            }
        }
        let pose = Mat::from_rows(&poses.iter().map(|p| pose_input(p, cfg.n_freq)).collect::<Vec<_>>());
        let action = Mat::from_rows(&action_tokens(condition, cfg.n_freq));
        let prior = Mat::from_vec(
            na + nm,
            1,
            query_valid.iter().map(|&v| if v { EXISTENCE_PRIOR } else { -EXISTENCE_PRIOR }).collect(),
        );
        Ok(DecoderInput {
            agent_query,
            map_query,
            query_valid,
            history_agents: Mat::from_rows(&hist_agents),
            history_maps: Mat::from_rows(&hist_maps),
            history_valid: valid_agents.into_iter().chain(valid_maps).collect(),
            pose,
            action,
            prior,
            projected: projected.clone(),
        })
    }
}

/// Graph outputs of one decoder pass.
pub struct DecoderVars {
    pub agent_residual: Var,
    pub map_residual: Var,
    pub existence_logit: Var,
    pub hidden: Var,
}

impl DreamerParams {
    pub fn forward(&self, g: &mut Graph, input: &DecoderInput) -> DecoderVars {
        let cfg = &self.config;
        let l = &self.layers;
        let s = &self.store;
        let m1 = cfg.window + 1;
        let slots = cfg.slots();

        let aq = g.input(input.agent_query.clone());
        let aq = l.agent_embed.forward(g, s, aq);
        let aq = g.tanh(aq);
        let mq = g.input(input.map_query.clone());
        let mq = l.map_embed.forward(g, s, mq);
        let mq = g.tanh(mq);
        let pre = g.concat_rows(&[aq, mq]);

        let ha = g.input(input.history_agents.clone());
        let ha = l.history_embed.forward(g, s, ha);
        let ha = g.tanh(ha);
        let hm = g.input(input.history_maps.clone());
        let hm = l.map_embed.forward(g, s, hm);
        let hm = g.tanh(hm);
        let mut hist = g.concat_rows(&[ha, hm]);
        let ages: Vec<usize> = (0..slots * m1).map(|r| r % m1).collect();
        let et = g.param(s, l.e_time);
        let et = g.gather_rows(et, ages.clone());
        hist = g.add(hist, et);
        if cfg.use_pe {
            let p = g.input(input.pose.clone());
            let p = l.e_pos.forward(g, s, p);
            let p = g.gather_rows(p, ages);
            hist = g.add(hist, p);
        }

        let act = g.input(input.action.clone());
        let act = l.action_embed.forward(g, s, act);
        let ty = g.param(s, l.action_type);
        let act = g.add(act, ty);

        let self_mask = AttnMask::with_valid(input.query_valid.clone());
        let temporal_mask = AttnMask {
            key_valid: Some(input.history_valid.clone()),
            ranges: AttnMask::grouped(slots, m1).ranges,
        };
        let dense = AttnMask::dense();

        let mut x = pre;
        for b in &l.blocks {
            let a = b.self_attn.forward(g, s, x, x, x, &self_mask);
            let y = g.add(x, a);
            x = b.self_norm.forward(g, s, y);
            if let Some((attn, norm)) = &b.pre_attn {
                let a = attn.forward(g, s, x, pre, pre, &self_mask);
                let y = g.add(x, a);
                x = norm.forward(g, s, y);
            }
            let a = b.temporal.forward(g, s, x, hist, hist, &temporal_mask);
            let y = g.add(x, a);
            x = b.temporal_norm.forward(g, s, y);
            let a = b.action.forward(g, s, x, act, act, &dense);
            let y = g.add(x, a);
            x = b.action_norm.forward(g, s, y);
            let f = b.ffn.forward(g, s, x);
            let y = g.add(x, f);
            x = b.ffn_norm.forward(g, s, y);
        }

        let na = cfg.layout.agent_slots;
        let xa = g.slice_rows(x, 0, na);
        let xm = g.slice_rows(x, na, cfg.layout.map_slots);
        let agent_residual = l.agent_refine.forward(g, s, xa);
        let map_residual = l.map_refine.forward(g, s, xm);
        let cls = l.classify.forward(g, s, x);
        let prior = g.input(input.prior.clone());
        let existence_logit = g.add(cls, prior);
        DecoderVars {
            agent_residual,
            map_residual,
            existence_logit,
            hidden: x,
        }
    }
}

/// Apply an agent residual, expressed in the projected anchor's frame.
pub fn apply_agent_residual(p: &AgentAnchor, r: &[f64]) -> AgentAnchor {
    let rot = p.heading.angle();
    let dc = Vec2::new(r[0], r[1]).rotate(rot);
    let dv = Vec2::new(r[5], r[6]).rotate(rot);
    let local = Vec2::new(1.0 + r[3], r[4]);
    let heading = if local.norm() > 1e-9 {
        p.heading.rotate(local.angle())
    } else {
        p.heading
    };
    AgentAnchor {
        center: [p.center[0] + dc.x, p.center[1] + dc.y, p.center[2] + r[2]],
        heading,
        velocity: [p.velocity[0] + dv.x, p.velocity[1] + dv.y, p.velocity[2] + r[7]],
        ..p.clone()
    }
}

/// Residual that maps `p` onto `target` under [`apply_agent_residual`].
pub fn agent_residual_target(p: &AgentAnchor, target: &AgentAnchor) -> [f64; AGENT_RESIDUAL] {
    let rot = p.heading.angle();
    let dc = (target.center2() - p.center2()).rotate(-rot);
    let dv = (target.velocity2() - p.velocity2()).rotate(-rot);
    let phi = target.heading.angle() - rot;
    [
        dc.x,
        dc.y,
        target.center[2] - p.center[2],
        phi.cos() - 1.0,
        phi.sin(),
        dv.x,
        dv.y,
        target.velocity[2] - p.velocity[2],
    ]
}

/// Ego anchor of the frame following `condition`'s first step: speed and
/// yaw rate read off the plan's first two segments.
pub fn ego_after(condition: &ActionCondition, step: &EgoMotionStep) -> EgoAnchor {
    let w = &condition.planned_trajectory.waypoints;
    let dt = step.dt;
    match w.len() {
        0 => EgoAnchor::new(condition.speed, 0.0),
        1 => EgoAnchor::new(w[0].norm() / dt, step.yaw_change / dt),
        _ => {
            let seg = w[1] - w[0];
            let speed = seg.norm() / dt;
            let omega = if seg.norm() > 1e-3 && w[0].norm() > 1e-3 {
                wrap(seg.angle() - w[0].angle()) / dt
            } else {
                step.yaw_change / dt
            };
            EgoAnchor::new(speed, omega)
        }
    }
}

fn wrap(a: f64) -> f64 {
    let h = Heading::from_angle(a);
    h.angle()
}

/// One decoder pass producing frame `t+1`.
pub fn decoder_step(
    params: &DreamerParams,
    window: &[&InstanceSet],
    steps: &[EgoMotionStep],
    projected: &ProjectedAnchors,
    condition: &ActionCondition,
) -> Result<InstanceSet> {
    let input = params.prepare(window, steps, projected, condition)?;
    let mut g = Graph::new();
    let out = params.forward(&mut g, &input);
    let cfg = &params.config;
    let current = window[cfg.window];
    let ar = g.value(out.agent_residual);
    let mr = g.value(out.map_residual);
    let logits = g.value(out.existence_logit);
    let hidden = g.value(out.hidden);
    let na = cfg.layout.agent_slots;
    let feature = |row: usize| InstanceFeature {
        embedding: hidden.row(row).to_vec(),
    };

    let agents = projected
        .agents
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut a = if cfg.refine_agents {
                apply_agent_residual(p, ar.row(i))
            } else {
                p.clone()
            };
            a.existence = crate::nn::sigmoid(logits.at(i, 0));
            AgentSlot {
                anchor: a,
                feature: feature(i),
            }
        })
        .collect();
    let maps = projected
        .maps
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut a = p.clone();
            if cfg.refine_maps {
                let r = mr.row(i);
                for (k, pt) in a.points.iter_mut().enumerate() {
                    *pt = *pt + Vec2::new(r[2 * k], r[2 * k + 1]);
                }
            }
            a.existence = crate::nn::sigmoid(logits.at(na + i, 0));
            MapSlot {
                anchor: a,
                feature: feature(na + i),
            }
        })
        .collect();
    let step = steps_after(condition, current);
    Ok(InstanceSet {
        frame_index: current.frame_index + 1,
        ego: ego_after(condition, &step),
        agents,
        maps,
    })
}

fn steps_after(condition: &ActionCondition, current: &InstanceSet) -> EgoMotionStep {
    EgoMotionStep::from_condition(condition, &current.ego)
}

/// Output of one planner call inside the rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanStep {
    pub condition: ActionCondition,
    /// Ego yaw rate over the coming step, rad/s.
    pub yaw_rate: f64,
}

impl PlanStep {
    pub fn ego_step(&self) -> EgoMotionStep {
        let dt = self.condition.planned_trajectory.dt;
        EgoMotionStep {
            displacement: self.condition.planned_trajectory.waypoints.first().copied().unwrap_or(Vec2::ZERO),
            yaw_change: self.yaw_rate * dt,
            dt,
        }
    }
}

/// Source of action conditions during a rollout.
pub trait Planner {
    /// Condition for the step leaving the queue's newest frame. `log` holds
    /// the ego motion between the frames already in the queue.
    fn plan(&mut self, queue: &InstanceMemoryQueue, log: &StepLog) -> Result<PlanStep>;
}

/// Replays a fixed list of conditions with their exact yaw rates.
#[derive(Clone, Debug)]
pub struct ScriptedPlanner {
    steps: Vec<PlanStep>,
    next: usize,
}

impl ScriptedPlanner {
    pub fn new(steps: Vec<PlanStep>) -> Self {
        ScriptedPlanner { steps, next: 0 }
    }

    /// Ground-truth conditions of an episode from frame `t` on.
    pub fn from_episode(episode: &crate::sim::Episode, t: usize) -> Self {
        let steps = (t..episode.len())
            .map(|k| PlanStep {
                condition: episode.conditions[k].clone(),
                yaw_rate: episode.frames[k].ego.angular_velocity,
            })
            .collect();
        ScriptedPlanner::new(steps)
    }
}

impl Planner for ScriptedPlanner {
    fn plan(&mut self, _queue: &InstanceMemoryQueue, _log: &StepLog) -> Result<PlanStep> {
        let s = self.steps.get(self.next).cloned().ok_or(Error::HorizonOverrun {
            requested: self.next,
            duration: self.steps.len(),
        })?;
        self.next += 1;
        Ok(s)
    }
}

/// Forecast frames and the plans that produced them.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub frames: Vec<InstanceSet>,
    pub plans: Vec<PlanStep>,
}

/// Ego-motion transitions between consecutive queue frames, keyed by the
/// earlier frame's index.
#[derive(Clone, Debug, Default)]
pub struct StepLog {
    first: i64,
    steps: Vec<EgoMotionStep>,
}

impl StepLog {
    pub fn new(first: i64, steps: Vec<EgoMotionStep>) -> Self {
        StepLog { first, steps }
    }

    pub fn push(&mut self, step: EgoMotionStep) {
        self.steps.push(step);
    }

    /// Steps from frame `from` up to (excluding) frame `to`.
    pub fn range(&self, from: i64, to: i64) -> Result<Vec<EgoMotionStep>> {
        if from < self.first || (to - self.first) as usize > self.steps.len() {
            return Err(Error::InsufficientHistory {
                first: from,
                last: to,
                held: format!("steps {}..{}", self.first, self.first + self.steps.len() as i64),
            });
        }
        Ok(self.steps[(from - self.first) as usize..(to - self.first) as usize].to_vec())
    }
}

/// Autoregressive forecast of `config.f` frames past the queue's newest.
pub fn rollout(
    queue: &mut InstanceMemoryQueue,
    log: &mut StepLog,
    config: &RolloutConfig,
    params: &DreamerParams,
    planner: &mut dyn Planner,
) -> Result<Rollout> {
    config.validate()?;
    if config.m != params.config.window {
        return Err(Error::ShapeMismatch(format!(
            "rollout window {} != decoder window {}",
            config.m, params.config.window
        )));
    }
    let mut frames = Vec::with_capacity(config.f);
    let mut plans = Vec::with_capacity(config.f);
    for _ in 0..config.f {
        let t = queue.newest_index().ok_or(Error::InsufficientHistory {
            first: 0,
            last: 0,
            held: "nothing".into(),
        })?;
        let plan = planner.plan(queue, log)?;
        let step = plan.ego_step();
        step.validate()?;
        let window = queue.window(t, config.m)?;
        let steps = log.range(t - config.m as i64, t)?;
        let current = window[config.m];
        let projected = if params.config.use_pp {
            project_instances(current, &step)
        } else {
            identity_projection(current)
        };
        let mut next = decoder_step(params, &window, &steps, &projected, &plan.condition)?;
        next.ego = ego_after(&plan.condition, &step);
        log.push(step);
        queue.push(next.clone())?;
        frames.push(next);
        plans.push(plan);
    }
    Ok(Rollout { frames, plans })
}

#[cfg(test)]
mod tests;
