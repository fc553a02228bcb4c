//! Deterministic kinematic traffic scenarios with exact ground truth.
//!
//! The world is planar. The road is a reference path that runs straight
//! along +X and, for curving ego profiles, turns into a constant-curvature
//! arc. Map elements are static polylines offset from that path. Agents follow
//! one of four motion models; positions are advanced with exact closed-form
//! updates wherever the model allows it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::EgoMotionStep;
use crate::error::{Error, Result};
use crate::geometry::{Heading, OrientedBox2D, Pose2, Vec2};
use crate::scene::{
    ActionCondition, AgentAnchor, AgentClass, AgentSlot, EgoAnchor, InstanceFeature, InstanceSet, MapAnchor,
    MapClass, MapSlot, SceneLayout, Steering, Trajectory, PLAN_STEPS,
};

/// Mean signed curvature beyond which a plan counts as a turn (1/m).
pub const STEERING_CURVATURE_THRESHOLD: f64 = 0.02;

const LANE_WIDTH: f64 = 3.5;
const PURSUIT_SUBSTEPS: usize = 20;
const MAX_SPAWN_ATTEMPTS: usize = 1000;
const EGO_CLEARANCE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    ConstantVelocity,
    ConstantTurn,
    LaneFollow,
    StopAndGo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionMix {
    pub constant_velocity: f64,
    pub constant_turn: f64,
    pub lane_follow: f64,
    pub stop_and_go: f64,
}

impl MotionMix {
    pub fn uniform() -> Self {
        MotionMix {
            constant_velocity: 0.25,
            constant_turn: 0.25,
            lane_follow: 0.25,
            stop_and_go: 0.25,
        }
    }

    pub fn only(model: MotionModel) -> Self {
        let mut mix = MotionMix {
            constant_velocity: 0.0,
            constant_turn: 0.0,
            lane_follow: 0.0,
            stop_and_go: 0.0,
        };
        match model {
            MotionModel::ConstantVelocity => mix.constant_velocity = 1.0,
            MotionModel::ConstantTurn => mix.constant_turn = 1.0,
            MotionModel::LaneFollow => mix.lane_follow = 1.0,
            MotionModel::StopAndGo => mix.stop_and_go = 1.0,
        }
        mix
    }

    fn weights(&self) -> [(MotionModel, f64); 4] {
        [
            (MotionModel::ConstantVelocity, self.constant_velocity),
            (MotionModel::ConstantTurn, self.constant_turn),
            (MotionModel::LaneFollow, self.lane_follow),
            (MotionModel::StopAndGo, self.stop_and_go),
        ]
    }

    fn sample(&self, rng: &mut impl Rng) -> MotionModel {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (model, w) in self.weights() {
            acc += w;
            if u < acc {
                return model;
            }
        }
        self.weights()
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map_or(MotionModel::ConstantVelocity, |(m, _)| *m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EgoProfile {
    Straight,
    CurveLeft,
    CurveRight,
    Decelerate,
}

impl EgoProfile {
    pub const ALL: [EgoProfile; 4] = [
        EgoProfile::Straight,
        EgoProfile::CurveLeft,
        EgoProfile::CurveRight,
        EgoProfile::Decelerate,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_agents: usize,
    pub n_map_elements: usize,
    pub duration: usize,
    pub dt: f64,
    pub motion_mix: MotionMix,
    pub ego_profile: EgoProfile,
    /// Add agents scripted to cross the ego path while the ego yields.
    #[serde(default)]
    pub adversarial: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            n_agents: 8,
            n_map_elements: 8,
            duration: 20,
            dt: 0.5,
            motion_mix: MotionMix::uniform(),
            ego_profile: EgoProfile::Straight,
            adversarial: false,
        }
    }
}

impl ScenarioConfig {
    /// `min_duration` is h + f + T for the run that will consume the scenario.
    pub fn validate(&self, min_duration: usize) -> Result<()> {
        if self.duration < min_duration {
            return Err(Error::invalid(
                "scenario config",
                format!("duration {} < required {min_duration}", self.duration),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("scenario config", "dt must be positive"));
        }
        let sum: f64 = self.motion_mix.weights().iter().map(|(_, w)| *w).sum();
        if (sum - 1.0).abs() > 1e-9 || self.motion_mix.weights().iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::invalid("scenario config", format!("motion mix sums to {sum}")));
        }
        Ok(())
    }
}

/// Road reference path: straight for `straight_len` metres along +X, then a
/// constant-curvature arc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub straight_len: f64,
    pub curvature: f64,
}

impl Road {
    pub fn pose_at(&self, s: f64) -> Pose2 {
        if s <= self.straight_len || self.curvature == 0.0 {
            return Pose2::new(s, 0.0, 0.0);
        }
        let k = self.curvature;
        let psi = k * (s - self.straight_len);
        Pose2::new(self.straight_len + psi.sin() / k, (1.0 - psi.cos()) / k, psi)
    }

    /// Point at arc length `s`, offset `lateral` metres to the left.
    pub fn point(&self, s: f64, lateral: f64) -> Vec2 {
        let p = self.pose_at(s);
        p.to_parent(Vec2::new(0.0, lateral))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub id: u32,
    pub class_label: MapClass,
    pub points: Vec<Vec2>,
}

/// Per-agent script, fixed at spawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AgentScript {
    ConstantVelocity,
    ConstantTurn { omega: f64 },
    LaneFollow { lateral: f64, lookahead: f64 },
    StopAndGo { brake_at: f64, decel: f64, dwell: f64, accel: f64, cruise: f64, origin: Vec2 },
}

impl AgentScript {
    pub fn model(&self) -> MotionModel {
        match self {
            AgentScript::ConstantVelocity => MotionModel::ConstantVelocity,
            AgentScript::ConstantTurn { .. } => MotionModel::ConstantTurn,
            AgentScript::LaneFollow { .. } => MotionModel::LaneFollow,
            AgentScript::StopAndGo { .. } => MotionModel::StopAndGo,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub id: u32,
    pub class_label: AgentClass,
    /// (w, l, h)
    pub size: [f64; 3],
    pub pose: Pose2,
    pub speed: f64,
    pub turn_rate: f64,
    pub motion: MotionModel,
}

impl EntityState {
    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.pose.yaw.cos(), self.pose.yaw.sin()) * self.speed
    }

    pub fn footprint(&self) -> OrientedBox2D {
        OrientedBox2D::new(
            self.pose.translation(),
            self.size[1],
            self.size[0],
            Heading::from_angle(self.pose.yaw),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2,
    pub speed: f64,
    /// Yaw change over the following frame divided by dt.
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub ego: EgoState,
    pub agents: Vec<EntityState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub road: Road,
    pub map: Vec<MapElement>,
    pub scripts: Vec<AgentScript>,
    /// One state per frame, `config.duration` of them.
    pub frames: Vec<WorldState>,
    /// Ego states for `duration + PLAN_STEPS` frames so every frame has a
    /// full planned trajectory.
    pub ego_track: Vec<EgoState>,
}

/// Ego speed/turn schedule.
#[derive(Clone, Copy, Debug)]
struct EgoPlan {
    cruise: f64,
    /// Frame at which the profile's manoeuvre starts.
    switch_frame: usize,
    decel: f64,
}

const EGO_SIZE: [f64; 3] = [1.85, 4.08, 1.6];

fn class_size(class: AgentClass, rng: &mut impl Rng) -> [f64; 3] {
    match class {
        AgentClass::Vehicle => [rng.gen_range(1.7..2.1), rng.gen_range(4.0..5.0), rng.gen_range(1.4..1.9)],
        AgentClass::Pedestrian => [rng.gen_range(0.5..0.8), rng.gen_range(0.5..0.8), rng.gen_range(1.5..1.9)],
        AgentClass::Cyclist => [rng.gen_range(0.6..0.8), rng.gen_range(1.6..1.9), rng.gen_range(1.5..1.8)],
    }
}

fn class_speed(class: AgentClass, rng: &mut impl Rng) -> f64 {
    match class {
        AgentClass::Vehicle => rng.gen_range(4.0..11.0),
        AgentClass::Pedestrian => rng.gen_range(0.8..1.8),
        AgentClass::Cyclist => rng.gen_range(2.5..6.0),
    }
}

/// Generate a scenario; a pure function of the config.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate(1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dt = config.dt;
    let total = config.duration + PLAN_STEPS;

    let cruise = rng.gen_range(6.0..12.0);
    let switch_frame = rng.gen_range(1..config.duration.max(2));
    let mut ego_plan = EgoPlan {
        cruise,
        switch_frame,
        decel: rng.gen_range(1.5..3.5),
    };
    let mut road = Road {
        straight_len: 1e9,
        curvature: 0.0,
    };
    match config.ego_profile {
        EgoProfile::CurveLeft | EgoProfile::CurveRight => {
            let sign = if config.ego_profile == EgoProfile::CurveLeft { 1.0 } else { -1.0 };
            let omega = rng.gen_range(0.08..0.2);
            road = Road {
                straight_len: cruise * switch_frame as f64 * dt,
                curvature: sign * omega / cruise,
            };
        }
        EgoProfile::Straight | EgoProfile::Decelerate => {}
    }

    let mut crossing: Option<(f64, f64)> = None;
    if config.adversarial {
        // The ego yields: it brakes close to the evaluation window while a
        // crossing agent passes where a cruising ego would have been.
        ego_plan.switch_frame = rng.gen_range(2..6).min(config.duration.saturating_sub(1)).max(1);
        ego_plan.decel = rng.gen_range(2.5..4.0);
        crossing = Some((ego_plan.switch_frame as f64 * dt, cruise));
    }

    let ego_track = ego_track(config.ego_profile, &ego_plan, &road, total, dt, config.adversarial);
    let map = build_map(&road, config.n_map_elements, &mut rng);

    let mut attempts = 0;
    let Some((scripts, initial)) = spawn_agents(config, &road, &ego_track, crossing, &mut attempts, &mut rng) else {
        return Err(Error::InfeasibleScenario(format!(
            "could not place {} agents clear of the ego after {MAX_SPAWN_ATTEMPTS} attempts",
            config.n_agents
        )));
    };

    let mut frames = Vec::with_capacity(config.duration);
    let mut agents = initial;
    for k in 0..config.duration {
        frames.push(WorldState {
            time: k as f64 * dt,
            ego: ego_track[k],
            agents: agents.clone(),
        });
        let t = k as f64 * dt;
        agents = agents
            .iter()
            .zip(&scripts)
            .map(|(a, s)| step_agent(a, s, &road, t, dt))
            .collect();
    }

    Ok(Scenario {
        config: config.clone(),
        road,
        map,
        scripts,
        frames,
        ego_track,
    })
}

fn ego_track(profile: EgoProfile, plan: &EgoPlan, road: &Road, total: usize, dt: f64, yields: bool) -> Vec<EgoState> {
    // arc length and speed at each frame
    let mut s = Vec::with_capacity(total + 1);
    let mut v = Vec::with_capacity(total + 1);
    let decelerates = profile == EgoProfile::Decelerate || yields;
    for k in 0..=total {
        let t = k as f64 * dt;
        if decelerates {
            let t_sw = plan.switch_frame as f64 * dt;
            if t <= t_sw {
                s.push(plan.cruise * t);
                v.push(plan.cruise);
            } else {
                let tb = (t - t_sw).min(plan.cruise / plan.decel);
                s.push(plan.cruise * t_sw + plan.cruise * tb - 0.5 * plan.decel * tb * tb);
                v.push((plan.cruise - plan.decel * (t - t_sw)).max(0.0));
            }
        } else {
            s.push(plan.cruise * t);
            v.push(plan.cruise);
        }
    }
    (0..total)
        .map(|k| {
            let pose = road.pose_at(s[k]);
            let next = road.pose_at(s[k + 1]);
            EgoState {
                pose,
                speed: v[k],
                omega: (next.yaw - pose.yaw) / dt,
            }
        })
        .collect()
}

fn build_map(road: &Road, n: usize, rng: &mut impl Rng) -> Vec<MapElement> {
    let s0 = -30.0;
    let s1 = 130.0;
    let mut elems = Vec::new();
    let mut id = 1;
    let line = |lateral: f64| -> Vec<Vec2> {
        (0..crate::scene::MAP_POINTS)
            .map(|i| road.point(s0 + (s1 - s0) * i as f64 / (crate::scene::MAP_POINTS - 1) as f64, lateral))
            .collect()
    };
    for lateral in [-1.5 * LANE_WIDTH, -0.5 * LANE_WIDTH, 0.5 * LANE_WIDTH, 1.5 * LANE_WIDTH] {
        elems.push((MapClass::LaneDivider, line(lateral)));
    }
    for lateral in [-2.5 * LANE_WIDTH, 2.5 * LANE_WIDTH] {
        elems.push((MapClass::Boundary, line(lateral)));
    }
    for _ in 0..2 {
        let s = rng.gen_range(15.0..70.0);
        let half = 2.5 * LANE_WIDTH;
        let pts = (0..crate::scene::MAP_POINTS)
            .map(|i| road.point(s, -half + 2.0 * half * i as f64 / (crate::scene::MAP_POINTS - 1) as f64))
            .collect();
        elems.push((MapClass::Crossing, pts));
    }
    elems
        .into_iter()
        .take(n)
        .map(|(class_label, points)| {
            let e = MapElement { id, class_label, points };
            id += 1;
            e
        })
        .collect()
}

fn spawn_agents(
    config: &ScenarioConfig,
    road: &Road,
    ego: &[EgoState],
    crossing: Option<(f64, f64)>,
    attempts: &mut usize,
    rng: &mut impl Rng,
) -> Option<(Vec<AgentScript>, Vec<EntityState>)> {
    let dt = config.dt;
    let frames = config.duration + PLAN_STEPS;
    let ego_box0 = OrientedBox2D::new(ego[0].pose.translation(), EGO_SIZE[1] + 2.0, EGO_SIZE[0] + 1.0, Heading::FORWARD);
    // the scripted ego never touches any agent
    let clear = |state: &EntityState, script: &AgentScript| {
        step_through(state, script, road, frames, dt).iter().zip(ego).all(|(a, e)| {
            let eb = OrientedBox2D::new(e.pose.translation(), EGO_SIZE[1], EGO_SIZE[0], Heading::from_angle(e.pose.yaw));
            crate::geometry::min_distance_vector(&eb, &a.footprint()).0 > EGO_CLEARANCE
        })
    };
    let mut scripts = Vec::new();
    let mut states: Vec<EntityState> = Vec::new();

    for i in 0..config.n_agents {
        let id = i as u32 + 1;
        loop {
            *attempts += 1;
            if *attempts > MAX_SPAWN_ATTEMPTS {
                return None;
            }
            let (script, state) = match crossing {
                Some((t_switch, cruise)) if i == 0 => {
                    let t_cross = t_switch + rng.gen_range(1.5..3.5);
                    spawn_crosser(id, road, t_cross, cruise * t_cross, rng)
                }
                _ => spawn_background(config, road, id, rng),
            };
            if crate::geometry::min_distance_vector(&ego_box0, &state.footprint()).0 > 0.0 && clear(&state, &script) {
                scripts.push(script);
                states.push(state);
                break;
            }
        }
    }
    Some((scripts, states))
}

fn spawn_background(config: &ScenarioConfig, road: &Road, id: u32, rng: &mut impl Rng) -> (AgentScript, EntityState) {
    let class = match rng.gen_range(0..10) {
        0..=5 => AgentClass::Vehicle,
        6..=7 => AgentClass::Cyclist,
        _ => AgentClass::Pedestrian,
    };
    let size = class_size(class, rng);
    let speed = class_speed(class, rng);
    let model = config.motion_mix.sample(rng);
    let s = rng.gen_range(-25.0..55.0);
    let lane = rng.gen_range(-2..=2) as f64;
    let oncoming = class == AgentClass::Vehicle && lane > 0.0 && rng.gen_bool(0.5);
    let lateral = lane * LANE_WIDTH + rng.gen_range(-0.6..0.6);
    let base = road.pose_at(s);
    let mut yaw = base.yaw + if oncoming { std::f64::consts::PI } else { 0.0 };
    let pos = road.point(s, lateral);

    let script = match model {
        MotionModel::ConstantVelocity => {
            yaw += rng.gen_range(-0.15..0.15);
            AgentScript::ConstantVelocity
        }
        MotionModel::ConstantTurn => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let omega = sign * match class {
                AgentClass::Pedestrian => rng.gen_range(0.1..0.3),
                _ => rng.gen_range(0.08..0.25),
            };
            AgentScript::ConstantTurn { omega }
        }
        MotionModel::LaneFollow => {
            yaw += rng.gen_range(-0.2..0.2);
            let target_lane = if oncoming { lane * LANE_WIDTH } else { (lane + rng.gen_range(-1..=1) as f64).clamp(-2.0, 2.0) * LANE_WIDTH };
            AgentScript::LaneFollow {
                lateral: target_lane,
                lookahead: (1.2 * speed).max(4.0),
            }
        }
        MotionModel::StopAndGo => AgentScript::StopAndGo {
            brake_at: rng.gen_range(0.0..6.0),
            decel: rng.gen_range(1.5..3.5),
            dwell: rng.gen_range(0.5..2.5),
            accel: rng.gen_range(1.0..2.5),
            cruise: speed,
            origin: pos,
        },
    };
    let state = EntityState {
        id,
        class_label: class,
        size,
        pose: Pose2::new(pos.x, pos.y, yaw),
        speed,
        turn_rate: match script {
            AgentScript::ConstantTurn { omega } => omega,
            _ => 0.0,
        },
        motion: script.model(),
    };
    (script, state)
}

fn spawn_crosser(id: u32, road: &Road, t_cross: f64, s_cross: f64, rng: &mut impl Rng) -> (AgentScript, EntityState) {
    let class = match rng.gen_range(0..3) {
        0 => AgentClass::Vehicle,
        1 => AgentClass::Cyclist,
        _ => AgentClass::Pedestrian,
    };
    let size = class_size(class, rng);
    let speed = match class {
        AgentClass::Vehicle => rng.gen_range(4.0..7.0),
        AgentClass::Cyclist => rng.gen_range(2.5..4.5),
        AgentClass::Pedestrian => rng.gen_range(1.2..2.0),
    };
    let from_left = rng.gen_bool(0.5);
    let base = road.pose_at(s_cross + rng.gen_range(-1.0..1.0));
    let yaw = base.yaw + if from_left { -std::f64::consts::FRAC_PI_2 } else { std::f64::consts::FRAC_PI_2 };
    let dir = Vec2::new(yaw.cos(), yaw.sin());
    // at t_cross the crosser sits on the ego lane centre
    let start = base.translation() - dir * (speed * t_cross);
    (
        AgentScript::ConstantVelocity,
        EntityState {
            id,
            class_label: class,
            size,
            pose: Pose2::new(start.x, start.y, yaw),
            speed,
            turn_rate: 0.0,
            motion: MotionModel::ConstantVelocity,
        },
    )
}

fn step_through(state: &EntityState, script: &AgentScript, road: &Road, frames: usize, dt: f64) -> Vec<EntityState> {
    let mut out = vec![state.clone()];
    for k in 1..frames {
        let prev = out.last().unwrap();
        out.push(step_agent(prev, script, road, (k - 1) as f64 * dt, dt));
    }
    out
}

/// Advance one agent by `dt` starting at scenario time `t`.
fn step_agent(a: &EntityState, script: &AgentScript, road: &Road, t: f64, dt: f64) -> EntityState {
    let mut next = a.clone();
    match script {
        AgentScript::ConstantVelocity => {
            let p = a.pose.translation() + a.velocity() * dt;
            next.pose = Pose2::new(p.x, p.y, a.pose.yaw);
        }
        AgentScript::ConstantTurn { omega } => {
            next.pose = arc_step(a.pose, a.speed, *omega, dt);
            next.turn_rate = *omega;
        }
        AgentScript::LaneFollow { lateral, lookahead } => {
            let h = dt / PURSUIT_SUBSTEPS as f64;
            let mut pose = a.pose;
            let mut omega = 0.0;
            for _ in 0..PURSUIT_SUBSTEPS {
                omega = pursuit_rate(&pose, a.speed, road, *lateral, *lookahead);
                pose = arc_step(pose, a.speed, omega, h);
            }
            next.pose = pose;
            next.turn_rate = omega;
        }
        AgentScript::StopAndGo {
            brake_at,
            decel,
            dwell,
            accel,
            cruise,
            origin,
        } => {
            let profile = StopAndGoProfile {
                brake_at: *brake_at,
                decel: *decel,
                dwell: *dwell,
                accel: *accel,
                cruise: *cruise,
            };
            let t1 = t + dt;
            let dir = Vec2::new(a.pose.yaw.cos(), a.pose.yaw.sin());
            let p = *origin + dir * profile.distance(t1);
            next.pose = Pose2::new(p.x, p.y, a.pose.yaw);
            next.speed = profile.speed(t1);
        }
    }
    next
}

/// Exact unicycle update with constant speed and yaw rate.
pub fn arc_step(pose: Pose2, speed: f64, omega: f64, dt: f64) -> Pose2 {
    let psi1 = pose.yaw + omega * dt;
    if omega.abs() < 1e-12 {
        return Pose2::new(pose.x + speed * dt * pose.yaw.cos(), pose.y + speed * dt * pose.yaw.sin(), psi1);
    }
    let r = speed / omega;
    Pose2::new(
        pose.x + r * (psi1.sin() - pose.yaw.sin()),
        pose.y - r * (psi1.cos() - pose.yaw.cos()),
        psi1,
    )
}

fn pursuit_rate(pose: &Pose2, speed: f64, road: &Road, lateral: f64, lookahead: f64) -> f64 {
    // the agent's direction of travel along the road decides which way to look
    let s = project_on_road(road, pose.translation());
    let road_dir = road.pose_at(s).yaw;
    let forward = (pose.yaw - road_dir).cos() >= 0.0;
    let target = road.point(if forward { s + lookahead } else { s - lookahead }, lateral);
    let local = pose.to_local(target);
    let alpha = local.y.atan2(local.x);
    2.0 * speed * alpha.sin() / lookahead
}

fn project_on_road(road: &Road, p: Vec2) -> f64 {
    if road.curvature == 0.0 || p.x <= road.straight_len {
        return p.x;
    }
    // angle swept about the arc centre
    let k = road.curvature;
    let rel = p - Vec2::new(road.straight_len, 1.0 / k);
    let psi = if k > 0.0 { rel.x.atan2(-rel.y) } else { (-rel.x).atan2(rel.y) };
    road.straight_len + psi / k
}

#[derive(Clone, Copy, Debug)]
struct StopAndGoProfile {
    brake_at: f64,
    decel: f64,
    dwell: f64,
    accel: f64,
    cruise: f64,
}

impl StopAndGoProfile {
    fn phases(&self) -> (f64, f64, f64, f64) {
        let t1 = self.brake_at;
        let t2 = t1 + self.cruise / self.decel;
        let t3 = t2 + self.dwell;
        let t4 = t3 + self.cruise / self.accel;
        (t1, t2, t3, t4)
    }

    fn speed(&self, t: f64) -> f64 {
        let (t1, t2, t3, t4) = self.phases();
        if t <= t1 {
            self.cruise
        } else if t <= t2 {
            self.cruise - self.decel * (t - t1)
        } else if t <= t3 {
            0.0
        } else if t <= t4 {
            self.accel * (t - t3)
        } else {
            self.cruise
        }
    }

    fn distance(&self, t: f64) -> f64 {
        let (t1, t2, t3, t4) = self.phases();
        let v = self.cruise;
        let d1 = v * t1;
        let d2 = d1 + 0.5 * v * (t2 - t1);
        let d4 = d2 + 0.5 * v * (t4 - t3);
        if t <= t1 {
            v * t
        } else if t <= t2 {
            let u = t - t1;
            d1 + v * u - 0.5 * self.decel * u * u
        } else if t <= t3 {
            d2
        } else if t <= t4 {
            let u = t - t3;
            d2 + 0.5 * self.accel * u * u
        } else {
            d4 + v * (t - t4)
        }
    }
}

/// Menger curvature averaged over the interior vertices of the polyline that
/// starts at the origin and passes through `waypoints`.
pub fn mean_signed_curvature(waypoints: &[Vec2]) -> f64 {
    let mut pts = Vec::with_capacity(waypoints.len() + 1);
    pts.push(Vec2::ZERO);
    pts.extend_from_slice(waypoints);
    if pts.len() < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    let n = pts.len() - 2;
    for w in pts.windows(3) {
        let a = w[1] - w[0];
        let b = w[2] - w[1];
        let c = w[2] - w[0];
        let denom = a.norm() * b.norm() * c.norm();
        if denom > 1e-12 {
            sum += 2.0 * a.cross(b) / denom;
        }
    }
    sum / n as f64
}

pub fn steering_from_plan(waypoints: &[Vec2]) -> Steering {
    let k = mean_signed_curvature(waypoints);
    if k > STEERING_CURVATURE_THRESHOLD {
        Steering::Left
    } else if k < -STEERING_CURVATURE_THRESHOLD {
        Steering::Right
    } else {
        Steering::Straight
    }
}

impl Scenario {
    pub fn duration(&self) -> usize {
        self.frames.len()
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Ego pose of frame `k` (possibly beyond the scenario end, up to the
    /// planning horizon) expressed in the frame-`t` ego frame.
    pub fn ego_pose_in(&self, t: usize, k: usize) -> Pose2 {
        let base = self.ego_track[t].pose;
        base.inverse().compose(&self.ego_track[k].pose)
    }

    pub fn ego_step(&self, t: usize) -> EgoMotionStep {
        let rel = self.ego_pose_in(t, t + 1);
        EgoMotionStep {
            displacement: rel.translation(),
            yaw_change: rel.yaw,
            dt: self.dt(),
        }
    }

    /// Anchors, features and action condition of frame `t` in its ego frame.
    pub fn ego_frame_view(&self, t: usize, layout: &SceneLayout) -> Result<(InstanceSet, ActionCondition)> {
        if t >= self.duration() {
            return Err(Error::HorizonOverrun {
                requested: t,
                duration: self.duration(),
            });
        }
        if self.config.n_agents > layout.agent_slots || self.map.len() > layout.map_slots {
            return Err(Error::ShapeMismatch(format!(
                "scenario has {} agents / {} map elements, layout allows {} / {}",
                self.config.n_agents,
                self.map.len(),
                layout.agent_slots,
                layout.map_slots
            )));
        }
        let world = &self.frames[t];
        let ego_pose = world.ego.pose;
        let mut agents: Vec<AgentSlot> = world
            .agents
            .iter()
            .map(|a| {
                let c = ego_pose.to_local(a.pose.translation());
                let v = ego_pose.vector_to_local(a.velocity());
                AgentSlot {
                    anchor: AgentAnchor {
                        id: a.id,
                        center: [c.x, c.y, a.size[2] / 2.0],
                        size: a.size,
                        heading: Heading::from_angle(a.pose.yaw - ego_pose.yaw),
                        velocity: [v.x, v.y, 0.0],
                        class_label: a.class_label,
                        existence: 1.0,
                    },
                    feature: InstanceFeature::zeros(layout.feature_dim),
                }
            })
            .collect();
        agents.resize(
            layout.agent_slots,
            AgentSlot {
                anchor: AgentAnchor::empty(),
                feature: InstanceFeature::zeros(layout.feature_dim),
            },
        );
        let mut maps: Vec<MapSlot> = self
            .map
            .iter()
            .map(|m| MapSlot {
                anchor: MapAnchor {
                    id: m.id,
                    points: m.points.iter().map(|p| ego_pose.to_local(*p)).collect(),
                    class_label: m.class_label,
                    existence: 1.0,
                },
                feature: InstanceFeature::zeros(layout.feature_dim),
            })
            .collect();
        maps.resize(
            layout.map_slots,
            MapSlot {
                anchor: MapAnchor::empty(layout.map_points),
                feature: InstanceFeature::zeros(layout.feature_dim),
            },
        );

        let ego = EgoAnchor {
            size: EGO_SIZE,
            ..EgoAnchor::new(world.ego.speed, world.ego.omega)
        };
        let waypoints: Vec<Vec2> = (1..=PLAN_STEPS).map(|k| self.ego_pose_in(t, t + k).translation()).collect();
        let steering = steering_from_plan(&waypoints);
        let condition = ActionCondition {
            speed: world.ego.speed,
            planned_trajectory: Trajectory::new(waypoints, self.dt()),
            steering,
        };
        Ok((
            InstanceSet {
                frame_index: t as i64,
                ego,
                agents,
                maps,
            },
            condition,
        ))
    }

    /// Frames t+1..=t+f, each in its own ego frame.
    pub fn ground_truth_future(&self, t: usize, f: usize, layout: &SceneLayout) -> Result<Vec<InstanceSet>> {
        if t + f >= self.duration() {
            return Err(Error::HorizonOverrun {
                requested: t + f,
                duration: self.duration(),
            });
        }
        (t + 1..=t + f).map(|k| self.ego_frame_view(k, layout).map(|(s, _)| s)).collect()
    }

    /// Whole scenario as scene-log frames plus per-frame action conditions.
    pub fn episode(&self, layout: &SceneLayout) -> Result<Episode> {
        let mut frames = Vec::with_capacity(self.duration());
        let mut conditions = Vec::with_capacity(self.duration());
        for t in 0..self.duration() {
            let (f, c) = self.ego_frame_view(t, layout)?;
            frames.push(f);
            conditions.push(c);
        }
        Ok(Episode { frames, conditions })
    }
}

/// Ego-frame view of a whole scenario; everything downstream consumes this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub frames: Vec<InstanceSet>,
    pub conditions: Vec<ActionCondition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.conditions.first().map_or(0.5, |c| c.planned_trajectory.dt)
    }

    pub fn ego_step(&self, t: usize) -> EgoMotionStep {
        EgoMotionStep::from_condition(&self.conditions[t], &self.frames[t].ego)
    }

    /// Pose of frame `k` (k ≥ t) in the frame-`t` ego frame.
    pub fn pose_in(&self, t: usize, k: usize) -> Pose2 {
        let mut pose = Pose2::IDENTITY;
        for j in t..k {
            pose = pose.compose(&self.ego_step(j).pose());
        }
        pose
    }

    /// Ground-truth positions of agent slot `slot` at frames t+1..=t+steps,
    /// in the frame-`t` ego frame, or `None` if the slot is empty at `t` or
    /// the episode ends too early.
    pub fn agent_future(&self, t: usize, slot: usize, steps: usize) -> Option<Vec<AgentAnchor>> {
        if t + steps >= self.len() || !self.frames[t].agents[slot].anchor.is_present() {
            return None;
        }
        let mut pose = Pose2::IDENTITY;
        let mut out = Vec::with_capacity(steps);
        for k in t + 1..=t + steps {
            pose = pose.compose(&self.ego_step(k - 1).pose());
            let a = &self.frames[k].agents[slot].anchor;
            out.push(a.in_frame(&pose.inverse()));
        }
        Some(out)
    }
}
