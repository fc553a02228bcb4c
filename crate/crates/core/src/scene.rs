//! Sparse scene representation: anchors, latent features, per-frame
//! instance sets, trajectories and action conditions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Heading, OrientedBox2D, Pose2, Vec2};

/// Number of points in every map polyline.
pub const MAP_POINTS: usize = 20;
/// Planning horizon in steps.
pub const PLAN_STEPS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 3] = [AgentClass::Vehicle, AgentClass::Pedestrian, AgentClass::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapClass {
    LaneDivider,
    Boundary,
    Crossing,
}

impl MapClass {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Steering {
    Left,
    Straight,
    Right,
}

impl Steering {
    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentAnchor {
    pub id: u32,
    pub center: [f64; 3],
    /// (w, l, h)
    pub size: [f64; 3],
    pub heading: Heading,
    pub velocity: [f64; 3],
    pub class_label: AgentClass,
    pub existence: f64,
}

impl AgentAnchor {
    /// Placeholder occupying an unused query slot.
    pub fn empty() -> Self {
        AgentAnchor {
            id: 0,
            center: [0.0; 3],
            size: [1.0; 3],
            heading: Heading::FORWARD,
            velocity: [0.0; 3],
            class_label: AgentClass::Vehicle,
            existence: 0.0,
        }
    }

    pub fn is_present(&self) -> bool {
        self.existence >= 0.5
    }

    pub fn center2(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }

    pub fn velocity2(&self) -> Vec2 {
        Vec2::new(self.velocity[0], self.velocity[1])
    }

    /// Re-express in the frame whose pose (in the current frame) is `frame`.
    pub fn in_frame(&self, frame: &Pose2) -> AgentAnchor {
        let c = frame.to_local(self.center2());
        let v = frame.vector_to_local(self.velocity2());
        AgentAnchor {
            center: [c.x, c.y, self.center[2]],
            heading: self.heading.rotate(-frame.yaw),
            velocity: [v.x, v.y, self.velocity[2]],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_heading(self.heading)?;
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("agent anchor", format!("size {:?} must be positive", self.size)));
        }
        if !(0.0..=1.0).contains(&self.existence) {
            return Err(Error::invalid("agent anchor", format!("existence {} outside [0, 1]", self.existence)));
        }
        if !self.center.iter().chain(&self.velocity).all(|v| v.is_finite()) {
            return Err(Error::invalid("agent anchor", "non-finite center or velocity"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoAnchor {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub heading: Heading,
    pub velocity: [f64; 3],
    /// Yaw rate about +Z, rad/s.
    pub angular_velocity: f64,
}

impl EgoAnchor {
    pub fn new(speed: f64, angular_velocity: f64) -> Self {
        EgoAnchor {
            center: [0.0; 3],
            size: [1.85, 4.08, 1.6],
            heading: Heading::FORWARD,
            velocity: [speed, 0.0, 0.0],
            angular_velocity,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.center != [0.0; 3] || self.heading != Heading::FORWARD {
            return Err(Error::invalid("ego anchor", "ego must sit at the origin of its own frame"));
        }
        if !self.size.iter().all(|s| *s > 0.0) {
            return Err(Error::invalid("ego anchor", "size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapAnchor {
    pub id: u32,
    pub points: Vec<Vec2>,
    pub class_label: MapClass,
    pub existence: f64,
}

impl MapAnchor {
    pub fn empty(points: usize) -> Self {
        MapAnchor {
            id: 0,
            points: (0..points).map(|i| Vec2::new(i as f64, 0.0)).collect(),
            class_label: MapClass::LaneDivider,
            existence: 0.0,
        }
    }

    pub fn is_present(&self) -> bool {
        self.existence >= 0.5
    }

    pub fn in_frame(&self, frame: &Pose2) -> MapAnchor {
        MapAnchor {
            points: self.points.iter().map(|p| frame.to_local(*p)).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid("map anchor", "needs at least two points"));
        }
        if self.points.windows(2).any(|w| (w[1] - w[0]).norm() <= 1e-9) {
            return Err(Error::invalid("map anchor", "consecutive points coincide"));
        }
        if !(0.0..=1.0).contains(&self.existence) {
            return Err(Error::invalid("map anchor", "existence outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceFeature {
    pub embedding: Vec<f64>,
}

impl InstanceFeature {
    pub fn zeros(dim: usize) -> Self {
        InstanceFeature {
            embedding: vec![0.0; dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSlot {
    pub anchor: AgentAnchor,
    pub feature: InstanceFeature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSlot {
    pub anchor: MapAnchor,
    pub feature: InstanceFeature,
}

/// Fixed per-run shapes: query budgets, polyline length and feature width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub agent_slots: usize,
    pub map_slots: usize,
    pub map_points: usize,
    pub feature_dim: usize,
}

impl Default for SceneLayout {
    fn default() -> Self {
        SceneLayout {
            agent_slots: 32,
            map_slots: 8,
            map_points: MAP_POINTS,
            feature_dim: 64,
        }
    }
}

/// One frame of the sparse scene, expressed in that frame's ego frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSet {
    pub frame_index: i64,
    pub ego: EgoAnchor,
    pub agents: Vec<AgentSlot>,
    pub maps: Vec<MapSlot>,
}

impl InstanceSet {
    pub fn layout(&self) -> SceneLayout {
        SceneLayout {
            agent_slots: self.agents.len(),
            map_slots: self.maps.len(),
            map_points: self.maps.first().map_or(MAP_POINTS, |m| m.anchor.points.len()),
            feature_dim: self
                .agents
                .first()
                .map(|a| a.feature.embedding.len())
                .or_else(|| self.maps.first().map(|m| m.feature.embedding.len()))
                .unwrap_or(0),
        }
    }

    pub fn validate(&self, layout: &SceneLayout) -> Result<()> {
        self.ego.validate()?;
        if self.agents.len() != layout.agent_slots || self.maps.len() != layout.map_slots {
            return Err(Error::ShapeMismatch(format!(
                "frame {} has {}/{} agent/map slots, layout wants {}/{}",
                self.frame_index,
                self.agents.len(),
                self.maps.len(),
                layout.agent_slots,
                layout.map_slots
            )));
        }
        for slot in &self.agents {
            slot.anchor.validate()?;
            check_feature(&slot.feature, layout.feature_dim)?;
        }
        for slot in &self.maps {
            slot.anchor.validate()?;
            if slot.anchor.points.len() != layout.map_points {
                return Err(Error::ShapeMismatch("map polyline length".into()));
            }
            check_feature(&slot.feature, layout.feature_dim)?;
        }
        Ok(())
    }

    pub fn present_agents(&self) -> impl Iterator<Item = (usize, &AgentAnchor)> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, s)| s.anchor.is_present())
            .map(|(i, s)| (i, &s.anchor))
    }
}

fn check_heading(h: Heading) -> Result<()> {
    if (h.sin * h.sin + h.cos * h.cos - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("heading", format!("({}, {}) is not unit length", h.sin, h.cos)));
    }
    Ok(())
}

fn check_feature(f: &InstanceFeature, dim: usize) -> Result<()> {
    if f.embedding.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "feature length {} != {dim}",
            f.embedding.len()
        )));
    }
    if !f.embedding.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("feature", "non-finite entry"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Vec2>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Vec2>, dt: f64) -> Self {
        Trajectory { waypoints, dt }
    }

    pub fn stationary(at: Vec2, steps: usize, dt: f64) -> Self {
        Trajectory::new(vec![at; steps], dt)
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.waypoints.len() != steps {
            return Err(Error::ShapeMismatch(format!(
                "trajectory has {} steps, expected {steps}",
                self.waypoints.len()
            )));
        }
        if !self.waypoints.iter().all(|w| w.is_finite()) || !(self.dt > 0.0) {
            return Err(Error::invalid("trajectory", "non-finite waypoint or dt"));
        }
        Ok(())
    }

    /// Elementwise sum with per-step offsets.
    pub fn offset_by(&self, offsets: &[Vec2]) -> Trajectory {
        Trajectory::new(
            self.waypoints.iter().zip(offsets).map(|(w, o)| *w + *o).collect(),
            self.dt,
        )
    }

    pub fn in_frame(&self, frame: &Pose2) -> Trajectory {
        Trajectory::new(self.waypoints.iter().map(|w| frame.to_local(*w)).collect(), self.dt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiModalTrajectory {
    pub modes: Vec<Trajectory>,
    pub scores: Vec<f64>,
}

impl MultiModalTrajectory {
    /// Index of the highest score; the lowest index wins ties.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn best(&self) -> &Trajectory {
        &self.modes[self.best_index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCondition {
    pub speed: f64,
    pub planned_trajectory: Trajectory,
    pub steering: Steering,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// History length in frames; the queue starts with frames -h..=0.
    pub h: usize,
    /// Forecast horizon in frames.
    pub f: usize,
    /// Decoder window; the decoder sees m + 1 frames.
    pub m: usize,
    pub dt: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            h: 3,
            f: 4,
            m: 3,
            dt: 0.5,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 1 || self.f < 1 || self.m < 1 || self.m > self.h || !(self.dt > 0.0) {
            return Err(Error::invalid(
                "rollout config",
                format!("need h >= 1, f >= 1, 1 <= m <= h, dt > 0; got {self:?}"),
            ));
        }
        Ok(())
    }
}

/// Anything that carries a planar box footprint.
pub trait Footprint {
    fn center2(&self) -> Vec2;
    /// (length, width)
    fn extent(&self) -> (f64, f64);
    fn yaw(&self) -> Heading;
}

impl Footprint for AgentAnchor {
    fn center2(&self) -> Vec2 {
        AgentAnchor::center2(self)
    }
    fn extent(&self) -> (f64, f64) {
        (self.size[1], self.size[0])
    }
    fn yaw(&self) -> Heading {
        self.heading
    }
}

impl Footprint for EgoAnchor {
    fn center2(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }
    fn extent(&self) -> (f64, f64) {
        (self.size[1], self.size[0])
    }
    fn yaw(&self) -> Heading {
        self.heading
    }
}

/// Box footprint of an anchor, optionally moved and/or re-oriented.
pub fn obb_of(anchor: &impl Footprint, center: Option<Vec2>, heading: Option<Heading>) -> OrientedBox2D {
    let (l, w) = anchor.extent();
    OrientedBox2D::new(
        center.unwrap_or_else(|| anchor.center2()),
        l,
        w,
        heading.unwrap_or_else(|| anchor.yaw()),
    )
}

/// Write one JSON object per frame.
pub fn write_scene_log<W: Write>(mut out: W, frames: &[InstanceSet]) -> std::io::Result<()> {
    for frame in frames {
        serde_json::to_writer(&mut out, frame)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_scene_log<R: BufRead>(input: R) -> Result<Vec<InstanceSet>> {
    let mut frames = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<scene log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            what: format!("scene log line {}", lineno + 1),
            reason: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}
