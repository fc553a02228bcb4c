//! Global instance alignment: closed-form pre-projection of frame-t anchors
//! into the frame-(t+1) ego frame.
//!
//! Agents are first advanced by their own velocity, then every point is
//! re-expressed relative to the moved and rotated ego:
//!
//! ```text
//! ce' = R_z(-ωΔt) · (ce + VΔt - (Δx, Δy, 0))
//! ```
//!
//! Map points only receive the ego part. The synthetic world reproduces this
//! transform exactly for constant-velocity agents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Heading, Pose2, Vec2};
use crate::scene::{ActionCondition, AgentAnchor, EgoAnchor, InstanceSet, MapAnchor};

/// Ego motion between two consecutive frames, expressed in the earlier one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoMotionStep {
    pub displacement: Vec2,
    /// ω·Δt in radians.
    pub yaw_change: f64,
    pub dt: f64,
}

impl EgoMotionStep {
    pub fn new(displacement: Vec2, yaw_change: f64, dt: f64) -> Result<Self> {
        let step = EgoMotionStep {
            displacement,
            yaw_change,
            dt,
        };
        step.validate()?;
        Ok(step)
    }

    pub fn stationary(dt: f64) -> Self {
        EgoMotionStep {
            displacement: Vec2::ZERO,
            yaw_change: 0.0,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.yaw_change.abs() < std::f64::consts::PI) || !self.displacement.is_finite() {
            return Err(Error::invalid("ego motion step", format!("{self:?}")));
        }
        Ok(())
    }

    /// Step implied by an action condition: planner displacement to the
    /// first waypoint, yaw from the ego's angular velocity.
    pub fn from_condition(condition: &ActionCondition, ego: &EgoAnchor) -> Self {
        let dt = condition.planned_trajectory.dt;
        EgoMotionStep {
            displacement: condition
                .planned_trajectory
                .waypoints
                .first()
                .copied()
                .unwrap_or(Vec2::ZERO),
            yaw_change: ego.angular_velocity * dt,
            dt,
        }
    }

    /// Pose of the next ego frame inside the current one.
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.displacement.x, self.displacement.y, self.yaw_change)
    }
}

/// Agent center advanced by its own velocity over `dt`.
pub fn velocity_compensate(anchor: &AgentAnchor, dt: f64) -> [f64; 3] {
    let [x, y, z] = anchor.center;
    let [vx, vy, vz] = anchor.velocity;
    [x + vx * dt, y + vy * dt, z + vz * dt]
}

/// Frame-t point re-expressed in the frame-(t+1) ego frame.
pub fn ego_align(point: [f64; 3], step: &EgoMotionStep) -> [f64; 3] {
    let p = step.pose().to_local(Vec2::new(point[0], point[1]));
    [p.x, p.y, point[2]]
}

pub fn heading_align(heading: Heading, step: &EgoMotionStep) -> Heading {
    heading.rotate(-step.yaw_change)
}

/// Kinematically projected anchors for the next frame, slot for slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedAnchors {
    pub agents: Vec<AgentAnchor>,
    pub maps: Vec<MapAnchor>,
}

pub fn project_agent(anchor: &AgentAnchor, step: &EgoMotionStep) -> AgentAnchor {
    let center = ego_align(velocity_compensate(anchor, step.dt), step);
    let v = anchor.velocity2().rotate(-step.yaw_change);
    AgentAnchor {
        center,
        heading: heading_align(anchor.heading, step),
        velocity: [v.x, v.y, anchor.velocity[2]],
        ..anchor.clone()
    }
}

pub fn project_map(anchor: &MapAnchor, step: &EgoMotionStep) -> MapAnchor {
    let pose = step.pose();
    MapAnchor {
        points: anchor.points.iter().map(|p| pose.to_local(*p)).collect(),
        ..anchor.clone()
    }
}

pub fn project_instances(frame: &InstanceSet, step: &EgoMotionStep) -> ProjectedAnchors {
    ProjectedAnchors {
        agents: frame.agents.iter().map(|s| project_agent(&s.anchor, step)).collect(),
        maps: frame.maps.iter().map(|s| project_map(&s.anchor, step)).collect(),
    }
}

/// Anchors of `frame` left where they are (the no-pre-projection ablation).
pub fn identity_projection(frame: &InstanceSet) -> ProjectedAnchors {
    ProjectedAnchors {
        agents: frame.agents.iter().map(|s| s.anchor.clone()).collect(),
        maps: frame.maps.iter().map(|s| s.anchor.clone()).collect(),
    }
}

/// Frame built from projected anchors, keeping the source frame's features.
pub fn projected_frame(frame: &InstanceSet, projected: &ProjectedAnchors) -> InstanceSet {
    let mut out = frame.clone();
    out.frame_index += 1;
    for (slot, a) in out.agents.iter_mut().zip(&projected.agents) {
        slot.anchor = a.clone();
    }
    for (slot, m) in out.maps.iter_mut().zip(&projected.maps) {
        slot.anchor = m.clone();
    }
    out
}
