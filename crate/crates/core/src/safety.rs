//! Box geometry along trajectories, safety adjustment vectors and collision checks.

use serde::{Deserialize, Serialize};

pub use crate::geometry::min_distance_vector;
use crate::error::{Error, Result};
use crate::geometry::{Heading, OrientedBox2D, Vec2};
use crate::scene::{obb_of, AgentAnchor, EgoAnchor, Footprint, Trajectory};

/// Displacements below this length keep the anchor's own heading.
pub const MIN_STEP: f64 = 1e-6;
const INNER_ITERS: usize = 100;
const INNER_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    /// Required clearance between boxes, meters.
    pub theta: f64,
    pub max_resolve_iters: usize,
    /// Largest per-step adjustment, meters.
    pub adjustment_cap: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            theta: 0.5,
            max_resolve_iters: 3,
            adjustment_cap: 2.0,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0) || self.max_resolve_iters < 1 || !(self.adjustment_cap > 0.0) {
            return Err(Error::invalid(
                "safety config",
                format!("need theta >= 0, max_resolve_iters >= 1, adjustment_cap > 0; got {self:?}"),
            ));
        }
        Ok(())
    }
}

/// Per-step planar displacement applied to an ego trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentVector {
    pub steps: Vec<Vec2>,
}

impl AdjustmentVector {
    pub fn zeros(steps: usize) -> Self {
        AdjustmentVector {
            steps: vec![Vec2::ZERO; steps],
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.steps.iter().map(|v| v.norm()).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        AdjustmentVector {
            steps: self.steps.iter().map(|v| *v * c).collect(),
        }
    }

    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        traj.offset_by(&self.steps)
    }
}

fn heading_between(from: Vec2, to: Vec2, fallback: Heading) -> Heading {
    let d = to - from;
    let n = d.norm();
    if n < MIN_STEP {
        fallback
    } else {
        Heading { sin: d.y / n, cos: d.x / n }
    }
}

/// Box of `anchor` placed at waypoint `t` (1-based) and oriented along the
/// step that reached it. Waypoint 0 is the anchor's own position.
pub fn box_along(anchor: &impl Footprint, trajectory: &Trajectory, t: usize) -> OrientedBox2D {
    assert!(
        (1..=trajectory.len()).contains(&t),
        "step {t} outside 1..={}",
        trajectory.len()
    );
    let prev = if t == 1 {
        anchor.center2()
    } else {
        trajectory.waypoints[t - 2]
    };
    let here = trajectory.waypoints[t - 1];
    obb_of(anchor, Some(here), Some(heading_between(prev, here, anchor.yaw())))
}

fn agent_boxes(agents: &[AgentAnchor], agent_trajs: &[Trajectory], t: usize) -> Vec<OrientedBox2D> {
    agents
        .iter()
        .zip(agent_trajs)
        .filter(|(a, tr)| a.is_present() && tr.len() >= t)
        .map(|(a, tr)| box_along(a, tr, t))
        .collect()
}

fn closest(ego: &OrientedBox2D, boxes: &[OrientedBox2D]) -> Option<(usize, f64, Vec2)> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (d, dir) = min_distance_vector(ego, b);
            (i, d, dir)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Minimal per-step displacement moving the ego boxes at least
/// `config.theta` away from every agent box.
///
/// Steps are resolved in order. The ego box at step `t` is oriented along
/// the already adjusted step `t − 1 → t`, so re-running on the adjusted
/// trajectory sees exactly the geometry that was resolved here.
pub fn sav(
    ego_traj: &Trajectory,
    agents: &[AgentAnchor],
    agent_trajs: &[Trajectory],
    config: &SafetyConfig,
    ego_anchor: &EgoAnchor,
) -> AdjustmentVector {
    let steps = ego_traj.len();
    let mut out = AdjustmentVector::zeros(steps);
    let mut prev = ego_anchor.center2();
    for t in 1..=steps {
        let boxes = agent_boxes(agents, agent_trajs, t);
        let w = ego_traj.waypoints[t - 1];
        let ego_box = |v: Vec2| obb_of(ego_anchor, Some(w + v), Some(heading_between(prev, w + v, ego_anchor.yaw())));
        let mut v = Vec2::ZERO;
        for _ in 0..config.max_resolve_iters {
            let Some((worst, d, _)) = closest(&ego_box(v), &boxes) else {
                break;
            };
            if d >= config.theta {
                break;
            }
            for _ in 0..INNER_ITERS {
                let (d, dir) = min_distance_vector(&ego_box(v), &boxes[worst]);
                let deficit = config.theta - d;
                if deficit <= INNER_TOL {
                    break;
                }
                v += dir * deficit;
            }
        }
        let n = v.norm();
        if n > config.adjustment_cap {
            v = v * (config.adjustment_cap / n);
        }
        out.steps[t - 1] = v;
        prev = w + v;
    }
    out
}

/// Mean norm over the nonzero steps; zero when every step is zero.
pub fn scl(v: &AdjustmentVector) -> f64 {
    let (sum, count) = v
        .steps
        .iter()
        .map(|s| s.norm())
        .filter(|n| *n != 0.0)
        .fold((0.0, 0usize), |(s, c), n| (s + n, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Per step: does the ego box overlap any agent box.
pub fn collision_detect(
    ego_traj: &Trajectory,
    ego_anchor: &EgoAnchor,
    agents: &[AgentAnchor],
    agent_trajs: &[Trajectory],
) -> Vec<bool> {
    (1..=ego_traj.len())
        .map(|t| {
            let ego = box_along(ego_anchor, ego_traj, t);
            agent_boxes(agents, agent_trajs, t)
                .iter()
                .any(|b| min_distance_vector(&ego, b).0 < 0.0)
        })
        .collect()
}
