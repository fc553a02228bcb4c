//! Choosing among candidate ego trajectories by collision flags and safety cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::safety::{collision_detect, sav, scl, AdjustmentVector, SafetyConfig};
use crate::scene::{AgentAnchor, EgoAnchor, Trajectory};

/// Where a candidate came from, listed in tie-break preference order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Refined,
    Future,
    Base,
}

impl Provenance {
    pub const PREFERENCE: [Provenance; 3] = [Provenance::Refined, Provenance::Future, Provenance::Base];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub base: Trajectory,
    pub future: Trajectory,
    pub refined: Trajectory,
}

impl CandidateSet {
    pub fn get(&self, p: Provenance) -> &Trajectory {
        match p {
            Provenance::Base => &self.base,
            Provenance::Future => &self.future,
            Provenance::Refined => &self.refined,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.base.len();
        for p in Provenance::PREFERENCE {
            let t = self.get(p);
            t.validate(steps)?;
            if t.dt != self.base.dt {
                return Err(Error::ShapeMismatch(format!("{p:?} candidate dt {} != {}", t.dt, self.base.dt)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub provenance: Provenance,
    pub scl: f64,
    pub collides_base: Vec<bool>,
    pub collides_refined: Vec<bool>,
    pub adjustment: AdjustmentVector,
}

impl CandidateReport {
    pub fn eligible(&self) -> bool {
        !self.collides_base.iter().chain(&self.collides_refined).any(|c| *c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// In preference order: refined, future, base.
    pub candidates: Vec<CandidateReport>,
    pub chosen: Provenance,
    /// True when no candidate was collision-free.
    pub fallback: bool,
    pub final_trajectory: Trajectory,
}

impl SelectionReport {
    pub fn chosen_report(&self) -> &CandidateReport {
        self.candidates
            .iter()
            .find(|c| c.provenance == self.chosen)
            .expect("every provenance is reported")
    }
}

const TIE: f64 = 1e-9;

/// Lowest scl among `pool`, earlier entries winning near-ties.
fn argmin<'a>(pool: impl Iterator<Item = &'a CandidateReport>) -> Option<&'a CandidateReport> {
    let mut best: Option<&CandidateReport> = None;
    for c in pool {
        match best {
            Some(b) if c.scl >= b.scl - TIE => {}
            _ => best = Some(c),
        }
    }
    best
}

/// Score every candidate against both prediction sets, pick the safest and
/// apply its adjustment.
pub fn select(
    candidates: &CandidateSet,
    ego_anchor: &EgoAnchor,
    agents: &[AgentAnchor],
    agent_trajs_base: &[Trajectory],
    agent_trajs_refined: &[Trajectory],
    config: &SafetyConfig,
) -> SelectionReport {
    let union_agents: Vec<AgentAnchor> = agents.iter().chain(agents).cloned().collect();
    let union_trajs: Vec<Trajectory> = agent_trajs_base.iter().chain(agent_trajs_refined).cloned().collect();
    let reports: Vec<CandidateReport> = Provenance::PREFERENCE
        .iter()
        .map(|&p| {
            let traj = candidates.get(p);
            let adjustment = sav(traj, &union_agents, &union_trajs, config, ego_anchor);
            CandidateReport {
                provenance: p,
                scl: scl(&adjustment),
                collides_base: collision_detect(traj, ego_anchor, agents, agent_trajs_base),
                collides_refined: collision_detect(traj, ego_anchor, agents, agent_trajs_refined),
                adjustment,
            }
        })
        .collect();
    let (chosen, fallback) = match argmin(reports.iter().filter(|c| c.eligible())) {
        Some(c) => (c, false),
        None => (argmin(reports.iter()).expect("three candidates"), true),
    };
    let chosen_provenance = chosen.provenance;
    let final_trajectory = chosen.adjustment.apply(candidates.get(chosen_provenance));
    SelectionReport {
        candidates: reports,
        chosen: chosen_provenance,
        fallback,
        final_trajectory,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scene::AgentClass;

    fn line(y: f64, speed: f64) -> Trajectory {
        Trajectory::new((1..=6).map(|k| Vec2::new(speed * 0.5 * k as f64, y)).collect(), 0.5)
    }

    fn parked(x: f64, y: f64) -> (AgentAnchor, Trajectory) {
        let a = AgentAnchor {
            id: 9,
            center: [x, y, 0.0],
            size: [1.8, 4.0, 1.5],
            class_label: AgentClass::Vehicle,
            existence: 1.0,
            ..AgentAnchor::empty()
        };
        (a, Trajectory::stationary(Vec2::new(x, y), 6, 0.5))
    }

    #[test]
    fn all_safe_prefers_refined_unchanged() {
        let c = CandidateSet {
            base: line(0.0, 10.0),
            future: line(0.0, 9.0),
            refined: line(0.0, 8.0),
        };
        let r = select(&c, &EgoAnchor::new(10.0, 0.0), &[], &[], &[], &SafetyConfig::default());
        assert_eq!(r.chosen, Provenance::Refined);
        assert!(!r.fallback);
        assert_eq!(r.final_trajectory, c.refined);
        assert_eq!(r.candidates.len(), 3);
    }

    fn stopping(gap: f64) -> Trajectory {
        // Ego stops with its front bumper `gap` meters behind x = 18.
        let stop = 18.0 - gap - 4.08 / 2.0;
        Trajectory::new(
            [5.0, 10.0, 14.0, stop, stop, stop].iter().map(|&x| Vec2::new(x, 0.0)).collect(),
            0.5,
        )
    }

    #[test]
    fn collision_free_lowest_cost_wins() {
        let (a, tr) = parked(20.0, 0.0);
        let c = CandidateSet {
            base: line(0.0, 10.0),
            future: stopping(0.2),
            refined: stopping(0.4),
        };
        let ego = EgoAnchor::new(10.0, 0.0);
        let cfg = SafetyConfig::default();
        let r = select(&c, &ego, &[a.clone()], &[tr.clone()], &[tr.clone()], &cfg);
        let by = |p| r.candidates.iter().find(|c| c.provenance == p).unwrap();
        assert!(!by(Provenance::Base).eligible());
        assert!(by(Provenance::Future).eligible());
        assert!(by(Provenance::Refined).eligible());
        assert!((by(Provenance::Future).scl - 0.3).abs() < 1e-9);
        assert!((by(Provenance::Refined).scl - 0.1).abs() < 1e-9);
        assert_eq!(r.chosen, Provenance::Refined);
        assert!(!r.fallback);
        assert_eq!(r.final_trajectory, by(Provenance::Refined).adjustment.apply(&c.refined));
    }

    #[test]
    fn all_colliding_falls_back_to_lowest_cost() {
        let (a, tr) = parked(20.0, 0.0);
        let c = CandidateSet {
            base: line(0.0, 10.0),
            future: line(0.5, 10.0),
            refined: line(0.2, 10.0),
        };
        let ego = EgoAnchor::new(10.0, 0.0);
        let r = select(&c, &ego, &[a], &[tr.clone()], &[tr], &SafetyConfig::default());
        assert!(r.fallback);
        assert!(r.candidates.iter().all(|c| !c.eligible()));
        let min = r.candidates.iter().map(|c| c.scl).fold(f64::INFINITY, f64::min);
        assert!((r.chosen_report().scl - min).abs() < 1e-9);
        let chosen = c.get(r.chosen);
        for ((f, w), v) in r.final_trajectory.waypoints.iter().zip(&chosen.waypoints).zip(&r.chosen_report().adjustment.steps) {
            assert_eq!(*f, *w + *v);
        }
        assert_ne!(&r.final_trajectory, chosen);
    }
}
