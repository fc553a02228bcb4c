//! Shared fixtures for the criterion benchmarks under `benches/`.

use sparseworld::alignment::{project_instances, ProjectedAnchors};
use sparseworld::dreamer::{DreamerConfig, DreamerParams};
use sparseworld::pipeline::ground_truth_agents;
use sparseworld::sim::{generate, Episode, ScenarioConfig};
use sparseworld::{AgentAnchor, SceneLayout, Trajectory, Vec2, PLAN_STEPS};

/// One synthetic episode and the frame index the benchmarks work at.
pub struct Fixture {
    pub episode: Episode,
    pub t: usize,
}

impl Fixture {
    pub fn new(seed: u64, layout: &SceneLayout) -> Self {
        let scenario = generate(&ScenarioConfig {
            seed,
            ..Default::default()
        })
        .expect("default scenario is valid");
        Fixture {
            episode: scenario.episode(layout).expect("layout fits the scenario"),
            t: 3,
        }
    }

    /// Ground-truth ego plan and agent futures at the fixture frame.
    pub fn safety_inputs(&self) -> (Trajectory, Vec<AgentAnchor>, Vec<Trajectory>) {
        let ep = &self.episode;
        let ego = Trajectory::new(
            (1..=PLAN_STEPS)
                .map(|k| {
                    let p = ep.pose_in(self.t, self.t + k);
                    Vec2::new(p.x, p.y)
                })
                .collect(),
            ep.dt(),
        );
        let (agents, trajs) = ground_truth_agents(ep, self.t, PLAN_STEPS);
        (ego, agents, trajs)
    }

    /// Untrained world model sized for `layout`.
    pub fn dreamer(&self, layout: SceneLayout) -> DreamerParams {
        DreamerParams::new(
            DreamerConfig {
                layout,
                ..Default::default()
            },
            0,
        )
        .expect("default dreamer config is valid")
    }

    pub fn projected(&self) -> ProjectedAnchors {
        project_instances(&self.episode.frames[self.t], &self.episode.ego_step(self.t))
    }
}
