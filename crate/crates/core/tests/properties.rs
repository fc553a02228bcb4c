use proptest::prelude::*;
use sparseworld::alignment::{project_agent, project_map, EgoMotionStep};
use sparseworld::geometry::min_distance_vector;
use sparseworld::safety::{sav, scl, AdjustmentVector, SafetyConfig};
use sparseworld::selection::{select, CandidateSet};
use sparseworld::{AgentAnchor, AgentClass, EgoAnchor, Heading, MapAnchor, MapClass, OrientedBox2D, Trajectory, Vec2};

fn obb() -> impl Strategy<Value = OrientedBox2D> {
    (-8.0..8.0f64, -8.0..8.0f64, 0.5..5.0f64, 0.5..2.5f64, -3.2..3.2f64)
        .prop_map(|(x, y, l, w, yaw)| OrientedBox2D::new(Vec2::new(x, y), l, w, Heading::from_angle(yaw)))
}

fn shifted(b: &OrientedBox2D, by: Vec2) -> OrientedBox2D {
    b.translated(by)
}

fn inside(b: &OrientedBox2D, p: Vec2) -> bool {
    let [u, v] = b.axes();
    let d = p - b.center;
    d.dot(u).abs() < b.half_extents.x && d.dot(v).abs() < b.half_extents.y
}

fn sampled_overlap(a: &OrientedBox2D, b: &OrientedBox2D) -> bool {
    let edge_points = |x: &OrientedBox2D| -> Vec<Vec2> {
        let c = x.corners();
        (0..4)
            .flat_map(|i| {
                let (p, q) = (c[i], c[(i + 1) % 4]);
                (0..400).map(move |k| p + (q - p) * (k as f64 / 400.0))
            })
            .collect()
    };
    edge_points(a).iter().any(|p| inside(b, *p)) || edge_points(b).iter().any(|p| inside(a, *p))
}

fn agent_at(p: Vec2, yaw: f64, vel: Vec2, l: f64, w: f64) -> AgentAnchor {
    AgentAnchor {
        id: 1,
        center: [p.x, p.y, 0.0],
        size: [w, l, 1.5],
        heading: Heading::from_angle(yaw),
        velocity: [vel.x, vel.y, 0.0],
        class_label: AgentClass::Vehicle,
        existence: 1.0,
    }
}

fn straight(speed: f64, lateral: f64) -> Trajectory {
    Trajectory::new((1..=6).map(|k| Vec2::new(speed * 0.5 * k as f64, lateral)).collect(), 0.5)
}

fn constant_velocity(a: &AgentAnchor) -> Trajectory {
    Trajectory::new((1..=6).map(|k| a.center2() + a.velocity2() * (0.5 * k as f64)).collect(), 0.5)
}

/// One agent near the path of a 6-step ego plan.
fn scene() -> impl Strategy<Value = (Trajectory, AgentAnchor, Trajectory)> {
    (2.0..10.0f64, -1.0..1.0f64, 0usize..6, -4.0..4.0f64, -3.2..3.2f64, 0.0..6.0f64, 1.0..5.0f64, 0.6..2.2f64).prop_map(
        |(speed, lateral, k, off, yaw, v, l, w)| {
            let plan = straight(speed, lateral);
            let heading = Heading::from_angle(yaw).direction();
            let vel = heading * v;
            let start = plan.waypoints[k] + Vec2::new(0.0, off) - vel * (0.5 * (k + 1) as f64);
            let agent = agent_at(start, yaw, vel, l, w);
            let traj = constant_velocity(&agent);
            (plan, agent, traj)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distance_is_symmetric_and_translation_invariant(a in obb(), b in obb(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let (d_ab, _) = min_distance_vector(&a, &b);
        let (d_ba, _) = min_distance_vector(&b, &a);
        prop_assert!((d_ab - d_ba).abs() < 1e-9);
        let by = Vec2::new(dx, dy);
        let (d_moved, _) = min_distance_vector(&shifted(&a, by), &shifted(&b, by));
        prop_assert!((d_ab - d_moved).abs() < 1e-9);
    }

    #[test]
    fn moving_along_the_direction_makes_boxes_touch(a in obb(), b in obb()) {
        let (d, dir) = min_distance_vector(&a, &b);
        prop_assert!((dir.norm() - 1.0).abs() < 1e-9);
        let touching = shifted(&a, dir * (-d));
        let (after, _) = min_distance_vector(&touching, &b);
        prop_assert!(after.abs() < 1e-7, "d {d} -> {after}");
    }

    #[test]
    fn overlap_verdict_matches_sampling(a in obb(), b in obb()) {
        let (d, _) = min_distance_vector(&a, &b);
        prop_assume!(d.abs() > 0.02);
        prop_assert_eq!(d < 0.0, sampled_overlap(&a, &b));
    }

    #[test]
    fn sav_is_zero_when_already_clear(speed in 2.0..10.0f64, far in 60.0..200.0f64, yaw in -3.2..3.2f64) {
        let plan = straight(speed, 0.0);
        let agent = agent_at(Vec2::new(0.0, far), yaw, Vec2::ZERO, 4.5, 1.9);
        let traj = constant_velocity(&agent);
        let v = sav(&plan, &[agent], &[traj], &SafetyConfig::default(), &EgoAnchor::new(speed, 0.0));
        prop_assert_eq!(scl(&v), 0.0);
        prop_assert!(v.steps.iter().all(|s| *s == Vec2::ZERO));
    }

    #[test]
    fn sav_and_scl_are_translation_invariant((plan, agent, traj) in scene(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let cfg = SafetyConfig::default();
        let ego = EgoAnchor::new(5.0, 0.0);
        let v = sav(&plan, &[agent.clone()], &[traj.clone()], &cfg, &ego);
        let by = Vec2::new(dx, dy);
        let move_traj = |t: &Trajectory| Trajectory::new(t.waypoints.iter().map(|p| *p + by).collect(), t.dt);
        let moved_agent = AgentAnchor { center: [agent.center[0] + dx, agent.center[1] + dy, 0.0], ..agent };
        let moved_ego = EgoAnchor { center: [dx, dy, 0.0], ..ego };
        let w = sav(&move_traj(&plan), &[moved_agent], &[move_traj(&traj)], &cfg, &moved_ego);
        for (a, b) in v.steps.iter().zip(&w.steps) {
            prop_assert!((*a - *b).norm() < 1e-9);
        }
        prop_assert!((scl(&v) - scl(&w)).abs() < 1e-9);
    }

    #[test]
    fn scl_is_zero_exactly_when_every_step_is(steps in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, any::<bool>()), 1..8)) {
        let v = AdjustmentVector {
            steps: steps.iter().map(|&(x, y, keep)| if keep { Vec2::new(x, y) } else { Vec2::ZERO }).collect(),
        };
        prop_assert_eq!(scl(&v) == 0.0, v.steps.iter().all(|s| *s == Vec2::ZERO));
        let max = v.norms().into_iter().fold(0.0, f64::max);
        prop_assert!(scl(&v) <= max + 1e-12);
    }

    #[test]
    fn selection_picks_the_cheapest_safe_candidate(
        (plan, agent, traj) in scene(),
        lat_future in -3.0..3.0f64,
        lat_refined in -3.0..3.0f64,
        drift in -1.0..1.0f64,
    ) {
        let cfg = SafetyConfig::default();
        let ego = EgoAnchor::new(5.0, 0.0);
        let shift = |t: &Trajectory, dy: f64| Trajectory::new(t.waypoints.iter().map(|p| *p + Vec2::new(0.0, dy)).collect(), t.dt);
        let candidates = CandidateSet { base: plan.clone(), future: shift(&plan, lat_future), refined: shift(&plan, lat_refined) };
        let refined_traj = shift(&traj, drift);
        let report = select(&candidates, &ego, &[agent.clone()], &[traj.clone()], &[refined_traj.clone()], &cfg);
        let chosen = report.chosen_report();
        prop_assert_eq!(report.fallback, !report.candidates.iter().any(|c| c.eligible()));
        let pool: Vec<_> = report.candidates.iter().filter(|c| report.fallback || c.eligible()).collect();
        prop_assert!(pool.iter().all(|c| chosen.scl <= c.scl + 1e-9));
        prop_assert_eq!(&report.final_trajectory, &chosen.adjustment.apply(candidates.get(report.chosen)));

        // Adjusting never makes a step worse, up to the first step the cap
        // cut short (later boxes are oriented from that unresolved step).
        let after = sav(&report.final_trajectory, &[agent.clone(), agent], &[traj, refined_traj], &cfg, &ego);
        let pre = chosen.adjustment.norms();
        let resolved = pre.iter().position(|n| (n - cfg.adjustment_cap).abs() < 1e-9).map_or(pre.len(), |i| i + 1);
        for (post, pre) in after.norms().iter().zip(&pre).take(resolved) {
            prop_assert!(*post <= pre + 1e-9, "post {post} > pre {pre}");
        }
    }

    #[test]
    fn projection_preserves_shape(
        x in -50.0..50.0f64, y in -50.0..50.0f64, yaw in -3.2..3.2f64,
        dx in -6.0..6.0f64, dy in -1.0..1.0f64, dyaw in -0.5..0.5f64,
    ) {
        let step = EgoMotionStep::new(Vec2::new(dx, dy), dyaw, 0.5).unwrap();
        let a = agent_at(Vec2::new(x, y), yaw, Vec2::new(1.0, -2.0), 4.5, 1.9);
        let p = project_agent(&a, &step);
        prop_assert_eq!(p.size, a.size);
        prop_assert!((p.velocity2().norm() - a.velocity2().norm()).abs() < 1e-12);
        prop_assert!((p.heading.norm() - 1.0).abs() < 1e-12);
        let m = MapAnchor {
            id: 2,
            points: vec![Vec2::new(x, y), Vec2::new(x + 3.0, y - 1.0), Vec2::new(x + 7.0, y + 2.0)],
            class_label: MapClass::Boundary,
            existence: 1.0,
        };
        let q = project_map(&m, &step);
        for i in 0..3 {
            for j in 0..3 {
                let before = (m.points[i] - m.points[j]).norm();
                let after = (q.points[i] - q.points[j]).norm();
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
    }
}
