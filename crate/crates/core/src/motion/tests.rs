use super::train::{train, MotionTrainConfig};
use super::*;
use crate::dreamer::{rollout, DreamerConfig, DreamerParams};
use crate::nn::{gradient_check, OptimizerKind};
use crate::scene::{AgentSlot, RolloutConfig, Steering};
use crate::sim::{generate, Episode, MotionMix, ScenarioConfig};
use rand::Rng;

fn layout() -> SceneLayout {
    SceneLayout {
        agent_slots: 4,
        map_slots: 2,
        map_points: 20,
        feature_dim: 8,
    }
}

fn episode(seed: u64) -> Episode {
    generate(&ScenarioConfig {
        seed,
        n_agents: 3,
        n_map_elements: 2,
        duration: 12,
        motion_mix: MotionMix::uniform(),
        ..Default::default()
    })
    .unwrap()
    .episode(&layout())
    .unwrap()
}

fn randomize(p: &mut MotionParams, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in p.store.ids().collect::<Vec<_>>() {
        for w in p.store.get_mut(id).data.iter_mut() {
            *w += scale * rng.gen_range(-1.0..1.0);
        }
    }
}

fn window(ep: &Episode, t: usize, m: usize) -> (Vec<&InstanceSet>, Vec<EgoMotionStep>) {
    ((t - m..=t).map(|k| &ep.frames[k]).collect(), (t - m..t).map(|k| ep.ego_step(k)).collect())
}

fn tiny(seed: u64) -> MotionParams {
    let mut p = MotionParams::new(MotionConfig::tiny(layout()), seed).unwrap();
    randomize(&mut p, seed + 100, 0.3);
    p
}

#[test]
fn zero_heads_predict_standing_still() {
    let mut p = tiny(1);
    p.zero_heads();
    let ep = episode(3);
    let (w, s) = window(&ep, 4, 3);
    let out = predict_motion(&w, &s, &p).unwrap();
    assert!(out.ego.waypoints.iter().all(|w| *w == Vec2::ZERO));
    for (pred, slot) in out.agents.iter().zip(&ep.frames[4].agents) {
        match pred {
            Some(mm) => {
                assert_eq!(mm.modes.len(), 6);
                for m in &mm.modes {
                    assert_eq!(m.len(), 6);
                    for w in &m.waypoints {
                        assert!((*w - slot.anchor.center2()).norm() < 1e-12);
                    }
                }
            }
            None => assert!(!slot.anchor.is_present()),
        }
    }
}

#[test]
fn permuting_slots_permutes_outputs() {
    let p = tiny(2);
    let ep = episode(4);
    let perm = [2usize, 0, 3, 1];
    let permute = |f: &InstanceSet| InstanceSet {
        agents: perm.iter().map(|&i| f.agents[i].clone()).collect::<Vec<AgentSlot>>(),
        ..f.clone()
    };
    let (w, s) = window(&ep, 5, 3);
    let pw: Vec<InstanceSet> = w.iter().map(|f| permute(f)).collect();
    let a = predict_motion(&w, &s, &p).unwrap();
    let b = predict_motion(&pw.iter().collect::<Vec<_>>(), &s, &p).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        match (&a.agents[i], &b.agents[j]) {
            (Some(x), Some(y)) => {
                for (mx, my) in x.modes.iter().zip(&y.modes) {
                    for (u, v) in mx.waypoints.iter().zip(&my.waypoints) {
                        assert!((*u - *v).norm() < 1e-9);
                    }
                }
            }
            (None, None) => {}
            _ => panic!("presence differs for slot {i}"),
        }
    }
    for (u, v) in a.ego.waypoints.iter().zip(&b.ego.waypoints) {
        assert!((*u - *v).norm() < 1e-9);
    }
}

#[test]
fn same_stack_gives_same_output_through_either_entry_point() {
    let p = tiny(3);
    let ep = episode(5);
    let (w, s) = window(&ep, 4, 3);
    let a = predict_motion(&w, &s, &p).unwrap();
    assert_eq!(a, refine_motion(&w, &s, &[], &[], &p).unwrap());
    assert_eq!(a, p.run(&w, &s, 3).unwrap());
    let current = &ep.frames[4];
    assert_eq!(predict_motion(&[current], &[], &p).unwrap(), refine_motion(&[current], &[], &[], &[], &p).unwrap());
}

#[test]
fn empty_future_slots_are_masked() {
    let p = tiny(4);
    let ep = episode(6);
    let t = 3;
    let futures: Vec<InstanceSet> = (t + 1..=t + 4).map(|k| ep.frames[k].clone()).collect();
    let steps: Vec<EgoMotionStep> = (t..t + 4).map(|k| ep.ego_step(k)).collect();
    let refs: Vec<&InstanceSet> = futures.iter().collect();
    let (w, ws) = window(&ep, t, 3);
    let a = refine_motion(&w, &ws, &refs, &steps, &p).unwrap();
    let mut noisy = futures.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut touched = 0;
    for f in &mut noisy {
        for slot in &mut f.agents {
            if !slot.anchor.is_present() {
                slot.anchor.center = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.0];
                slot.anchor.velocity = [rng.gen_range(-9.0..9.0), 1.0, 0.0];
                slot.anchor.existence = rng.gen_range(0.0..0.49);
                touched += 1;
            }
        }
    }
    assert!(touched > 0);
    let b = refine_motion(&w, &ws, &noisy.iter().collect::<Vec<_>>(), &steps, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stack_longer_than_the_network_accepts_is_rejected() {
    let p = tiny(5);
    let ep = episode(7);
    let frames: Vec<&InstanceSet> = (0..=5).map(|k| &ep.frames[k]).collect();
    let steps: Vec<EgoMotionStep> = (0..5).map(|k| ep.ego_step(k)).collect();
    assert!(matches!(predict_motion(&frames, &steps, &p), Err(Error::ShapeMismatch(_))));
}

#[test]
fn gradients_match_finite_differences() {
    let mut p = MotionParams::new(
        MotionConfig {
            layout: SceneLayout {
                agent_slots: 2,
                ..layout()
            },
            ..MotionConfig::tiny(layout())
        },
        6,
    )
    .unwrap();
    randomize(&mut p, 60, 0.2);
    let ep = generate(&ScenarioConfig {
        seed: 8,
        n_agents: 2,
        n_map_elements: 2,
        duration: 12,
        ..Default::default()
    })
    .unwrap()
    .episode(&p.config.layout)
    .unwrap();
    let sample = p.history_sample(&ep, 4).unwrap();
    let err = gradient_check(&p.store.clone(), 200, 1e-6, 16, |s, g| {
        let mut q = p.clone();
        q.store = s.clone();
        q.loss(g, &sample, None)
    });
    assert!(err < 1e-4, "worst relative error {err}");
}

#[test]
fn training_reduces_loss() {
    let mut p = MotionParams::new(MotionConfig::tiny(layout()), 7).unwrap();
    let samples: Vec<_> = (0..6)
        .flat_map(|i| {
            let ep = episode(40 + i);
            (3..=5).map(move |t| (ep.clone(), t))
        })
        .map(|(ep, t)| p.history_sample(&ep, t).unwrap())
        .collect();
    let cfg = MotionTrainConfig {
        epochs: 15,
        optimizer: OptimizerKind::adam(3e-3),
        ..Default::default()
    };
    let report = train(&mut p, &samples, &cfg, |_, _| {}).unwrap();
    let first = report.epoch_losses[0];
    let last = *report.epoch_losses.last().unwrap();
    assert!(last < 0.7 * first, "loss {first} -> {last}");
}

#[test]
fn safety_term_pushes_plan_away_from_agents() {
    // One gradient step on the surrogate alone moves the ego plan along the
    // adjustment directions.
    let p = tiny(8);
    let ep = episode(9);
    let mut sample = p.history_sample(&ep, 4).unwrap();
    let mut g = Graph::new();
    let out = p.forward(&mut g, &sample.input);
    let e = g.value(out.ego).clone();
    let plan = Trajectory::new((0..6).map(|j| Vec2::new(e.data[2 * j], e.data[2 * j + 1])).collect(), 0.5);
    // park an agent on top of the predicted plan at step 3
    let mut a = ep.frames[4].agents[0].anchor.clone();
    a.center = [plan.waypoints[2].x, plan.waypoints[2].y + 1.0, 0.0];
    a.existence = 1.0;
    sample.scene.agents = vec![a.clone()];
    sample.scene.trajectories = vec![Trajectory::stationary(a.center2(), 6, 0.5)];
    let safety = crate::safety::SafetyConfig::default();
    let before = crate::safety::scl(&crate::safety::sav(&plan, &sample.scene.agents, &sample.scene.trajectories, &safety, &sample.scene.ego));
    assert!(before > 0.0);

    let with = {
        let mut g = Graph::new();
        let l = p.loss(&mut g, &sample, Some((1.0, &safety)));
        g.backward(l)
    };
    let without = {
        let mut g = Graph::new();
        let l = p.loss(&mut g, &sample, None);
        g.backward(l)
    };
    let mut q = p.clone();
    let lr = 1e-3;
    for (id, gw) in with.iter() {
        let go = without.get(id).unwrap();
        for ((w, a), b) in q.store.get_mut(id).data.iter_mut().zip(&gw.data).zip(&go.data) {
            *w -= lr * (a - b);
        }
    }
    let mut g = Graph::new();
    let out = q.forward(&mut g, &sample.input);
    let e = g.value(out.ego).clone();
    let moved = Trajectory::new((0..6).map(|j| Vec2::new(e.data[2 * j], e.data[2 * j + 1])).collect(), 0.5);
    let after = crate::safety::scl(&crate::safety::sav(&moved, &sample.scene.agents, &sample.scene.trajectories, &safety, &sample.scene.ego));
    assert!(after < before, "scl {before} -> {after}");
}

#[test]
fn action_condition_from_trajectories() {
    let zero = Trajectory::stationary(Vec2::ZERO, 6, 0.5);
    let c = to_action_condition(&zero, 3.0);
    assert_eq!(c.speed, 0.0);
    assert_eq!(c.steering, Steering::Straight);

    let straight = Trajectory::new((1..=6).map(|k| Vec2::new(5.0 * k as f64, 0.0)).collect(), 0.5);
    let c = to_action_condition(&straight, 0.0);
    assert!((c.speed - 10.0).abs() < 1e-9);
    assert_eq!(c.steering, Steering::Straight);
    assert_eq!(c.planned_trajectory, straight);

    // arc of radius 20 m (curvature 0.05) bending left, 5 m per step
    let r = 20.0;
    let arc = Trajectory::new(
        (1..=6)
            .map(|k| {
                let phi = 5.0 * k as f64 / r;
                Vec2::new(r * phi.sin(), r * (1.0 - phi.cos()))
            })
            .collect(),
        0.5,
    );
    assert_eq!(to_action_condition(&arc, 0.0).steering, Steering::Left);
}

#[test]
fn fmp_drives_a_rollout() {
    let motion = tiny(10);
    let dreamer = DreamerParams::new(DreamerConfig::tiny(layout()), 11).unwrap();
    let ep = episode(12);
    let cfg = RolloutConfig::default();
    let (mut queue, mut log) = crate::pipeline::history_queue(&ep, 3, &cfg).unwrap();
    let mut planner = FmpPlanner::new(&motion);
    let r = rollout(&mut queue, &mut log, &cfg, &dreamer, &mut planner).unwrap();
    assert_eq!(r.frames.len(), 4);
    for (plan, frame) in r.plans.iter().zip(&r.frames) {
        assert_eq!(plan.condition.planned_trajectory.len(), 6);
        assert!(frame.agents.iter().all(|a| a.anchor.center.iter().all(|v| v.is_finite())));
    }
    assert!(planner.last.is_some());
}
