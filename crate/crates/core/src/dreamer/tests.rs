use super::train::TrainSample;
use super::*;
use crate::alignment::project_instances;
use crate::nn::{gradient_check, Optimizer, OptimizerKind};
use crate::sim::{generate, Episode, MotionMix, MotionModel, ScenarioConfig};
use rand::Rng;

fn layout() -> SceneLayout {
    SceneLayout {
        agent_slots: 4,
        map_slots: 2,
        map_points: 20,
        feature_dim: 8,
    }
}

fn episode(seed: u64, mix: MotionMix) -> Episode {
    let sc = generate(&ScenarioConfig {
        seed,
        n_agents: 3,
        n_map_elements: 2,
        duration: 12,
        motion_mix: mix,
        ..Default::default()
    })
    .unwrap();
    sc.episode(&layout()).unwrap()
}

fn randomize(p: &mut DreamerParams, seed: u64, scale: f64) {
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

#[test]
fn zero_heads_reproduce_projection() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 1).unwrap();
    randomize(&mut p, 2, 0.3);
    p.zero_heads();
    let ep = episode(5, MotionMix::uniform());
    let (w, s) = window(&ep, 5, 3);
    let step = ep.ego_step(5);
    let proj = project_instances(&ep.frames[5], &step);
    let out = decoder_step(&p, &w, &s, &proj, &ep.conditions[5]).unwrap();
    for (o, q) in out.agents.iter().zip(&proj.agents) {
        let (a, b) = (&o.anchor, q);
        for k in 0..3 {
            assert!((a.center[k] - b.center[k]).abs() < 1e-12);
            assert!((a.velocity[k] - b.velocity[k]).abs() < 1e-12);
        }
        assert!((a.heading.sin - b.heading.sin).abs() < 1e-12 && (a.heading.cos - b.heading.cos).abs() < 1e-12);
        assert!((a.existence - b.existence).abs() < 1e-12);
    }
    for (o, q) in out.maps.iter().zip(&proj.maps) {
        assert!(o.anchor.points.iter().zip(&q.points).all(|(a, b)| (*a - *b).norm() < 1e-12));
        assert!((o.anchor.existence - q.existence).abs() < 1e-12);
    }
}

#[test]
fn residual_round_trip() {
    let ep = episode(9, MotionMix::only(MotionModel::ConstantTurn));
    let step = ep.ego_step(4);
    let proj = project_instances(&ep.frames[4], &step);
    for (p, t) in proj.agents.iter().zip(&ep.frames[5].agents).take(3) {
        let r = agent_residual_target(p, &t.anchor);
        let back = apply_agent_residual(p, &r);
        assert!((back.center2() - t.anchor.center2()).norm() < 1e-12);
        assert!((back.velocity2() - t.anchor.velocity2()).norm() < 1e-12);
        assert!((back.heading.angle() - t.anchor.heading.angle()).abs() < 1e-12);
    }
}

#[test]
fn existence_is_a_probability() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 3).unwrap();
    randomize(&mut p, 4, 1.0);
    let ep = episode(6, MotionMix::uniform());
    let (w, s) = window(&ep, 6, 3);
    let proj = project_instances(&ep.frames[6], &ep.ego_step(6));
    let input = p.prepare(&w, &s, &proj, &ep.conditions[6]).unwrap();
    let mut g = Graph::new();
    let out = p.forward(&mut g, &input);
    assert!(g.value(out.existence_logit).is_finite());
    let out = decoder_step(&p, &w, &s, &proj, &ep.conditions[6]).unwrap();
    assert!(out.agents.iter().all(|a| a.anchor.existence > 0.0 && a.anchor.existence < 1.0));
}

#[test]
fn misaligned_slots_are_rejected() {
    let p = DreamerParams::new(DreamerConfig::tiny(layout()), 1).unwrap();
    let ep = episode(5, MotionMix::uniform());
    let (w, s) = window(&ep, 5, 3);
    let mut proj = project_instances(&ep.frames[5], &ep.ego_step(5));
    proj.agents.pop();
    assert!(matches!(
        decoder_step(&p, &w, &s, &proj, &ep.conditions[5]),
        Err(Error::ShapeMismatch(_))
    ));
}

fn permute(frame: &InstanceSet, perm: &[usize]) -> InstanceSet {
    let mut out = frame.clone();
    out.agents = perm.iter().map(|&i| frame.agents[i].clone()).collect();
    out
}

#[test]
fn agent_slots_are_equivariant() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 7).unwrap();
    randomize(&mut p, 8, 0.5);
    let ep = episode(11, MotionMix::uniform());
    let (w, s) = window(&ep, 5, 3);
    let proj = project_instances(&ep.frames[5], &ep.ego_step(5));
    let base = decoder_step(&p, &w, &s, &proj, &ep.conditions[5]).unwrap();

    let perm = [2, 0, 3, 1];
    let pw: Vec<InstanceSet> = w.iter().map(|f| permute(f, &perm)).collect();
    let pw_ref: Vec<&InstanceSet> = pw.iter().collect();
    let mut pproj = proj.clone();
    pproj.agents = perm.iter().map(|&i| proj.agents[i].clone()).collect();
    let out = decoder_step(&p, &pw_ref, &s, &pproj, &ep.conditions[5]).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        let (a, b) = (&out.agents[k], &base.agents[i]);
        assert!((a.anchor.center2() - b.anchor.center2()).norm() < 1e-10);
        assert!(a.feature.embedding.iter().zip(&b.feature.embedding).all(|(x, y)| (x - y).abs() < 1e-10));
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 12).unwrap();
    randomize(&mut p, 13, 0.2);
    let ep = episode(14, MotionMix::uniform());
    let sample: TrainSample = p.sample(&ep, 6).unwrap();
    let err = gradient_check(&p.store.clone(), 200, 1e-6, 15, |s, g| {
        let mut q = p.clone();
        q.store = s.clone();
        q.loss(g, &sample)
    });
    assert!(err < 1e-4, "worst relative error {err}");
}

#[test]
fn teacher_forced_loss_decreases_on_fixed_batch() {
    let cfg = DreamerConfig {
        dim: 16,
        ffn_dim: 32,
        layout: SceneLayout {
            feature_dim: 16,
            ..layout()
        },
        ..DreamerConfig::tiny(layout())
    };
    let mut p = DreamerParams::new(cfg, 21).unwrap();
    let eps: Vec<Episode> = (0..4).map(|i| episode(30 + i, MotionMix::uniform())).collect();
    let batch: Vec<TrainSample> = (0..8).map(|i| p.sample(&eps[i % 4], 3 + i).unwrap()).collect();
    let mut opt = Optimizer::new(OptimizerKind::Sgd {
        lr: 1e-3,
        momentum: 0.0,
    });
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let (loss, grads) = p.train_step(&batch).unwrap();
        assert!(loss < prev, "step {step}: {loss} >= {prev}");
        prev = loss;
        opt.step(&mut p.store, &grads);
    }
}

#[test]
fn perfect_prediction_has_no_regression_loss() {
    let p = DreamerParams::new(DreamerConfig::tiny(layout()), 1).unwrap();
    let sc = generate(&ScenarioConfig {
        seed: 3,
        n_agents: 3,
        n_map_elements: 2,
        duration: 12,
        motion_mix: MotionMix::only(MotionModel::ConstantVelocity),
        ..Default::default()
    })
    .unwrap();
    let ep = sc.episode(&layout()).unwrap();
    let sample = p.sample(&ep, 5).unwrap();
    let mut g = Graph::new();
    let l = p.loss(&mut g, &sample);
    assert!(g.value(l).data[0] < 1e-3);

    let mut g = Graph::new();
    let z = g.input(Mat::zeros(1, 1));
    let b = g.bce_with_logits(z, Mat::zeros(1, 1), Mat::filled(1, 1, 1.0));
    assert!((g.value(b).data[0] - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn anchor_embedding_properties() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 1).unwrap();
    let ep = episode(2, MotionMix::uniform());
    let a = ep.frames[0].agents[0].anchor.clone();
    assert_eq!(p.embed_agent(&a), p.embed_agent(&a.clone()));

    let base = p.embed_agent(&a);
    let mut fields: Vec<AgentAnchor> = Vec::new();
    for k in 0..3 {
        let mut b = a.clone();
        b.center[k] += 1e-3;
        fields.push(b);
        let mut b = a.clone();
        b.size[k] += 1e-3;
        fields.push(b);
        let mut b = a.clone();
        b.velocity[k] += 1e-3;
        fields.push(b);
    }
    let mut b = a.clone();
    b.heading = b.heading.rotate(1e-3);
    fields.push(b);
    let mut b = a.clone();
    b.existence -= 1e-3;
    fields.push(b);
    for b in &fields {
        let f = p.embed_agent(b);
        assert!(f.embedding.iter().zip(&base.embedding).any(|(x, y)| x != y));
    }

    p.store.zero_prefix("embed.agent");
    assert!(p.embed_agent(&a).embedding.iter().all(|&x| x == 0.0));
}

fn scripted_rollout(p: &DreamerParams, ep: &Episode, t0: usize, f: usize) -> Rollout {
    let mut q = InstanceMemoryQueue::with_capacity(16);
    for k in 0..=t0 {
        q.push(ep.frames[k].clone()).unwrap();
    }
    let mut log = StepLog::new(0, (0..t0).map(|k| ep.ego_step(k)).collect());
    let mut planner = ScriptedPlanner::from_episode(ep, t0);
    let cfg = RolloutConfig {
        h: 3,
        f,
        m: 3,
        dt: 0.5,
    };
    rollout(&mut q, &mut log, &cfg, p, &mut planner).unwrap()
}

#[test]
fn single_step_rollout_is_one_decoder_step() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 5).unwrap();
    randomize(&mut p, 6, 0.3);
    let ep = episode(7, MotionMix::uniform());
    let r = scripted_rollout(&p, &ep, 4, 1);
    let (w, s) = window(&ep, 4, 3);
    let proj = project_instances(&ep.frames[4], &ep.ego_step(4));
    let mut one = decoder_step(&p, &w, &s, &proj, &ep.conditions[4]).unwrap();
    one.ego = ego_after(&ep.conditions[4], &ep.ego_step(4));
    assert_eq!(r.frames[0], one);
}

#[test]
fn zero_head_rollout_is_iterated_projection() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 5).unwrap();
    randomize(&mut p, 6, 0.3);
    p.zero_heads();
    let ep = episode(8, MotionMix::uniform());
    let r = scripted_rollout(&p, &ep, 3, 4);
    let mut frame = ep.frames[3].clone();
    for (k, out) in r.frames.iter().enumerate() {
        let step = ep.ego_step(3 + k);
        let proj = project_instances(&frame, &step);
        frame = crate::alignment::projected_frame(&frame, &proj);
        for (a, b) in out.agents.iter().zip(&frame.agents) {
            assert!((a.anchor.center2() - b.anchor.center2()).norm() < 1e-9);
        }
    }
}

#[test]
fn rollout_is_deterministic() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 5).unwrap();
    randomize(&mut p, 6, 0.3);
    let ep = episode(8, MotionMix::uniform());
    let a = scripted_rollout(&p, &ep, 3, 4);
    let b = scripted_rollout(&p, &ep, 3, 4);
    assert_eq!(serde_json::to_string(&a.frames).unwrap(), serde_json::to_string(&b.frames).unwrap());
}

#[test]
fn positional_embedding_is_deterministic() {
    let p = DreamerParams::new(DreamerConfig::tiny(layout()), 5).unwrap();
    let poses = [Pose2::IDENTITY, Pose2::new(-4.0, 0.2, -0.05)];
    let a = p.positional_embedding(&poses);
    assert_eq!(a, p.positional_embedding(&poses));
    assert_eq!(a.rows.len(), 2);
    assert_ne!(a.rows[0], a.rows[1]);
}

#[test]
fn checkpoint_round_trip() {
    let mut p = DreamerParams::new(DreamerConfig::tiny(layout()), 5).unwrap();
    randomize(&mut p, 6, 0.3);
    let json = serde_json::to_string(&p.checkpoint()).unwrap();
    let back = DreamerParams::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.store, p.store);
}
