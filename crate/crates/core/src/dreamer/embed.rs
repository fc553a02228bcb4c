//! Fixed input encodings feeding the learned embeddings.

use std::f64::consts::PI;

use crate::geometry::Pose2;
use crate::scene::{ActionCondition, AgentAnchor, MapAnchor};

pub const AGENT_INPUT: usize = 16;
pub const HISTORY_INPUT: usize = 8;
/// Width of one action token before projection.
pub const ACTION_TOKEN: usize = 24;

const POSITION_SCALE: f64 = 20.0;
const SPEED_SCALE: f64 = 20.0;
const PLAN_SCALE: f64 = 40.0;
const POSE_SCALE: f64 = 30.0;

/// `[sin(2^k π x), cos(2^k π x)]` for every value and every `k < n_freq`.
pub fn fourier_features(values: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * 2 * n_freq);
    for &x in values {
        for k in 0..n_freq {
            let a = (1u64 << k) as f64 * PI * x;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}

/// Scale-normalized `(speed, τ, one-hot steering)`.
pub fn condition_vector(condition: &ActionCondition) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + 2 * condition.planned_trajectory.len() + 3);
    v.push(condition.speed / SPEED_SCALE);
    for w in &condition.planned_trajectory.waypoints {
        v.push(w.x / PLAN_SCALE);
        v.push(w.y / PLAN_SCALE);
    }
    v.extend_from_slice(&condition.steering.one_hot());
    v
}

/// Fourier embedding of an action condition; length `2·n_freq·(1 + 2T + 3)`.
pub fn fourier_embed(condition: &ActionCondition, n_freq: usize) -> Vec<f64> {
    assert!(n_freq >= 1, "n_freq must be at least 1");
    fourier_features(&condition_vector(condition), n_freq)
}

/// Action tokens: speed, one per waypoint, steering; zero padded to
/// [`ACTION_TOKEN`] columns.
pub fn action_tokens(condition: &ActionCondition, n_freq: usize) -> Vec<Vec<f64>> {
    let emb = fourier_embed(condition, n_freq);
    let w = 2 * n_freq;
    let steps = condition.planned_trajectory.len();
    let mut tokens = Vec::with_capacity(steps + 2);
    let mut take = |start: usize, len: usize| {
        let mut t = emb[start..start + len].to_vec();
        t.resize(ACTION_TOKEN, 0.0);
        tokens.push(t);
    };
    take(0, w);
    for i in 0..steps {
        take(w + 2 * w * i, 2 * w);
    }
    take(w + 2 * w * steps, 3 * w);
    tokens
}

pub fn agent_input(a: &AgentAnchor) -> [f64; AGENT_INPUT] {
    let class = a.class_label.index();
    let mut x = [0.0; AGENT_INPUT];
    x[0] = a.center[0] / POSITION_SCALE;
    x[1] = a.center[1] / POSITION_SCALE;
    x[2] = a.center[2] / 2.0;
    x[3] = a.size[0] / 3.0;
    x[4] = a.size[1] / 5.0;
    x[5] = a.size[2] / 2.0;
    x[6] = a.heading.sin;
    x[7] = a.heading.cos;
    x[8] = a.velocity[0] / 10.0;
    x[9] = a.velocity[1] / 10.0;
    x[10] = a.velocity[2] / 10.0;
    x[11] = a.velocity2().norm() / 10.0;
    x[12 + class] = 1.0;
    x[15] = a.existence;
    x
}

/// Historical agent anchor already expressed in the frame of the same
/// slot's current anchor.
pub fn history_input(rel: &AgentAnchor) -> [f64; HISTORY_INPUT] {
    [
        rel.center[0] / 5.0,
        rel.center[1],
        5.0 * rel.heading.sin,
        5.0 * (rel.heading.cos - 1.0),
        rel.velocity[0] / 10.0,
        rel.velocity[1] / 2.0,
        rel.velocity2().norm() / 10.0,
        rel.existence,
    ]
}

pub fn map_input_len(points: usize) -> usize {
    2 * points + 4
}

pub fn map_input(m: &MapAnchor) -> Vec<f64> {
    let mut x = Vec::with_capacity(map_input_len(m.points.len()));
    for p in &m.points {
        x.push(p.x / POSITION_SCALE);
        x.push(p.y / POSITION_SCALE);
    }
    let mut class = [0.0; 3];
    class[m.class_label.index()] = 1.0;
    x.extend_from_slice(&class);
    x.push(m.existence);
    x
}

pub fn pose_input_len(n_freq: usize) -> usize {
    6 * n_freq
}

/// Fourier features of a historical frame's pose relative to the current one.
pub fn pose_input(rel: &Pose2, n_freq: usize) -> Vec<f64> {
    fourier_features(&[rel.x / POSE_SCALE, rel.y / POSE_SCALE, rel.yaw / PI], n_freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scene::{Steering, Trajectory};

    fn condition(speed: f64, pts: &[(f64, f64)], steering: Steering) -> ActionCondition {
        ActionCondition {
            speed,
            planned_trajectory: Trajectory::new(pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(), 0.5),
            steering,
        }
    }

    #[test]
    fn zero_entries_give_unit_cosines() {
        let c = condition(0.0, &[(0.0, 0.0); 6], Steering::Straight);
        let e = fourier_embed(&c, 4);
        // every scalar except the straight one-hot entry is zero
        let hot = 1 + 12 + 1;
        for (i, pair) in e.chunks(2).enumerate() {
            if i / 4 == hot {
                continue;
            }
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn embedding_length() {
        let c = condition(5.0, &[(1.0, 0.0); 6], Steering::Left);
        assert_eq!(fourier_embed(&c, 4).len(), 128);
        let tokens = action_tokens(&c, 4);
        assert_eq!(tokens.len(), 8);
        assert!(tokens.iter().all(|t| t.len() == ACTION_TOKEN));
    }

    #[test]
    fn embedding_is_injective_on_random_conditions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let steer = [Steering::Left, Steering::Straight, Steering::Right];
        let conds: Vec<ActionCondition> = (0..100)
            .map(|_| {
                let pts: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(0.0..30.0), rng.gen_range(-5.0..5.0))).collect();
                condition(rng.gen_range(0.0..15.0), &pts, steer[rng.gen_range(0..3)])
            })
            .collect();
        // independent reimplementation of the encoding
        let reference = |c: &ActionCondition| -> Vec<f64> {
            let mut raw = vec![c.speed / 20.0];
            for w in &c.planned_trajectory.waypoints {
                raw.extend([w.x / 40.0, w.y / 40.0]);
            }
            raw.extend(c.steering.one_hot());
            raw.iter()
                .flat_map(|x| (0..4).flat_map(move |k| {
                    let f = 2f64.powi(k) * std::f64::consts::PI * x;
                    [f.sin(), f.cos()]
                }))
                .collect()
        };
        let embs: Vec<Vec<f64>> = conds.iter().map(|c| fourier_embed(c, 4)).collect();
        for (c, e) in conds.iter().zip(&embs) {
            let r = reference(c);
            assert!(e.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(d > 1e-9, "conditions {i} and {j} collide");
            }
        }
    }
}
