use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scene::MultiModalTrajectory;

/// Final displacement (m) separating a hit from a miss, and the largest
/// current-position gap at which a prediction matches a ground-truth agent.
pub const HIT_THRESHOLD: f64 = 2.0;
const FALSE_POSITIVE_PENALTY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentPrediction {
    pub id: u64,
    pub center: Vec2,
    pub trajectory: MultiModalTrajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentTruth {
    pub id: u64,
    pub center: Vec2,
    pub future: Vec<Vec2>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    /// Fraction of matched agents whose best final error exceeds the threshold.
    pub miss_rate: f64,
    pub epa: f64,
    pub matched: usize,
    pub hits: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
}

/// (ADE, FDE) of every mode against `future`.
pub fn mode_errors(trajectory: &MultiModalTrajectory, future: &[Vec2]) -> Vec<(f64, f64)> {
    trajectory
        .modes
        .iter()
        .map(|m| {
            let d: Vec<f64> = m.waypoints.iter().zip(future).map(|(a, b)| (*a - *b).norm()).collect();
            let ade = d.iter().sum::<f64>() / d.len().max(1) as f64;
            (ade, d.last().copied().unwrap_or(0.0))
        })
        .collect()
}

/// Displacement metrics over predictions matched to ground truth by id.
pub fn motion_metrics(predictions: &[AgentPrediction], truth: &[AgentTruth]) -> Result<MotionMetrics> {
    if truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let by_id: HashMap<u64, &AgentTruth> = truth.iter().map(|t| (t.id, t)).collect();
    let mut m = MotionMetrics {
        ground_truth: truth.len(),
        ..Default::default()
    };
    let (mut ade_sum, mut fde_sum) = (0.0, 0.0);
    for p in predictions {
        let Some(gt) = by_id.get(&p.id).filter(|gt| (gt.center - p.center).norm() <= HIT_THRESHOLD) else {
            m.false_positives += 1;
            continue;
        };
        let errs = mode_errors(&p.trajectory, &gt.future);
        let min_ade = errs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let min_fde = errs.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        m.matched += 1;
        ade_sum += min_ade;
        fde_sum += min_fde;
        if min_fde <= HIT_THRESHOLD {
            m.hits += 1;
        }
    }
    if m.matched > 0 {
        let n = m.matched as f64;
        m.min_ade = ade_sum / n;
        m.min_fde = fde_sum / n;
        m.miss_rate = (m.matched - m.hits) as f64 / n;
    }
    m.epa = ((m.hits as f64 - FALSE_POSITIVE_PENALTY * m.false_positives as f64) / m.ground_truth as f64).max(0.0);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Trajectory;

    fn line(dx: f64, y: f64) -> Vec<Vec2> {
        (1..=6).map(|k| Vec2::new(dx * k as f64, y)).collect()
    }

    fn single(pts: Vec<Vec2>) -> MultiModalTrajectory {
        MultiModalTrajectory {
            modes: vec![Trajectory::new(pts, 0.5)],
            scores: vec![0.0],
        }
    }

    #[test]
    fn perfect_prediction() {
        let gt = AgentTruth { id: 1, center: Vec2::ZERO, future: line(1.0, 0.0) };
        let p = AgentPrediction { id: 1, center: Vec2::ZERO, trajectory: single(line(1.0, 0.0)) };
        let m = motion_metrics(&[p], &[gt]).unwrap();
        assert_eq!((m.min_ade, m.min_fde, m.miss_rate, m.epa), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn three_meter_final_error_is_a_miss() {
        let gt = AgentTruth { id: 1, center: Vec2::ZERO, future: line(1.0, 0.0) };
        let p = AgentPrediction { id: 1, center: Vec2::ZERO, trajectory: single(line(1.0, 3.0)) };
        let m = motion_metrics(&[p], &[gt]).unwrap();
        assert_eq!(m.miss_rate, 1.0);
        assert!((m.min_fde - 3.0).abs() < 1e-12);
    }

    #[test]
    fn epa_counting() {
        // 10 ground-truth agents: 7 hit, 2 missed, 1 unmatched; plus 2
        // predictions of agents that do not exist.
        let truth: Vec<AgentTruth> = (0..10).map(|i| AgentTruth { id: i, center: Vec2::new(10.0 * i as f64, 0.0), future: line(1.0, 0.0) }).collect();
        let mut preds: Vec<AgentPrediction> = (0..9)
            .map(|i| AgentPrediction {
                id: i,
                center: Vec2::new(10.0 * i as f64, 0.0),
                trajectory: single(line(1.0, if i < 7 { 0.5 } else { 5.0 })),
            })
            .collect();
        preds.push(AgentPrediction { id: 40, center: Vec2::ZERO, trajectory: single(line(1.0, 0.0)) });
        preds.push(AgentPrediction { id: 41, center: Vec2::ZERO, trajectory: single(line(1.0, 0.0)) });
        let m = motion_metrics(&preds, &truth).unwrap();
        assert_eq!((m.hits, m.matched, m.false_positives), (7, 9, 2));
        assert!((m.epa - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(matches!(motion_metrics(&[], &[]), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn mode_order_does_not_matter() {
        let gt = AgentTruth { id: 1, center: Vec2::ZERO, future: line(1.0, 0.0) };
        let modes = vec![Trajectory::new(line(1.0, 2.5), 0.5), Trajectory::new(line(1.1, 0.0), 0.5)];
        let a = MultiModalTrajectory { modes: modes.clone(), scores: vec![0.1, 0.9] };
        let b = MultiModalTrajectory { modes: modes.into_iter().rev().collect(), scores: vec![0.9, 0.1] };
        let ma = motion_metrics(&[AgentPrediction { id: 1, center: Vec2::ZERO, trajectory: a }], &[gt.clone()]).unwrap();
        let mb = motion_metrics(&[AgentPrediction { id: 1, center: Vec2::ZERO, trajectory: b }], &[gt]).unwrap();
        assert_eq!(ma, mb);
    }
}
