//! Detection-style and map scores for forecast frames.

use crate::geometry::Vec2;

pub const AP_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Detections and ground-truth centres of one frame.
#[derive(Clone, Debug, Default)]
pub struct FrameDetections {
    /// (confidence, centre)
    pub predictions: Vec<(f64, Vec2)>,
    pub truth: Vec<Vec2>,
}

/// Centre-distance average precision pooled over frames. Predictions are
/// matched greedily in descending confidence (ties by frame, then input
/// order) to the nearest unmatched ground-truth centre within `threshold`.
/// AP is the area under the precision envelope over all recall points.
pub fn center_ap(frames: &[FrameDetections], threshold: f64) -> f64 {
    let n_truth: usize = frames.iter().map(|f| f.truth.len()).sum();
    if n_truth == 0 {
        return 0.0;
    }
    let mut order: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, fr)| (0..fr.predictions.len()).map(move |i| (f, i)))
        .collect();
    order.sort_by(|a, b| {
        let ca = frames[a.0].predictions[a.1].0;
        let cb = frames[b.0].predictions[b.1].0;
        cb.total_cmp(&ca).then(a.cmp(b))
    });
    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.truth.len()]).collect();
    let mut hits = Vec::with_capacity(order.len());
    for (f, i) in order {
        let p = frames[f].predictions[i].1;
        let best = frames[f]
            .truth
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[f][*j])
            .map(|(j, t)| (j, (*t - p).norm()))
            .filter(|(_, d)| *d <= threshold)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, _)) => {
                taken[f][j] = true;
                hits.push(true);
            }
            None => hits.push(false),
        }
    }
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(hits.len());
    for (k, hit) in hits.iter().enumerate() {
        tp += *hit as usize;
        curve.push((tp as f64 / n_truth as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in curve {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Symmetric mean nearest-point distance between two polylines' vertices.
pub fn chamfer(a: &[Vec2], b: &[Vec2]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let one_way = |x: &[Vec2], y: &[Vec2]| {
        x.iter()
            .map(|p| y.iter().map(|q| (*p - *q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}
