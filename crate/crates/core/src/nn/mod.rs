//! Minimal dense autodiff: a tape of matrix ops, parameter storage,
//! optimizers and the handful of layers the models need.

mod graph;
mod layers;
mod mat;
mod params;

pub use graph::{sigmoid, AttnMask, Graph, Var};
pub use layers::{FeedForward, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use mat::{matmul, Mat};
pub use params::{Gradients, Optimizer, OptimizerKind, ParamId, ParamStore};

/// Largest relative error between analytic and central-difference
/// directional derivatives over `directions` random unit directions.
pub fn gradient_check(
    store: &ParamStore,
    directions: usize,
    eps: f64,
    seed: u64,
    loss: impl Fn(&ParamStore, &mut Graph) -> Var,
) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let l = loss(store, &mut g);
    let grads = g.backward(l);
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(s, &mut g);
        g.value(l).data[0]
    };
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dir: Vec<Mat> = store
            .ids()
            .map(|id| {
                let m = store.get(id);
                Mat::from_vec(m.rows, m.cols, (0..m.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            })
            .collect();
        let norm = dir.iter().map(Mat::sq_norm).sum::<f64>().sqrt();
        let mut analytic = 0.0;
        for (id, d) in store.ids().zip(&dir) {
            if let Some(gm) = grads.get(id) {
                analytic += gm.data.iter().zip(&d.data).map(|(a, b)| a * b).sum::<f64>() / norm;
            }
        }
        let shifted = |sign: f64| {
            let mut s = store.clone();
            for (id, d) in store.ids().zip(&dir) {
                for (w, x) in s.get_mut(id).data.iter_mut().zip(&d.data) {
                    *w += sign * eps * x / norm;
                }
            }
            eval(&s)
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
