use rand::Rng;

use super::graph::{AttnMask, Graph, Var};
use super::mat::Mat;
use super::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: store.add_xavier(format!("{name}.weight"), input, output, rng),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, output)),
        }
    }

    /// Zero-initialised layer.
    pub fn zeros(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), Mat::zeros(input, output)),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, output)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Mat::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert_eq!(dim % heads, 0, "dimension must split evenly across heads");
        MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }

    /// `queries` attend over `keys`; `values` supply the mixed content.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        values: Var,
        mask: &AttnMask,
    ) -> Var {
        let q = self.query.forward(g, store, queries);
        let k = self.key.forward(g, store, keys);
        let v = self.value.forward(g, store, values);
        let a = g.attention(q, k, v, self.heads, mask);
        self.out.forward(g, store, a)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(g, store, x);
        let h = g.gelu(h);
        self.down.forward(g, store, h)
    }
}

/// Two-layer perceptron with a GELU hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, output, rng),
        }
    }

    /// Output layer starts at zero.
    pub fn zero_out(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::zeros(store, &format!("{name}.out"), hidden, output),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.hidden.forward(g, store, x);
        let h = g.gelu(h);
        self.out.forward(g, store, h)
    }
}
