use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Xavier-uniform `rows × cols` matrix.
    pub fn add_xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Zero every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (n, v) in self.names.iter().zip(self.values.iter_mut()) {
            if n.starts_with(prefix) {
                v.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Copy values from `other` for every name both stores share with equal shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let Some(j) = other.find(name) else {
                return Err(Error::Parse {
                    what: "checkpoint".into(),
                    reason: format!("missing parameter {name}"),
                });
            };
            let src = other.get(j);
            let dst = &mut self.values[i];
            if (src.rows, src.cols) != (dst.rows, dst.cols) {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: checkpoint {}x{}, model {}x{}",
                    src.rows, src.cols, dst.rows, dst.cols
                )));
            }
            dst.data.clone_from(&src.data);
        }
        Ok(())
    }
}

/// Parameter gradients from one or more backward passes.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    pub fn insert(&mut self, id: ParamId, g: Mat) {
        self.by_param.insert(id, g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.by_param.get(&id)
    }

    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.by_param {
            match self.by_param.get_mut(&id) {
                Some(e) => e.add_assign(&g),
                None => {
                    self.by_param.insert(id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.by_param.values_mut().for_each(|g| g.scale_assign(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param.values().map(Mat::sq_norm).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(Mat::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr, momentum: 0.9 }
    }
}

/// First-order optimizer with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub clip_norm: Option<f64>,
    first: BTreeMap<ParamId, Mat>,
    second: BTreeMap<ParamId, Mat>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            clip_norm: None,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.steps += 1;
        let clip = match self.clip_norm {
            Some(max) => {
                let n = grads.global_norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            let m = self.first.entry(id).or_insert_with(|| Mat::zeros(g.rows, g.cols));
            match self.kind {
                OptimizerKind::Sgd { lr, momentum } => {
                    for ((w, mv), gv) in p.data.iter_mut().zip(m.data.iter_mut()).zip(&g.data) {
                        *mv = momentum * *mv + gv * clip;
                        *w -= lr * *mv;
                    }
                }
                OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                    let v = self.second.entry(id).or_insert_with(|| Mat::zeros(g.rows, g.cols));
                    let t = self.steps as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, mv), vv), gv) in p.data.iter_mut().zip(m.data.iter_mut()).zip(v.data.iter_mut()).zip(&g.data) {
                        let gc = gv * clip;
                        *mv = beta1 * *mv + (1.0 - beta1) * gc;
                        *vv = beta2 * *vv + (1.0 - beta2) * gc * gc;
                        *w -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
