//! The computation tape: eager forward evaluation that records enough to run
//! one reverse sweep. Values are flat f64 vectors; a length-1 vector is a
//! scalar. Matrices exist only as parameter leaves consumed by `matvec`.

use super::ParamSet;
use crate::error::{ArsqError, Result};

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Const,
    Param(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// vector minus a broadcast scalar node
    SubBroadcast(NodeId, NodeId),
    /// w is a `[rows, cols]` matrix node, x a `cols` vector
    MatVec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Tanh(NodeId),
    Silu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
    },
    Sum(NodeId),
    /// numerically stable log-sum-exp, scalar output
    LogSumExp(NodeId),
    Gather(NodeId, usize),
    /// copy of the vector with one entry removed
    ExcludeIndex(NodeId, usize),
    /// elementwise max(x, c)
    MaxConst(NodeId, f64),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records one forward computation; dropped and rebuilt per batch.
pub struct Tape {
    nodes: Vec<Node>,
    param_leaf: Vec<Option<NodeId>>,
}

impl Tape {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            param_leaf: vec![None; params.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Const)
    }

    /// Leaf bound to a parameter; created once per tape and cached.
    pub fn param(&mut self, params: &ParamSet, idx: usize) -> NodeId {
        if let Some(id) = self.param_leaf[idx] {
            return id;
        }
        let id = self.push(params.data(idx).to_vec(), Op::Param(idx));
        self.param_leaf[idx] = Some(id);
        id
    }

    fn check_same_len(&self, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.nodes[a].value.len(), self.nodes[b].value.len());
        if la != lb {
            return Err(ArsqError::ShapeMismatch(format!(
                "operand lengths differ: {la} vs {lb}"
            )));
        }
        Ok(la)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b)?;
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b)?;
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b)?;
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.iter().map(|x| c * x).collect();
        self.push(v, Op::Scale(a, c))
    }

    pub fn sub_broadcast(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        if self.nodes[s].value.len() != 1 {
            return Err(ArsqError::ShapeMismatch(
                "sub_broadcast expects a scalar second operand".into(),
            ));
        }
        let sv = self.nodes[s].value[0];
        let out = self.nodes[v].value.iter().map(|x| x - sv).collect();
        Ok(self.push(out, Op::SubBroadcast(v, s)))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        if self.nodes[w].value.len() != rows * cols {
            return Err(ArsqError::ShapeMismatch(format!(
                "matrix node has {} elements, expected {rows}x{cols}",
                self.nodes[w].value.len()
            )));
        }
        if self.nodes[x].value.len() != cols {
            return Err(ArsqError::ShapeMismatch(format!(
                "matvec input length {} != {cols}",
                self.nodes[x].value.len()
            )));
        }
        let mut out = vec![0.0; rows];
        {
            let wv = &self.nodes[w].value;
            let xv = &self.nodes[x].value;
            for (r, o) in out.iter_mut().enumerate() {
                let row = &wv[r * cols..(r + 1) * cols];
                *o = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(out, Op::MatVec { w, x, rows, cols }))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.iter().map(|&x| silu(x)).collect();
        self.push(v, Op::Silu(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId) -> Result<NodeId> {
        self.check_same_len(x, gain)?;
        self.check_same_len(x, shift)?;
        let v = {
            let xv = &self.nodes[x].value;
            let (mean, inv_std) = layer_norm_stats(xv);
            xv.iter()
                .zip(&self.nodes[gain].value)
                .zip(&self.nodes[shift].value)
                .map(|((&xi, &g), &s)| (xi - mean) * inv_std * g + s)
                .collect()
        };
        Ok(self.push(v, Op::LayerNorm { x, gain, shift }))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        let v = log_sum_exp(&self.nodes[a].value);
        self.push(vec![v], Op::LogSumExp(a))
    }

    pub fn gather(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        if idx >= self.nodes[a].value.len() {
            return Err(ArsqError::IndexOutOfRange {
                what: "gather index",
                got: idx,
                limit: self.nodes[a].value.len(),
            });
        }
        let v = self.nodes[a].value[idx];
        Ok(self.push(vec![v], Op::Gather(a, idx)))
    }

    pub fn exclude_index(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        let n = self.nodes[a].value.len();
        if idx >= n || n < 2 {
            return Err(ArsqError::IndexOutOfRange {
                what: "exclude index",
                got: idx,
                limit: n,
            });
        }
        let mut v = Vec::with_capacity(n - 1);
        for (i, &x) in self.nodes[a].value.iter().enumerate() {
            if i != idx {
                v.push(x);
            }
        }
        Ok(self.push(v, Op::ExcludeIndex(a, idx)))
    }

    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.iter().map(|x| x.max(c)).collect();
        self.push(v, Op::MaxConst(a, c))
    }

    /// Reverse sweep from a scalar loss; gradients are accumulated into the
    /// parameter set's grad buffers.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if self.nodes[loss].value.len() != 1 {
            return Err(ArsqError::NonScalarBackward(self.nodes[loss].value.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param(idx) => params.accumulate_grad(*idx, &g),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(gi, bv)| gi * bv)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(gi, av)| gi * av)
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::SubBroadcast(v, s) => {
                    accumulate(&mut grads, *v, &g);
                    let gs = -g.iter().sum::<f64>();
                    accumulate(&mut grads, *s, &[gs]);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let mut gw = vec![0.0; rows * cols];
                    let mut gx = vec![0.0; *cols];
                    for r in 0..*rows {
                        let gr = g[r];
                        let row = &wv[r * cols..(r + 1) * cols];
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            grow[c] = gr * xv[c];
                            gx[c] += gr * row[c];
                        }
                    }
                    accumulate(&mut grads, *w, &gw);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[id].value)
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Silu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(gi, &x)| {
                            let s = sigmoid(x);
                            gi * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::LayerNorm { x, gain, shift } => {
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gain].value;
                    let n = xv.len() as f64;
                    let (mean, inv_std) = layer_norm_stats(xv);
                    let xhat: Vec<f64> = xv.iter().map(|&xi| (xi - mean) * inv_std).collect();
                    let gshift = g.clone();
                    let ggain: Vec<f64> = g.iter().zip(&xhat).map(|(gi, xh)| gi * xh).collect();
                    let dxhat: Vec<f64> = g.iter().zip(gv).map(|(gi, gm)| gi * gm).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    let gx: Vec<f64> = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(d, xh)| inv_std * (d - mean_dxhat - xh * mean_dxhat_xhat))
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *gain, &ggain);
                    accumulate(&mut grads, *shift, &gshift);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.nodes[*a].value.len()];
                    accumulate(&mut grads, *a, &ga);
                }
                Op::LogSumExp(a) => {
                    let lse = self.nodes[id].value[0];
                    let ga: Vec<f64> = self.nodes[*a]
                        .value
                        .iter()
                        .map(|&x| g[0] * (x - lse).exp())
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Gather(a, idx) => {
                    let mut ga = vec![0.0; self.nodes[*a].value.len()];
                    ga[*idx] = g[0];
                    accumulate(&mut grads, *a, &ga);
                }
                Op::ExcludeIndex(a, idx) => {
                    let mut ga = vec![0.0; self.nodes[*a].value.len()];
                    let mut j = 0;
                    for (i, slot) in ga.iter_mut().enumerate() {
                        if i != *idx {
                            *slot = g[j];
                            j += 1;
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                }
                Op::MaxConst(a, c) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(gi, &x)| if x > *c { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id] {
        Some(buf) => {
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
        None => grads[id] = Some(g.to_vec()),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn layer_norm_stats(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&xi| (xi - mean) * (xi - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// Stable log-sum-exp of a slice (max subtraction).
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}
