//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Forward calls append nodes; `backward` walks the tape in reverse creation
//! order, which is a valid reverse topological order because every operand
//! precedes its consumers. Gradients flow only into parameter leaves; inputs
//! enter as constants and get none.

use super::params::{GradSet, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op {
    Const,
    Param(usize),
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Clamp(usize, f64, f64),
    MinElem(usize, usize),
    Mean(usize),
    Sum(usize),
    RowSoftmax(usize),
    RowLogSoftmax(usize),
    SelectCol(usize, usize),
    Reshape(usize),
    ConcatRows(Vec<usize>),
    SliceRow(usize, usize),
    Transpose(usize),
    Neg(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Tape<'s> {
        Tape {
            store,
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.constant(Tensor::scalar(v))
    }

    /// Loads a named parameter from the store as a differentiable leaf.
    pub fn param(&mut self, name: &str) -> ValueId {
        let idx = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.push(self.store.by_index(idx).clone(), Op::Param(idx))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a.0, b.0))
    }

    /// Adds a `1 x c` bias to every row of `a`.
    pub fn add_bias(&mut self, a: ValueId, bias: ValueId) -> ValueId {
        let (ar, ac) = self.value(a).shape();
        let b = self.value(bias);
        assert_eq!((1, ac), b.shape());
        let mut value = self.value(a).clone();
        for i in 0..ar {
            for j in 0..ac {
                *value.at_mut(i, j) += b.at(0, j);
            }
        }
        self.push(value, Op::AddBias(a.0, bias.0))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = Tensor::from_fn(self.value(a).rows, self.value(a).cols, |i, j| {
            self.value(a).at(i, j) - self.value(b).at(i, j)
        });
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = Tensor::from_fn(self.value(a).rows, self.value(a).cols, |i, j| {
            self.value(a).at(i, j) * self.value(b).at(i, j)
        });
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a.0, k))
    }

    pub fn neg(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|x| -x);
        self.push(value, Op::Neg(a.0))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a.0))
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: ValueId, lo: f64, hi: f64) -> ValueId {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a.0, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min_elem(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = Tensor::from_fn(self.value(a).rows, self.value(a).cols, |i, j| {
            self.value(a).at(i, j).min(self.value(b).at(i, j))
        });
        self.push(value, Op::MinElem(a.0, b.0))
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let t = self.value(a);
        let value = Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64);
        self.push(value, Op::Mean(a.0))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let value = Tensor::scalar(self.value(a).data.iter().sum::<f64>());
        self.push(value, Op::Sum(a.0))
    }

    /// Numerically stable softmax over each row.
    pub fn row_softmax(&mut self, a: ValueId) -> ValueId {
        let t = self.value(a);
        let mut value = t.clone();
        for i in 0..t.rows {
            let row = &mut value.data[i * t.cols..(i + 1) * t.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(value, Op::RowSoftmax(a.0))
    }

    /// Numerically stable log-softmax over each row.
    pub fn row_log_softmax(&mut self, a: ValueId) -> ValueId {
        let t = self.value(a);
        let mut value = t.clone();
        for i in 0..t.rows {
            let row = &mut value.data[i * t.cols..(i + 1) * t.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            for v in row.iter_mut() {
                *v -= log_z;
            }
        }
        self.push(value, Op::RowLogSoftmax(a.0))
    }

    /// Picks one entry of a single-row tensor as a 1x1 value.
    pub fn select_col(&mut self, a: ValueId, col: usize) -> ValueId {
        let t = self.value(a);
        assert_eq!(t.rows, 1);
        let value = Tensor::scalar(t.at(0, col));
        self.push(value, Op::SelectCol(a.0, col))
    }

    pub fn reshape(&mut self, a: ValueId, rows: usize, cols: usize) -> ValueId {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols);
        let value = Tensor::from_vec(rows, cols, t.data.clone());
        self.push(value, Op::Reshape(a.0))
    }

    /// Stacks same-width tensors on top of each other.
    pub fn concat_rows(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols);
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
        )
    }

    pub fn slice_row(&mut self, a: ValueId, row: usize) -> ValueId {
        let t = self.value(a);
        let value = Tensor::from_vec(1, t.cols, t.row(row).to_vec());
        self.push(value, Op::SliceRow(a.0, row))
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    /// Accumulates `d(root)/d(param)` for every parameter on the tape.
    /// `root` is seeded with ones, so a scalar root gives plain gradients.
    pub fn backward(&self, root: ValueId) -> GradSet {
        let mut flows: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        flows.resize_with(root.0 + 1, || None);
        {
            let r = &self.nodes[root.0].value;
            flows[root.0] = Some(Tensor::from_vec(r.rows, r.cols, vec![1.0; r.len()]));
        }
        let mut out = GradSet::empty(self.store);

        fn send(flows: &mut [Option<Tensor>], to: usize, grad: Tensor) {
            match &mut flows[to] {
                Some(g) => g.add_assign(&grad),
                slot => *slot = Some(grad),
            }
        }

        for id in (0..=root.0).rev() {
            let Some(g) = flows[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param(p) => out.accumulate(*p, &g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(&self.nodes[*b].value);
                    let db = self.nodes[*a].value.matmul_tn(&g);
                    send(&mut flows, *a, da);
                    send(&mut flows, *b, db);
                }
                Op::Add(a, b) => {
                    send(&mut flows, *a, g.clone());
                    send(&mut flows, *b, g);
                }
                Op::AddBias(a, bias) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            *db.at_mut(0, j) += g.at(i, j);
                        }
                    }
                    send(&mut flows, *a, g);
                    send(&mut flows, *bias, db);
                }
                Op::Sub(a, b) => {
                    send(&mut flows, *a, g.clone());
                    send(&mut flows, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let da = Tensor::from_fn(g.rows, g.cols, |i, j| g.at(i, j) * vb.at(i, j));
                    let db = Tensor::from_fn(g.rows, g.cols, |i, j| g.at(i, j) * va.at(i, j));
                    send(&mut flows, *a, da);
                    send(&mut flows, *b, db);
                }
                Op::Scale(a, k) => send(&mut flows, *a, g.map(|x| x * k)),
                Op::Neg(a) => send(&mut flows, *a, g.map(|x| -x)),
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let da = Tensor::from_fn(g.rows, g.cols, |i, j| if x.at(i, j) > 0.0 { g.at(i, j) } else { 0.0 });
                    send(&mut flows, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let da = Tensor::from_fn(g.rows, g.cols, |i, j| g.at(i, j) * (1.0 - y.at(i, j) * y.at(i, j)));
                    send(&mut flows, *a, da);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[id].value;
                    let da = Tensor::from_fn(g.rows, g.cols, |i, j| g.at(i, j) * y.at(i, j));
                    send(&mut flows, *a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &self.nodes[*a].value;
                    let da = Tensor::from_fn(g.rows, g.cols, |i, j| {
                        let v = x.at(i, j);
                        if v > *lo && v < *hi {
                            g.at(i, j)
                        } else {
                            0.0
                        }
                    });
                    send(&mut flows, *a, da);
                }
                Op::MinElem(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let da = Tensor::from_fn(g.rows, g.cols, |i, j| {
                        if va.at(i, j) <= vb.at(i, j) {
                            g.at(i, j)
                        } else {
                            0.0
                        }
                    });
                    let db = Tensor::from_fn(g.rows, g.cols, |i, j| {
                        if va.at(i, j) > vb.at(i, j) {
                            g.at(i, j)
                        } else {
                            0.0
                        }
                    });
                    send(&mut flows, *a, da);
                    send(&mut flows, *b, db);
                }
                Op::Mean(a) => {
                    let t = &self.nodes[*a].value;
                    let k = g.at(0, 0) / t.len() as f64;
                    send(&mut flows, *a, Tensor::from_vec(t.rows, t.cols, vec![k; t.len()]));
                }
                Op::Sum(a) => {
                    let t = &self.nodes[*a].value;
                    let k = g.at(0, 0);
                    send(&mut flows, *a, Tensor::from_vec(t.rows, t.cols, vec![k; t.len()]));
                }
                Op::RowSoftmax(a) => {
                    let p = &self.nodes[id].value;
                    let mut da = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let mut dot = 0.0;
                        for j in 0..g.cols {
                            dot += g.at(i, j) * p.at(i, j);
                        }
                        for j in 0..g.cols {
                            *da.at_mut(i, j) = p.at(i, j) * (g.at(i, j) - dot);
                        }
                    }
                    send(&mut flows, *a, da);
                }
                Op::RowLogSoftmax(a) => {
                    let logp = &self.nodes[id].value;
                    let mut da = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let gsum: f64 = (0..g.cols).map(|j| g.at(i, j)).sum();
                        for j in 0..g.cols {
                            *da.at_mut(i, j) = g.at(i, j) - logp.at(i, j).exp() * gsum;
                        }
                    }
                    send(&mut flows, *a, da);
                }
                Op::SelectCol(a, col) => {
                    let t = &self.nodes[*a].value;
                    let mut da = Tensor::zeros(t.rows, t.cols);
                    *da.at_mut(0, *col) = g.at(0, 0);
                    send(&mut flows, *a, da);
                }
                Op::Reshape(a) => {
                    let t = &self.nodes[*a].value;
                    send(&mut flows, *a, Tensor::from_vec(t.rows, t.cols, g.data.clone()));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = &self.nodes[p].value;
                        let slice = g.data[offset * g.cols..(offset + t.rows) * g.cols].to_vec();
                        send(&mut flows, p, Tensor::from_vec(t.rows, t.cols, slice));
                        offset += t.rows;
                    }
                }
                Op::SliceRow(a, row) => {
                    let t = &self.nodes[*a].value;
                    let mut da = Tensor::zeros(t.rows, t.cols);
                    for j in 0..t.cols {
                        *da.at_mut(*row, j) = g.at(0, j);
                    }
                    send(&mut flows, *a, da);
                }
                Op::Transpose(a) => send(&mut flows, *a, g.transpose()),
            }
        }
        out
    }
}
