use std::sync::atomic::{AtomicU64, Ordering};

use super::ops;
use super::{ComputeError, Gradients, ParamId, ParamStore, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Reference to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Constant,
    Row { src: usize, row: usize },
    GatherMean { src: usize, rows: Vec<usize> },
    MeanRows(Vec<usize>),
    Cosine(usize, usize),
    Softmax(usize),
    Linear { w: usize, x: usize, b: usize },
    Concat(Vec<usize>),
    Add(usize, usize),
    Mul(usize, usize),
    Sum(usize),
    WeightedSum { weights: usize, rows: Vec<usize> },
    SegmentSum { x: usize, segments: Vec<usize> },
    CrossEntropy { probs: usize, target: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records a forward computation over parameters of a [`ParamStore`] so that
/// [`Tape::backward`] can replay it in reverse.
///
/// Parameters are read in place from the store; their gradients accumulate
/// into a [`Gradients`] buffer. A tape is single-use and single-owner.
#[derive(Debug)]
pub struct Tape<'p> {
    id: u64,
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, ComputeError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(ComputeError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn node_value(&self, idx: usize) -> &Tensor {
        match self.nodes[idx].op {
            Op::Param(p) => self.store.get(p),
            _ => &self.nodes[idx].value,
        }
    }

    fn grad_flag(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Current value of a recorded variable.
    pub fn value(&self, v: Var) -> &Tensor {
        self.node_value(v.idx)
    }

    /// Leaf for a stored parameter. Repeated calls return the same leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_nodes[id.0] {
            return Var { tape: self.id, idx };
        }
        let v = self.push(Op::Param(id), Tensor::zeros(&[0]), true);
        self.param_nodes[id.0] = Some(v.idx);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Row `row` of a matrix as a vector.
    pub fn row(&mut self, src: Var, row: usize) -> Result<Var, ComputeError> {
        let s = self.idx(src)?;
        let m = self.node_value(s);
        if !m.is_matrix() || row >= m.rows() {
            return Err(ComputeError::ShapeMismatch {
                op: "row",
                expected: format!("matrix with more than {row} rows"),
                got: format!("{:?}", m.shape()),
            });
        }
        let value = Tensor::vector(m.row(row).to_vec());
        let rg = self.grad_flag(&[s]);
        Ok(self.push(Op::Row { src: s, row }, value, rg))
    }

    /// Mean of the given rows of a matrix; same result as `row` followed by
    /// `mean_rows`, recorded as one node.
    pub fn gather_mean(&mut self, src: Var, rows: &[usize]) -> Result<Var, ComputeError> {
        let s = self.idx(src)?;
        let m = self.node_value(s);
        if !m.is_matrix() {
            return Err(ComputeError::ShapeMismatch {
                op: "gather_mean",
                expected: "matrix".into(),
                got: format!("{:?}", m.shape()),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m.rows()) {
            return Err(ComputeError::ShapeMismatch {
                op: "gather_mean",
                expected: format!("row index < {}", m.rows()),
                got: bad.to_string(),
            });
        }
        let slices: Vec<&[f64]> = rows.iter().map(|&r| m.row(r)).collect();
        let value = Tensor::vector(ops::mean_rows(&slices)?);
        let rg = self.grad_flag(&[s]);
        Ok(self.push(
            Op::GatherMean {
                src: s,
                rows: rows.to_vec(),
            },
            value,
            rg,
        ))
    }

    pub fn mean_rows(&mut self, rows: &[Var]) -> Result<Var, ComputeError> {
        let idxs = rows
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>, _>>()?;
        let slices: Vec<&[f64]> = idxs.iter().map(|&i| self.node_value(i).data()).collect();
        let value = Tensor::vector(ops::mean_rows(&slices)?);
        let rg = self.grad_flag(&idxs);
        Ok(self.push(Op::MeanRows(idxs), value, rg))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let c = ops::cosine(self.node_value(ia).data(), self.node_value(ib).data())?;
        let rg = self.grad_flag(&[ia, ib]);
        Ok(self.push(Op::Cosine(ia, ib), Tensor::scalar(c), rg))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, ComputeError> {
        let ix = self.idx(x)?;
        let value = Tensor::vector(ops::softmax(self.node_value(ix).data())?);
        let rg = self.grad_flag(&[ix]);
        Ok(self.push(Op::Softmax(ix), value, rg))
    }

    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var, ComputeError> {
        let (iw, ix, ib) = (self.idx(w)?, self.idx(x)?, self.idx(b)?);
        let value = ops::linear(
            self.node_value(iw),
            self.node_value(ix).data(),
            self.node_value(ib).data(),
        )?;
        let rg = self.grad_flag(&[iw, ix, ib]);
        Ok(self.push(
            Op::Linear {
                w: iw,
                x: ix,
                b: ib,
            },
            Tensor::vector(value),
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, ComputeError> {
        let idxs = parts
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>, _>>()?;
        let slices: Vec<&[f64]> = idxs.iter().map(|&i| self.node_value(i).data()).collect();
        let value = Tensor::vector(ops::concat(&slices));
        let rg = self.grad_flag(&idxs);
        Ok(self.push(Op::Concat(idxs), value, rg))
    }

    fn same_len(&self, op: &'static str, a: usize, b: usize) -> Result<(), ComputeError> {
        let (la, lb) = (self.node_value(a).len(), self.node_value(b).len());
        if la != lb {
            return Err(ComputeError::ShapeMismatch {
                op,
                expected: format!("length {la}"),
                got: format!("length {lb}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_len("add", ia, ib)?;
        let value: Vec<f64> = self
            .node_value(ia)
            .data()
            .iter()
            .zip(self.node_value(ib).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.node_value(ia).shape().to_vec();
        let rg = self.grad_flag(&[ia, ib]);
        Ok(self.push(Op::Add(ia, ib), Tensor::new(shape, value)?, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_len("mul", ia, ib)?;
        let value: Vec<f64> = self
            .node_value(ia)
            .data()
            .iter()
            .zip(self.node_value(ib).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.node_value(ia).shape().to_vec();
        let rg = self.grad_flag(&[ia, ib]);
        Ok(self.push(Op::Mul(ia, ib), Tensor::new(shape, value)?, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, ComputeError> {
        let ix = self.idx(x)?;
        let s = self.node_value(ix).data().iter().sum();
        let rg = self.grad_flag(&[ix]);
        Ok(self.push(Op::Sum(ix), Tensor::scalar(s), rg))
    }

    /// `Σ_j weights[j] · rows[j]`.
    pub fn weighted_sum(&mut self, weights: Var, rows: &[Var]) -> Result<Var, ComputeError> {
        let iw = self.idx(weights)?;
        let idxs = rows
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>, _>>()?;
        let w = self.node_value(iw).data();
        if w.len() != idxs.len() || idxs.is_empty() {
            return Err(ComputeError::ShapeMismatch {
                op: "weighted_sum",
                expected: format!("{} weights", idxs.len()),
                got: format!("{} weights", w.len()),
            });
        }
        let d = self.node_value(idxs[0]).len();
        let mut out = vec![0.0; d];
        for (&wj, &r) in w.iter().zip(&idxs) {
            let row = self.node_value(r).data();
            if row.len() != d {
                return Err(ComputeError::ShapeMismatch {
                    op: "weighted_sum",
                    expected: format!("rows of length {d}"),
                    got: format!("row of length {}", row.len()),
                });
            }
            for (o, v) in out.iter_mut().zip(row) {
                *o += wj * v;
            }
        }
        let mut all = idxs.clone();
        all.push(iw);
        let rg = self.grad_flag(&all);
        Ok(self.push(
            Op::WeightedSum {
                weights: iw,
                rows: idxs,
            },
            Tensor::vector(out),
            rg,
        ))
    }

    /// Sums entries of `x` into `num_segments` buckets; `segments[j]` names
    /// the bucket of `x[j]`. Empty buckets are 0.
    pub fn segment_sum(
        &mut self,
        x: Var,
        segments: &[usize],
        num_segments: usize,
    ) -> Result<Var, ComputeError> {
        let ix = self.idx(x)?;
        let xv = self.node_value(ix).data();
        if xv.len() != segments.len() || segments.iter().any(|&s| s >= num_segments) {
            return Err(ComputeError::ShapeMismatch {
                op: "segment_sum",
                expected: format!("{} segment ids below {num_segments}", xv.len()),
                got: format!("{segments:?}"),
            });
        }
        let mut out = vec![0.0; num_segments];
        for (&s, v) in segments.iter().zip(xv) {
            out[s] += v;
        }
        let rg = self.grad_flag(&[ix]);
        Ok(self.push(
            Op::SegmentSum {
                x: ix,
                segments: segments.to_vec(),
            },
            Tensor::vector(out),
            rg,
        ))
    }

    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var, ComputeError> {
        let ip = self.idx(probs)?;
        let loss = ops::cross_entropy(self.node_value(ip).data(), target)?;
        let rg = self.grad_flag(&[ip]);
        Ok(self.push(
            Op::CrossEntropy { probs: ip, target },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// parameter of the store. Unused parameters get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, ComputeError> {
        let mut grads = Gradients::zeros_like(self.store);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into an existing buffer.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<(), ComputeError> {
        let l = self.idx(loss)?;
        if self.nodes[l].value.len() != 1 {
            return Err(ComputeError::NotScalar(
                self.nodes[l].value.shape().to_vec(),
            ));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        node_grads[l] = Some(vec![1.0]);

        for i in (0..=l).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let out = &self.nodes[i].value;
            match &self.nodes[i].op {
                Op::Param(p) => {
                    for (t, v) in grads.get_mut(*p).data_mut().iter_mut().zip(&g) {
                        *t += v;
                    }
                }
                Op::Constant => {}
                Op::Row { src, row } => {
                    let cols = self.node_value(*src).cols();
                    if let Some(slot) = self.slot(&mut node_grads, grads, *src) {
                        for (t, v) in slot[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                            *t += v;
                        }
                    }
                }
                Op::GatherMean { src, rows } => {
                    let cols = self.node_value(*src).cols();
                    let scale = 1.0 / rows.len() as f64;
                    if let Some(slot) = self.slot(&mut node_grads, grads, *src) {
                        for &r in rows {
                            for (t, v) in slot[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                                *t += v * scale;
                            }
                        }
                    }
                }
                Op::MeanRows(rows) => {
                    let scale = 1.0 / rows.len() as f64;
                    for &r in rows {
                        if let Some(slot) = self.slot(&mut node_grads, grads, r) {
                            for (t, v) in slot.iter_mut().zip(&g) {
                                *t += v * scale;
                            }
                        }
                    }
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (self.node_value(*a).data(), self.node_value(*b).data());
                    let (na, nb) = (ops::norm(av), ops::norm(bv));
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let c = ops::dot(av, bv) / (na * nb);
                    let gs = g[0];
                    let da: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| gs * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    let db: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| gs * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    if let Some(slot) = self.slot(&mut node_grads, grads, *a) {
                        slot.iter_mut().zip(&da).for_each(|(t, v)| *t += v);
                    }
                    if let Some(slot) = self.slot(&mut node_grads, grads, *b) {
                        slot.iter_mut().zip(&db).for_each(|(t, v)| *t += v);
                    }
                }
                Op::Softmax(x) => {
                    let y = out.data();
                    let inner = ops::dot(&g, y);
                    if let Some(slot) = self.slot(&mut node_grads, grads, *x) {
                        for ((t, yi), gi) in slot.iter_mut().zip(y).zip(&g) {
                            *t += yi * (gi - inner);
                        }
                    }
                }
                Op::Linear { w, x, b } => {
                    let wv = self.node_value(*w);
                    let xv = self.node_value(*x).data();
                    let cols = wv.cols();
                    if self.nodes[*x].requires_grad {
                        let mut dx = vec![0.0; cols];
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (d, wrc) in dx.iter_mut().zip(wv.row(r)) {
                                *d += gr * wrc;
                            }
                        }
                        if let Some(slot) = self.slot(&mut node_grads, grads, *x) {
                            slot.iter_mut().zip(&dx).for_each(|(t, v)| *t += v);
                        }
                    }
                    if let Some(slot) = self.slot(&mut node_grads, grads, *w) {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (t, xc) in slot[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *t += gr * xc;
                            }
                        }
                    }
                    if let Some(slot) = self.slot(&mut node_grads, grads, *b) {
                        slot.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.node_value(p).len();
                        if let Some(slot) = self.slot(&mut node_grads, grads, p) {
                            for (t, v) in slot.iter_mut().zip(&g[offset..offset + n]) {
                                *t += v;
                            }
                        }
                        offset += n;
                    }
                }
                Op::Add(a, b) => {
                    for &inp in [a, b] {
                        if let Some(slot) = self.slot(&mut node_grads, grads, inp) {
                            slot.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.node_value(*a).data().to_vec();
                    let bv = self.node_value(*b).data().to_vec();
                    if let Some(slot) = self.slot(&mut node_grads, grads, *a) {
                        for ((t, gi), y) in slot.iter_mut().zip(&g).zip(&bv) {
                            *t += gi * y;
                        }
                    }
                    if let Some(slot) = self.slot(&mut node_grads, grads, *b) {
                        for ((t, gi), x) in slot.iter_mut().zip(&g).zip(&av) {
                            *t += gi * x;
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(slot) = self.slot(&mut node_grads, grads, *x) {
                        slot.iter_mut().for_each(|t| *t += g[0]);
                    }
                }
                Op::WeightedSum { weights, rows } => {
                    let wv = self.node_value(*weights).data();
                    if self.nodes[*weights].requires_grad {
                        let dw: Vec<f64> = rows
                            .iter()
                            .map(|&r| ops::dot(&g, self.node_value(r).data()))
                            .collect();
                        if let Some(slot) = self.slot(&mut node_grads, grads, *weights) {
                            slot.iter_mut().zip(&dw).for_each(|(t, v)| *t += v);
                        }
                    }
                    for (&r, wj) in rows.iter().zip(wv) {
                        if let Some(slot) = self.slot(&mut node_grads, grads, r) {
                            slot.iter_mut().zip(&g).for_each(|(t, v)| *t += wj * v);
                        }
                    }
                }
                Op::SegmentSum { x, segments } => {
                    if let Some(slot) = self.slot(&mut node_grads, grads, *x) {
                        for (t, &s) in slot.iter_mut().zip(segments) {
                            *t += g[s];
                        }
                    }
                }
                Op::CrossEntropy { probs, target } => {
                    let p = self.node_value(*probs).data()[*target];
                    if p > ops::PROB_FLOOR {
                        if let Some(slot) = self.slot(&mut node_grads, grads, *probs) {
                            slot[*target] += -g[0] / p;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulator for node `idx`: the parameter buffer for leaves,
    /// a lazily zeroed per-node buffer otherwise.
    fn slot<'a>(
        &self,
        node_grads: &'a mut [Option<Vec<f64>>],
        grads: &'a mut Gradients,
        idx: usize,
    ) -> Option<&'a mut [f64]> {
        if !self.nodes[idx].requires_grad {
            return None;
        }
        match self.nodes[idx].op {
            Op::Param(p) => Some(grads.get_mut(p).data_mut()),
            _ => {
                let n = self.nodes[idx].value.len();
                Some(
                    node_grads[idx]
                        .get_or_insert_with(|| vec![0.0; n])
                        .as_mut_slice(),
                )
            }
        }
    }
}
