//! Define-by-run tape. Nodes are appended in evaluation order, so a reverse
//! sweep over the node list is a valid reverse topological order.

use std::collections::HashMap;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor2};
use super::{add_row_bias, log_softmax_in_place, sigmoid};
use crate::error::{Result, SluError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Index of a trainable tensor in the caller's parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Row(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    LstmCell { gates: NodeId, cell: NodeId },
    LogSoftmaxRows(NodeId),
    Sum(NodeId),
    Loss { input: NodeId, grad: Tensor2 },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

/// Parameter gradients produced by one backward sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor2> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor2)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&mut self, id: ParamId) -> &mut Option<Tensor2> {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        &mut self.grads[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor2) {
        match self.slot(id) {
            Some(g) => g.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Sums `other` into `self` parameter by parameter.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            self.accumulate(id, g);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor2::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor2::all_finite)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node so the graph can be rebuilt for the next sequence.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// Registers a trainable tensor. Repeated calls with the same id return the
    /// same node, so every use shares one gradient accumulator.
    pub fn param(&mut self, id: ParamId, value: &Tensor2) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(value.clone(), Op::Param(id), true);
        self.params.insert(id, node);
        node
    }

    /// Registers `tensors` as parameters `ids`, or as constants when `ids` is `None`.
    pub fn params_or_constants<const N: usize>(
        &mut self,
        ids: Option<[ParamId; N]>,
        tensors: [&Tensor2; N],
    ) -> [NodeId; N] {
        match ids {
            Some(ids) => std::array::from_fn(|i| self.param(ids[i], tensors[i])),
            None => std::array::from_fn(|i| self.constant(tensors[i].clone())),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(SluError::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let mut out = Tensor2::zeros(sa.0, sb.1);
        matmul_acc(self.value(a), self.value(b), &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x C` bias to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.0 != 1 || sb.1 != sx.1 {
            return Err(SluError::Dimension {
                op: "add_bias",
                left: sx,
                right: sb,
            });
        }
        let mut out = self.value(x).clone();
        add_row_bias(&mut out, self.value(bias).data());
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// `x · W + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(SluError::Dimension {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale(factor);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn row(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if r >= s.0 {
            return Err(SluError::Dimension {
                op: "row",
                left: s,
                right: (r, 0),
            });
        }
        let out = Tensor2::row_vector(self.value(x).row(r));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Row(x, r), rg))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if start + width > s.1 {
            return Err(SluError::Dimension {
                op: "slice_cols",
                left: s,
                right: (start, width),
            });
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(s.0 * width);
        for row in src.row_iter() {
            data.extend_from_slice(&row[start..start + width]);
        }
        let out = Tensor2::from_vec(s.0, width, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut out = Tensor2::zeros(0, 0);
        for &p in parts {
            out.append_rows(self.value(p))?;
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(SluError::Dimension {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: self.shape(p),
                });
            }
            cols += self.shape(p).1;
        }
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Fused LSTM cell. `gates` is `R x 4H` laid out as
    /// `[input | forget | output | candidate]` pre-activations, `cell` is the
    /// previous `R x H` cell state. The result is `R x 2H` holding
    /// `[hidden | new cell]`.
    pub fn lstm_cell(&mut self, gates: NodeId, cell: NodeId) -> Result<NodeId> {
        let (sg, sc) = (self.shape(gates), self.shape(cell));
        if sg.1 != 4 * sc.1 || sg.0 != sc.0 {
            return Err(SluError::Dimension {
                op: "lstm_cell",
                left: sg,
                right: sc,
            });
        }
        let h = sc.1;
        let mut out = Tensor2::zeros(sg.0, 2 * h);
        for r in 0..sg.0 {
            lstm_cell_forward(
                self.value(gates).row(r),
                self.value(cell).row(r),
                out.row_mut(r),
            );
        }
        let rg = self.rg(&[gates, cell]);
        Ok(self.push(out, Op::LstmCell { gates, cell }, rg))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
            log_softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmaxRows(x), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor2::scalar(s), Op::Sum(x), rg)
    }

    /// Scalar node whose value and gradient with respect to `input` were
    /// computed outside the tape (fused losses such as CTC).
    pub fn loss_with_grad(&mut self, input: NodeId, value: f64, grad: Tensor2) -> Result<NodeId> {
        if grad.shape() != self.shape(input) {
            return Err(SluError::Dimension {
                op: "loss_with_grad",
                left: self.shape(input),
                right: grad.shape(),
            });
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor2::scalar(value), Op::Loss { input, grad }, rg))
    }

    /// Reverse sweep from a scalar node. A graph supports exactly one sweep;
    /// call [`Graph::reset`] and rebuild before differentiating again.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.backward_done {
            return Err(SluError::Contract(
                "backward called twice on the same graph without reset".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(SluError::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        let mut out = Gradients::default();

        fn slot<'a>(
            nodes: &[Node],
            grads: &'a mut [Option<Tensor2>],
            id: NodeId,
        ) -> Option<&'a mut Tensor2> {
            let node = &nodes[id.0];
            if !node.requires_grad {
                return None;
            }
            let (r, c) = node.value.shape();
            Some(grads[id.0].get_or_insert_with(|| Tensor2::zeros(r, c)))
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => out.accumulate(*pid, &g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = slot(nodes, &mut grads, *a) {
                        matmul_bt_acc(&g, vb, ga);
                    }
                    if let Some(gb) = slot(nodes, &mut grads, *b) {
                        matmul_at_acc(va, &g, gb);
                    }
                }
                Op::AddBias(x, b) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        gx.add_assign(&g);
                    }
                    if let Some(gb) = slot(nodes, &mut grads, *b) {
                        let gbd = gb.data_mut();
                        for row in g.row_iter() {
                            for (o, v) in gbd.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for id in [a, b] {
                        if let Some(gi) = slot(nodes, &mut grads, *id) {
                            gi.add_assign(&g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = slot(nodes, &mut grads, *a) {
                        for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                            *o += gv * bv;
                        }
                    }
                    if let Some(gb) = slot(nodes, &mut grads, *b) {
                        for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                            *o += gv * av;
                        }
                    }
                }
                Op::Scale(x, f) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        for (o, gv) in gx.data_mut().iter_mut().zip(g.data()) {
                            *o += gv * f;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        for ((o, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                            *o += gv * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        for ((o, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                            *o += gv * (1.0 - y * y);
                        }
                    }
                }
                Op::Row(x, r) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        for (o, gv) in gx.row_mut(*r).iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    }
                }
                Op::SliceCols(x, start) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        let w = g.cols();
                        for r in 0..g.rows() {
                            for (o, gv) in gx.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let rows = nodes[p.0].value.rows();
                        if let Some(gp) = slot(nodes, &mut grads, *p) {
                            for r in 0..rows {
                                for (o, gv) in gp.row_mut(r).iter_mut().zip(g.row(r0 + r)) {
                                    *o += gv;
                                }
                            }
                        }
                        r0 += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = nodes[p.0].value.cols();
                        if let Some(gp) = slot(nodes, &mut grads, *p) {
                            for r in 0..g.rows() {
                                for (o, gv) in gp.row_mut(r).iter_mut().zip(&g.row(r)[c0..c0 + cols]) {
                                    *o += gv;
                                }
                            }
                        }
                        c0 += cols;
                    }
                }
                Op::LstmCell { gates, cell } => {
                    let vg = &nodes[gates.0].value;
                    let vc = &nodes[cell.0].value;
                    let h = vc.cols();
                    let mut dg = Tensor2::zeros(vg.rows(), 4 * h);
                    let mut dc = Tensor2::zeros(vc.rows(), h);
                    for r in 0..vg.rows() {
                        lstm_cell_backward(
                            vg.row(r),
                            vc.row(r),
                            node.value.row(r),
                            g.row(r),
                            dg.row_mut(r),
                            dc.row_mut(r),
                        );
                    }
                    if let Some(gg) = slot(nodes, &mut grads, *gates) {
                        gg.add_assign(&dg);
                    }
                    if let Some(gc) = slot(nodes, &mut grads, *cell) {
                        gc.add_assign(&dc);
                    }
                }
                Op::LogSoftmaxRows(x) => {
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        for r in 0..g.rows() {
                            let gs: f64 = g.row(r).iter().sum();
                            let y = node.value.row(r);
                            for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y) {
                                *o += gv - yv.exp() * gs;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let gv = g.item();
                    if let Some(gx) = slot(nodes, &mut grads, *x) {
                        for o in gx.data_mut() {
                            *o += gv;
                        }
                    }
                }
                Op::Loss { input, grad } => {
                    let gv = g.item();
                    if let Some(gx) = slot(nodes, &mut grads, *input) {
                        for (o, lg) in gx.data_mut().iter_mut().zip(grad.data()) {
                            *o += gv * lg;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gate order `[input | forget | output | candidate]`; writes `[h | c]`.
pub(crate) fn lstm_cell_forward(gates: &[f64], c_prev: &[f64], out: &mut [f64]) {
    let h = c_prev.len();
    let (hid, cell) = out.split_at_mut(h);
    for j in 0..h {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[h + j]);
        let o = sigmoid(gates[2 * h + j]);
        let cand = gates[3 * h + j].tanh();
        let c = f * c_prev[j] + i * cand;
        cell[j] = c;
        hid[j] = o * c.tanh();
    }
}

fn lstm_cell_backward(
    gates: &[f64],
    c_prev: &[f64],
    out: &[f64],
    d_out: &[f64],
    d_gates: &mut [f64],
    d_cprev: &mut [f64],
) {
    let h = c_prev.len();
    for j in 0..h {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[h + j]);
        let o = sigmoid(gates[2 * h + j]);
        let cand = gates[3 * h + j].tanh();
        let c = out[h + j];
        let tc = c.tanh();
        let dh = d_out[j];
        let dc = d_out[h + j] + dh * o * (1.0 - tc * tc);
        d_gates[j] = dc * cand * i * (1.0 - i);
        d_gates[h + j] = dc * c_prev[j] * f * (1.0 - f);
        d_gates[2 * h + j] = dh * tc * o * (1.0 - o);
        d_gates[3 * h + j] = dc * i * (1.0 - cand * cand);
        d_cprev[j] = dc * f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
        Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn double_backward_is_a_contract_violation() {
        let mut g = Graph::new();
        let w = g.param(ParamId(0), &Tensor2::scalar(2.0));
        let s = g.mul(w, w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().item(), 4.0);
        assert!(matches!(g.backward(s), Err(SluError::Contract(_))));
        g.reset();
        let w = g.param(ParamId(0), &Tensor2::scalar(3.0));
        let s = g.mul(w, w).unwrap();
        assert_eq!(g.backward(s).unwrap().get(ParamId(0)).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::new();
        let w = g.param(ParamId(0), &Tensor2::zeros(2, 2));
        assert!(matches!(g.backward(w), Err(SluError::Contract(_))));
    }

    #[test]
    fn shared_parameter_accumulates_across_uses() {
        // f(w) = sum(x1 w) + sum(x2 w): gradient is the sum of both uses.
        let mut g = Graph::new();
        let w_val = Tensor2::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let w = g.param(ParamId(3), &w_val);
        let x1 = g.constant(Tensor2::row_vector(&[1.0, 0.5]));
        let x2 = g.constant(Tensor2::row_vector(&[-2.0, 4.0]));
        let a = g.matmul(x1, w).unwrap();
        let w_again = g.param(ParamId(3), &w_val);
        assert_eq!(w, w_again);
        let b = g.matmul(x2, w_again).unwrap();
        let s = g.add(a, b).unwrap();
        let s = g.sum(s);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads.get(ParamId(3)).unwrap().data(), &[-1.0, 4.5]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::row_vector(&[1.0, 2.0]));
        let t = g.tanh(x);
        let s = g.sum(t);
        assert!(!g.requires_grad(s));
        assert!(g.backward(s).unwrap().is_empty());
    }

    #[test]
    fn sum_of_squares_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = vec![random(&mut rng, 3, 4)];
        let report = grad_check(
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                Ok(g.sum(sq))
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn every_op_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let theta = vec![
                random(&mut rng, 3, 4),
                random(&mut rng, 4, 8),
                random(&mut rng, 1, 8),
                random(&mut rng, 3, 2),
                random(&mut rng, 3, 6),
            ];
            let report = grad_check(
                |g, p| {
                    let z = g.affine(p[0], p[1], p[2])?;
                    let cell = g.lstm_cell(z, p[3])?;
                    let h = g.slice_cols(cell, 0, 2)?;
                    let c = g.slice_cols(cell, 2, 2)?;
                    let hc = g.concat_cols(&[h, c, p[3]])?;
                    let s = g.sigmoid(hc);
                    let t = g.tanh(p[4]);
                    let m = g.mul(s, t)?;
                    let r0 = g.row(m, 0)?;
                    let r2 = g.row(m, 2)?;
                    let rows = g.concat_rows(&[m, r0, r2])?;
                    let ls = g.log_softmax_rows(rows);
                    let sc = g.scale(ls, 0.3);
                    let w = g.add(sc, rows)?;
                    let sq = g.mul(w, w)?;
                    Ok(g.sum(sq))
                },
                &theta,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "trial {trial}: {report:?}");
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random(&mut rng, 4, 5), random(&mut rng, 5, 3));
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(a.clone());
            let w = g.param(ParamId(0), &b);
            let y = g.matmul(x, w).unwrap();
            let y = g.log_softmax_rows(y);
            g.value(y).clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
