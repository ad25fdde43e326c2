//! Reverse-mode autodiff over an eagerly evaluated expression graph.
//!
//! Values are `f64` matrices (rows = batch). A graph is built per update
//! step: register the networks that participate, mark which are trainable,
//! compose the loss out of the primitive ops below, then call [`Graph::gradients`]
//! on the scalar loss node. Nodes are created in topological order, so the
//! backward sweep is a single reverse pass over the node arena.
//!
//! Frozen networks (targets, behavior and reference policies) are registered
//! with `trainable = false`; their parameter leaves never request gradients,
//! which makes "no gradient flows into targets" a structural property rather
//! than a runtime convention. [`GradientTable::net`] returns `None` for them.

use ndarray::{concatenate, Array1, Array2, Axis};

use super::{layer_norm_rows, MlpGrads, MlpParams, NumericsError, OutputActivation, LN_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetId(usize);

#[derive(Debug, Clone, Copy)]
enum ParamKind {
    Weight,
    Bias,
    LnGain,
    LnBias,
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding a constant (inputs, dataset actions, TD targets, ...).
    Const,
    /// Leaf holding one parameter tensor of a registered network.
    Param { net: usize, layer: usize, kind: ParamKind },
    /// `x @ w + b` with `b` broadcast over rows.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    /// Row-wise layer norm with learned gain and offset.
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    /// `k * x` for a compile-time constant `k`.
    Scale { x: NodeId, k: f64 },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Elementwise minimum; ties route the gradient to the first operand.
    Min { a: NodeId, b: NodeId },
    Square { x: NodeId },
    /// Sum of every element, yielding a 1x1 matrix.
    SumAll { x: NodeId },
    /// Column-wise concatenation (e.g. building the critic's state-action input).
    Concat { a: NodeId, b: NodeId },
}

struct Node {
    op: Op,
    value: Array2<f64>,
    requires_grad: bool,
}

struct RegisteredNet {
    trainable: bool,
    layer_norm: bool,
    output: OutputActivation,
    n_layers: usize,
    input_dim: usize,
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    ln_gains: Vec<NodeId>,
    ln_biases: Vec<NodeId>,
    shapes: MlpGrads,
}

/// Gradients per registered network, in registration order.
pub struct GradientTable {
    per_net: Vec<Option<MlpGrads>>,
}

impl GradientTable {
    /// Gradients for `net`; `None` when it was registered frozen.
    pub fn net(&self, net: NetId) -> Option<&MlpGrads> {
        self.per_net[net.0].as_ref()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    nets: Vec<RegisteredNet>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Value computed for a node (eager, so always available).
    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Whether gradients can structurally reach `id`.
    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.rg(id)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Const, value, false)
    }

    /// Clone `params` into the graph as parameter leaves.
    pub fn register(&mut self, params: &MlpParams, trainable: bool) -> NetId {
        let net_idx = self.nets.len();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let wid = self.push(
                Op::Param { net: net_idx, layer: l, kind: ParamKind::Weight },
                w.clone(),
                trainable,
            );
            let brow = b.view().insert_axis(Axis(0)).to_owned();
            let bid = self.push(
                Op::Param { net: net_idx, layer: l, kind: ParamKind::Bias },
                brow,
                trainable,
            );
            weights.push(wid);
            biases.push(bid);
        }
        let mut ln_gains = Vec::new();
        let mut ln_biases = Vec::new();
        for (l, (g, b)) in params.ln_gains.iter().zip(&params.ln_biases).enumerate() {
            let gid = self.push(
                Op::Param { net: net_idx, layer: l, kind: ParamKind::LnGain },
                g.view().insert_axis(Axis(0)).to_owned(),
                trainable,
            );
            let bid = self.push(
                Op::Param { net: net_idx, layer: l, kind: ParamKind::LnBias },
                b.view().insert_axis(Axis(0)).to_owned(),
                trainable,
            );
            ln_gains.push(gid);
            ln_biases.push(bid);
        }
        self.nets.push(RegisteredNet {
            trainable,
            layer_norm: params.layer_norm,
            output: params.output,
            n_layers: params.n_layers(),
            input_dim: params.input_dim(),
            weights,
            biases,
            ln_gains,
            ln_biases,
            shapes: MlpGrads::zeros_like(params),
        });
        NetId(net_idx)
    }

    /// Emit the forward computation of a registered network applied to `x`.
    pub fn apply(&mut self, net: NetId, x: NodeId) -> Result<NodeId, NumericsError> {
        let (input_dim, n_layers, layer_norm, output) = {
            let n = &self.nets[net.0];
            (n.input_dim, n.n_layers, n.layer_norm, n.output)
        };
        if self.nodes[x.0].value.ncols() != input_dim {
            return Err(NumericsError::DimensionMismatch {
                context: "graph apply: input columns",
                expected: input_dim,
                got: self.nodes[x.0].value.ncols(),
            });
        }
        let mut h = x;
        for l in 0..n_layers {
            let (w, b) = (self.nets[net.0].weights[l], self.nets[net.0].biases[l]);
            h = self.affine(h, w, b);
            if l + 1 < n_layers {
                if layer_norm {
                    let (g, lb) = (self.nets[net.0].ln_gains[l], self.nets[net.0].ln_biases[l]);
                    h = self.layer_norm(h, g, lb);
                }
                h = self.relu(h);
            } else if let OutputActivation::TanhScaled { action_scale } = output {
                h = self.tanh(h);
                h = self.scale(h, action_scale);
            }
        }
        Ok(h)
    }

    fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let mut value = self.nodes[x.0].value.dot(&self.nodes[w.0].value);
        value += &self.nodes[b.0].value.row(0);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Op::Affine { x, w, b }, value, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        let rg = self.rg(x);
        self.push(Op::Tanh { x }, value, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(Op::Relu { x }, value, rg)
    }

    fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let mut value = self.nodes[x.0].value.clone();
        let g = self.nodes[gain.0].value.row(0).to_owned();
        let b = self.nodes[bias.0].value.row(0).to_owned();
        layer_norm_rows(&mut value, &g, &b);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(Op::LayerNorm { x, gain, bias }, value, rg)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| k * v);
        let rg = self.rg(x);
        self.push(Op::Scale { x, k }, value, rg)
    }

    fn binary_shape_check(&self, a: NodeId, b: NodeId, context: &'static str) -> Result<(), NumericsError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.dim() != vb.dim() {
            return Err(NumericsError::DimensionMismatch {
                context,
                expected: va.len(),
                got: vb.len(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.binary_shape_check(a, b, "graph add")?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.binary_shape_check(a, b, "graph sub")?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub { a, b }, value, rg))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.binary_shape_check(a, b, "graph min")?;
        let mut value = self.nodes[a.0].value.clone();
        value.zip_mut_with(&self.nodes[b.0].value, |x, &y| *x = x.min(y));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Min { a, b }, value, rg))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v * v);
        let rg = self.rg(x);
        self.push(Op::Square { x }, value, rg)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.sum();
        let rg = self.rg(x);
        self.push(Op::SumAll { x }, Array2::from_elem((1, 1), s), rg)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.nrows() != vb.nrows() {
            return Err(NumericsError::DimensionMismatch {
                context: "graph concat: rows",
                expected: va.nrows(),
                got: vb.nrows(),
            });
        }
        let value = concatenate(Axis(1), &[va.view(), vb.view()]).expect("concat shapes verified");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Concat { a, b }, value, rg))
    }

    /// Reverse sweep from a scalar loss. Returns per-network gradients for
    /// the trainable networks.
    pub fn gradients(&self, loss: NodeId) -> Result<GradientTable, NumericsError> {
        let lv = &self.nodes[loss.0].value;
        if lv.dim() != (1, 1) {
            return Err(NumericsError::NonScalarLoss { rows: lv.nrows(), cols: lv.ncols() });
        }
        let mut adjoint: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoint[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        // Helper to accumulate into an operand's adjoint.
        fn acc(adjoint: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
            match &mut adjoint[id.0] {
                Some(a) => *a += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dy) = adjoint[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Const | Op::Param { .. } => {
                    // Leaves keep their adjoint for extraction below.
                    adjoint[idx] = Some(dy);
                }
                &Op::Affine { x, w, b } => {
                    if self.rg(x) {
                        let dx = dy.dot(&self.nodes[w.0].value.t());
                        acc(&mut adjoint, x, dx);
                    }
                    if self.rg(w) {
                        let dw = self.nodes[x.0].value.t().dot(&dy);
                        acc(&mut adjoint, w, dw);
                    }
                    if self.rg(b) {
                        let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut adjoint, b, db);
                    }
                }
                &Op::Tanh { x } => {
                    if self.rg(x) {
                        let y = &self.nodes[idx].value;
                        let dx = &dy * &y.mapv(|v| 1.0 - v * v);
                        acc(&mut adjoint, x, dx);
                    }
                }
                &Op::Relu { x } => {
                    if self.rg(x) {
                        let mut dx = dy.clone();
                        dx.zip_mut_with(&self.nodes[x.0].value, |d, &v| {
                            if v <= 0.0 {
                                *d = 0.0;
                            }
                        });
                        acc(&mut adjoint, x, dx);
                    }
                }
                &Op::LayerNorm { x, gain, bias } => {
                    let xv = &self.nodes[x.0].value;
                    let g = self.nodes[gain.0].value.row(0);
                    let d = xv.ncols() as f64;
                    // Recompute per-row statistics (cheap relative to matmuls).
                    let mut dx = Array2::zeros(xv.dim());
                    let mut dgain = Array2::zeros((1, xv.ncols()));
                    let mut dbias = Array2::zeros((1, xv.ncols()));
                    for r in 0..xv.nrows() {
                        let row = xv.row(r);
                        let mean = row.sum() / d;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Array1<f64> = row.mapv(|v| (v - mean) * inv);
                        let dyr = dy.row(r);
                        if self.rg(gain) {
                            for j in 0..xv.ncols() {
                                dgain[[0, j]] += dyr[j] * xhat[j];
                            }
                        }
                        if self.rg(bias) {
                            for j in 0..xv.ncols() {
                                dbias[[0, j]] += dyr[j];
                            }
                        }
                        if self.rg(x) {
                            let dxhat: Array1<f64> =
                                Array1::from_shape_fn(xv.ncols(), |j| dyr[j] * g[j]);
                            let m1 = dxhat.sum() / d;
                            let m2 = dxhat
                                .iter()
                                .zip(xhat.iter())
                                .map(|(&a, &b)| a * b)
                                .sum::<f64>()
                                / d;
                            for j in 0..xv.ncols() {
                                dx[[r, j]] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                            }
                        }
                    }
                    if self.rg(x) {
                        acc(&mut adjoint, x, dx);
                    }
                    if self.rg(gain) {
                        acc(&mut adjoint, gain, dgain);
                    }
                    if self.rg(bias) {
                        acc(&mut adjoint, bias, dbias);
                    }
                }
                &Op::Scale { x, k } => {
                    if self.rg(x) {
                        acc(&mut adjoint, x, dy.mapv(|v| k * v));
                    }
                }
                &Op::Add { a, b } => {
                    if self.rg(a) {
                        acc(&mut adjoint, a, dy.clone());
                    }
                    if self.rg(b) {
                        acc(&mut adjoint, b, dy);
                    }
                }
                &Op::Sub { a, b } => {
                    if self.rg(a) {
                        acc(&mut adjoint, a, dy.clone());
                    }
                    if self.rg(b) {
                        acc(&mut adjoint, b, dy.mapv(|v| -v));
                    }
                }
                &Op::Min { a, b } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.rg(a) {
                        let mut da = dy.clone();
                        for ((dv, &x), &y) in da.iter_mut().zip(va.iter()).zip(vb.iter()) {
                            if x > y {
                                *dv = 0.0;
                            }
                        }
                        acc(&mut adjoint, a, da);
                    }
                    if self.rg(b) {
                        let mut db = dy;
                        for ((dv, &x), &y) in db.iter_mut().zip(va.iter()).zip(vb.iter()) {
                            if x <= y {
                                *dv = 0.0;
                            }
                        }
                        acc(&mut adjoint, b, db);
                    }
                }
                &Op::Square { x } => {
                    if self.rg(x) {
                        let dx = &dy * &self.nodes[x.0].value.mapv(|v| 2.0 * v);
                        acc(&mut adjoint, x, dx);
                    }
                }
                &Op::SumAll { x } => {
                    if self.rg(x) {
                        let g = dy[[0, 0]];
                        let shape = self.nodes[x.0].value.dim();
                        acc(&mut adjoint, x, Array2::from_elem(shape, g));
                    }
                }
                &Op::Concat { a, b } => {
                    let na = self.nodes[a.0].value.ncols();
                    if self.rg(a) {
                        let da = dy.slice(ndarray::s![.., ..na]).to_owned();
                        acc(&mut adjoint, a, da);
                    }
                    if self.rg(b) {
                        let db = dy.slice(ndarray::s![.., na..]).to_owned();
                        acc(&mut adjoint, b, db);
                    }
                }
            }
        }

        // Collect parameter adjoints per trainable net.
        let mut per_net: Vec<Option<MlpGrads>> = self
            .nets
            .iter()
            .map(|n| n.trainable.then(|| n.shapes.clone()))
            .collect();
        for (k, net) in self.nets.iter().enumerate() {
            if !net.trainable {
                continue;
            }
            let grads = per_net[k].as_mut().unwrap();
            for (l, &wid) in net.weights.iter().enumerate() {
                if let Some(a) = &adjoint[wid.0] {
                    grads.weights[l].assign(a);
                }
            }
            for (l, &bid) in net.biases.iter().enumerate() {
                if let Some(a) = &adjoint[bid.0] {
                    grads.biases[l].assign(&a.row(0));
                }
            }
            for (l, &gid) in net.ln_gains.iter().enumerate() {
                if let Some(a) = &adjoint[gid.0] {
                    grads.ln_gains[l].assign(&a.row(0));
                }
            }
            for (l, &bid) in net.ln_biases.iter().enumerate() {
                if let Some(a) = &adjoint[bid.0] {
                    grads.ln_biases[l].assign(&a.row(0));
                }
            }
        }
        Ok(GradientTable { per_net })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_rel_err};
    use crate::rng::{streams, Stream};

    fn net(
        sizes: &[usize],
        output: OutputActivation,
        layer_norm: bool,
        seed: u64,
    ) -> MlpParams {
        let mut s = Stream::derive(seed, streams::INIT);
        MlpParams::init(sizes, output, layer_norm, &mut s).unwrap()
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut s = Stream::derive(seed, streams::DATA_RESET);
        Array2::from_shape_fn((rows, cols), |_| s.uniform_in(-1.5, 1.5))
    }

    #[test]
    fn graph_forward_matches_plain_forward_bitwise() {
        for &layer_norm in &[false, true] {
            let p = net(
                &[4, 6, 5, 2],
                OutputActivation::TanhScaled { action_scale: 1.0 },
                layer_norm,
                7,
            );
            let x = rand_matrix(9, 4, 3);
            let plain = p.forward_batch(&x).unwrap();
            let mut g = Graph::new();
            let nid = g.register(&p, false);
            let xid = g.constant(x);
            let out = g.apply(nid, xid).unwrap();
            assert_eq!(g.value(out), &plain);
        }
    }

    /// Canonical-value check: a fixed 1-layer net on a fixed input, computed
    /// by hand. W = [[1, -2], [0.5, 0]], b = [0.25, -1], x = [2, -4].
    /// y = x@W + b = [2*1 - 4*0.5 + 0.25, 2*(-2) - 0 - 1] = [0.25, -5].
    #[test]
    fn affine_matches_hand_computation() {
        let p = MlpParams {
            layer_sizes: vec![2, 2],
            weights: vec![Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 0.5, 0.0]).unwrap()],
            biases: vec![Array1::from_vec(vec![0.25, -1.0])],
            ln_gains: vec![],
            ln_biases: vec![],
            layer_norm: false,
            output: OutputActivation::Identity,
        };
        let y = p.forward(&Array1::from_vec(vec![2.0, -4.0])).unwrap();
        assert_eq!(y[0], 0.25);
        assert_eq!(y[1], -5.0);
    }

    #[test]
    fn gradients_require_scalar_loss() {
        let p = net(&[3, 4, 2], OutputActivation::Identity, false, 1);
        let mut g = Graph::new();
        let nid = g.register(&p, true);
        let x = g.constant(rand_matrix(5, 3, 2));
        let y = g.apply(nid, x).unwrap();
        assert!(matches!(
            g.gradients(y),
            Err(NumericsError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn frozen_net_gets_no_gradients() {
        let policy = net(&[3, 8, 2], OutputActivation::TanhScaled { action_scale: 1.0 }, false, 1);
        let critic = net(&[5, 8, 1], OutputActivation::Identity, true, 2);
        let mut g = Graph::new();
        let pid = g.register(&policy, true);
        let qid = g.register(&critic, false);
        let s = g.constant(rand_matrix(6, 3, 3));
        let a = g.apply(pid, s).unwrap();
        let sa = g.concat(s, a).unwrap();
        let q = g.apply(qid, sa).unwrap();
        let loss = g.sum_all(q);
        let loss = g.scale(loss, -1.0 / 6.0);
        let table = g.gradients(loss).unwrap();
        assert!(table.net(qid).is_none());
        let pg = table.net(pid).unwrap();
        assert!(pg.flat().iter().any(|&v| v != 0.0));
    }

    /// Every primitive exercised at once, checked against central finite
    /// differences: two trainable nets (policy with tanh head, layer-norm
    /// critic), concat, min of two critics, square, sub, add, scale, sum.
    #[test]
    fn full_objective_gradcheck_against_finite_differences() {
        for seed in 0..4u64 {
            let policy = net(
                &[3, 5, 4, 2],
                OutputActivation::TanhScaled { action_scale: 1.0 },
                false,
                seed * 3 + 1,
            );
            let q1 = net(&[5, 6, 4, 1], OutputActivation::Identity, true, seed * 3 + 2);
            let q2 = net(&[5, 6, 4, 1], OutputActivation::Identity, true, seed * 3 + 3);
            let states = rand_matrix(7, 3, seed + 40);
            let ref_actions = rand_matrix(7, 2, seed + 80);

            let build = |nets: &[MlpParams]| -> Result<f64, NumericsError> {
                let mut g = Graph::new();
                let pid = g.register(&nets[0], true);
                let q1id = g.register(&nets[1], true);
                let q2id = g.register(&nets[2], true);
                let s = g.constant(states.clone());
                let refs = g.constant(ref_actions.clone());
                let a = g.apply(pid, s)?;
                let sa = g.concat(s, a)?;
                let qa = g.apply(q1id, sa)?;
                let qb = g.apply(q2id, sa)?;
                let qmin = g.min(qa, qb)?;
                let q_term = g.sum_all(qmin);
                let q_term = g.scale(q_term, -0.3 / 7.0);
                let diff = g.sub(a, refs)?;
                let sq = g.square(diff);
                let bc = g.sum_all(sq);
                let bc = g.scale(bc, 0.7 / 7.0);
                let loss = g.add(q_term, bc)?;
                Ok(g.value(loss)[[0, 0]])
            };

            // Analytic gradients.
            let mut g = Graph::new();
            let pid = g.register(&policy, true);
            let q1id = g.register(&q1, true);
            let q2id = g.register(&q2, true);
            let s = g.constant(states.clone());
            let refs = g.constant(ref_actions.clone());
            let a = g.apply(pid, s).unwrap();
            let sa = g.concat(s, a).unwrap();
            let qa = g.apply(q1id, sa).unwrap();
            let qb = g.apply(q2id, sa).unwrap();
            let qmin = g.min(qa, qb).unwrap();
            let q_term = g.sum_all(qmin);
            let q_term = g.scale(q_term, -0.3 / 7.0);
            let diff = g.sub(a, refs).unwrap();
            let sq = g.square(diff);
            let bc = g.sum_all(sq);
            let bc = g.scale(bc, 0.7 / 7.0);
            let loss = g.add(q_term, bc).unwrap();
            let table = g.gradients(loss).unwrap();

            let nets = vec![policy.clone(), q1.clone(), q2.clone()];
            let fd = finite_diff_grad(&nets, 1e-6, |ns| build(ns)).unwrap();
            for (i, id) in [pid, q1id, q2id].iter().enumerate() {
                let err = grad_rel_err(table.net(*id).unwrap(), &fd[i]);
                assert!(err < 1e-4, "seed {seed} net {i} rel err {err}");
            }
        }
    }

    #[test]
    fn min_ties_route_to_first_operand() {
        let mut g = Graph::new();
        let a = g.constant(Array2::from_elem((1, 1), 2.0));
        // Build a trainable path: a 1-param net acting as identity-ish.
        let p = MlpParams {
            layer_sizes: vec![1, 1],
            weights: vec![Array2::from_elem((1, 1), 1.0)],
            biases: vec![Array1::zeros(1)],
            ln_gains: vec![],
            ln_biases: vec![],
            layer_norm: false,
            output: OutputActivation::Identity,
        };
        let nid = g.register(&p, true);
        let x = g.apply(nid, a).unwrap(); // value 2.0, trainable path
        let tie = g.constant(Array2::from_elem((1, 1), 2.0));
        let m = g.min(x, tie).unwrap(); // tie: gradient goes to x
        let loss = g.sum_all(m);
        let table = g.gradients(loss).unwrap();
        let grads = table.net(nid).unwrap();
        assert_eq!(grads.weights[0][[0, 0]], 2.0); // d(sum min)/dw = x = 2
    }

    #[test]
    fn concat_rejects_row_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((3, 3)));
        assert!(g.concat(a, b).is_err());
    }

    #[test]
    fn apply_rejects_wrong_input_width() {
        let p = net(&[4, 4, 2], OutputActivation::Identity, false, 9);
        let mut g = Graph::new();
        let nid = g.register(&p, false);
        let x = g.constant(Array2::zeros((2, 3)));
        assert!(g.apply(nid, x).is_err());
    }
}
