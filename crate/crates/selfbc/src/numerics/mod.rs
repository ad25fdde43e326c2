//! Hand-rolled f64 neural-network numerics: MLP parameters, forward passes,
//! Adam, and Polyak (soft) target updates.
//!
//! Everything is 64-bit and allocation order is fixed, so a run is a pure
//! function of its seed. Networks are two-hidden-layer MLPs by convention:
//! policies end in `tanh` scaled by the action bound, critics apply layer
//! normalization between the affine map and the ReLU of each hidden layer.

pub mod graph;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::rng::Stream;

/// Epsilon inside the layer-norm standard deviation.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("architecture mismatch in {context}")]
    ArchitectureMismatch { context: &'static str },
    #[error("invalid {what}: {value}")]
    InvalidArgument { what: &'static str, value: f64 },
    #[error("loss node must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("{0}")]
    Graph(&'static str),
}

/// Activation applied to the final affine layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `action_scale * tanh(z)`, the usual bounded-policy head.
    TanhScaled { action_scale: f64 },
}

/// Dense MLP parameters. `layer_sizes = [in, h1, .., out]`; weights are
/// stored input-major (`[fan_in, fan_out]`), so a forward step is `x @ W + b`.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Per hidden layer when `layer_norm` is set, empty otherwise.
    pub ln_gains: Vec<Array1<f64>>,
    pub ln_biases: Vec<Array1<f64>>,
    pub layer_norm: bool,
    pub output: OutputActivation,
}

impl MlpParams {
    /// Initialize with the uniform `±1/sqrt(fan_in)` scheme for weights and
    /// biases (the default of the reference TD3 implementations). Layer-norm
    /// gains start at 1 and offsets at 0. Draw order: per layer, weight
    /// entries row-major, then bias entries.
    pub fn init(
        layer_sizes: &[usize],
        output: OutputActivation,
        layer_norm: bool,
        stream: &mut Stream,
    ) -> Result<Self, NumericsError> {
        if layer_sizes.len() < 2 {
            return Err(NumericsError::ArchitectureMismatch {
                context: "init: need at least input and output sizes",
            });
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(NumericsError::InvalidArgument {
                what: "layer size",
                value: 0.0,
            });
        }
        let n_layers = layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut ln_gains = Vec::new();
        let mut ln_biases = Vec::new();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                stream.uniform_in(-bound, bound)
            });
            let b = Array1::from_shape_fn(fan_out, |_| stream.uniform_in(-bound, bound));
            weights.push(w);
            biases.push(b);
            if layer_norm && l + 1 < n_layers {
                ln_gains.push(Array1::ones(fan_out));
                ln_biases.push(Array1::zeros(fan_out));
            }
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            ln_gains,
            ln_biases,
            layer_norm,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        let wb: usize = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum();
        let ln: usize = self
            .ln_gains
            .iter()
            .zip(&self.ln_biases)
            .map(|(g, b)| g.len() + b.len())
            .sum();
        wb + ln
    }

    /// True when the two networks have identical shapes and flags (values may
    /// differ). Soft updates and Adam require this.
    pub fn same_architecture(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.layer_norm == other.layer_norm
            && self.output == other.output
    }

    /// Forward pass for a batch, rows are inputs.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>, NumericsError> {
        if x.ncols() != self.input_dim() {
            return Err(NumericsError::DimensionMismatch {
                context: "forward: input columns",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n_layers = self.n_layers();
        let mut h = x.clone();
        for l in 0..n_layers {
            let mut z = h.dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 < n_layers {
                if self.layer_norm {
                    layer_norm_rows(&mut z, &self.ln_gains[l], &self.ln_biases[l]);
                }
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                match self.output {
                    OutputActivation::Identity => {}
                    OutputActivation::TanhScaled { action_scale } => {
                        z.mapv_inplace(|v| action_scale * v.tanh());
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>, NumericsError> {
        let row = x
            .view()
            .into_shape_with_order((1, x.len()))
            .map_err(|_| NumericsError::DimensionMismatch {
                context: "forward: input reshape",
                expected: self.input_dim(),
                got: x.len(),
            })?
            .to_owned();
        let out = self.forward_batch(&row)?;
        Ok(out.row(0).to_owned())
    }
}

/// Normalize each row in place: `gain * (x - mean) / sqrt(var + eps) + bias`
/// with biased (population) variance. Shared by plain forwards and the graph
/// engine so both produce bit-identical values.
pub fn layer_norm_rows(x: &mut Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) {
    let d = x.ncols() as f64;
    for mut row in x.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = gain[j] * (*v - mean) * inv + bias[j];
        }
    }
}

/// Gradient (or first/second-moment) buffers mirroring an `MlpParams`.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub ln_gains: Vec<Array1<f64>>,
    pub ln_biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            weights: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            ln_gains: params.ln_gains.iter().map(|g| Array1::zeros(g.len())).collect(),
            ln_biases: params.ln_biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Flatten in the canonical tensor order (per layer: weights row-major,
    /// bias; then layer-norm gains and offsets).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        for (g, b) in self.ln_gains.iter().zip(&self.ln_biases) {
            out.extend(g.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Max relative error between two gradient sets, elementwise, with the
/// denominator floored at 1e-8.
pub fn grad_rel_err(a: &MlpGrads, b: &MlpGrads) -> f64 {
    let (fa, fb) = (a.flat(), b.flat());
    assert_eq!(fa.len(), fb.len(), "gradient layouts differ");
    fa.iter()
        .zip(&fb)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Adam with bias correction. One state per optimized network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: MlpGrads,
    pub v: MlpGrads,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
        }
    }
}

fn adam_tensor(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step. `grads` must mirror `params`; the state's step counter
/// advances exactly once.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
) -> Result<(), NumericsError> {
    let shapes_match = params.weights.len() == grads.weights.len()
        && params.ln_gains.len() == grads.ln_gains.len()
        && params
            .weights
            .iter()
            .zip(&grads.weights)
            .all(|(a, b)| a.dim() == b.dim())
        && params
            .biases
            .iter()
            .zip(&grads.biases)
            .all(|(a, b)| a.len() == b.len());
    if !shapes_match {
        return Err(NumericsError::ArchitectureMismatch {
            context: "adam_step: gradient layout",
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (lr, b1, b2, eps) = (state.lr, state.beta1, state.beta2, state.eps);
    for l in 0..params.weights.len() {
        adam_tensor(
            params.weights[l].as_slice_mut().unwrap(),
            grads.weights[l].as_slice().unwrap(),
            state.m.weights[l].as_slice_mut().unwrap(),
            state.v.weights[l].as_slice_mut().unwrap(),
            lr, b1, b2, eps, bc1, bc2,
        );
        adam_tensor(
            params.biases[l].as_slice_mut().unwrap(),
            grads.biases[l].as_slice().unwrap(),
            state.m.biases[l].as_slice_mut().unwrap(),
            state.v.biases[l].as_slice_mut().unwrap(),
            lr, b1, b2, eps, bc1, bc2,
        );
    }
    for l in 0..params.ln_gains.len() {
        adam_tensor(
            params.ln_gains[l].as_slice_mut().unwrap(),
            grads.ln_gains[l].as_slice().unwrap(),
            state.m.ln_gains[l].as_slice_mut().unwrap(),
            state.v.ln_gains[l].as_slice_mut().unwrap(),
            lr, b1, b2, eps, bc1, bc2,
        );
        adam_tensor(
            params.ln_biases[l].as_slice_mut().unwrap(),
            grads.ln_biases[l].as_slice().unwrap(),
            state.m.ln_biases[l].as_slice_mut().unwrap(),
            state.v.ln_biases[l].as_slice_mut().unwrap(),
            lr, b1, b2, eps, bc1, bc2,
        );
    }
    Ok(())
}

/// Polyak update `target <- tau * source + (1 - tau) * target`. `tau = 0`
/// leaves the target bit-identical, `tau = 1` copies the source.
pub fn soft_update(
    target: &mut MlpParams,
    source: &MlpParams,
    tau: f64,
) -> Result<(), NumericsError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NumericsError::InvalidArgument { what: "tau", value: tau });
    }
    if !target.same_architecture(source) {
        return Err(NumericsError::ArchitectureMismatch {
            context: "soft_update: target vs source",
        });
    }
    if tau == 0.0 {
        return Ok(());
    }
    let blend = |t: &mut [f64], s: &[f64]| {
        for (tv, &sv) in t.iter_mut().zip(s) {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
    };
    for l in 0..target.weights.len() {
        blend(
            target.weights[l].as_slice_mut().unwrap(),
            source.weights[l].as_slice().unwrap(),
        );
        blend(
            target.biases[l].as_slice_mut().unwrap(),
            source.biases[l].as_slice().unwrap(),
        );
    }
    for l in 0..target.ln_gains.len() {
        blend(
            target.ln_gains[l].as_slice_mut().unwrap(),
            source.ln_gains[l].as_slice().unwrap(),
        );
        blend(
            target.ln_biases[l].as_slice_mut().unwrap(),
            source.ln_biases[l].as_slice().unwrap(),
        );
    }
    Ok(())
}

/// Central finite-difference gradient of `f` with respect to every parameter
/// of every network in `nets`: `(f(p + h e_i) - f(p - h e_i)) / 2h`.
/// Intentionally independent of the graph engine; used as its oracle.
pub fn finite_diff_grad<F>(
    nets: &[MlpParams],
    h: f64,
    mut f: F,
) -> Result<Vec<MlpGrads>, NumericsError>
where
    F: FnMut(&[MlpParams]) -> Result<f64, NumericsError>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidArgument { what: "step h", value: h });
    }
    let mut work: Vec<MlpParams> = nets.to_vec();
    let mut out: Vec<MlpGrads> = nets.iter().map(MlpGrads::zeros_like).collect();

    // One fused iteration routine over the four tensor families.
    for k in 0..nets.len() {
        for family in 0..4 {
            let n_tensors = match family {
                0 => nets[k].weights.len(),
                1 => nets[k].biases.len(),
                2 => nets[k].ln_gains.len(),
                _ => nets[k].ln_biases.len(),
            };
            for t in 0..n_tensors {
                let len = match family {
                    0 => nets[k].weights[t].len(),
                    1 => nets[k].biases[t].len(),
                    2 => nets[k].ln_gains[t].len(),
                    _ => nets[k].ln_biases[t].len(),
                };
                for i in 0..len {
                    let read = |w: &MlpParams| -> f64 {
                        match family {
                            0 => w.weights[t].as_slice().unwrap()[i],
                            1 => w.biases[t].as_slice().unwrap()[i],
                            2 => w.ln_gains[t].as_slice().unwrap()[i],
                            _ => w.ln_biases[t].as_slice().unwrap()[i],
                        }
                    };
                    let orig = read(&work[k]);
                    let write = |w: &mut MlpParams, v: f64| match family {
                        0 => w.weights[t].as_slice_mut().unwrap()[i] = v,
                        1 => w.biases[t].as_slice_mut().unwrap()[i] = v,
                        2 => w.ln_gains[t].as_slice_mut().unwrap()[i] = v,
                        _ => w.ln_biases[t].as_slice_mut().unwrap()[i] = v,
                    };
                    write(&mut work[k], orig + h);
                    let f_plus = f(&work)?;
                    write(&mut work[k], orig - h);
                    let f_minus = f(&work)?;
                    write(&mut work[k], orig);
                    let g = (f_plus - f_minus) / (2.0 * h);
                    match family {
                        0 => out[k].weights[t].as_slice_mut().unwrap()[i] = g,
                        1 => out[k].biases[t].as_slice_mut().unwrap()[i] = g,
                        2 => out[k].ln_gains[t].as_slice_mut().unwrap()[i] = g,
                        _ => out[k].ln_biases[t].as_slice_mut().unwrap()[i] = g,
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{streams, Stream};

    fn small_net(layer_norm: bool, output: OutputActivation) -> MlpParams {
        let mut s = Stream::derive(11, streams::INIT);
        MlpParams::init(&[3, 5, 4, 2], output, layer_norm, &mut s).unwrap()
    }

    #[test]
    fn init_shapes_and_bounds() {
        let net = small_net(true, OutputActivation::Identity);
        assert_eq!(net.weights[0].dim(), (3, 5));
        assert_eq!(net.weights[1].dim(), (5, 4));
        assert_eq!(net.weights[2].dim(), (4, 2));
        assert_eq!(net.ln_gains.len(), 2);
        let bound = 1.0 / 3f64.sqrt();
        assert!(net.weights[0].iter().all(|v| v.abs() <= bound));
        assert_eq!(net.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2 + 2 * (5 + 4));
    }

    #[test]
    fn forward_rejects_bad_input_dim() {
        let net = small_net(false, OutputActivation::Identity);
        let bad = Array1::zeros(4);
        assert!(matches!(
            net.forward(&bad),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tanh_scaled_output_is_bounded() {
        let net = small_net(false, OutputActivation::TanhScaled { action_scale: 1.0 });
        let mut s = Stream::derive(1, streams::DATA_RESET);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(3, |_| s.uniform_in(-10.0, 10.0));
            let y = net.forward(&x).unwrap();
            assert!(y.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let net = small_net(true, OutputActivation::Identity);
        let mut s = Stream::derive(2, streams::DATA_RESET);
        let x = Array2::from_shape_fn((6, 3), |_| s.uniform_in(-2.0, 2.0));
        let batch = net.forward_batch(&x).unwrap();
        for r in 0..6 {
            let single = net.forward(&x.row(r).to_owned()).unwrap();
            for c in 0..2 {
                assert_eq!(batch[[r, c]], single[c]);
            }
        }
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let gain = Array1::ones(4);
        let bias = Array1::zeros(4);
        let mut x = Array2::from_shape_vec((1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        layer_norm_rows(&mut x, &gain, &bias);
        let mean: f64 = x.row(0).sum() / 4.0;
        let var: f64 = x.row(0).iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 2e-5); // eps shrinks variance slightly
    }

    /// Three Adam steps on f(x) = x^2 / 2 from x = 1, computed by hand:
    /// g = x; with lr = 0.1 the first step is exactly -lr (bias corrections
    /// cancel against sqrt), leaving x1 = 0.9 up to eps rounding.
    #[test]
    fn adam_matches_hand_computed_scalar() {
        let mut p = MlpParams {
            layer_sizes: vec![1, 1],
            weights: vec![Array2::from_elem((1, 1), 1.0)],
            biases: vec![Array1::zeros(1)],
            ln_gains: vec![],
            ln_biases: vec![],
            layer_norm: false,
            output: OutputActivation::Identity,
        };
        let mut st = AdamState::new(&p, 0.1);
        let mut oracle_x = 1.0f64;
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = oracle_x; // d/dx of x^2/2
            let mut grads = MlpGrads::zeros_like(&p);
            grads.weights[0][[0, 0]] = p.weights[0][[0, 0]];
            adam_step(&mut p, &grads, &mut st).unwrap();

            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            oracle_x -= lr * m_hat / (v_hat.sqrt() + eps);
            assert_eq!(p.weights[0][[0, 0]], oracle_x, "step {t}");
        }
        assert!((p.weights[0][[0, 0]] - 0.7).abs() < 2e-2);
    }

    #[test]
    fn adam_step_counter_advances_once() {
        let mut p = small_net(false, OutputActivation::Identity);
        let g = MlpGrads::zeros_like(&p);
        let mut st = AdamState::new(&p, 3e-4);
        adam_step(&mut p, &g, &mut st).unwrap();
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(st.step, 2);
    }

    #[test]
    fn adam_rejects_mismatched_grads() {
        let mut p = small_net(false, OutputActivation::Identity);
        let other = small_net(true, OutputActivation::Identity);
        let g = MlpGrads::zeros_like(&other);
        let mut st = AdamState::new(&p, 3e-4);
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }

    #[test]
    fn soft_update_endpoints_and_blend() {
        let src = small_net(true, OutputActivation::Identity);
        let mut tgt = small_net(true, OutputActivation::Identity);
        // Make target differ.
        tgt.weights[0][[0, 0]] += 0.5;
        let before = tgt.weights[0][[0, 0]];

        let mut frozen = tgt.clone();
        soft_update(&mut frozen, &src, 0.0).unwrap();
        assert_eq!(frozen.weights[0][[0, 0]], before);

        let mut copied = tgt.clone();
        soft_update(&mut copied, &src, 1.0).unwrap();
        assert_eq!(copied.weights[0][[0, 0]], src.weights[0][[0, 0]]);

        let tau = 0.005;
        let expect = tau * src.weights[0][[0, 0]] + (1.0 - tau) * before;
        soft_update(&mut tgt, &src, tau).unwrap();
        assert_eq!(tgt.weights[0][[0, 0]], expect);
    }

    #[test]
    fn soft_update_validates_inputs() {
        let src = small_net(false, OutputActivation::Identity);
        let mut tgt = small_net(false, OutputActivation::Identity);
        assert!(soft_update(&mut tgt, &src, -0.1).is_err());
        assert!(soft_update(&mut tgt, &src, 1.1).is_err());
        let mut wrong = small_net(true, OutputActivation::Identity);
        assert!(soft_update(&mut wrong, &src, 0.5).is_err());
    }

    #[test]
    fn finite_diff_recovers_quadratic_gradient() {
        // f(p) = sum of squares of all parameters; gradient is 2p.
        let net = small_net(true, OutputActivation::Identity);
        let grads = finite_diff_grad(std::slice::from_ref(&net), 1e-6, |nets| {
            let mut acc = 0.0;
            let n = &nets[0];
            for w in &n.weights {
                acc += w.iter().map(|v| v * v).sum::<f64>();
            }
            for b in &n.biases {
                acc += b.iter().map(|v| v * v).sum::<f64>();
            }
            for g in &n.ln_gains {
                acc += g.iter().map(|v| v * v).sum::<f64>();
            }
            for b in &n.ln_biases {
                acc += b.iter().map(|v| v * v).sum::<f64>();
            }
            Ok(acc)
        })
        .unwrap();
        let mut expect = MlpGrads::zeros_like(&net);
        for (l, w) in net.weights.iter().enumerate() {
            expect.weights[l] = w.mapv(|v| 2.0 * v);
            expect.biases[l] = net.biases[l].mapv(|v| 2.0 * v);
        }
        for (l, g) in net.ln_gains.iter().enumerate() {
            expect.ln_gains[l] = g.mapv(|v| 2.0 * v);
            expect.ln_biases[l] = net.ln_biases[l].mapv(|v| 2.0 * v);
        }
        assert!(grad_rel_err(&grads[0], &expect) < 1e-6);
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        let net = small_net(false, OutputActivation::Identity);
        let r = finite_diff_grad(std::slice::from_ref(&net), 0.0, |_| Ok(0.0));
        assert!(r.is_err());
    }
}
