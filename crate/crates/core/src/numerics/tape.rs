//! Reverse-mode differentiation over a closed op set.
//!
//! A [`Tape`] evaluates eagerly as nodes are pushed; every node holds a
//! row-major `rows x cols` block. [`Tape::backward`] walks the nodes in
//! reverse and accumulates parameter adjoints into a [`GradientBundle`].
//! Only the policy parameters (affine layers and the log-std head) are
//! differentiated; every other leaf is a constant.

use super::policy::{unsquash, GradientBundle, PolicyParams};
use crate::error::{contract, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    /// `input * W^T + b` with the policy's layer `layer`.
    Affine { input: NodeId, layer: usize },
    Tanh(NodeId),
    /// Row-wise squashed-Gaussian log-density of fixed actions given a mean
    /// block and the policy's log-std head.
    GaussianLogProb { mean: NodeId, pre_squash: Vec<f64> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    LogSigmoid(NodeId),
    Square(NodeId),
    Relu(NodeId),
    Mean(NodeId),
    Sum(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::GaussianLogProb { .. } => "gaussian_log_prob",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Square(_) => "square",
            Op::Relu(_) => "relu",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p PolicyParams,
    nodes: Vec<Node>,
}

/// Numerically stable `log(sigmoid(x))`.
pub fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `C = alpha * A B + beta * C` on explicitly strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every index the strides address, as asserted
    // by every caller's shape checks.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p PolicyParams) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &PolicyParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// The value of a 1x1 node, checked for finiteness along the way.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.check_finite(id)?;
        let n = &self.nodes[id.0];
        if n.rows * n.cols != 1 {
            return Err(contract("scalar() on a non-scalar node"));
        }
        Ok(n.value[0])
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| contract(format!("unknown tape node {}", id.0)))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId> {
        if data.len() != rows * cols {
            return Err(contract("constant data does not match its shape"));
        }
        Ok(self.push(Op::Constant, rows, cols, data))
    }

    pub fn affine(&mut self, input: NodeId, layer: usize) -> Result<NodeId> {
        let params = self.params;
        let l = params
            .layers
            .get(layer)
            .ok_or_else(|| contract(format!("no layer {layer}")))?;
        let x = self.node(input)?;
        if x.cols != l.cols {
            return Err(contract(format!(
                "affine input width {} != layer {layer} fan-in {}",
                x.cols, l.cols
            )));
        }
        let rows = x.rows;
        let mut out = Vec::with_capacity(rows * l.rows);
        for _ in 0..rows {
            out.extend_from_slice(&l.bias);
        }
        gemm(
            rows,
            l.cols,
            l.rows,
            &x.value,
            (l.cols, 1),
            &l.weights,
            (1, l.cols),
            1.0,
            &mut out,
        );
        Ok(self.push(Op::Affine { input, layer }, rows, l.rows, out))
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let n = self.node(x)?;
        let (rows, cols) = (n.rows, n.cols);
        let v = n.value.iter().map(|v| f(*v)).collect();
        Ok(self.push(op, rows, cols, v))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::LogSigmoid(x), log_sigmoid)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    /// Elementwise `x + c` for a constant block `c` of the same shape.
    pub fn offset(&mut self, x: NodeId, c: Vec<f64>) -> Result<NodeId> {
        let n = self.node(x)?;
        if c.len() != n.value.len() {
            return Err(contract("offset shape mismatch"));
        }
        let (rows, cols) = (n.rows, n.cols);
        let v = n.value.iter().zip(&c).map(|(a, b)| a + b).collect();
        Ok(self.push(Op::Offset(x), rows, cols, v))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, sign: f64) -> Result<NodeId> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(contract("binary op shape mismatch"));
        }
        let (rows, cols) = (na.rows, na.cols);
        let v = na
            .value
            .iter()
            .zip(&nb.value)
            .map(|(x, y)| x + sign * y)
            .collect();
        let op = if sign > 0.0 { Op::Add(a, b) } else { Op::Sub(a, b) };
        Ok(self.push(op, rows, cols, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, 1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, -1.0)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.value.is_empty() {
            return Err(contract("mean of an empty block"));
        }
        let m = n.value.iter().sum::<f64>() / n.value.len() as f64;
        Ok(self.push(Op::Mean(x), 1, 1, vec![m]))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.node(x)?.value.iter().sum::<f64>();
        Ok(self.push(Op::Sum(x), 1, 1, vec![s]))
    }

    /// Row-wise log-density of `actions` (row-major `rows x action_dim`,
    /// strictly inside (-1, 1)) under the squashed Gaussian with the given
    /// mean block and the policy's log-std head. Output is `rows x 1`.
    pub fn gaussian_log_prob(&mut self, mean: NodeId, actions: &[f64]) -> Result<NodeId> {
        let d = self.params.action_dim();
        let n = self.node(mean)?;
        if n.cols != d || actions.len() != n.rows * d {
            return Err(contract("gaussian_log_prob shape mismatch"));
        }
        let rows = n.rows;
        let mut pre = Vec::with_capacity(actions.len());
        let mut correction = Vec::with_capacity(rows);
        for row in actions.chunks(d) {
            let (u, c) = unsquash(row)?;
            pre.extend(u);
            correction.push(c);
        }
        let log_std = &self.params.log_std;
        let value = (0..rows)
            .map(|r| {
                let mut acc = 0.0;
                for j in 0..d {
                    let z = (pre[r * d + j] - n.value[r * d + j]) / log_std[j].exp();
                    acc += -0.5 * z * z - log_std[j] - HALF_LN_2PI;
                }
                acc - correction[r]
            })
            .collect();
        Ok(self.push(
            Op::GaussianLogProb {
                mean,
                pre_squash: pre,
            },
            rows,
            1,
            value,
        ))
    }

    /// Pre-squash policy mean for a row-major batch of observations.
    pub fn policy_mean(&mut self, obs: &[f64], rows: usize) -> Result<NodeId> {
        let input_dim = self.params.input_dim();
        if obs.len() != rows * input_dim {
            return Err(contract(format!(
                "observation batch of {} values is not {rows} x {input_dim}",
                obs.len()
            )));
        }
        let mut h = self.constant(rows, input_dim, obs.to_vec())?;
        let n = self.params.layers.len();
        for i in 0..n {
            h = self.affine(h, i)?;
            if i + 1 != n {
                h = self.tanh(h)?;
            }
        }
        Ok(h)
    }

    fn check_finite(&self, upto: NodeId) -> Result<()> {
        for (i, n) in self.nodes[..=upto.0].iter().enumerate() {
            if n.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    op: n.op.name(),
                });
            }
        }
        Ok(())
    }

    /// Gradient of the scalar node `root` with respect to every policy parameter.
    pub fn backward(&self, root: NodeId) -> Result<GradientBundle> {
        self.scalar(root)?;
        let mut grads = GradientBundle::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(vec![1.0]);

        fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            match &node.op {
                Op::Constant => {}
                Op::Affine { input, layer } => {
                    let l = &self.params.layers[*layer];
                    let x = &self.nodes[input.0];
                    let rows = node.rows;
                    let gl = &mut grads.layers[*layer];
                    // dW += G^T X
                    gemm(
                        l.rows,
                        rows,
                        l.cols,
                        &g,
                        (1, l.rows),
                        &x.value,
                        (l.cols, 1),
                        1.0,
                        &mut gl.weights,
                    );
                    for r in 0..rows {
                        for (b, gv) in gl.bias.iter_mut().zip(&g[r * l.rows..(r + 1) * l.rows]) {
                            *b += gv;
                        }
                    }
                    if !matches!(x.op, Op::Constant) {
                        let dx = accumulate(&mut adj, *input, rows * l.cols);
                        // dX += G W
                        gemm(
                            rows,
                            l.rows,
                            l.cols,
                            &g,
                            (l.rows, 1),
                            &l.weights,
                            (l.cols, 1),
                            1.0,
                            dx,
                        );
                    }
                }
                Op::Tanh(x) => {
                    let dx = accumulate(&mut adj, *x, g.len());
                    for ((d, gv), y) in dx.iter_mut().zip(&g).zip(&node.value) {
                        *d += gv * (1.0 - y * y);
                    }
                }
                Op::LogSigmoid(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = accumulate(&mut adj, *x, g.len());
                    for ((d, gv), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += gv * sigmoid(-xi);
                    }
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = accumulate(&mut adj, *x, g.len());
                    for ((d, gv), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += gv * 2.0 * xi;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = accumulate(&mut adj, *x, g.len());
                    for ((d, gv), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        if *xi > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let dx = accumulate(&mut adj, *x, g.len());
                    for (d, gv) in dx.iter_mut().zip(&g) {
                        *d += c * gv;
                    }
                }
                Op::Offset(x) => {
                    let dx = accumulate(&mut adj, *x, g.len());
                    for (d, gv) in dx.iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Add(..)) { 1.0 } else { -1.0 };
                    for d in accumulate(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *d.0 += d.1;
                    }
                    for d in accumulate(&mut adj, *b, g.len()).iter_mut().zip(&g) {
                        *d.0 += sign * d.1;
                    }
                }
                Op::Mean(x) => {
                    let len = self.nodes[x.0].value.len();
                    let share = g[0] / len as f64;
                    for d in accumulate(&mut adj, *x, len).iter_mut() {
                        *d += share;
                    }
                }
                Op::Sum(x) => {
                    let len = self.nodes[x.0].value.len();
                    for d in accumulate(&mut adj, *x, len).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::GaussianLogProb {
                    mean, pre_squash, ..
                } => {
                    let m = &self.nodes[mean.0];
                    let d = m.cols;
                    let log_std = &self.params.log_std;
                    let inv_std: Vec<f64> = log_std.iter().map(|s| (-s).exp()).collect();
                    let track_mean = !matches!(m.op, Op::Constant);
                    let mut dmean = vec![0.0; if track_mean { m.value.len() } else { 0 }];
                    for r in 0..node.rows {
                        for j in 0..d {
                            let k = r * d + j;
                            let z = (pre_squash[k] - m.value[k]) * inv_std[j];
                            // d/dmean = z / std, d/dlog_std = z^2 - 1
                            if track_mean {
                                dmean[k] = g[r] * z * inv_std[j];
                            }
                            grads.log_std[j] += g[r] * (z * z - 1.0);
                        }
                    }
                    if track_mean {
                        for (a, b) in accumulate(&mut adj, *mean, dmean.len())
                            .iter_mut()
                            .zip(&dmean)
                        {
                            *a += b;
                        }
                    }
                }
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                node: root.0,
                op: "gradient",
            });
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::policy::Architecture;

    fn linear_params() -> PolicyParams {
        let arch = Architecture {
            input_dim: 3,
            hidden_dims: vec![],
            action_dim: 1,
            log_std_min: -5.0,
            log_std_max: 2.0,
        };
        let mut p = PolicyParams::zeros(arch).unwrap();
        p.layers[0].weights = vec![0.3, -0.2, 0.7];
        p.layers[0].bias = vec![0.05];
        p
    }

    #[test]
    fn linear_output_gradient_is_the_input() {
        let p = linear_params();
        let mut t = Tape::new(&p);
        let x = [1.5, -2.0, 0.25];
        let out = t.policy_mean(&x, 1).unwrap();
        let loss = t.sum(out).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.layers[0].weights, x.to_vec());
        assert_eq!(g.layers[0].bias, vec![1.0]);
        assert_eq!(g.log_std, vec![0.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = linear_params();
        let mut t = Tape::new(&p);
        let c = t.constant(2, 1, vec![1.0, 2.0]).unwrap();
        let loss = t.mean(c).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.values().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_node_is_reported() {
        let p = linear_params();
        let mut t = Tape::new(&p);
        let c = t.constant(1, 1, vec![f64::INFINITY]).unwrap();
        let s = t.scale(c, 0.0).unwrap();
        let loss = t.mean(s).unwrap();
        match t.backward(loss) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, 0);
                assert_eq!(op, "constant");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn log_sigmoid_is_stable_at_extremes() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = linear_params();
        let mut t = Tape::new(&p);
        let a = t.constant(2, 1, vec![1.0, 2.0]).unwrap();
        let b = t.constant(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(t.add(a, b).is_err());
        assert!(t.policy_mean(&[0.0; 4], 1).is_err());
    }
}
