//! Squashed-Gaussian MLP policy: parameters, forward pass, log-density and
//! checkpoint serialization.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Distance kept from the ±1 action boundary before evaluating a log-density.
pub const ACTION_EPS: f64 = 1e-6;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn default_log_std_min() -> f64 {
    -5.0
}

fn default_log_std_max() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub action_dim: usize,
    #[serde(default = "default_log_std_min")]
    pub log_std_min: f64,
    #[serde(default = "default_log_std_max")]
    pub log_std_max: f64,
}

impl Architecture {
    /// Two tanh hidden layers of 64 units.
    pub fn standard(input_dim: usize, action_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![64, 64],
            action_dim,
            log_std_min: default_log_std_min(),
            log_std_max: default_log_std_max(),
        }
    }

    /// (rows = outputs, cols = inputs) for every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.action_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.action_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(contract("architecture dimensions must be positive"));
        }
        if !(self.log_std_min.is_finite()
            && self.log_std_max.is_finite()
            && self.log_std_min <= self.log_std_max)
        {
            return Err(contract("log_std bounds must be finite with min <= max"));
        }
        Ok(())
    }
}

/// One affine map `y = W x + b`, `W` stored row-major as `rows x cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().copied());
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Weights of the policy network plus the state-independent log-std head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
    pub log_std: Vec<f64>,
}

/// Per-parameter partial derivatives, shaped like [`PolicyParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub layers: Vec<Layer>,
    pub log_std: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
            log_std: vec![0.0; params.log_std.len()],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .chain(self.log_std.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
            .chain(self.log_std.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, params: &PolicyParams) -> bool {
        self.log_std.len() == params.log_std.len()
            && self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.rows == p.rows && g.cols == p.cols)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }
}

/// Gaussian head output before squashing.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        architecture.validate()?;
        let layers = architecture
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| Layer::zeros(r, c))
            .collect();
        let log_std = vec![0.0; architecture.action_dim];
        Ok(Self {
            architecture,
            layers,
            log_std,
        })
    }

    /// Uniform fan-in initialization; the output layer is scaled down so a
    /// fresh policy starts with a near-zero mean.
    pub fn init<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(architecture)?;
        let n = params.layers.len();
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            let scale = if i + 1 == n { 0.01 } else { 1.0 };
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = scale * rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .chain(self.log_std.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
            .chain(self.log_std.iter_mut())
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.architecture.action_dim
    }

    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (self.architecture.log_std_min, self.architecture.log_std_max);
        for v in &mut self.log_std {
            *v = v.clamp(lo, hi);
        }
    }

    /// Checks every structural and numeric invariant.
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let shapes = self.architecture.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(contract("layer count does not match architecture"));
        }
        for (i, ((rows, cols), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.rows != *rows
                || layer.cols != *cols
                || layer.weights.len() != rows * cols
                || layer.bias.len() != *rows
            {
                return Err(contract(format!("layer {i} shape mismatch")));
            }
        }
        if self.log_std.len() != self.architecture.action_dim {
            return Err(contract("log_std length does not match action_dim"));
        }
        let (lo, hi) = (self.architecture.log_std_min, self.architecture.log_std_max);
        if self.log_std.iter().any(|v| *v < lo || *v > hi) {
            return Err(contract("log_std outside its clamp range"));
        }
        if !self.values().all(|v| v.is_finite()) {
            return Err(contract("non-finite parameter"));
        }
        Ok(())
    }

    /// Pre-squash Gaussian mean and standard deviation for one observation.
    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput> {
        if obs.len() != self.input_dim() {
            return Err(contract(format!(
                "observation length {} != input_dim {}",
                obs.len(),
                self.input_dim()
            )));
        }
        let mut cur = obs.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i != last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(PolicyOutput {
            mean: cur,
            std: self.log_std.iter().map(|s| s.exp()).collect(),
        })
    }

    /// Log-density of a squashed action under the tanh-Gaussian policy.
    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let out = self.forward(obs)?;
        squashed_gaussian_log_prob(&out.mean, &self.log_std, action)
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(obs)?.mean.iter().map(|m| m.tanh()).collect())
    }

    /// Draws `tanh(mean + std * z)`.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let out = self.forward(obs)?;
        Ok(out
            .mean
            .iter()
            .zip(&out.std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                (m + s * z).tanh()
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.architecture.clone(),
            layers: self.layers.clone(),
            log_std: self.log_std.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        let params = Self {
            architecture: ck.architecture,
            layers: ck.layers,
            log_std: ck.log_std,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk policy document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
    pub log_std: Vec<f64>,
}

/// Clamps each component into `[-1 + ACTION_EPS, 1 - ACTION_EPS]`.
pub fn clamp_interior(action: &[f64]) -> Vec<f64> {
    action
        .iter()
        .map(|a| a.clamp(-1.0 + ACTION_EPS, 1.0 - ACTION_EPS))
        .collect()
}

pub(crate) fn check_interior(action: &[f64]) -> Result<()> {
    if action.iter().all(|a| a.abs() < 1.0) {
        Ok(())
    } else {
        Err(contract(format!(
            "action {action:?} is not strictly inside (-1, 1)"
        )))
    }
}

/// `atanh(a)` per component and the Jacobian correction `sum log(1 - a^2)`.
pub fn unsquash(action: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_interior(action)?;
    let pre = action.iter().map(|a| a.atanh()).collect();
    let corr = action.iter().map(|a| (1.0 - a * a).ln()).sum();
    Ok((pre, corr))
}

pub fn squashed_gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> Result<f64> {
    if mean.len() != action.len() || log_std.len() != action.len() {
        return Err(contract("action dimension mismatch"));
    }
    let (pre, corr) = unsquash(action)?;
    Ok(gaussian_log_density(mean, log_std, &pre) - corr)
}

/// Diagonal Gaussian log-density at `x`.
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ln_2pi() -> f64 {
        (2.0 * PI).ln()
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            input_dim: 3,
            hidden_dims: vec![4],
            action_dim: 2,
            log_std_min: -5.0,
            log_std_max: 2.0,
        }
    }

    #[test]
    fn zero_network_gives_zero_mean_unit_std() {
        let p = PolicyParams::zeros(Architecture::standard(21, 2)).unwrap();
        let out = p.forward(&[0.0; 21]).unwrap();
        assert_eq!(out.mean, vec![0.0, 0.0]);
        assert_eq!(out.std, vec![1.0, 1.0]);
    }

    #[test]
    fn single_linear_layer_picks_first_column() {
        let arch = Architecture {
            input_dim: 3,
            hidden_dims: vec![],
            action_dim: 2,
            log_std_min: -5.0,
            log_std_max: 2.0,
        };
        let mut p = PolicyParams::zeros(arch).unwrap();
        p.layers[0].weights = vec![0.5, 1.0, 2.0, -0.25, 3.0, 4.0];
        p.layers[0].bias = vec![0.1, 0.2];
        let out = p.forward(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.mean, vec![0.5 + 0.1, -0.25 + 0.2]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::init(Architecture::standard(21, 2), &mut rng).unwrap();
        let obs: Vec<f64> = (0..21).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = p.forward(&obs).unwrap();
        let b = p.forward(&obs).unwrap();
        assert!(a.mean.iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = PolicyParams::zeros(tiny_arch()).unwrap();
        assert!(matches!(p.forward(&[0.0; 2]), Err(Error::Contract(_))));
    }

    #[test]
    fn standard_normal_at_mean() {
        let p = PolicyParams::zeros(tiny_arch()).unwrap();
        let lp = p.log_prob(&[0.0; 3], &[0.0, 0.0]).unwrap();
        assert!((lp - (-ln_2pi())).abs() < 1e-12);
        assert!((lp + 1.837_877).abs() < 1e-6);
    }

    #[test]
    fn boundary_action_is_rejected() {
        let p = PolicyParams::zeros(tiny_arch()).unwrap();
        assert!(p.log_prob(&[0.0; 3], &[1.0, 0.0]).is_err());
        let inside = clamp_interior(&[1.0, -1.0]);
        assert!(p.log_prob(&[0.0; 3], &inside).unwrap().is_finite());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = PolicyParams::init(Architecture::standard(7, 2), &mut rng).unwrap();
        p.log_std = vec![-0.123_456_789_012_345_67, 1.0 / 3.0];
        let text = p.to_json().unwrap();
        let back = PolicyParams::from_json(&text).unwrap();
        assert_eq!(p, back);
        assert_eq!(text, back.to_json().unwrap());
    }

    #[test]
    fn checkpoint_rejects_bad_version() {
        let p = PolicyParams::zeros(tiny_arch()).unwrap();
        let mut ck = p.to_checkpoint();
        ck.format_version = 99;
        assert!(PolicyParams::from_checkpoint(ck).is_err());
    }
}
