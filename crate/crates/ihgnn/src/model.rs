//! The full model mapping: affine input map, equilibrium layer, linear
//! readout and masked cross-entropy loss, together with the row-wise
//! l-infinity-ball projection that keeps training well-posed.

use crate::equilibrium::{solve_forward, Activation, EquilibriumSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::hypergraph::PropagationOperator;
use crate::linalg::{max_row_abs_sum, DenseMatrix};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Trainable parameters and the well-posedness budget `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w: DenseMatrix,
    pub theta1: DenseMatrix,
    pub theta2: DenseMatrix,
    pub b: Vec<f64>,
    pub kappa: f64,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.theta1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.theta2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.rows() != self.w.cols() {
            return Err(Error::NotSquare {
                rows: self.w.rows(),
                cols: self.w.cols(),
            });
        }
        let d_h = self.w.rows();
        if self.theta1.cols() != d_h || self.theta2.rows() != d_h || self.b.len() != d_h {
            return Err(Error::dim(
                "ModelParams hidden dim",
                d_h,
                format!(
                    "theta1 {}x{}, theta2 {}x{}, b {}",
                    self.theta1.rows(),
                    self.theta1.cols(),
                    self.theta2.rows(),
                    self.theta2.cols(),
                    self.b.len()
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidArgument(format!(
                "kappa must lie in [0,1), got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Readout logits and their row-softmax probabilities.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: DenseMatrix,
    pub probabilities: DenseMatrix,
}

impl Prediction {
    pub fn from_logits(logits: DenseMatrix) -> Prediction {
        let mut probabilities = DenseMatrix::zeros(logits.rows(), logits.cols());
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                probabilities.set(i, j, e / sum);
            }
        }
        Prediction {
            logits,
            probabilities,
        }
    }

    /// Argmax class per row (lowest index wins ties).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|i| {
                let row = self.logits.row(i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// `X~ = X Theta1 + 1_n b^T`.
pub fn affine_input(x: &DenseMatrix, params: &ModelParams) -> Result<DenseMatrix> {
    if x.cols() != params.theta1.rows() {
        return Err(Error::dim("affine_input", params.theta1.rows(), x.cols()));
    }
    let mut x_tilde = x.matmul(&params.theta1)?;
    for i in 0..x_tilde.rows() {
        for (v, b) in x_tilde.row_mut(i).iter_mut().zip(&params.b) {
            *v += b;
        }
    }
    Ok(x_tilde)
}

/// Full pipeline: affine input, equilibrium solve, linear readout,
/// row-softmax.
pub fn forward(
    x: &DenseMatrix,
    op: &PropagationOperator,
    params: &ModelParams,
    act: Activation,
    cfg: &SolverConfig,
) -> Result<(Prediction, EquilibriumSolution)> {
    params.validate()?;
    let x_tilde = affine_input(x, params)?;
    let sol = solve_forward(op, &params.w, &x_tilde, act, cfg, None)?;
    let logits = sol.z_star.matmul(&params.theta2)?;
    Ok((Prediction::from_logits(logits), sol))
}

/// Mean cross-entropy over the masked nodes, plus its gradient with respect
/// to the logits (rows outside the mask are zero).
pub fn cross_entropy_masked(
    pred: &Prediction,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, DenseMatrix)> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    let n = pred.logits.rows();
    let c = pred.logits.cols();
    if labels.len() != n {
        return Err(Error::dim("cross_entropy labels", n, labels.len()));
    }
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(n, c);
    let scale = 1.0 / mask.len() as f64;
    for &i in mask {
        if i >= n {
            return Err(Error::InvalidArgument(format!("mask index {i} out of range")));
        }
        let y = labels[i];
        if y >= c {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {c} classes (node {i})"
            )));
        }
        let p = pred.probabilities.get(i, y).max(1e-300);
        loss -= p.ln();
        for j in 0..c {
            let indicator = if j == y { 1.0 } else { 0.0 };
            grad.set(i, j, (pred.probabilities.get(i, j) - indicator) * scale);
        }
    }
    Ok((loss * scale, grad))
}

/// Euclidean projection of `v` onto the l1 ball of radius `radius`,
/// via the exact sort-based soft-thresholding algorithm.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    // relative slack keeps the projection bitwise idempotent: a projected
    // row sums to the radius only up to rounding
    if l1 <= radius * (1.0 + 1e-12) {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter()
        .map(|x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// The Frobenius-nearest matrix with `max_row_abs_sum <= kappa`: each row is
/// independently projected onto the l1 ball of radius `kappa`.
pub fn project_inf_ball(w: &DenseMatrix, kappa: f64) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&kappa) && kappa != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "kappa must lie in [0,1), got {kappa}"
        )));
    }
    let mut out = w.clone();
    for i in 0..out.rows() {
        let projected = project_l1_ball(w.row(i), kappa);
        out.row_mut(i).copy_from_slice(&projected);
    }
    Ok(out)
}

/// Versioned checkpoint container; JSON with full-precision floats so the
/// round trip is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub activation: String,
    pub params: ModelParams,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &ModelParams, act: Activation) -> Result<()> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        activation: act.name(),
        params: params.clone(),
    };
    let json = serde_json::to_string_pretty(&ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Activation)> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint version {}",
            ckpt.format_version
        )));
    }
    let act = Activation::parse(&ckpt.activation)?;
    ckpt.params.validate()?;
    Ok((ckpt.params, act))
}
