//! Implicit differentiation through the equilibrium layer.
//!
//! With `Z* = phi(P)`, `P = M Z* W + X~`, and upstream gradient
//! `G = dL/dZ` through the readout, the adjoint matrix `U` solves the
//! linearized fixed-point equation
//!
//! ```text
//! U = phi'(P) (.) (M^T U W^T + G)
//! ```
//!
//! which contracts under the same condition as the forward solve. Parameter
//! gradients then assemble as inner products against `U`.

use crate::equilibrium::{Activation, EquilibriumSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::hypergraph::PropagationOperator;
use crate::linalg::{frobenius_distance, spmm, DenseMatrix};

/// Adjoint state plus its residual trace.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub u: DenseMatrix,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Gradients for all four parameter groups.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub grad_w: DenseMatrix,
    pub grad_theta1: DenseMatrix,
    pub grad_theta2: DenseMatrix,
    pub grad_b: Vec<f64>,
    pub adjoint_residuals: Vec<f64>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.grad_w.is_finite()
            && self.grad_theta1.is_finite()
            && self.grad_theta2.is_finite()
            && self.grad_b.iter().all(|v| v.is_finite())
    }
}

/// Solve the adjoint fixed-point equation by Picard iteration from zero.
/// `phi'` is evaluated at the cached pre-activation, where the chain rule
/// differentiates.
pub fn solve_adjoint(
    op: &PropagationOperator,
    w: &DenseMatrix,
    sol: &EquilibriumSolution,
    act: Activation,
    upstream: &DenseMatrix,
    cfg: &SolverConfig,
) -> Result<AdjointSolution> {
    let n = op.node_count();
    let d_h = w.rows();
    if upstream.rows() != n || upstream.cols() != d_h {
        return Err(Error::dim(
            "solve_adjoint upstream",
            format!("{n}x{d_h}"),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let phi_prime = act.apply_derivative(&sol.pre_activation);
    let m_t = op.matrix().transpose();
    let w_t = w.transpose();

    let mut u = DenseMatrix::zeros(n, d_h);
    let mut residuals = Vec::new();
    for it in 1..=cfg.max_iters {
        let next = phi_prime.hadamard(&spmm(&m_t, &u)?.matmul(&w_t)?.add(upstream)?)?;
        if !next.is_finite() {
            return Err(Error::NonFinite("adjoint fixed-point iteration".into()));
        }
        let residual = frobenius_distance(&next, &u)?;
        residuals.push(residual);
        u = next;
        if residual <= cfg.tol {
            return Ok(AdjointSolution {
                u,
                residuals,
                iterations: it,
            });
        }
    }
    let last = *residuals.last().unwrap_or(&f64::INFINITY);
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        last_residual: last,
        residuals,
    })
}

/// Assemble the full gradient bundle from the adjoint state:
///
/// ```text
/// grad_W      = (M Z*)^T U        grad_Theta1 = X^T U
/// grad_b      = U^T 1_n           grad_Theta2 = Z*^T dL/dY^
/// ```
pub fn parameter_gradients(
    x: &DenseMatrix,
    op: &PropagationOperator,
    sol: &EquilibriumSolution,
    adjoint: &AdjointSolution,
    loss_grad_output: &DenseMatrix,
    theta2: &DenseMatrix,
) -> Result<GradientBundle> {
    let n = op.node_count();
    if x.rows() != n || sol.z_star.rows() != n {
        return Err(Error::dim("parameter_gradients nodes", n, x.rows()));
    }
    if loss_grad_output.rows() != n || loss_grad_output.cols() != theta2.cols() {
        return Err(Error::dim(
            "parameter_gradients loss_grad_output",
            format!("{n}x{}", theta2.cols()),
            format!("{}x{}", loss_grad_output.rows(), loss_grad_output.cols()),
        ));
    }
    let mz = spmm(op.matrix(), &sol.z_star)?;
    let grad_w = mz.transpose().matmul(&adjoint.u)?;
    let grad_theta1 = x.transpose().matmul(&adjoint.u)?;
    let grad_theta2 = sol.z_star.transpose().matmul(loss_grad_output)?;
    let grad_b = adjoint.u.column_sums();
    let bundle = GradientBundle {
        grad_w,
        grad_theta1,
        grad_theta2,
        grad_b,
        adjoint_residuals: adjoint.residuals.clone(),
    };
    if !bundle.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    Ok(bundle)
}

/// Central finite differences of the full pipeline loss (forward solve,
/// readout, masked cross-entropy) with respect to every parameter entry.
/// Independent of the adjoint path; used to cross-check it.
pub fn finite_difference_gradients(
    op: &PropagationOperator,
    x: &DenseMatrix,
    params: &crate::model::ModelParams,
    act: Activation,
    labels: &[usize],
    mask: &[usize],
    cfg: &SolverConfig,
    eps: f64,
) -> Result<GradientBundle> {
    let loss_of = |p: &crate::model::ModelParams| -> Result<f64> {
        let (pred, _) = crate::model::forward(x, op, p, act, cfg)?;
        Ok(crate::model::cross_entropy_masked(&pred, labels, mask)?.0)
    };

    let fd_matrix = |select: &dyn Fn(&mut crate::model::ModelParams) -> &mut DenseMatrix|
        -> Result<DenseMatrix> {
        let mut probe = params.clone();
        let (rows, cols) = {
            let m = select(&mut probe);
            (m.rows(), m.cols())
        };
        let mut grad = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = params.clone();
                {
                    let m = select(&mut plus);
                    let v = m.get(i, j);
                    m.set(i, j, v + eps);
                }
                let mut minus = params.clone();
                {
                    let m = select(&mut minus);
                    let v = m.get(i, j);
                    m.set(i, j, v - eps);
                }
                grad.set(i, j, (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * eps));
            }
        }
        Ok(grad)
    };

    let grad_w = fd_matrix(&|p| &mut p.w)?;
    let grad_theta1 = fd_matrix(&|p| &mut p.theta1)?;
    let grad_theta2 = fd_matrix(&|p| &mut p.theta2)?;
    let mut grad_b = vec![0.0; params.b.len()];
    for (k, g) in grad_b.iter_mut().enumerate() {
        let mut plus = params.clone();
        plus.b[k] += eps;
        let mut minus = params.clone();
        minus.b[k] -= eps;
        *g = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * eps);
    }
    Ok(GradientBundle {
        grad_w,
        grad_theta1,
        grad_theta2,
        grad_b,
        adjoint_residuals: Vec::new(),
    })
}

/// Analytic implicit gradients of the same pipeline loss, packaged for
/// direct comparison with [`finite_difference_gradients`].
pub fn pipeline_gradients(
    op: &PropagationOperator,
    x: &DenseMatrix,
    params: &crate::model::ModelParams,
    act: Activation,
    labels: &[usize],
    mask: &[usize],
    cfg: &SolverConfig,
) -> Result<GradientBundle> {
    let (pred, sol) = crate::model::forward(x, op, params, act, cfg)?;
    let (_, loss_grad_logits) = crate::model::cross_entropy_masked(&pred, labels, mask)?;
    let upstream = loss_grad_logits.matmul(&params.theta2.transpose())?;
    let adjoint = solve_adjoint(op, &params.w, &sol, act, &upstream, cfg)?;
    parameter_gradients(x, op, &sol, &adjoint, &loss_grad_logits, &params.theta2)
}

/// Max over all entries of `|a - b| / max(|b|, floor)`, where entries whose
/// magnitudes both fall below `abs_tol` are ignored.
pub fn max_gradient_discrepancy(a: &GradientBundle, b: &GradientBundle, abs_tol: f64) -> f64 {
    let pairs = a
        .grad_w
        .as_slice()
        .iter()
        .zip(b.grad_w.as_slice())
        .chain(a.grad_theta1.as_slice().iter().zip(b.grad_theta1.as_slice()))
        .chain(a.grad_theta2.as_slice().iter().zip(b.grad_theta2.as_slice()))
        .chain(a.grad_b.iter().zip(&b.grad_b));
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        let diff = (x - y).abs();
        if diff <= abs_tol {
            continue;
        }
        worst = worst.max(diff / x.abs().max(y.abs()).max(1e-12));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_forward;
    use crate::hypergraph::{build_operator, Hypergraph};

    fn single_node_op() -> PropagationOperator {
        let g = Hypergraph::new(1, vec![(vec![0], 1.0)]).unwrap();
        build_operator(&g).unwrap()
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            tol: 1e-12,
            max_iters: 1000,
            strict: true,
        }
    }

    #[test]
    fn zero_upstream_zero_adjoint() {
        let op = single_node_op();
        let w = DenseMatrix::from_rows(&[vec![0.5]]).unwrap();
        let x_tilde = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Identity, &tight(), None).unwrap();
        let adj = solve_adjoint(&op, &w, &sol, Activation::Identity, &DenseMatrix::zeros(1, 1), &tight())
            .unwrap();
        assert_eq!(adj.u.get(0, 0), 0.0);
    }

    #[test]
    fn zero_weight_adjoint_is_upstream() {
        let op = single_node_op();
        let w = DenseMatrix::zeros(1, 1);
        let x_tilde = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Identity, &tight(), None).unwrap();
        let g = DenseMatrix::from_rows(&[vec![3.5]]).unwrap();
        let adj = solve_adjoint(&op, &w, &sol, Activation::Identity, &g, &tight()).unwrap();
        assert!((adj.u.get(0, 0) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_adjoint_closed_form() {
        // u = 0.5 u + 1  =>  u = 2
        let op = single_node_op();
        let w = DenseMatrix::from_rows(&[vec![0.5]]).unwrap();
        let x_tilde = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Identity, &tight(), None).unwrap();
        let g = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let adj = solve_adjoint(&op, &w, &sol, Activation::Identity, &g, &tight()).unwrap();
        assert!((adj.u.get(0, 0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_gradients_match_symbolic() {
        // z*(w, theta1, b) = (theta1 x + b) / (1 - w); L = theta2 z*
        let (w_v, t1, t2, b, xv) = (0.5, 0.7, 1.3, 0.2, 2.0);
        let op = single_node_op();
        let w = DenseMatrix::from_rows(&[vec![w_v]]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![xv]]).unwrap();
        let x_tilde = DenseMatrix::from_rows(&[vec![t1 * xv + b]]).unwrap();
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Identity, &tight(), None).unwrap();
        let z_star = sol.z_star.get(0, 0);
        assert!((z_star - (t1 * xv + b) / (1.0 - w_v)).abs() < 1e-10);

        let loss_grad_output = DenseMatrix::from_rows(&[vec![1.0]]).unwrap(); // dL/dYhat = 1
        let theta2 = DenseMatrix::from_rows(&[vec![t2]]).unwrap();
        let upstream = loss_grad_output.matmul(&theta2.transpose()).unwrap();
        let adj = solve_adjoint(&op, &w, &sol, Activation::Identity, &upstream, &tight()).unwrap();
        let grads = parameter_gradients(&x, &op, &sol, &adj, &loss_grad_output, &theta2).unwrap();

        let denom = 1.0 - w_v;
        // hand-derived: dL/dw = t2 z*/(1-w), dL/dtheta1 = t2 x/(1-w),
        // dL/db = t2/(1-w), dL/dtheta2 = z*
        assert!((grads.grad_w.get(0, 0) - t2 * z_star / denom).abs() < 1e-8);
        assert!((grads.grad_theta1.get(0, 0) - t2 * xv / denom).abs() < 1e-8);
        assert!((grads.grad_b[0] - t2 / denom).abs() < 1e-8);
        assert!((grads.grad_theta2.get(0, 0) - z_star).abs() < 1e-8);
    }

    #[test]
    fn adjoint_linear_in_upstream() {
        use crate::hypergraph::random_admissible;
        use crate::linalg::max_row_abs_sum;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_admissible(8, 6, &mut rng);
        let op = build_operator(&g).unwrap();
        let mut w = DenseMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        w = w.scale(0.7 / max_row_abs_sum(&w));
        let x_tilde = DenseMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Identity, &tight(), None).unwrap();
        let g1 = DenseMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let alpha = 2.75;
        let adj1 = solve_adjoint(&op, &w, &sol, Activation::Identity, &g1, &tight()).unwrap();
        let adj2 =
            solve_adjoint(&op, &w, &sol, Activation::Identity, &g1.scale(alpha), &tight()).unwrap();
        let diff = frobenius_distance(&adj1.u.scale(alpha), &adj2.u).unwrap();
        assert!(diff <= 1e-10, "diff = {diff:e}");
    }
}
