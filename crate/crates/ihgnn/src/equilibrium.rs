//! Forward fixed-point solver for the implicit layer `Z = phi(M Z W + X~)`,
//! convergence-rate diagnostics, and the explicit layer-stack reference path.

use crate::error::{Error, Result};
use crate::hypergraph::PropagationOperator;
use crate::linalg::{frobenius_distance, power_iteration_abs, spmm, DenseMatrix};
use serde::{Deserialize, Serialize};

/// Entrywise activation. Every kind is 1-Lipschitz (nonexpansive), which is
/// what the contraction argument requires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Negative slope must lie in (0, 1].
    LeakyRelu(f64),
    Tanh,
    Identity,
}

impl Activation {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative. At the relu/leaky kink the subgradient 0 (resp. slope)
    /// convention for x = 0 is: relu' (0) = 0, leaky'(0) = 1.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// phi(alpha x) = alpha phi(x) for alpha >= 0.
    pub fn is_positively_homogeneous(&self) -> bool {
        !matches!(self, Activation::Tanh)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu(s) = *self {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "leaky_relu slope must be in (0,1], got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, m: &DenseMatrix) -> DenseMatrix {
        m.map(|x| self.value(x))
    }

    pub fn apply_derivative(&self, m: &DenseMatrix) -> DenseMatrix {
        m.map(|x| self.derivative(x))
    }

    pub fn parse(name: &str) -> Result<Activation> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => {
                if let Some(rest) = other.strip_prefix("leaky_relu:") {
                    let s: f64 = rest.parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad leaky_relu slope: {rest}"))
                    })?;
                    let act = Activation::LeakyRelu(s);
                    act.validate()?;
                    Ok(act)
                } else {
                    Err(Error::InvalidArgument(format!("unknown activation: {other}")))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
            Activation::Tanh => "tanh".into(),
            Activation::Identity => "identity".into(),
        }
    }
}

/// Solver settings shared by the forward and adjoint passes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// When true, a contraction-precondition violation is a hard error;
    /// otherwise the solve proceeds (training transiently touches the
    /// boundary before projection).
    pub strict: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iters: 300,
            strict: true,
        }
    }
}

/// Number of power iterations / tolerance used for the precondition check.
const PRECHECK_ITERS: usize = 50;
const PRECHECK_TOL: f64 = 1e-8;

/// Converged equilibrium state with its pre-activation cache and the
/// per-iteration residual trace `||Z^(t) - Z^(t-1)||_F`.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub z_star: DenseMatrix,
    /// `M Z* W + X~`, cached for the adjoint pass.
    pub pre_activation: DenseMatrix,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Power-iteration estimate of `lambda_max(|W|)` made before solving.
    pub lambda_abs_w: f64,
}

/// Picard iteration `Z <- phi(M Z W + X~)` from `init` (zero by default).
pub fn solve_forward(
    op: &PropagationOperator,
    w: &DenseMatrix,
    x_tilde: &DenseMatrix,
    act: Activation,
    cfg: &SolverConfig,
    init: Option<&DenseMatrix>,
) -> Result<EquilibriumSolution> {
    act.validate()?;
    let n = op.node_count();
    let d_h = w.rows();
    if w.cols() != d_h {
        return Err(Error::NotSquare {
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    if x_tilde.rows() != n || x_tilde.cols() != d_h {
        return Err(Error::dim(
            "solve_forward x_tilde",
            format!("{n}x{d_h}"),
            format!("{}x{}", x_tilde.rows(), x_tilde.cols()),
        ));
    }

    let lambda = power_iteration_abs(w, PRECHECK_ITERS, PRECHECK_TOL)?.lambda;
    if lambda >= 1.0 && cfg.strict {
        return Err(Error::ContractionViolated { lambda });
    }

    let mut z = match init {
        Some(z0) => {
            if z0.rows() != n || z0.cols() != d_h {
                return Err(Error::dim(
                    "solve_forward init",
                    format!("{n}x{d_h}"),
                    format!("{}x{}", z0.rows(), z0.cols()),
                ));
            }
            z0.clone()
        }
        None => DenseMatrix::zeros(n, d_h),
    };

    let mut residuals = Vec::new();
    let mut pre = DenseMatrix::zeros(n, d_h);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        pre = spmm(op.matrix(), &z)?.matmul(w)?.add(x_tilde)?;
        let z_next = act.apply(&pre);
        if !z_next.is_finite() {
            return Err(Error::NonFinite("forward fixed-point iteration".into()));
        }
        let residual = frobenius_distance(&z_next, &z)?;
        residuals.push(residual);
        z = z_next;
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(EquilibriumSolution {
        z_star: z,
        pre_activation: pre,
        residuals,
        iterations,
        converged,
        lambda_abs_w: lambda,
    })
}

/// Fit the geometric decay rate of a residual trace: exp of the least-squares
/// slope of log residuals over iteration index. Residuals at or below the
/// 1e-14 numerical floor are discarded; at least 4 usable points required.
pub fn convergence_rate_fit(residuals: &[f64]) -> Result<f64> {
    const FLOOR: f64 = 1e-14;
    let usable: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > FLOOR)
        .map(|(i, r)| (i as f64, r.ln()))
        .collect();
    if usable.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need >= 4 residuals above the numerical floor, got {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|(x, _)| x).sum();
    let sy: f64 = usable.iter().map(|(_, y)| y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(slope.exp())
}

/// Classical explicit stack `X^(t+1) = phi(M X^(t) W)` with shared weights,
/// used as the oversmoothing reference path.
pub fn unroll_explicit(
    op: &PropagationOperator,
    w: &DenseMatrix,
    x: &DenseMatrix,
    act: Activation,
    layers: usize,
) -> Result<DenseMatrix> {
    if layers == 0 {
        return Err(Error::InvalidArgument("layers must be >= 1".into()));
    }
    let mut cur = x.clone();
    for _ in 0..layers {
        cur = act.apply(&spmm(op.matrix(), &cur)?.matmul(w)?);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{build_operator, random_admissible, Hypergraph};
    use crate::linalg::max_row_abs_sum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_node_op() -> PropagationOperator {
        let g = Hypergraph::new(1, vec![(vec![0], 1.0)]).unwrap();
        build_operator(&g).unwrap()
    }

    #[test]
    fn zero_weight_converges_in_one_productive_step() {
        let g = Hypergraph::new(2, vec![(vec![0, 1], 1.0)]).unwrap();
        let op = build_operator(&g).unwrap();
        let w = DenseMatrix::zeros(3, 3);
        let x_tilde =
            DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, -1.0]]).unwrap();
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Tanh, &SolverConfig::default(), None)
            .unwrap();
        assert!(sol.converged);
        // iteration 1 reaches phi(X~); iteration 2 only confirms it
        assert!(sol.iterations <= 2);
        let expected = Activation::Tanh.apply(&x_tilde);
        assert!(frobenius_distance(&sol.z_star, &expected).unwrap() < 1e-12);
    }

    #[test]
    fn scalar_fixed_point() {
        // z = 0.5 z + 1  =>  z* = 2
        let op = single_node_op();
        let w = DenseMatrix::from_rows(&[vec![0.5]]).unwrap();
        let x_tilde = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let cfg = SolverConfig {
            tol: 1e-12,
            max_iters: 200,
            strict: true,
        };
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Identity, &cfg, None).unwrap();
        assert!(sol.converged);
        assert!((sol.z_star.get(0, 0) - 2.0).abs() < 1e-10);
        // scalar iteration contracts at exactly |w| = 0.5
        let rate = convergence_rate_fit(&sol.residuals).unwrap();
        assert!((rate - 0.5).abs() < 1e-6, "rate = {rate}");
    }

    #[test]
    fn zero_input_zero_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_admissible(8, 6, &mut rng);
        let op = build_operator(&g).unwrap();
        let w = DenseMatrix::from_fn(4, 4, |_, _| rng.gen_range(-0.2..0.2));
        let x_tilde = DenseMatrix::zeros(8, 4);
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Relu, &SolverConfig::default(), None)
            .unwrap();
        assert!(sol.converged);
        assert_eq!(sol.z_star.frobenius_norm(), 0.0);
    }

    #[test]
    fn contraction_violation_is_error_in_strict_mode() {
        let op = single_node_op();
        let w = DenseMatrix::from_rows(&[vec![1.5]]).unwrap();
        let x_tilde = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let err = solve_forward(
            &op,
            &w,
            &x_tilde,
            Activation::Identity,
            &SolverConfig::default(),
            None,
        )
        .unwrap_err();
        match err {
            Error::ContractionViolated { lambda } => assert!((lambda - 1.5).abs() < 1e-6),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rate_fit_exact_geometric() {
        let rate = convergence_rate_fit(&[1.0, 0.5, 0.25, 0.125]).unwrap();
        assert!((rate - 0.5).abs() < 1e-9);
        assert!(convergence_rate_fit(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn rate_bounded_by_weight_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_admissible(12, 10, &mut rng);
        let op = build_operator(&g).unwrap();
        // scale a random W to max-row-abs-sum exactly 0.9
        let mut w = DenseMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let norm = max_row_abs_sum(&w);
        w = w.scale(0.9 / norm);
        let x_tilde = DenseMatrix::from_fn(12, 5, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = SolverConfig {
            tol: 1e-10,
            max_iters: 1000,
            strict: true,
        };
        let sol = solve_forward(&op, &w, &x_tilde, Activation::Tanh, &cfg, None).unwrap();
        assert!(sol.converged);
        let rate = convergence_rate_fit(&sol.residuals).unwrap();
        assert!(rate <= 0.9 + 0.02, "rate = {rate}");
    }

    #[test]
    fn init_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_admissible(10, 8, &mut rng);
        let op = build_operator(&g).unwrap();
        let mut w = DenseMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        w = w.scale(0.8 / max_row_abs_sum(&w));
        let x_tilde = DenseMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = SolverConfig {
            tol: 1e-10,
            max_iters: 2000,
            strict: true,
        };
        let a = DenseMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        let shift = 10.0 / (4.0 * 10.0f64).sqrt();
        let b = a.map(|v| v + shift);
        let sol_a = solve_forward(&op, &w, &x_tilde, Activation::Tanh, &cfg, Some(&a)).unwrap();
        let sol_b = solve_forward(&op, &w, &x_tilde, Activation::Tanh, &cfg, Some(&b)).unwrap();
        let dist = frobenius_distance(&sol_a.z_star, &sol_b.z_star).unwrap();
        assert!(dist <= 10.0 * cfg.tol, "dist = {dist:e}");
    }

    #[test]
    fn unroll_single_layer_identity() {
        let g = Hypergraph::new(3, vec![(vec![0, 1], 1.0), (vec![1, 2], 1.0)]).unwrap();
        let op = build_operator(&g).unwrap();
        let x = DenseMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let w = DenseMatrix::identity(2);
        let out = unroll_explicit(&op, &w, &x, Activation::Identity, 1).unwrap();
        let expected = spmm(op.matrix(), &x).unwrap();
        assert!(frobenius_distance(&out, &expected).unwrap() < 1e-14);
    }

    #[test]
    fn unroll_two_layers_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_admissible(6, 5, &mut rng);
        let op = build_operator(&g).unwrap();
        let x = DenseMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let w = DenseMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.5..0.5));
        let out = unroll_explicit(&op, &w, &x, Activation::Identity, 2).unwrap();
        let m = op.matrix().to_dense();
        let expected = m.matmul(&m.matmul(&x).unwrap().matmul(&w).unwrap()).unwrap().matmul(&w).unwrap();
        assert!(frobenius_distance(&out, &expected).unwrap() < 1e-12);
    }

    #[test]
    fn tolerance_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_admissible(10, 8, &mut rng);
        let op = build_operator(&g).unwrap();
        let mut w = DenseMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        w = w.scale(0.7 / max_row_abs_sum(&w));
        let x_tilde = DenseMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        let mut prev_gap = f64::INFINITY;
        for tol in [1e-4, 5e-5, 2.5e-5, 1.25e-5] {
            let cfg = SolverConfig {
                tol,
                max_iters: 5000,
                strict: true,
            };
            let sol = solve_forward(&op, &w, &x_tilde, Activation::Tanh, &cfg, None).unwrap();
            let gap = frobenius_distance(&Activation::Tanh.apply(&sol.pre_activation), &sol.z_star)
                .unwrap();
            assert!(gap <= prev_gap + 1e-15);
            prev_gap = gap;
        }
    }
}
