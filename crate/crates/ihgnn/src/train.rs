//! Projected-gradient training loop, evaluation metrics, and the
//! multi-seed stability harness.
//!
//! Every epoch runs: forward solve, masked cross-entropy on the training
//! nodes, implicit gradients through the equilibrium, an optimizer step on
//! all four parameter groups, and a projection of `W` back onto the
//! row-wise l1 ball of radius `kappa`.

use crate::autograd::{parameter_gradients, solve_adjoint};
use crate::data::SplitSpec;
use crate::equilibrium::{Activation, SolverConfig};
use crate::error::{Error, Result};
use crate::hypergraph::{build_operator, Hypergraph, PropagationOperator};
use crate::linalg::{max_row_abs_sum, DenseMatrix};
use crate::model::{cross_entropy_masked, forward, project_inf_ball, ModelParams, Prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Named RNG substreams so every random purpose draws from an independent
/// stream of the run seed.
pub mod substream {
    pub const INIT: u64 = 0;
    pub const DROPOUT: u64 = 1;
    pub const SPLITS: u64 = 2;
}

pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adaptive-moment estimation with the usual (0.9, 0.999, 1e-8) defaults.
    AdaptiveMoment,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub kappa: f64,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub solver: SolverConfig,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 300,
            kappa: 0.9,
            hidden_dim: 128,
            dropout_rate: 0.5,
            optimizer: OptimizerKind::AdaptiveMoment,
            seed: 0,
            solver: SolverConfig::default(),
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidArgument("kappa must lie in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument("dropout_rate must lie in [0,1)".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        self.activation.validate()
    }
}

/// Per-epoch metrics row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub macro_f1: f64,
    pub forward_iters: usize,
    pub adjoint_iters: usize,
    pub lambda_abs_w: f64,
}

/// Glorot-uniform initialization; `W` is drawn then immediately projected
/// into the `kappa` ball so the contraction precondition holds from epoch 1.
pub fn init_params(
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    kappa: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    let glorot = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit))
    };
    let w = glorot(hidden_dim, hidden_dim, rng);
    let theta1 = glorot(input_dim, hidden_dim, rng);
    let theta2 = glorot(hidden_dim, output_dim, rng);
    Ok(ModelParams {
        w: project_inf_ball(&w, kappa)?,
        theta1,
        theta2,
        b: vec![0.0; hidden_dim],
        kappa,
    })
}

/// Adam/SGD state over the four parameter groups.
struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Apply one update over the flattened (param, grad) stream.
    fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let mut offset = 0;
        for (p_group, g_group) in params.iter_mut().zip(grads) {
            for (p, g) in p_group.iter_mut().zip(*g_group) {
                match self.kind {
                    OptimizerKind::Sgd => *p -= self.lr * g,
                    OptimizerKind::AdaptiveMoment => {
                        let m = &mut self.m[offset];
                        let v = &mut self.v[offset];
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / (1.0 - ADAM_BETA1.powi(self.step as i32));
                        let v_hat = *v / (1.0 - ADAM_BETA2.powi(self.step as i32));
                        *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
                offset += 1;
            }
        }
    }
}

/// Inverted dropout on the input features, re-sampled each epoch.
fn dropout_features(x: &DenseMatrix, rate: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    if rate == 0.0 {
        return x.clone();
    }
    let keep = 1.0 - rate;
    DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            x.get(i, j) / keep
        }
    })
}

/// Argmax accuracy and macro-averaged F1 of a prediction over a mask.
pub fn accuracy_and_macro_f1(
    pred: &Prediction,
    labels: &[usize],
    mask: &[usize],
    num_classes: usize,
) -> Result<(f64, f64)> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    let predicted = pred.argmax();
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fan = vec![0usize; num_classes];
    let mut correct = 0usize;
    for &i in mask {
        let y = labels[i];
        let p = predicted[i];
        if p == y {
            correct += 1;
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fan[y] += 1;
        }
    }
    let accuracy = correct as f64 / mask.len() as f64;
    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let denom = 2 * tp[c] + fp[c] + fan[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok((accuracy, f1_sum / num_classes as f64))
}

/// Evaluate a trained model on a node mask.
pub fn evaluate(
    params: &ModelParams,
    op: &PropagationOperator,
    x: &DenseMatrix,
    labels: &[usize],
    mask: &[usize],
    act: Activation,
    solver: &SolverConfig,
) -> Result<(f64, f64)> {
    let (pred, _) = forward(x, op, params, act, solver)?;
    accuracy_and_macro_f1(&pred, labels, mask, params.output_dim())
}

/// Train on a hypergraph; returns the parameters at the best validation
/// accuracy (lowest epoch breaks ties) and the full metrics trace.
pub fn train(
    g: &Hypergraph,
    x: &DenseMatrix,
    labels: &[usize],
    splits: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let op = build_operator(g)?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut init_rng = substream_rng(cfg.seed, substream::INIT);
    let mut params = init_params(x.cols(), cfg.hidden_dim, num_classes, cfg.kappa, &mut init_rng)?;
    let mut dropout_rng = substream_rng(cfg.seed, substream::DROPOUT);

    let n_params = cfg.hidden_dim * cfg.hidden_dim
        + x.cols() * cfg.hidden_dim
        + cfg.hidden_dim * num_classes
        + cfg.hidden_dim;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, n_params);

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = params.clone();
    let mut best_val = f64::NEG_INFINITY;

    for epoch in 1..=cfg.epochs {
        let x_drop = dropout_features(x, cfg.dropout_rate, &mut dropout_rng);

        let (pred, sol) = forward(&x_drop, &op, &params, cfg.activation, &cfg.solver)
            .map_err(|e| annotate_epoch(e, epoch))?;
        let (train_loss, loss_grad_logits) = cross_entropy_masked(&pred, labels, &splits.train)?;
        let upstream = loss_grad_logits.matmul(&params.theta2.transpose())?;
        let adjoint = solve_adjoint(&op, &params.w, &sol, cfg.activation, &upstream, &cfg.solver)
            .map_err(|e| annotate_epoch(e, epoch))?;
        let grads =
            parameter_gradients(&x_drop, &op, &sol, &adjoint, &loss_grad_logits, &params.theta2)?;

        apply_update(&mut params, &grads, &mut optimizer);
        params.w = project_inf_ball(&params.w, cfg.kappa)?;

        // evaluation with dropout disabled
        let (eval_pred, _) = forward(x, &op, &params, cfg.activation, &cfg.solver)
            .map_err(|e| annotate_epoch(e, epoch))?;
        let (val_accuracy, _) = if splits.val.is_empty() {
            (f64::NAN, 0.0)
        } else {
            accuracy_and_macro_f1(&eval_pred, labels, &splits.val, num_classes)?
        };
        let (test_accuracy, macro_f1) = if splits.test.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            accuracy_and_macro_f1(&eval_pred, labels, &splits.test, num_classes)?
        };

        trace.push(MetricsRecord {
            epoch,
            train_loss,
            val_accuracy,
            test_accuracy,
            macro_f1,
            forward_iters: sol.iterations,
            adjoint_iters: adjoint.iterations,
            lambda_abs_w: sol.lambda_abs_w,
        });

        let selector = if splits.val.is_empty() {
            -train_loss
        } else {
            val_accuracy
        };
        if selector > best_val {
            best_val = selector;
            best = params.clone();
        }
    }

    Ok((best, trace))
}

fn annotate_epoch(e: Error, epoch: usize) -> Error {
    Error::InvalidArgument(format!("training aborted at epoch {epoch}: {e}"))
}

fn apply_update(
    params: &mut ModelParams,
    grads: &crate::autograd::GradientBundle,
    optimizer: &mut Optimizer,
) {
    // fixed group order keeps optimizer moment state aligned across epochs
    let mut groups: Vec<&mut [f64]> = vec![
        params.w.as_mut_slice(),
        params.theta1.as_mut_slice(),
        params.theta2.as_mut_slice(),
        params.b.as_mut_slice(),
    ];
    let grad_groups: Vec<&[f64]> = vec![
        grads.grad_w.as_slice(),
        grads.grad_theta1.as_slice(),
        grads.grad_theta2.as_slice(),
        grads.grad_b.as_slice(),
    ];
    optimizer.update(&mut groups, &grad_groups);
}

/// Aggregate statistics over repeated runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// Normal-approximation 95% confidence half-width.
    pub ci95: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> MetricSummary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std = var.sqrt();
        MetricSummary {
            mean,
            std,
            ci95: 1.96 * std / n.sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub seeds: Vec<u64>,
    pub test_accuracy: MetricSummary,
    pub macro_f1: MetricSummary,
}

/// Run the same configuration under each seed and summarize the final
/// (best-validation) test metrics.
pub fn repeat_runs(
    g: &Hypergraph,
    x: &DenseMatrix,
    labels: &[usize],
    splits: &SplitSpec,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<StabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 seeds".into()));
    }
    let op = build_operator(g)?;
    let mut accs = Vec::with_capacity(seeds.len());
    let mut f1s = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run_cfg = TrainConfig { seed, ..*cfg };
        let (params, _) = train(g, x, labels, splits, &run_cfg)?;
        let (acc, f1) = evaluate(
            &params,
            &op,
            x,
            labels,
            &splits.test,
            cfg.activation,
            &cfg.solver,
        )?;
        accs.push(acc);
        f1s.push(f1);
    }
    Ok(StabilityReport {
        seeds: seeds.to_vec(),
        test_accuracy: MetricSummary::from_values(accs),
        macro_f1: MetricSummary::from_values(f1s),
    })
}

/// 20-node two-block toy instance: block-indicator features with a small
/// deterministic perturbation, one hyperedge per block. Linearly separable.
pub fn toy_two_block_instance() -> (Hypergraph, DenseMatrix, Vec<usize>, SplitSpec) {
    let n = 20;
    let g = Hypergraph::new(
        n,
        vec![((0..10).collect(), 1.0), ((10..20).collect(), 1.0)],
    )
    .unwrap();
    let x = DenseMatrix::from_fn(n, 2, |i, j| {
        let block = usize::from(i >= 10);
        let base = if j == block { 1.0 } else { 0.0 };
        base + 0.05 * ((i * 2 + j) as f64 * 0.7).sin()
    });
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= 10)).collect();
    let splits = SplitSpec {
        train: vec![0, 1, 2, 3, 10, 11, 12, 13],
        val: vec![4, 5, 14, 15],
        test: vec![6, 7, 8, 9, 16, 17, 18, 19],
    };
    (g, x, labels, splits)
}
