//! Mini-batch training of dense networks with the ASN transfer curve as the
//! activation, categorical cross-entropy and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{argmax, softmax, LayerSpec, NetworkGraph};
use crate::transfer::Transfer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of the old value in the running batch-norm statistics.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 800,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            bn_momentum: 0.99,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning rate must be > 0".into()));
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("bn_momentum", self.bn_momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Gradient of one layer's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Dense { weights: Vec<f64>, bias: Vec<f64> },
    BatchNorm { gamma: Vec<f64>, beta: Vec<f64> },
    None,
}

impl LayerGrad {
    fn zeros_like(layer: &LayerSpec) -> Self {
        match layer {
            LayerSpec::Dense(d) => LayerGrad::Dense {
                weights: vec![0.0; d.weights.len()],
                bias: vec![0.0; d.bias.len()],
            },
            LayerSpec::BatchNorm(bn) => LayerGrad::BatchNorm {
                gamma: vec![0.0; bn.channels()],
                beta: vec![0.0; bn.channels()],
            },
            _ => LayerGrad::None,
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        match self {
            LayerGrad::Dense { weights, bias } => vec![weights, bias],
            LayerGrad::BatchNorm { gamma, beta } => vec![gamma, beta],
            LayerGrad::None => vec![],
        }
    }
}

pub type Gradients = Vec<LayerGrad>;

/// Mutable views of a layer's trainable parameters, in [`LayerGrad`] order.
fn param_slices(layer: &mut LayerSpec) -> Vec<&mut [f64]> {
    match layer {
        LayerSpec::Dense(d) => vec![&mut d.weights, &mut d.bias],
        LayerSpec::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
        _ => vec![],
    }
}

fn check_trainable(graph: &NetworkGraph) -> Result<()> {
    graph.validate()?;
    for (i, layer) in graph.layers.iter().enumerate() {
        match layer {
            LayerSpec::Dense(_)
            | LayerSpec::BatchNorm(_)
            | LayerSpec::Transfer(_)
            | LayerSpec::SoftmaxReadout => {}
            other => {
                return Err(Error::Unsupported(format!(
                    "training layer {i} ({}); only dense networks are trained",
                    other.kind()
                )))
            }
        }
    }
    Ok(())
}

/// Per-layer values kept for the backward pass.
enum Cache {
    Dense {
        input: Vec<Vec<f64>>,
    },
    BatchNorm {
        xhat: Vec<Vec<f64>>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Transfer {
        input: Vec<Vec<f64>>,
        curve: Option<Transfer>,
    },
    Identity,
}

/// Training-mode forward pass: batch statistics in every batch-norm layer.
/// Returns the readout scores and the caches.
fn forward_train(graph: &NetworkGraph, batch: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<Cache>)> {
    let readout = graph.readout_index();
    let mut x: Vec<Vec<f64>> = batch.iter().map(|v| v.to_vec()).collect();
    let mut caches = Vec::with_capacity(graph.layers.len());
    let n = batch.len() as f64;
    for (i, layer) in graph.layers.iter().enumerate() {
        match layer {
            LayerSpec::Dense(d) => {
                let y = x.iter().map(|row| d.forward(row)).collect();
                caches.push(Cache::Dense {
                    input: std::mem::replace(&mut x, y),
                });
            }
            LayerSpec::BatchNorm(bn) => {
                let c = bn.channels();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for row in &x {
                    for j in 0..c {
                        mean[j] += row[j] / n;
                    }
                }
                for row in &x {
                    for j in 0..c {
                        var[j] += (row[j] - mean[j]).powi(2) / n;
                    }
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
                let xhat: Vec<Vec<f64>> = x
                    .iter()
                    .map(|row| (0..c).map(|j| (row[j] - mean[j]) * inv_std[j]).collect())
                    .collect();
                x = xhat
                    .iter()
                    .map(|row| (0..c).map(|j| bn.gamma[j] * row[j] + bn.beta[j]).collect())
                    .collect();
                caches.push(Cache::BatchNorm {
                    xhat,
                    inv_std,
                    mean,
                    var,
                });
            }
            LayerSpec::Transfer(p) if i != readout => {
                let t = Transfer::new(p)?;
                let y = x
                    .iter()
                    .map(|row| row.iter().map(|&s| t.eval(s)).collect())
                    .collect();
                caches.push(Cache::Transfer {
                    input: std::mem::replace(&mut x, y),
                    curve: Some(t),
                });
            }
            LayerSpec::Transfer(_) | LayerSpec::SoftmaxReadout => caches.push(Cache::Identity),
            _ => unreachable!("checked trainable"),
        }
    }
    Ok((x, caches))
}

fn cross_entropy(scores: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (z, &y) in scores.iter().zip(labels) {
        let p = softmax(z);
        loss -= p[y].max(f64::MIN_POSITIVE).ln() / n;
        grad.push(
            p.iter()
                .enumerate()
                .map(|(k, pk)| (pk - if k == y { 1.0 } else { 0.0 }) / n)
                .collect(),
        );
    }
    (loss, grad)
}

/// Mean cross-entropy of a batch and its gradient with respect to every
/// dense and batch-norm parameter (batch-norm in training mode).
pub fn loss_and_grads(
    graph: &NetworkGraph,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    check_trainable(graph)?;
    backprop(graph, inputs, labels).map(|(loss, grads, _)| (loss, grads))
}

fn backprop(
    graph: &NetworkGraph,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<(f64, Gradients, Vec<Cache>)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Precondition(
            "batch must be nonempty with one label per input".into(),
        ));
    }
    let (scores, caches) = forward_train(graph, inputs)?;
    let (loss, mut dy) = cross_entropy(&scores, labels);
    let mut grads: Gradients = graph.layers.iter().map(LayerGrad::zeros_like).collect();
    for (i, layer) in graph.layers.iter().enumerate().rev() {
        match (&caches[i], layer, &mut grads[i]) {
            (Cache::Dense { input }, LayerSpec::Dense(d), LayerGrad::Dense { weights, bias }) => {
                let mut dx = vec![vec![0.0; d.inputs]; dy.len()];
                for ((g, x), dxr) in dy.iter().zip(input).zip(&mut dx) {
                    for o in 0..d.outputs {
                        bias[o] += g[o];
                        let row = o * d.inputs;
                        for j in 0..d.inputs {
                            weights[row + j] += g[o] * x[j];
                            dxr[j] += g[o] * d.weights[row + j];
                        }
                    }
                }
                dy = dx;
            }
            (
                Cache::BatchNorm { xhat, inv_std, .. },
                LayerSpec::BatchNorm(bn),
                LayerGrad::BatchNorm { gamma, beta },
            ) => {
                let c = bn.channels();
                let n = dy.len() as f64;
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for (g, xh) in dy.iter().zip(xhat) {
                    for j in 0..c {
                        gamma[j] += g[j] * xh[j];
                        beta[j] += g[j];
                        let dxh = g[j] * bn.gamma[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xh[j];
                    }
                }
                dy = dy
                    .iter()
                    .zip(xhat)
                    .map(|(g, xh)| {
                        (0..c)
                            .map(|j| {
                                inv_std[j] / n
                                    * (n * g[j] * bn.gamma[j]
                                        - sum_dxhat[j]
                                        - xh[j] * sum_dxhat_xhat[j])
                            })
                            .collect()
                    })
                    .collect();
            }
            (
                Cache::Transfer {
                    input,
                    curve: Some(t),
                },
                _,
                _,
            ) => {
                for (g, x) in dy.iter_mut().zip(input) {
                    for (gj, &s) in g.iter_mut().zip(x) {
                        *gj *= t.derivative(s);
                    }
                }
            }
            _ => {}
        }
    }
    Ok((loss, grads, caches))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The graph at the selected epoch.
    pub graph: NetworkGraph,
    /// Selected epoch (1-based); 0 when no epoch was run.
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub history: Vec<EpochMetrics>,
}

struct Adam {
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    t: i32,
}

impl Adam {
    fn new(grads: &Gradients) -> Self {
        let zeros: Vec<Vec<Vec<f64>>> = grads
            .iter()
            .map(|g| g.slices().iter().map(|s| vec![0.0; s.len()]).collect())
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn update(&mut self, graph: &mut NetworkGraph, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (l, (layer, grad)) in graph.layers.iter_mut().zip(grads).enumerate() {
            for (p, (params, g)) in param_slices(layer)
                .into_iter()
                .zip(grad.slices())
                .enumerate()
            {
                let (m, v) = (&mut self.m[l][p], &mut self.v[l][p]);
                for k in 0..params.len() {
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                    let mhat = m[k] / c1;
                    let vhat = v[k] / c2;
                    params[k] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                }
            }
        }
    }
}

/// Folds the batch statistics of a training-mode pass into the running averages.
fn update_running_stats(graph: &mut NetworkGraph, caches: Vec<Cache>, momentum: f64) {
    for (layer, cache) in graph.layers.iter_mut().zip(caches) {
        if let (LayerSpec::BatchNorm(bn), Cache::BatchNorm { mean, var, .. }) = (layer, cache) {
            for j in 0..bn.channels() {
                bn.running_mean[j] = momentum * bn.running_mean[j] + (1.0 - momentum) * mean[j];
                bn.running_var[j] = momentum * bn.running_var[j] + (1.0 - momentum) * var[j];
            }
        }
    }
}

fn accuracy(graph: &NetworkGraph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let correct = data
        .features
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| {
            graph
                .analog_forward(x)
                .map(|s| (argmax(&s) == Some(y)) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `graph` and returns the parameters of the epoch with the best test
/// accuracy (earliest on ties).
pub fn train(
    graph: &NetworkGraph,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_trainable(graph)?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = graph.clone();
    let mut best = graph.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut adam: Option<Adam> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| train_set.features[i].as_slice())
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads, caches) = backprop(&current, &inputs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {loss}"),
                });
            }
            update_running_stats(&mut current, caches, cfg.bn_momentum);
            adam.get_or_insert_with(|| Adam::new(&grads))
                .update(&mut current, &grads, cfg);
            loss_sum += loss;
            batches += 1;
        }
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / batches as f64,
            train_accuracy: accuracy(&current, train_set)?,
            test_accuracy: accuracy(&current, test_set)?,
        };
        if metrics.test_accuracy > best_acc {
            best_acc = metrics.test_accuracy;
            best_epoch = epoch;
            best = current.clone();
        }
        history.push(metrics);
    }
    if best_epoch == 0 {
        best_acc = accuracy(graph, test_set)?;
    }
    Ok(TrainOutcome {
        graph: best,
        best_epoch,
        best_test_accuracy: best_acc,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build, parse_arch, Shape};
    use crate::neuron::NeuronParams;
    use crate::transfer::normalized;

    fn toy_graph(seed: u64) -> NetworkGraph {
        let p = normalized(&NeuronParams::default()).unwrap();
        build(&parse_arch("4-8-3").unwrap(), p, seed).unwrap()
    }

    #[test]
    fn equal_logits_give_log_class_count() {
        let (loss, _) = cross_entropy(&[vec![0.3; 3], vec![-1.0; 3]], &[0, 2]);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_return_the_initial_graph() {
        let g = toy_graph(1);
        let data = Dataset::new(
            Shape::Flat(4),
            vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.9, 0.8, 0.7, 0.6]],
            vec![0, 1],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&g, &data, &data, &cfg).unwrap();
        assert_eq!(out.graph, g);
        assert_eq!(out.best_epoch, 0);
        assert!(out.history.is_empty());
    }

    #[test]
    fn conv_graphs_are_not_trainable() {
        let p = normalized(&NeuronParams::default()).unwrap();
        let g = build(&parse_arch("4x4-c2x3-3").unwrap(), p, 0).unwrap();
        let x = vec![0.5; 16];
        assert!(matches!(
            loss_and_grads(&g, &[&x], &[0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn bad_config_is_rejected() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
