//! Sequential analog networks: layer types, validation, the analog forward
//! pass, batch-norm folding and architecture strings.

mod arch;
mod fold;
mod layer;

pub use arch::{build, parse_arch, ArchToken, Architecture};
pub use fold::fold_batchnorm;
pub use layer::{pool_forward, BatchNorm, Conv2d, Dense, LayerSpec, PoolKind, Shape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronParams;
use crate::transfer::Transfer;

/// An ordered list of layers applied to inputs of `input_shape`.
///
/// A well-formed graph encodes its input in a first block ending in a
/// `Transfer`, and ends with a readout block `… → Transfer → SoftmaxReadout`.
/// The readout `Transfer` is the smoothing stage of the spiking readout; in
/// the analog pass it is the identity, so class scores are its activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkGraph {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let g = Self {
            input_shape,
            layers,
        };
        g.validate()?;
        Ok(g)
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut shape = self.input_shape;
        shapes.push(shape);
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::Structure(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("input shape"))
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().map(|s| s.len()).unwrap_or(0)
    }

    /// Indices of the `Transfer` layers in order.
    pub fn transfer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Transfer(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Output widths of the `Transfer` layers.
    pub fn transfer_widths(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        Ok(self
            .transfer_indices()
            .into_iter()
            .map(|i| shapes[i + 1].len())
            .collect())
    }

    /// Index of the readout `Transfer`.
    pub fn readout_index(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm(_)))
    }

    /// Neuron parameters of the first `Transfer`, taken as the network-wide set.
    pub fn neuron_params(&self) -> Option<NeuronParams> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::Transfer(p) => Some(*p),
            _ => None,
        })
    }

    /// Replaces the parameters of every `Transfer` layer.
    pub fn set_neuron_params(&mut self, params: NeuronParams) -> Result<()> {
        params.validate()?;
        for layer in &mut self.layers {
            if let LayerSpec::Transfer(p) = layer {
                *p = params;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n < 3 {
            return Err(Error::Structure(
                "a network needs an input block and a readout block".into(),
            ));
        }
        if self.input_shape.is_empty() {
            return Err(Error::Structure("input shape is empty".into()));
        }
        self.shapes()?;
        if !matches!(self.layers[n - 1], LayerSpec::SoftmaxReadout) {
            return Err(Error::Structure(
                "last layer must be a softmax readout".into(),
            ));
        }
        if !matches!(self.layers[n - 2], LayerSpec::Transfer(_)) {
            return Err(Error::Structure(
                "the softmax readout must follow a transfer layer".into(),
            ));
        }
        if self.layers[..n - 1]
            .iter()
            .any(|l| matches!(l, LayerSpec::SoftmaxReadout))
        {
            return Err(Error::Structure(
                "softmax readout must be the last layer".into(),
            ));
        }
        let transfers = self.transfer_indices();
        let first = transfers[0];
        if first == 0
            || !self.layers[..first]
                .iter()
                .any(|l| l.is_linear() || matches!(l, LayerSpec::BatchNorm(_)))
        {
            return Err(Error::Structure(
                "the input block needs a batch-norm or linear layer before its transfer".into(),
            ));
        }
        if transfers.len() < 2 {
            return Err(Error::Structure(
                "the readout transfer must be distinct from the input block".into(),
            ));
        }
        for pair in transfers.windows(2) {
            if !self.layers[pair[0] + 1..pair[1]]
                .iter()
                .any(|l| l.is_linear())
            {
                return Err(Error::Structure(format!(
                    "transfer at layer {} has no linear layer feeding it",
                    pair[1]
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !matches!(layer, LayerSpec::BatchNorm(_)) {
                continue;
            }
            let prev_linear = i > 0 && self.layers[i - 1].is_linear();
            let next_linear = self.layers.get(i + 1).is_some_and(|l| l.is_linear());
            if !(i == 0 || prev_linear || next_linear) {
                return Err(Error::Structure(format!(
                    "batch-norm at layer {i} is not adjacent to a dense or conv layer"
                )));
            }
        }
        Ok(())
    }

    /// Analog evaluation; returns the readout activations (pre-softmax class scores).
    pub fn analog_forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_shape.len() {
            return Err(Error::Structure(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_shape.len()
            )));
        }
        let shapes = self.shapes()?;
        let readout = self.readout_index();
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                LayerSpec::Transfer(p) if i != readout => {
                    let t = Transfer::new(p)?;
                    x.iter().map(|&s| t.eval(s)).collect()
                }
                _ => layer.forward_affine(&x, shapes[i]),
            };
        }
        Ok(x)
    }

    /// Softmax of the analog scores.
    pub fn analog_probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.analog_forward(input)?))
    }

    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.analog_forward(input)?).unwrap_or(0))
    }

    /// Fraction of samples whose analog prediction equals the label.
    pub fn accuracy(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::Precondition("empty dataset".into()));
        }
        let mut correct = 0;
        for (x, &y) in inputs.iter().zip(labels) {
            if self.predict(x)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / inputs.len() as f64)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value, lowest index on ties; `None` for empty or
/// all-NaN input.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in xs.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
