//! Converted spiking networks.
//!
//! Every `Transfer` layer of an analog graph becomes an array of ASNs. The
//! layers between two transfers become the connection of the downstream ASN
//! array:
//!
//! * operators up to and including the first Dense/Conv2d act on spikes:
//!   each presynaptic spike adds `w·h` to the incoming current of its targets;
//! * the bias of that first linear operator is a constant drive added to the
//!   filtered activation;
//! * any operators after it (pooling, further linear maps) act on the
//!   filtered activations every step, and the result is the neurons' `S`.
//!
//! A max-pool directly after a transfer is moved in front of it, which is
//! exact because the transfer curve is nondecreasing. The input block is
//! evaluated in analog form once per presentation and held as a constant
//! drive. The last transfer is the readout; its activations are the
//! per-step class scores.

use crate::error::{Error, Result};
use crate::graph::{LayerSpec, NetworkGraph, Shape};
use crate::neuron::{filter, Kernels, NeuronParams, NeuronState};

/// Membrane-filter time constant of the readout layer (ms).
pub const READOUT_TAU_PHI: f64 = 50.0;

/// A shape-annotated operator on activations or spike vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Op {
    pub layer: LayerSpec,
    pub input: Shape,
}

impl Op {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.layer.forward_affine(x, self.input)
    }
}

/// Where a layer's input comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Analog operators evaluated once per presentation on the raw input.
    Analog(Vec<Op>),
    /// Operators applied to the presynaptic spike vector. The last one is the
    /// linear layer whose bias was moved to [`SpikingLayer::bias`].
    Spikes(Vec<Op>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Membrane {
    current: f64,
    activation: f64,
}

#[derive(Debug, Clone)]
pub struct SpikingLayer {
    pub source: Source,
    /// Constant drive per membrane.
    pub bias: Vec<f64>,
    /// Operators from membrane activations to the neurons' `S`.
    pub post_ops: Vec<Op>,
    pub membrane_shape: Shape,
    pub shape: Shape,
    pub readout: bool,
    pub params: NeuronParams,
    kernels: Kernels,
    membranes: Vec<Membrane>,
    pub neurons: Vec<NeuronState>,
    /// Dense source transposed to `inputs × outputs` for column access.
    columns: Option<Vec<f64>>,
    increments: Vec<f64>,
    /// Indices of neurons that spiked in the last step.
    pub fired: Vec<usize>,
    /// Spikes emitted since the last reset.
    pub spike_count: u64,
    /// Synaptic accumulations performed since the last reset.
    pub synaptic_events: u64,
}

impl SpikingLayer {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    /// Current `S` of every neuron.
    pub fn activations(&self) -> Vec<f64> {
        self.neurons.iter().map(|n| n.activation).collect()
    }

    /// Outgoing PSC of every neuron.
    pub fn pscs(&self) -> Vec<f64> {
        self.neurons.iter().map(|n| n.psc).collect()
    }

    /// Number of targets one spike of presynaptic neuron `j` reaches; `None`
    /// if the source is not a single linear operator.
    pub fn fan_out(&self, j: usize) -> Option<usize> {
        let Source::Spikes(ops) = &self.source else {
            return None;
        };
        match ops.as_slice() {
            [Op {
                layer: LayerSpec::Dense(d),
                ..
            }] => Some(d.outputs),
            [Op {
                layer: LayerSpec::Conv2d(c),
                input: Shape::Image { height, width, .. },
            }] => {
                let (oh, ow) = c.output_hw(*height, *width).ok()?;
                let mut scratch = vec![0.0; c.out_channels * oh * ow];
                Some(c.scatter(j, 1.0, *height, *width, &mut scratch))
            }
            _ => None,
        }
    }

    fn reset(&mut self) {
        for n in &mut self.neurons {
            *n = NeuronState::at_rest(self.params.theta0);
        }
        if self.post_ops.is_empty() {
            for (n, b) in self.neurons.iter_mut().zip(&self.bias) {
                n.injected = *b;
            }
        }
        self.membranes
            .iter_mut()
            .for_each(|m| *m = Membrane::default());
        self.fired.clear();
        self.spike_count = 0;
        self.synaptic_events = 0;
    }

    fn set_params(&mut self, params: NeuronParams, dt: f64) -> Result<()> {
        self.kernels = Kernels::new(&params, dt)?;
        self.params = params;
        Ok(())
    }

    /// Adds the contributions of presynaptic spikes to `self.increments`.
    fn gather(&mut self, fired: &[usize], h: f64, presyn: usize) {
        self.increments.iter_mut().for_each(|v| *v = 0.0);
        if fired.is_empty() {
            return;
        }
        let Source::Spikes(ops) = &self.source else {
            return;
        };
        if let Some(cols) = &self.columns {
            let n = self.increments.len();
            for &j in fired {
                for (acc, w) in self.increments.iter_mut().zip(&cols[j * n..(j + 1) * n]) {
                    *acc += w * h;
                }
                self.synaptic_events += n as u64;
            }
            return;
        }
        if let [Op {
            layer: LayerSpec::Conv2d(c),
            input: Shape::Image { height, width, .. },
        }] = ops.as_slice()
        {
            for &j in fired {
                self.synaptic_events +=
                    c.scatter(j, h, *height, *width, &mut self.increments) as u64;
            }
            return;
        }
        let mut x = vec![0.0; presyn];
        for &j in fired {
            x[j] = h;
        }
        for op in ops {
            x = op.apply(&x);
        }
        self.synaptic_events += x.iter().filter(|v| **v != 0.0).count() as u64;
        self.increments.copy_from_slice(&x);
    }

    fn advance(&mut self) -> Result<()> {
        self.fired.clear();
        let k = self.kernels;
        if self.post_ops.is_empty() {
            for (i, (n, inc)) in self.neurons.iter_mut().zip(&self.increments).enumerate() {
                if n.step(&k, *inc)? {
                    self.fired.push(i);
                }
            }
        } else {
            for ((m, inc), b) in self
                .membranes
                .iter_mut()
                .zip(&self.increments)
                .zip(&self.bias)
            {
                m.current = m.current * k.psc + inc;
                m.activation = filter(m.activation, m.current + b, k.membrane);
            }
            let mut s: Vec<f64> = self.membranes.iter().map(|m| m.activation).collect();
            for op in &self.post_ops {
                s = op.apply(&s);
            }
            for (i, (n, si)) in self.neurons.iter_mut().zip(s).enumerate() {
                n.relax(&k);
                n.activation = si;
                if n.fire(&k) {
                    self.fired.push(i);
                }
                n.check("spiking layer")?;
            }
        }
        self.spike_count += self.fired.len() as u64;
        Ok(())
    }
}

/// A converted network with its simulation state.
#[derive(Debug, Clone)]
pub struct SpikingNetwork {
    pub input_shape: Shape,
    pub layers: Vec<SpikingLayer>,
    pub dt: f64,
    pub readout_tau_phi: f64,
    fresh: bool,
    loaded: bool,
    steps: usize,
}

impl SpikingNetwork {
    /// Clears all neuron state; thresholds return to ϑ₀.
    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.reset();
        }
        self.fresh = true;
        self.loaded = false;
        self.steps = 0;
    }

    /// True if no step has been taken since the last reset.
    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_neurons(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.readout().len()
    }

    pub fn readout(&self) -> &SpikingLayer {
        self.layers.last().expect("at least two layers")
    }

    /// Per-step class scores: the readout activations.
    pub fn scores(&self) -> Vec<f64> {
        self.readout().activations()
    }

    pub fn spike_counts(&self) -> Vec<u64> {
        self.layers.iter().map(|l| l.spike_count).collect()
    }

    pub fn total_spikes(&self) -> u64 {
        self.layers.iter().map(|l| l.spike_count).sum()
    }

    /// Parameters of the hidden (non-readout) layers.
    pub fn hidden_params(&self) -> NeuronParams {
        self.layers[0].params
    }

    /// Sets the network-wide neuron parameters in place. The readout uses the
    /// same parameters with `τ_φ` replaced by [`Self::readout_tau_phi`]. State
    /// carries over.
    pub fn set_params(&mut self, params: NeuronParams) -> Result<()> {
        params.validate()?;
        let readout = params.with_tau_phi(self.readout_tau_phi);
        let dt = self.dt;
        for layer in &mut self.layers {
            let p = if layer.readout { readout } else { params };
            layer.set_params(p, dt)?;
        }
        Ok(())
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        for layer in &mut self.layers {
            layer.kernels = Kernels::new(&layer.params, dt)?;
        }
        self.dt = dt;
        Ok(())
    }

    pub fn set_readout_tau_phi(&mut self, tau_phi: f64) -> Result<()> {
        let dt = self.dt;
        let readout = self.layers.last_mut().expect("layers");
        readout.set_params(readout.params.with_tau_phi(tau_phi), dt)?;
        self.readout_tau_phi = tau_phi;
        Ok(())
    }

    /// Sets the constant input drive. The network must be fresh.
    pub fn load_input(&mut self, input: &[f64]) -> Result<()> {
        if !self.fresh {
            return Err(Error::Precondition(
                "network must be reset before a new presentation".into(),
            ));
        }
        if input.len() != self.input_shape.len() {
            return Err(Error::Structure(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_shape.len()
            )));
        }
        let first = &mut self.layers[0];
        let Source::Analog(ops) = &first.source else {
            unreachable!("first layer is analog")
        };
        let mut x = input.to_vec();
        for op in ops {
            x = op.apply(&x);
        }
        for (n, v) in first.neurons.iter_mut().zip(x) {
            n.injected = v;
        }
        self.loaded = true;
        Ok(())
    }

    /// Advances every layer by one step, in feedforward order; spikes reach
    /// the next layer within the same step.
    pub fn step(&mut self) -> Result<()> {
        if !self.loaded {
            return Err(Error::Precondition("no input loaded".into()));
        }
        self.fresh = false;
        self.steps += 1;
        self.layers[0].increments.iter_mut().for_each(|v| *v = 0.0);
        self.layers[0].advance()?;
        for l in 1..self.layers.len() {
            let (before, after) = self.layers.split_at_mut(l);
            let pre = &before[l - 1];
            let layer = &mut after[0];
            layer.gather(&pre.fired, pre.params.h, pre.len());
            layer.advance()?;
        }
        Ok(())
    }
}

/// Converts a batch-norm-free graph. Each transfer layer's parameters are
/// kept; the readout's `τ_φ` is set to [`READOUT_TAU_PHI`].
pub fn convert_to_spiking(graph: &NetworkGraph) -> Result<SpikingNetwork> {
    graph.validate()?;
    if graph.has_batchnorm() {
        return Err(Error::Precondition(
            "batch-norm layers must be folded before conversion".into(),
        ));
    }
    let shapes = graph.shapes()?;
    let transfers = graph.transfer_indices();
    let mut specs: Vec<LayerPlan> = Vec::with_capacity(transfers.len());

    let first = transfers[0];
    specs.push(LayerPlan {
        source: Source::Analog(ops(graph, &shapes, 0..first)),
        bias: Vec::new(),
        post_ops: Vec::new(),
        membrane_shape: shapes[first],
        shape: shapes[first + 1],
        params: transfer_params(graph, first),
    });

    for pair in transfers.windows(2) {
        let (start, end) = (pair[0] + 1, pair[1]);
        let mut i = start;
        while let LayerSpec::MaxPool { .. } = graph.layers[i] {
            let op = Op {
                layer: graph.layers[i].clone(),
                input: shapes[i],
            };
            let prev = specs.last_mut().expect("input layer");
            match &mut prev.source {
                Source::Analog(ops) if prev.post_ops.is_empty() => ops.push(op),
                _ => prev.post_ops.push(op),
            }
            prev.shape = shapes[i + 1];
            if let Source::Analog(_) = prev.source {
                prev.membrane_shape = prev.shape;
            }
            i += 1;
        }
        let linear = (i..end)
            .find(|&j| graph.layers[j].is_linear())
            .expect("validated: a linear layer feeds every transfer");
        if let Some(j) = (i..linear).find(|&j| matches!(graph.layers[j], LayerSpec::MaxPool { .. }))
        {
            return Err(Error::Unsupported(format!(
                "max-pool at layer {j} sits between an average pool and a linear layer"
            )));
        }
        let mut source = ops(graph, &shapes, i..linear + 1);
        let bias = match &mut source.last_mut().expect("linear op").layer {
            LayerSpec::Dense(d) => std::mem::replace(&mut d.bias, vec![0.0; d.outputs]),
            LayerSpec::Conv2d(c) => {
                let Shape::Image { height, width, .. } = shapes[linear + 1] else {
                    unreachable!("conv output is an image")
                };
                let b = std::mem::replace(&mut c.bias, vec![0.0; c.out_channels]);
                b.iter()
                    .flat_map(|&v| std::iter::repeat_n(v, height * width))
                    .collect()
            }
            _ => unreachable!("linear op"),
        };
        specs.push(LayerPlan {
            source: Source::Spikes(source),
            bias,
            post_ops: ops(graph, &shapes, linear + 1..end),
            membrane_shape: shapes[linear + 1],
            shape: shapes[end + 1],
            params: transfer_params(graph, end),
        });
    }

    let count = specs.len();
    let mut layers = Vec::with_capacity(count);
    for (idx, plan) in specs.into_iter().enumerate() {
        let readout = idx + 1 == count;
        let params = if readout {
            plan.params.with_tau_phi(READOUT_TAU_PHI)
        } else {
            plan.params
        };
        let columns = match &plan.source {
            Source::Spikes(ops) => match ops.as_slice() {
                [Op {
                    layer: LayerSpec::Dense(d),
                    ..
                }] => {
                    let mut t = vec![0.0; d.inputs * d.outputs];
                    for o in 0..d.outputs {
                        for i in 0..d.inputs {
                            t[i * d.outputs + o] = d.weight(o, i);
                        }
                    }
                    Some(t)
                }
                _ => None,
            },
            Source::Analog(_) => None,
        };
        let membranes = if plan.post_ops.is_empty() {
            Vec::new()
        } else {
            vec![Membrane::default(); plan.membrane_shape.len()]
        };
        let mut layer = SpikingLayer {
            source: plan.source,
            bias: plan.bias,
            post_ops: plan.post_ops,
            membrane_shape: plan.membrane_shape,
            shape: plan.shape,
            readout,
            params,
            kernels: Kernels::new(&params, 1.0)?,
            membranes,
            neurons: vec![NeuronState::at_rest(params.theta0); plan.shape.len()],
            columns,
            increments: vec![0.0; plan.membrane_shape.len()],
            fired: Vec::new(),
            spike_count: 0,
            synaptic_events: 0,
        };
        if let Source::Analog(_) = layer.source {
            layer.increments = vec![0.0; plan.shape.len()];
        }
        layer.reset();
        layers.push(layer);
    }
    Ok(SpikingNetwork {
        input_shape: graph.input_shape,
        layers,
        dt: 1.0,
        readout_tau_phi: READOUT_TAU_PHI,
        fresh: true,
        loaded: false,
        steps: 0,
    })
}

struct LayerPlan {
    source: Source,
    bias: Vec<f64>,
    post_ops: Vec<Op>,
    membrane_shape: Shape,
    shape: Shape,
    params: NeuronParams,
}

fn ops(graph: &NetworkGraph, shapes: &[Shape], range: std::ops::Range<usize>) -> Vec<Op> {
    range
        .map(|i| Op {
            layer: graph.layers[i].clone(),
            input: shapes[i],
        })
        .collect()
}

fn transfer_params(graph: &NetworkGraph, i: usize) -> NeuronParams {
    match graph.layers[i] {
        LayerSpec::Transfer(p) => p,
        _ => unreachable!("transfer index"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fold_batchnorm, BatchNorm, Conv2d, Dense};
    use crate::transfer::normalized;

    fn params() -> NeuronParams {
        normalized(&NeuronParams::default().with_precision(0.05)).unwrap()
    }

    fn dense_graph() -> NetworkGraph {
        let p = params();
        let mut d1 = Dense::zeros(3, 4);
        for (i, w) in d1.weights.iter_mut().enumerate() {
            *w = ((i * 37) % 11) as f64 / 10.0 - 0.3;
        }
        d1.bias = vec![0.05, -0.1, 0.2, 0.0];
        let mut d2 = Dense::zeros(4, 2);
        for (i, w) in d2.weights.iter_mut().enumerate() {
            *w = ((i * 13) % 7) as f64 / 5.0 - 0.5;
        }
        NetworkGraph::new(
            Shape::Flat(3),
            vec![
                LayerSpec::BatchNorm(BatchNorm::identity(3, 0.0)),
                LayerSpec::Transfer(p),
                LayerSpec::Dense(d1),
                LayerSpec::Transfer(p),
                LayerSpec::Dense(d2),
                LayerSpec::Transfer(p),
                LayerSpec::SoftmaxReadout,
            ],
        )
        .unwrap()
    }

    #[test]
    fn counts_match_transfer_widths() {
        let g = fold_batchnorm(&dense_graph()).unwrap();
        let net = convert_to_spiking(&g).unwrap();
        assert_eq!(net.layer_sizes(), g.transfer_widths().unwrap());
        assert_eq!(net.readout().params.tau_phi, READOUT_TAU_PHI);
        assert!(net.layers[..2].iter().all(|l| l.params.tau_phi == 5.0));
    }

    #[test]
    fn unfolded_graph_is_rejected() {
        assert!(matches!(
            convert_to_spiking(&dense_graph()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn weights_are_preserved_bit_exactly() {
        let g = fold_batchnorm(&dense_graph()).unwrap();
        let net = convert_to_spiking(&g).unwrap();
        let Source::Spikes(ops) = &net.layers[1].source else {
            panic!("spike source")
        };
        let (LayerSpec::Dense(conv), LayerSpec::Dense(orig)) = (&ops[0].layer, &g.layers[2]) else {
            panic!("dense")
        };
        assert_eq!(conv.weights, orig.weights);
        assert_eq!(net.layers[1].bias, orig.bias);
    }

    #[test]
    fn step_requires_reset_and_input() {
        let g = fold_batchnorm(&dense_graph()).unwrap();
        let mut net = convert_to_spiking(&g).unwrap();
        assert!(matches!(net.step(), Err(Error::Precondition(_))));
        net.load_input(&[0.5, 0.5, 0.5]).unwrap();
        net.step().unwrap();
        assert!(matches!(
            net.load_input(&[0.5, 0.5, 0.5]),
            Err(Error::Precondition(_))
        ));
        net.reset();
        assert!(net.is_fresh());
        net.load_input(&[0.5, 0.5, 0.5]).unwrap();
    }

    #[test]
    fn spikes_feed_exactly_their_fan_out() {
        let g = fold_batchnorm(&dense_graph()).unwrap();
        let mut net = convert_to_spiking(&g).unwrap();
        net.load_input(&[0.9, 0.4, 0.7]).unwrap();
        for _ in 0..200 {
            let before: Vec<u64> = net.layers.iter().map(|l| l.synaptic_events).collect();
            net.step().unwrap();
            for (l, pair) in net.layers.windows(2).enumerate() {
                let expected: usize = pair[0]
                    .fired
                    .iter()
                    .map(|&j| pair[1].fan_out(j).unwrap())
                    .sum();
                assert_eq!(pair[1].synaptic_events - before[l + 1], expected as u64);
            }
        }
        assert!(net.total_spikes() > 0);
    }

    #[test]
    fn conv_source_with_pooling_converts() {
        let p = params();
        let img = Shape::Image {
            channels: 1,
            height: 4,
            width: 4,
        };
        let mut enc = Conv2d::zeros(1, 1, 1, 1, 0);
        enc.kernels[0] = 1.0;
        let mut conv = Conv2d::zeros(1, 2, 3, 1, 1);
        conv.kernels
            .iter_mut()
            .enumerate()
            .for_each(|(i, w)| *w = 0.1 * (i % 5) as f64);
        conv.bias = vec![0.1, 0.2];
        let g = NetworkGraph::new(
            img,
            vec![
                LayerSpec::Conv2d(enc),
                LayerSpec::Transfer(p),
                LayerSpec::Conv2d(conv),
                LayerSpec::Transfer(p),
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense(Dense::zeros(8, 3)),
                LayerSpec::Transfer(p),
                LayerSpec::SoftmaxReadout,
            ],
        )
        .unwrap();
        let mut net = convert_to_spiking(&g).unwrap();
        // The max-pool moves in front of the second transfer.
        assert_eq!(net.layer_sizes(), vec![16, 8, 3]);
        assert_eq!(net.layers[1].membranes.len(), 32);
        net.load_input(&[0.6; 16]).unwrap();
        for _ in 0..50 {
            net.step().unwrap();
        }
        assert!(net.layers[1].spike_count > 0);
    }
}
