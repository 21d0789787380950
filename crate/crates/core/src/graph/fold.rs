use super::{BatchNorm, Conv2d, Dense, LayerSpec, NetworkGraph, Shape};
use crate::error::{Error, Result};

/// Removes every `BatchNorm` by absorbing its inference-time affine map into
/// an adjacent linear layer.
///
/// * after a Dense/Conv2d: scales that layer's output rows and shifts its bias;
/// * as the first layer: becomes a diagonal Dense (flat input) or a diagonal
///   1×1 Conv2d (image input);
/// * before a Dense, or an unpadded Conv2d: scales the input columns and
///   moves the shift into the bias.
pub fn fold_batchnorm(graph: &NetworkGraph) -> Result<NetworkGraph> {
    graph.validate()?;
    let shapes = graph.shapes()?;
    let mut out: Vec<LayerSpec> = Vec::with_capacity(graph.layers.len());
    let mut pending: Option<(Vec<f64>, Vec<f64>, Shape)> = None;

    for (i, layer) in graph.layers.iter().enumerate() {
        if let LayerSpec::BatchNorm(bn) = layer {
            let (scale, shift) = bn.scale_shift();
            if i == 0 {
                out.push(input_affine(&scale, &shift, shapes[0]));
            } else if let Some(prev) = out.last_mut().filter(|_| graph.layers[i - 1].is_linear()) {
                fold_after(prev, &scale, &shift);
            } else if graph.layers.get(i + 1).is_some_and(|l| l.is_linear()) {
                pending = Some((scale, shift, shapes[i]));
            } else {
                return Err(Error::Structure(format!(
                    "batch-norm at layer {i} cannot be folded"
                )));
            }
            continue;
        }
        let mut layer = layer.clone();
        if let Some((scale, shift, shape)) = pending.take() {
            fold_before(&mut layer, &scale, &shift, shape)?;
        }
        out.push(layer);
    }
    NetworkGraph::new(graph.input_shape, out)
}

fn input_affine(scale: &[f64], shift: &[f64], shape: Shape) -> LayerSpec {
    match shape {
        Shape::Flat(n) => {
            let mut d = Dense::zeros(n, n);
            for (i, &k) in scale.iter().enumerate() {
                d.weights[i * n + i] = k;
            }
            d.bias = shift.to_vec();
            LayerSpec::Dense(d)
        }
        Shape::Image { channels, .. } => {
            let mut c = Conv2d::zeros(channels, channels, 1, 1, 0);
            for (i, &k) in scale.iter().enumerate() {
                c.kernels[i * channels + i] = k;
            }
            c.bias = shift.to_vec();
            LayerSpec::Conv2d(c)
        }
    }
}

/// `y' = scale·(W x + b) + shift`, one scale per output channel.
fn fold_after(layer: &mut LayerSpec, scale: &[f64], shift: &[f64]) {
    match layer {
        LayerSpec::Dense(d) => {
            for o in 0..d.outputs {
                for w in &mut d.weights[o * d.inputs..(o + 1) * d.inputs] {
                    *w *= scale[o];
                }
                d.bias[o] = d.bias[o] * scale[o] + shift[o];
            }
        }
        LayerSpec::Conv2d(c) => {
            let per_out = c.in_channels * c.kernel * c.kernel;
            for o in 0..c.out_channels {
                for w in &mut c.kernels[o * per_out..(o + 1) * per_out] {
                    *w *= scale[o];
                }
                c.bias[o] = c.bias[o] * scale[o] + shift[o];
            }
        }
        _ => unreachable!("fold_after is only called on linear layers"),
    }
}

/// `W (scale ⊙ x + shift) + b`, one scale per input channel.
fn fold_before(layer: &mut LayerSpec, scale: &[f64], shift: &[f64], shape: Shape) -> Result<()> {
    match layer {
        LayerSpec::Dense(d) => {
            let plane = shape.plane();
            for o in 0..d.outputs {
                let mut extra = 0.0;
                for i in 0..d.inputs {
                    let c = i / plane;
                    let w = &mut d.weights[o * d.inputs + i];
                    extra += *w * shift[c];
                    *w *= scale[c];
                }
                d.bias[o] += extra;
            }
            Ok(())
        }
        LayerSpec::Conv2d(c) => {
            if c.padding != 0 {
                return Err(Error::Structure(
                    "batch-norm before a padded convolution cannot be folded".into(),
                ));
            }
            let k2 = c.kernel * c.kernel;
            for o in 0..c.out_channels {
                let mut extra = 0.0;
                for i in 0..c.in_channels {
                    let start = (o * c.in_channels + i) * k2;
                    for w in &mut c.kernels[start..start + k2] {
                        extra += *w * shift[i];
                        *w *= scale[i];
                    }
                }
                c.bias[o] += extra;
            }
            Ok(())
        }
        _ => unreachable!("fold_before is only called on linear layers"),
    }
}

impl BatchNorm {
    /// True when the map is exactly the identity.
    pub fn is_identity(&self) -> bool {
        self.scale_shift().0.iter().all(|s| *s == 1.0)
            && self.scale_shift().1.iter().all(|s| *s == 0.0)
    }
}
