use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronParams;

/// Activation shape: a flat vector or a channel-major image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of channels: the vector length for flat shapes.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image { channels, .. } => channels,
        }
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        match *self {
            Shape::Flat(_) => 1,
            Shape::Image { height, width, .. } => height * width,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Flat(n) => vec![n],
            Shape::Image {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [n] => Ok(Shape::Flat(n)),
            [channels, height, width] => Ok(Shape::Image {
                channels,
                height,
                width,
            }),
            _ => Err(Error::Structure(format!(
                "shape must have 1 or 3 dimensions, got {dims:?}"
            ))),
        }
    }
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let d = Self {
            inputs,
            outputs,
            weights,
            bias,
        };
        d.check()?;
        Ok(d)
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::zeros(n, n);
        for i in 0..n {
            d.weights[i * n + i] = 1.0;
        }
        d
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Structure(format!(
                "dense {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.accumulate(x, &mut y);
        y
    }

    /// `y += W·x`, without the bias.
    pub fn accumulate(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// 2-D convolution (cross-correlation) over channel-major images.
/// `kernels` is `out_channels × in_channels × kernel × kernel`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            kernels: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        let k = self.kernel;
        if self.kernels.len() != self.out_channels * self.in_channels * k * k
            || self.bias.len() != self.out_channels
            || k == 0
            || self.stride == 0
        {
            return Err(Error::Structure(format!(
                "conv {}->{} k{} s{} has {} kernel values and {} biases",
                self.in_channels,
                self.out_channels,
                k,
                self.stride,
                self.kernels.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn kernel_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        let k = self.kernel;
        self.kernels[((o * self.in_channels + i) * k + ky) * k + kx]
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let span = |n: usize| {
            (n + 2 * self.padding)
                .checked_sub(self.kernel)
                .map(|m| m / self.stride + 1)
        };
        match (span(height), span(width)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok((h, w)),
            _ => Err(Error::Structure(format!(
                "conv kernel {} does not fit a {height}x{width} input",
                self.kernel
            ))),
        }
    }

    pub fn forward(&self, x: &[f64], height: usize, width: usize) -> Vec<f64> {
        let (oh, ow) = self.output_hw(height, width).expect("validated shape");
        let mut y = Vec::with_capacity(self.out_channels * oh * ow);
        for o in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[o];
                    for i in 0..self.in_channels {
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= height as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= width as isize {
                                    continue;
                                }
                                acc += self.kernel_at(o, i, ky, kx)
                                    * x[(i * height + iy as usize) * width + ix as usize];
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
        y
    }

    /// Adds `scale ×` the contribution of a single input element to `out`
    /// (no bias), i.e. one column of the convolution matrix.
    pub fn scatter(
        &self,
        index: usize,
        scale: f64,
        height: usize,
        width: usize,
        out: &mut [f64],
    ) -> usize {
        let (oh, ow) = self.output_hw(height, width).expect("validated shape");
        let i = index / (height * width);
        let y = (index / width) % height;
        let x = index % width;
        let mut touched = 0;
        for ky in 0..self.kernel {
            let ny = y as isize + self.padding as isize - ky as isize;
            if ny < 0 || ny % self.stride as isize != 0 {
                continue;
            }
            let oy = ny as usize / self.stride;
            if oy >= oh {
                continue;
            }
            for kx in 0..self.kernel {
                let nx = x as isize + self.padding as isize - kx as isize;
                if nx < 0 || nx % self.stride as isize != 0 {
                    continue;
                }
                let ox = nx as usize / self.stride;
                if ox >= ow {
                    continue;
                }
                for o in 0..self.out_channels {
                    out[(o * oh + oy) * ow + ox] += scale * self.kernel_at(o, i, ky, kx);
                    touched += 1;
                }
            }
        }
        touched
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Non-overlapping `size × size` pooling (stride = size, no padding).
pub fn pool_forward(kind: PoolKind, size: usize, x: &[f64], shape: Shape) -> Vec<f64> {
    let Shape::Image {
        channels,
        height,
        width,
    } = shape
    else {
        unreachable!("pooling validated on image shapes")
    };
    let (oh, ow) = (height / size, width / size);
    let mut y = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut sum = 0.0;
                for dy in 0..size {
                    for dx in 0..size {
                        let v = x[(c * height + oy * size + dy) * width + ox * size + dx];
                        // Strict comparison keeps the lowest index on ties.
                        if v > best {
                            best = v;
                        }
                        sum += v;
                    }
                }
                y.push(match kind {
                    PoolKind::Max => best,
                    PoolKind::Avg => sum / (size * size) as f64,
                });
            }
        }
    }
    y
}

/// Batch normalization with inference-time statistics, one entry per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(channels: usize, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.running_mean.len() != n || self.running_var.len() != n {
            return Err(Error::Structure(
                "batch-norm parameter lengths differ".into(),
            ));
        }
        if self.eps < 0.0 || self.running_var.iter().any(|v| *v + self.eps <= 0.0) {
            return Err(Error::Structure(
                "batch-norm variance + eps must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` of the inference-time affine map.
    pub fn scale_shift(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.running_mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        (scale, shift)
    }

    pub fn forward(&self, x: &[f64], shape: Shape) -> Vec<f64> {
        let (scale, shift) = self.scale_shift();
        let plane = shape.plane();
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / plane;
                v * scale[c] + shift[c]
            })
            .collect()
    }
}

/// One layer of a sequential analog network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool { size: usize },
    AvgPool { size: usize },
    BatchNorm(BatchNorm),
    Transfer(NeuronParams),
    SoftmaxReadout,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense(_) => "dense",
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::BatchNorm(_) => "batch_norm",
            LayerSpec::Transfer(_) => "transfer",
            LayerSpec::SoftmaxReadout => "softmax_readout",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, LayerSpec::Dense(_) | LayerSpec::Conv2d(_))
    }

    pub fn pool(&self) -> Option<(PoolKind, usize)> {
        match *self {
            LayerSpec::MaxPool { size } => Some((PoolKind::Max, size)),
            LayerSpec::AvgPool { size } => Some((PoolKind::Avg, size)),
            _ => None,
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            LayerSpec::Dense(d) => {
                d.check()?;
                if d.inputs != input.len() {
                    return Err(Error::Structure(format!(
                        "dense expects {} inputs, got {}",
                        d.inputs,
                        input.len()
                    )));
                }
                Ok(Shape::Flat(d.outputs))
            }
            LayerSpec::Conv2d(c) => {
                c.check()?;
                let Shape::Image {
                    channels,
                    height,
                    width,
                } = input
                else {
                    return Err(Error::Structure("conv2d needs an image input".into()));
                };
                if channels != c.in_channels {
                    return Err(Error::Structure(format!(
                        "conv2d expects {} channels, got {channels}",
                        c.in_channels
                    )));
                }
                let (h, w) = c.output_hw(height, width)?;
                Ok(Shape::Image {
                    channels: c.out_channels,
                    height: h,
                    width: w,
                })
            }
            LayerSpec::MaxPool { size } | LayerSpec::AvgPool { size } => {
                let Shape::Image {
                    channels,
                    height,
                    width,
                } = input
                else {
                    return Err(Error::Structure("pooling needs an image input".into()));
                };
                if *size == 0 || height / size == 0 || width / size == 0 {
                    return Err(Error::Structure(format!(
                        "pool size {size} does not fit {height}x{width}"
                    )));
                }
                Ok(Shape::Image {
                    channels,
                    height: height / size,
                    width: width / size,
                })
            }
            LayerSpec::BatchNorm(bn) => {
                bn.check()?;
                if bn.channels() != input.channels() {
                    return Err(Error::Structure(format!(
                        "batch-norm has {} channels, input has {}",
                        bn.channels(),
                        input.channels()
                    )));
                }
                Ok(input)
            }
            LayerSpec::Transfer(p) => {
                p.validate()?;
                Ok(input)
            }
            LayerSpec::SoftmaxReadout => Ok(input),
        }
    }

    /// Analog evaluation of linear, pooling and batch-norm layers.
    pub(crate) fn forward_affine(&self, x: &[f64], shape: Shape) -> Vec<f64> {
        match self {
            LayerSpec::Dense(d) => d.forward(x),
            LayerSpec::Conv2d(c) => {
                let Shape::Image { height, width, .. } = shape else {
                    unreachable!("validated")
                };
                c.forward(x, height, width)
            }
            LayerSpec::MaxPool { size } => pool_forward(PoolKind::Max, *size, x, shape),
            LayerSpec::AvgPool { size } => pool_forward(PoolKind::Avg, *size, x, shape),
            LayerSpec::BatchNorm(bn) => bn.forward(x, shape),
            LayerSpec::Transfer(_) | LayerSpec::SoftmaxReadout => x.to_vec(),
        }
    }
}
