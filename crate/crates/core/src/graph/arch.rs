use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchNorm, Conv2d, Dense, LayerSpec, NetworkGraph, Shape};
use crate::error::{Error, Result};
use crate::neuron::NeuronParams;

/// Batch-norm epsilon used by generated networks.
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchToken {
    Dense(usize),
    Conv { maps: usize, kernel: usize },
    MaxPool(usize),
    AvgPool(usize),
}

/// A parsed architecture string such as `4-60-60-3` or `28x28-c32x3-m2-d128-10`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: Shape,
    pub hidden: Vec<ArchToken>,
    pub classes: usize,
}

/// Parses the bracket notation: an input token (`N`, `HxW` or `HxWxC`),
/// hidden tokens (`N` or `dN` dense, `cNxK` conv with `same` padding, `mP`
/// max pool, `aP` average pool, `R(x…)` or `Rx(…)` repetition) and a final
/// class count. `×` is accepted for `x`; surrounding brackets are ignored.
pub fn parse_arch(text: &str) -> Result<Architecture> {
    let bad = |reason: String| Error::format("architecture string", reason);
    let cleaned: String = text
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .replace('×', "x")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    let parts = split_top(&cleaned).map_err(bad)?;
    if parts.len() < 2 {
        return Err(bad(format!(
            "`{text}` needs at least an input and an output token"
        )));
    }
    let input = parse_input(&parts[0]).map_err(bad)?;
    let classes = match parse_token(&parts[parts.len() - 1])
        .map_err(bad)?
        .as_slice()
    {
        [ArchToken::Dense(n)] => *n,
        _ => return Err(bad("the last token must be a class count".into())),
    };
    let mut hidden = Vec::new();
    for part in &parts[1..parts.len() - 1] {
        hidden.extend(parse_token(part).map_err(bad)?);
    }
    Ok(Architecture {
        input,
        hidden,
        classes,
    })
}

fn split_top(s: &str) -> std::result::Result<Vec<String>, String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Err("unbalanced parentheses".into());
        }
        if c == '-' && depth == 0 {
            parts.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    if depth != 0 {
        return Err("unbalanced parentheses".into());
    }
    parts.push(cur);
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty token".into());
    }
    Ok(parts)
}

fn number(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn parse_input(s: &str) -> std::result::Result<Shape, String> {
    let dims = s
        .split('x')
        .map(number)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    match dims.as_slice() {
        [n] => Ok(Shape::Flat(*n)),
        [h, w] => Ok(Shape::Image {
            channels: 1,
            height: *h,
            width: *w,
        }),
        [h, w, c] => Ok(Shape::Image {
            channels: *c,
            height: *h,
            width: *w,
        }),
        _ => Err(format!("bad input token `{s}`")),
    }
}

fn parse_token(s: &str) -> std::result::Result<Vec<ArchToken>, String> {
    if let Some(open) = s.find('(') {
        if !s.ends_with(')') {
            return Err(format!("bad group `{s}`"));
        }
        let count = number(s[..open].trim_end_matches('x'))?;
        let inner = split_top(&s[open + 1..s.len() - 1])?;
        let mut body = Vec::new();
        for part in &inner {
            body.extend(parse_token(part)?);
        }
        return Ok(std::iter::repeat_n(body, count).flatten().collect());
    }
    let token = match s.as_bytes()[0] {
        b'd' => ArchToken::Dense(number(&s[1..])?),
        b'm' => ArchToken::MaxPool(number(&s[1..])?),
        b'a' => ArchToken::AvgPool(number(&s[1..])?),
        b'c' => {
            let (maps, kernel) = s[1..]
                .split_once('x')
                .ok_or_else(|| format!("conv token `{s}` needs a kernel size (cNxK)"))?;
            ArchToken::Conv {
                maps: number(maps)?,
                kernel: number(kernel)?,
            }
        }
        b'0'..=b'9' => ArchToken::Dense(number(s)?),
        _ => return Err(format!("unknown token `{s}`")),
    };
    Ok(vec![token])
}

/// Builds a freshly initialised graph: an input batch-norm encoder, then
/// `linear → batch-norm → transfer` per hidden dense/conv token (pools are
/// placed after the preceding transfer), then `dense → transfer → softmax`.
///
/// Weights are LeCun-uniform (`±√(3/fan_in)`), biases zero.
pub fn build(arch: &Architecture, params: NeuronParams, seed: u64) -> Result<NetworkGraph> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![
        LayerSpec::BatchNorm(BatchNorm::identity(arch.input.channels(), BN_EPS)),
        LayerSpec::Transfer(params),
    ];
    let mut shape = arch.input;
    let push = |layers: &mut Vec<LayerSpec>, layer: LayerSpec, shape: &mut Shape| -> Result<()> {
        *shape = layer.output_shape(*shape)?;
        layers.push(layer);
        Ok(())
    };
    for token in &arch.hidden {
        match *token {
            ArchToken::Dense(n) => {
                push(
                    &mut layers,
                    LayerSpec::Dense(init_dense(shape.len(), n, &mut rng)),
                    &mut shape,
                )?;
                layers.push(LayerSpec::BatchNorm(BatchNorm::identity(n, BN_EPS)));
                layers.push(LayerSpec::Transfer(params));
            }
            ArchToken::Conv { maps, kernel } => {
                let mut conv = Conv2d::zeros(shape.channels(), maps, kernel, 1, kernel / 2);
                let limit = (3.0 / (shape.channels() * kernel * kernel) as f64).sqrt();
                for w in &mut conv.kernels {
                    *w = rng.gen_range(-limit..limit);
                }
                push(&mut layers, LayerSpec::Conv2d(conv), &mut shape)?;
                layers.push(LayerSpec::BatchNorm(BatchNorm::identity(maps, BN_EPS)));
                layers.push(LayerSpec::Transfer(params));
            }
            ArchToken::MaxPool(size) => push(&mut layers, LayerSpec::MaxPool { size }, &mut shape)?,
            ArchToken::AvgPool(size) => push(&mut layers, LayerSpec::AvgPool { size }, &mut shape)?,
        }
    }
    layers.push(LayerSpec::Dense(init_dense(
        shape.len(),
        arch.classes,
        &mut rng,
    )));
    layers.push(LayerSpec::Transfer(params));
    layers.push(LayerSpec::SoftmaxReadout);
    NetworkGraph::new(arch.input, layers)
}

fn init_dense(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Dense {
    let limit = (3.0 / inputs as f64).sqrt();
    let mut d = Dense::zeros(inputs, outputs);
    for w in &mut d.weights {
        *w = rng.gen_range(-limit..limit);
    }
    d
}
