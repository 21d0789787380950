//! Weight-exchange format: `manifest.json` plus one little-endian, row-major
//! blob per parameterised layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BatchNorm, Conv2d, Dense, LayerSpec, NetworkGraph, Shape};
use crate::neuron::NeuronParams;

pub const FORMAT_NAME: &str = "adsnn-exchange";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    #[default]
    Float32,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }

    fn encode(self, values: &[f64], out: &mut Vec<u8>) {
        for &v in values {
            match self {
                Dtype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::Float32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::Float64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float32" | "f32" => Ok(Dtype::Float32),
            "float64" | "f64" => Ok(Dtype::Float64),
            _ => Err(Error::Parameter(format!(
                "dtype must be float32 or float64, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Reserved for residual connections: output of layer `from` is added to the
/// input of layer `to`. Import rejects non-empty lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Dense {
        blob: String,
        tensors: Vec<TensorEntry>,
    },
    Conv2d {
        stride: usize,
        padding: usize,
        blob: String,
        tensors: Vec<TensorEntry>,
    },
    MaxPool {
        size: usize,
    },
    AvgPool {
        size: usize,
    },
    BatchNorm {
        eps: f64,
        blob: String,
        tensors: Vec<TensorEntry>,
    },
    Transfer {
        params: NeuronParams,
    },
    SoftmaxReadout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeManifest {
    pub format: String,
    pub version: u32,
    pub dtype: Dtype,
    pub byte_order: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub skip: Vec<SkipEntry>,
}

fn tensor(name: &str, shape: &[usize]) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        shape: shape.to_vec(),
    }
}

/// Writes `graph` to `dir` (created if missing).
pub fn export(graph: &NetworkGraph, dir: &Path, dtype: Dtype) -> Result<()> {
    graph.validate()?;
    super::create_dir(dir)?;
    let mut layers = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        let blob = format!("layer_{i:03}.bin");
        let mut bytes = Vec::new();
        let entry = match layer {
            LayerSpec::Dense(d) => {
                dtype.encode(&d.weights, &mut bytes);
                dtype.encode(&d.bias, &mut bytes);
                LayerEntry::Dense {
                    blob: blob.clone(),
                    tensors: vec![
                        tensor("weights", &[d.outputs, d.inputs]),
                        tensor("bias", &[d.outputs]),
                    ],
                }
            }
            LayerSpec::Conv2d(c) => {
                dtype.encode(&c.kernels, &mut bytes);
                dtype.encode(&c.bias, &mut bytes);
                LayerEntry::Conv2d {
                    stride: c.stride,
                    padding: c.padding,
                    blob: blob.clone(),
                    tensors: vec![
                        tensor(
                            "kernels",
                            &[c.out_channels, c.in_channels, c.kernel, c.kernel],
                        ),
                        tensor("bias", &[c.out_channels]),
                    ],
                }
            }
            LayerSpec::BatchNorm(bn) => {
                for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    dtype.encode(v, &mut bytes);
                }
                let c = [bn.channels()];
                LayerEntry::BatchNorm {
                    eps: bn.eps,
                    blob: blob.clone(),
                    tensors: vec![
                        tensor("gamma", &c),
                        tensor("beta", &c),
                        tensor("running_mean", &c),
                        tensor("running_var", &c),
                    ],
                }
            }
            LayerSpec::MaxPool { size } => LayerEntry::MaxPool { size: *size },
            LayerSpec::AvgPool { size } => LayerEntry::AvgPool { size: *size },
            LayerSpec::Transfer(p) => LayerEntry::Transfer { params: *p },
            LayerSpec::SoftmaxReadout => LayerEntry::SoftmaxReadout,
        };
        if !bytes.is_empty() {
            let path = dir.join(&blob);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        }
        layers.push(entry);
    }
    let manifest = ExchangeManifest {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        dtype,
        byte_order: "little".to_string(),
        input_shape: graph.input_shape.dims(),
        layers,
        skip: Vec::new(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a graph previously written by [`export`] or by an external tool.
pub fn import(dir: &Path) -> Result<NetworkGraph> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ExchangeManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "expected {FORMAT_NAME} v{FORMAT_VERSION}, found {} v{}",
                manifest.format, manifest.version
            ),
        ));
    }
    if manifest.byte_order != "little" {
        return Err(Error::Unsupported(format!(
            "byte order `{}`",
            manifest.byte_order
        )));
    }
    if !manifest.skip.is_empty() {
        return Err(Error::Unsupported(
            "skip connections cannot be converted; only sequential networks are supported".into(),
        ));
    }
    let input_shape = Shape::from_dims(&manifest.input_shape)?;
    let dtype = manifest.dtype;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let layer = match entry {
            LayerEntry::Dense { blob, tensors } => {
                let t = read_blob(dir, blob, tensors, &["weights", "bias"], dtype)?;
                let [out, inp] = dims::<2>(&tensors[0], i)?;
                check_dims(&tensors[1], &[out], i)?;
                let mut t = t.into_iter();
                LayerSpec::Dense(Dense::new(inp, out, t.next().unwrap(), t.next().unwrap())?)
            }
            LayerEntry::Conv2d {
                stride,
                padding,
                blob,
                tensors,
            } => {
                let t = read_blob(dir, blob, tensors, &["kernels", "bias"], dtype)?;
                let [out, inp, kh, kw] = dims::<4>(&tensors[0], i)?;
                if kh != kw {
                    return Err(Error::Unsupported(format!(
                        "layer {i}: non-square kernel {kh}x{kw}"
                    )));
                }
                check_dims(&tensors[1], &[out], i)?;
                let mut t = t.into_iter();
                LayerSpec::Conv2d(Conv2d {
                    in_channels: inp,
                    out_channels: out,
                    kernel: kh,
                    stride: *stride,
                    padding: *padding,
                    kernels: t.next().unwrap(),
                    bias: t.next().unwrap(),
                })
            }
            LayerEntry::BatchNorm { eps, blob, tensors } => {
                let names = ["gamma", "beta", "running_mean", "running_var"];
                let t = read_blob(dir, blob, tensors, &names, dtype)?;
                let [c] = dims::<1>(&tensors[0], i)?;
                for te in &tensors[1..] {
                    check_dims(te, &[c], i)?;
                }
                let mut t = t.into_iter();
                LayerSpec::BatchNorm(BatchNorm {
                    gamma: t.next().unwrap(),
                    beta: t.next().unwrap(),
                    running_mean: t.next().unwrap(),
                    running_var: t.next().unwrap(),
                    eps: *eps,
                })
            }
            LayerEntry::MaxPool { size } => LayerSpec::MaxPool { size: *size },
            LayerEntry::AvgPool { size } => LayerSpec::AvgPool { size: *size },
            LayerEntry::Transfer { params } => LayerSpec::Transfer(*params),
            LayerEntry::SoftmaxReadout => LayerSpec::SoftmaxReadout,
        };
        layers.push(layer);
    }
    NetworkGraph::new(input_shape, layers)
}

fn dims<const N: usize>(t: &TensorEntry, layer: usize) -> Result<[usize; N]> {
    t.shape.as_slice().try_into().map_err(|_| {
        Error::Structure(format!(
            "layer {layer}: tensor `{}` must have {N} dimensions, has {:?}",
            t.name, t.shape
        ))
    })
}

fn check_dims(t: &TensorEntry, expected: &[usize], layer: usize) -> Result<()> {
    if t.shape != expected {
        return Err(Error::Structure(format!(
            "layer {layer}: tensor `{}` has shape {:?}, expected {expected:?}",
            t.name, t.shape
        )));
    }
    Ok(())
}

fn read_blob(
    dir: &Path,
    blob: &str,
    tensors: &[TensorEntry],
    names: &[&str],
    dtype: Dtype,
) -> Result<Vec<Vec<f64>>> {
    let found: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    if found != names {
        return Err(Error::format(
            blob,
            format!("expected tensors {names:?}, found {found:?}"),
        ));
    }
    if blob.contains('/') || blob.contains('\\') || blob.contains("..") {
        return Err(Error::format(blob, "blob names must be plain file names"));
    }
    let path = dir.join(blob);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let counts: Vec<usize> = tensors.iter().map(|t| t.shape.iter().product()).collect();
    let expected = counts.iter().sum::<usize>() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            path.display().to_string(),
            format!("{} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut values = dtype.decode(&bytes).into_iter();
    Ok(counts
        .into_iter()
        .map(|n| values.by_ref().take(n).collect())
        .collect())
}
