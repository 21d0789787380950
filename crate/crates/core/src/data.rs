//! Labelled datasets: CSV tables, MNIST IDX files, stratified splits and
//! min-max scaling.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Shape;

const IRIS_CSV: &str = include_str!("../data/iris.csv");
const SONAR_CSV: &str = include_str!("../data/sonar.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_shape: Shape,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        input_shape: Shape,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Structure(format!(
                "{} samples but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = features.iter().find(|x| x.len() != input_shape.len()) {
            return Err(Error::Structure(format!(
                "sample has {} features, expected {}",
                bad.len(),
                input_shape.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Structure(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            input_shape,
            features,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            input_shape: self.input_shape,
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Parses a CSV table with a header row: feature columns, then a label
    /// column. Classes are numbered in sorted order of their names.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(Error::format(
                "dataset CSV",
                "needs feature columns and a label column",
            ));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != width {
                return Err(Error::format(
                    "dataset CSV",
                    format!(
                        "row {} has {} columns, header has {width}",
                        line + 2,
                        record.len()
                    ),
                ));
            }
            let mut x = Vec::with_capacity(width - 1);
            for cell in record.iter().take(width - 1) {
                x.push(cell.parse::<f64>().map_err(|_| {
                    Error::format(
                        "dataset CSV",
                        format!("row {}: `{cell}` is not a number", line + 2),
                    )
                })?);
            }
            rows.push((x, record[width - 1].to_string()));
        }
        let names: Vec<String> = rows
            .iter()
            .map(|(_, l)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels = rows
            .iter()
            .map(|(_, l)| names.iter().position(|n| n == l).expect("collected"))
            .collect();
        let features = rows.into_iter().map(|(x, _)| x).collect();
        Self::new(Shape::Flat(width - 1), features, labels, names)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    /// The bundled `iris` (150 × 4, 3 classes) or `sonar` (208 × 60, 2 classes) tables.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "iris" => Self::from_csv_str(IRIS_CSV),
            "sonar" => Self::from_csv_str(SONAR_CSV),
            _ => Err(Error::Parameter(format!(
                "unknown built-in dataset `{name}` (expected iris or sonar)"
            ))),
        }
    }

    /// Stratified split with `test_size` samples in the test set. Per-class
    /// test counts are proportional, with leftover slots going to the largest
    /// remainders (lowest class index on ties).
    pub fn stratified_split(&self, test_size: usize, seed: u64) -> Result<(Self, Self)> {
        if test_size == 0 || test_size >= self.len() {
            return Err(Error::Parameter(format!(
                "test size {test_size} must be in 1..{}",
                self.len()
            )));
        }
        let counts = self.class_counts();
        let total = self.len();
        let mut quota: Vec<usize> = counts.iter().map(|c| c * test_size / total).collect();
        let mut rest: Vec<(usize, usize)> = counts
            .iter()
            .enumerate()
            .map(|(k, c)| (c * test_size % total, k))
            .collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = test_size - quota.iter().sum::<usize>();
        for &(_, k) in rest.iter().take(missing) {
            quota[k] += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (k, &q) in quota.iter().enumerate() {
            let mut idx: Vec<usize> = (0..total).filter(|&i| self.labels[i] == k).collect();
            idx.shuffle(&mut rng);
            test.extend_from_slice(&idx[..q]);
            train.extend_from_slice(&idx[q..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// The train/test protocol used for the bundled tables: IRIS 120/30,
    /// SONAR 166/42, min-max scaled on the training split.
    pub fn builtin_split(name: &str, seed: u64) -> Result<(Self, Self)> {
        let data = Self::builtin(name)?;
        let test_size = match name {
            "iris" => 30,
            _ => 42,
        };
        let (train, test) = data.stratified_split(test_size, seed)?;
        let scaler = MinMax::fit(&train)?;
        Ok((scaler.apply(&train), scaler.apply(&test)))
    }
}

/// Per-feature min-max scaling to `[0, 1]`, clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Precondition(
                "cannot fit scaling on an empty dataset".into(),
            ));
        }
        let n = data.input_shape.len();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for x in &data.features {
            for (j, &v) in x.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let range = self.max[j] - self.min[j];
                if range > 0.0 {
                    ((v - self.min[j]) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        Dataset {
            features: data.features.iter().map(|x| self.transform(x)).collect(),
            ..data.clone()
        }
    }
}

/// A decoded IDX array: dimensions and raw unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses the IDX container (big-endian header, unsigned-byte payload).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bad = |reason: String| Error::format("IDX file", reason);
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("missing magic number".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Unsupported(format!(
            "IDX element type 0x{:02x} (only unsigned bytes are read)",
            bytes[2]
        )));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if rank == 0 || bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() - header != count {
        return Err(bad(format!(
            "payload has {} bytes, dimensions {dims:?} need {count}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Builds an image dataset from IDX image and label arrays; pixels scaled by 1/255.
pub fn idx_dataset(images: &IdxArray, labels: &IdxArray) -> Result<Dataset> {
    let [n, h, w] = images.dims.as_slice() else {
        return Err(Error::format("IDX images", "expected 3 dimensions"));
    };
    if labels.dims != [*n] {
        return Err(Error::format(
            "IDX labels",
            format!("expected {n} labels, dimensions are {:?}", labels.dims),
        ));
    }
    let classes = labels
        .data
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    let features = images
        .data
        .chunks_exact(h * w)
        .map(|px| px.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    Dataset::new(
        Shape::Image {
            channels: 1,
            height: *h,
            width: *w,
        },
        features,
        labels.data.iter().map(|&y| y as usize).collect(),
        (0..classes).map(|c| c.to_string()).collect(),
    )
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    idx_dataset(&read_idx(images)?, &read_idx(labels)?)
}
