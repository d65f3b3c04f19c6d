//! Synthetic and CSV-backed classification datasets.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
pub enum DatasetSpec {
    /// Isotropic unit-variance Gaussian blobs in 2-D with centers evenly
    /// spaced on a circle of radius `separation` (in standard deviations),
    /// so two classes sit `separation` away from their decision boundary.
    Blobs { n: usize, classes: usize, separation: f64 },
    /// Two interleaved half circles with Gaussian jitter.
    TwoMoons { n: usize, noise: f64 },
    /// Flattened images from a CSV file with header `label,px0,px1,...`.
    TinyImages {
        path: PathBuf,
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// `[features]` for vectors, `[channels, height, width]` for images.
    pub input_shape: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
        }
    }

    /// Seeded shuffle, then the last `test_fraction` of samples become the
    /// test split.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (train, test) = order.split_at(self.len() - n_test);
        (self.subset(train), self.subset(test))
    }
}

pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, DatasetError> {
    match spec {
        DatasetSpec::Blobs { n, classes, separation } => blobs(*n, *classes, *separation, seed),
        DatasetSpec::TwoMoons { n, noise } => two_moons(*n, *noise, seed),
        DatasetSpec::TinyImages {
            path,
            channels,
            height,
            width,
        } => load_tiny_images(path, [*channels, *height, *width]),
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DatasetError {
    DatasetError::InvalidParams {
        field,
        reason: reason.into(),
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

pub fn blobs(n: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if classes < 2 {
        return Err(invalid("classes", "need at least 2 classes"));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(invalid("separation", "must be finite and non-negative"));
    }
    let radius = separation;
    let centers: Vec<[f64; 2]> = (0..classes)
        .map(|c| {
            let theta = 2.0 * PI * c as f64 / classes as f64;
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect();
    let mut r = rng(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        features.push(vec![centers[c][0] + normal(&mut r), centers[c][1] + normal(&mut r)]);
        labels.push(c);
    }
    Ok(Dataset {
        features,
        labels,
        num_classes: classes,
        input_shape: vec![2],
    })
}

pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if n < 2 {
        return Err(invalid("n", "need at least 2 samples"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(invalid("noise", "must be finite and non-negative"));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let arc = |count: usize, i: usize| {
        if count > 1 {
            PI * i as f64 / (count - 1) as f64
        } else {
            0.0
        }
    };
    let mut r = rng(seed);
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = arc(n_outer, i);
        samples.push((vec![t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = arc(n_inner, i);
        samples.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    for (x, _) in &mut samples {
        for v in x.iter_mut() {
            *v += noise * normal(&mut r);
        }
    }
    samples.shuffle(&mut r);
    let (features, labels) = samples.into_iter().unzip();
    Ok(Dataset {
        features,
        labels,
        num_classes: 2,
        input_shape: vec![2],
    })
}

/// Reads `label,px0,px1,...` rows; each row must carry exactly
/// `channels·height·width` pixels in `[0, 1]`.
pub fn load_tiny_images(path: &Path, shape: [usize; 3]) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_tiny_images(&text, shape)
}

pub fn parse_tiny_images(text: &str, shape: [usize; 3]) -> Result<Dataset, DatasetError> {
    let pixels: usize = shape.iter().product();
    if pixels == 0 {
        return Err(invalid("shape", "image dimensions must be positive"));
    }
    let malformed = |line: usize, reason: String| DatasetError::MalformedCsv { line, reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if header.get(0) != Some("label") {
        return Err(malformed(1, "first column must be `label`".into()));
    }
    if header.len() != pixels + 1 {
        return Err(malformed(
            1,
            format!("expected {} pixel columns, header has {}", pixels, header.len() - 1),
        ));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("px{i}") {
            return Err(malformed(
                1,
                format!("column {} should be `px{i}`, got `{name}`", i + 1),
            ));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| malformed(line, format!("label `{}` is not a non-negative integer", &record[0])))?;
        let mut row = Vec::with_capacity(pixels);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("pixel `{field}` is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(malformed(line, format!("pixel {v} outside [0, 1]")));
            }
            row.push(v);
        }
        features.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(malformed(2, "no data rows".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(Dataset {
        features,
        labels,
        num_classes,
        input_shape: shape.to_vec(),
    })
}
