//! Labeled binary datasets, loaders and agent partitions.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ProblemError;
use crate::rng::{stream, Purpose};

/// Dense features with `+1 / -1` labels and a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `m x p` feature matrix.
    features: Vec<f64>,
    p: usize,
    labels: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// All samples go to `train` until [`Dataset::split`] is called.
    pub fn new(features: Vec<f64>, p: usize, labels: Vec<f64>) -> Result<Self, ProblemError> {
        let m = labels.len();
        if features.len() != m * p {
            return Err(ProblemError::Data(format!(
                "{} feature values do not form {m} rows of {p}",
                features.len()
            )));
        }
        if let Some(j) = labels.iter().position(|&l| l != 1.0 && l != -1.0) {
            return Err(ProblemError::Data(format!("label {} at sample {j} is not +1 or -1", labels[j])));
        }
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(ProblemError::Data(format!("non-finite feature in sample {}", j / p.max(1))));
        }
        Ok(Self { features, p, labels, train: (0..m).collect(), test: Vec::new() })
    }

    /// First `n_train` samples train, the next `n_test` test; the rest is
    /// dropped.
    pub fn split(mut self, n_train: usize, n_test: usize) -> Result<Self, ProblemError> {
        if n_train + n_test > self.len() {
            return Err(ProblemError::Data(format!(
                "requested {n_train} + {n_test} samples but only {} available",
                self.len()
            )));
        }
        self.train = (0..n_train).collect();
        self.test = (n_train..n_train + n_test).collect();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.p
    }

    pub fn features(&self, j: usize) -> &[f64] {
        &self.features[j * self.p..(j + 1) * self.p]
    }

    pub fn label(&self, j: usize) -> f64 {
        self.labels[j]
    }

    /// Reads `label,f1,...,fp` rows. A first line that does not parse as
    /// numbers is treated as a header. Labels `0` are mapped to `-1`.
    pub fn from_csv(path: &Path) -> Result<Self, ProblemError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| ProblemError::Data(format!("{}: {e}", path.display())))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut p = None;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ProblemError::Data(e.to_string()))?;
            let values: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match values {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(ProblemError::Data(format!("line {}: {e}", line + 1)));
                }
            };
            let width = values.len().saturating_sub(1);
            if *p.get_or_insert(width) != width || width == 0 {
                return Err(ProblemError::Data(format!("line {}: expected a label and features", line + 1)));
            }
            labels.push(if values[0] == 0.0 { -1.0 } else { values[0] });
            features.extend_from_slice(&values[1..]);
        }
        Self::new(features, p.unwrap_or(0), labels)
    }

    /// Reads an IDX image/label file pair, keeps the digits `positive` (+1)
    /// and `negative` (-1), and scales pixels to `[0, 1]`.
    pub fn from_idx(
        images: &Path,
        labels: &Path,
        positive: u8,
        negative: u8,
    ) -> Result<Self, ProblemError> {
        let image_bytes = read_all(images)?;
        let label_bytes = read_all(labels)?;
        let header = |bytes: &[u8], at: usize| -> Result<usize, ProblemError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
                .ok_or_else(|| ProblemError::Data("truncated IDX header".into()))
        };
        if header(&image_bytes, 0)? != 0x0803 || header(&label_bytes, 0)? != 0x0801 {
            return Err(ProblemError::Data("unexpected IDX magic number".into()));
        }
        let count = header(&image_bytes, 4)?;
        let p = header(&image_bytes, 8)? * header(&image_bytes, 12)?;
        if header(&label_bytes, 4)? != count
            || image_bytes.len() < 16 + count * p
            || label_bytes.len() < 8 + count
        {
            return Err(ProblemError::Data("IDX image and label files disagree".into()));
        }
        let mut features = Vec::new();
        let mut out_labels = Vec::new();
        for j in 0..count {
            let digit = label_bytes[8 + j];
            let label = if digit == positive {
                1.0
            } else if digit == negative {
                -1.0
            } else {
                continue;
            };
            out_labels.push(label);
            let pixels = &image_bytes[16 + j * p..16 + (j + 1) * p];
            features.extend(pixels.iter().map(|&v| v as f64 / 255.0));
        }
        Self::new(features, p, out_labels)
    }

    /// Two Gaussian classes in `p` dimensions with unit isotropic noise and
    /// means `+-(separation / 2) u` for a random unit vector `u`. Labels are
    /// balanced in expectation; the split is `n_train` then `n_test`.
    pub fn two_gaussians(
        n_train: usize,
        n_test: usize,
        p: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let mut rng = stream(seed, Purpose::Data, 0, 0);
        let mut direction: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|v| *v /= norm);
        let m = n_train + n_test;
        let mut features = Vec::with_capacity(m * p);
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            let label = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            labels.push(label);
            for u in &direction {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(label * 0.5 * separation * u + noise);
            }
        }
        Self::new(features, p, labels)?.split(n_train, n_test)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, ProblemError> {
    let file = File::open(path).map_err(|e| ProblemError::Data(format!("{}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| ProblemError::Data(format!("{}: {e}", path.display())))?;
    Ok(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    /// Random shuffle, then contiguous near-equal shards.
    #[default]
    Iid,
    /// Stable sort by label (`-1` first), then contiguous shards.
    LabelSorted,
}

/// Splits the training indices into `n` disjoint shards whose sizes differ
/// by at most one.
pub fn partition(
    ds: &Dataset,
    n: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Vec<Vec<usize>>, ProblemError> {
    let m = ds.train.len();
    if n == 0 || n > m {
        return Err(ProblemError::Data(format!("cannot split {m} training samples over {n} agents")));
    }
    let mut order = ds.train.clone();
    match scheme {
        PartitionScheme::Iid => order.shuffle(&mut stream(seed, Purpose::Partition, 0, 0)),
        PartitionScheme::LabelSorted => {
            order.sort_by(|&i, &j| ds.label(i).total_cmp(&ds.label(j)));
        }
    }
    let (base, extra) = (m / n, m % n);
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        shards.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(m: usize) -> Dataset {
        let labels = (0..m).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Dataset::new((0..m).map(|j| j as f64).collect(), 1, labels).unwrap()
    }

    #[test]
    fn single_agent_gets_everything() {
        let ds = toy(7);
        let mut shards = partition(&ds, 1, PartitionScheme::Iid, 0).unwrap();
        assert_eq!(shards.len(), 1);
        shards[0].sort_unstable();
        assert_eq!(shards[0], ds.train);
    }

    #[test]
    fn ten_samples_ten_agents_are_singletons() {
        let ds = toy(10);
        let shards = partition(&ds, 10, PartitionScheme::Iid, 3).unwrap();
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert!(shards.iter().all(|s| s.len() == 1));
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn label_sorted_separates_classes() {
        let ds = toy(8);
        let shards = partition(&ds, 2, PartitionScheme::LabelSorted, 0).unwrap();
        assert!(shards[0].iter().all(|&j| ds.label(j) == -1.0));
        assert!(shards[1].iter().all(|&j| ds.label(j) == 1.0));
    }

    #[test]
    fn too_many_agents_is_an_error() {
        assert!(partition(&toy(3), 4, PartitionScheme::Iid, 0).is_err());
    }

    #[test]
    fn csv_with_header_and_zero_labels() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "label,a,b\n1,0.5,2\n0,1,-1").unwrap();
        let ds = Dataset::from_csv(file.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features(1), &[1.0, -1.0]);
        assert_eq!(ds.label(1), -1.0);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1,0.5,2\n-1,1").unwrap();
        assert!(Dataset::from_csv(file.path()).is_err());
    }

    #[test]
    fn idx_filters_two_digits() {
        let mut images = tempfile::NamedTempFile::new().unwrap();
        let mut labels = tempfile::NamedTempFile::new().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend_from_slice(&[255, 0, 51, 102, 0, 255]);
        images.write_all(&img).unwrap();
        labels.write_all(&[0, 0, 8, 1, 0, 0, 0, 3, 3, 7, 5]).unwrap();
        let ds = Dataset::from_idx(images.path(), labels.path(), 3, 5).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features(0), &[1.0, 0.0]);
        assert_eq!(ds.label(1), -1.0);
        assert_eq!(ds.features(1), &[0.0, 1.0]);
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a = Dataset::two_gaussians(20, 5, 4, 6.0, 9).unwrap();
        let b = Dataset::two_gaussians(20, 5, 4, 6.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.test.len()), (20, 5));
    }
}
