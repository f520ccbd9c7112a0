//! Labelled image sets stored as `images.tnsr`, `labels.tnsr` and `split.json`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Half-open index ranges into the image tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: [usize; 2],
    pub val: [usize; 2],
    /// Range used to measure activation densities; falls back to `val`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib: Option<[usize; 2]>,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    /// `[N, C, H, W]`
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub split: Split,
}

/// A materialized subset of a [`Dataset`].
#[derive(Debug, Clone)]
pub struct Subset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Subset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn head(&self, count: usize) -> Subset<T> {
        let count = count.min(self.len());
        Subset {
            images: self.images.slice_outer(0, count),
            labels: self.labels[..count].to_vec(),
        }
    }
}

fn range(r: [usize; 2]) -> Range<usize> {
    r[0]..r[1]
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, split: Split) -> Result<Self> {
        let ds = Dataset { images, labels, split };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.rank() != 4 {
            return Err(Error::InvalidDataset(format!(
                "images must be [N, C, H, W], got {:?}",
                self.images.dims()
            )));
        }
        let n = self.images.dims()[0];
        if self.labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {n} images",
                self.labels.len()
            )));
        }
        let ranges = [Some(self.split.train), Some(self.split.val), self.split.calib];
        for r in ranges.into_iter().flatten() {
            if r[0] > r[1] || r[1] > n {
                return Err(Error::InvalidDataset(format!("split range {r:?} outside 0..{n}")));
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn image_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    fn subset(&self, r: Range<usize>) -> Subset<T> {
        Subset {
            images: self.images.slice_outer(r.start, r.end),
            labels: self.labels[r].to_vec(),
        }
    }

    pub fn train(&self) -> Subset<T> {
        self.subset(range(self.split.train))
    }

    pub fn val(&self) -> Subset<T> {
        self.subset(range(self.split.val))
    }

    pub fn calib(&self) -> Subset<T> {
        self.subset(range(self.split.calib.unwrap_or(self.split.val)))
    }

    /// Keeps only samples whose label is in `classes`, relabelled by position in `classes`.
    /// Split ranges are preserved relative to the filtered order.
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<Dataset<T>> {
        let remap = |l: usize| classes.iter().position(|&c| c == l);
        let mut keep = Vec::new();
        let mut labels = Vec::new();
        let mut bounds = |r: [usize; 2]| {
            let start = keep.len();
            for i in r[0]..r[1] {
                if let Some(new) = remap(self.labels[i]) {
                    keep.push(i);
                    labels.push(new);
                }
            }
            [start, keep.len()]
        };
        let train = bounds(self.split.train);
        let val = bounds(self.split.val);
        let calib = self.split.calib.map(&mut bounds);
        let images = self.images.gather_outer(&keep);
        Dataset::new(images, labels, Split { train, val, calib })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let images = read_tensor(dir.join("images.tnsr"))?;
        let raw: Tensor<f32> = read_tensor(dir.join("labels.tnsr"))?;
        if raw.rank() != 1 {
            return Err(Error::InvalidDataset(format!(
                "labels must be rank 1, got {:?}",
                raw.dims()
            )));
        }
        let labels = raw
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidDataset(format!("label {v} is not a nonnegative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let split_path = dir.join("split.json");
        let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let split = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: split_path.display().to_string(),
            detail: e.to_string(),
        })?;
        Dataset::new(images, labels, split)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(dir.join("images.tnsr"), &self.images)?;
        let labels = Tensor::new(
            vec![self.labels.len()],
            self.labels.iter().map(|&l| l as f32).collect(),
        )?;
        write_tensor(dir.join("labels.tnsr"), &labels)?;
        let split = serde_json::to_string_pretty(&self.split).expect("split serializes");
        let path = dir.join("split.json");
        fs::write(&path, split).map_err(|e| Error::io(&path, e))
    }
}
