//! Model manifest: a JSON file listing layer shapes, post-ops and the TNSR
//! files that hold each layer's weights `[m, n]`, bias `[n]` and mask `[m, n]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use enprune::{Error, FilterBank, LayerKind, LayerShape, NetLayer, Network, PostOp, Result, Tensor};

use crate::fsutil::{read_json, write_json, write_tensor_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: LayerShape,
    #[serde(default = "relu")]
    pub post: PostOp,
    /// Tensor paths relative to the manifest. Shape-only manifests omit them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

fn relu() -> PostOp {
    PostOp::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub n_classes: usize,
    pub layers: Vec<LayerEntry>,
}

/// `conv1, conv2, …, fc1, …` in layer order.
pub fn layer_names(shapes: &[LayerShape]) -> Vec<String> {
    let (mut conv, mut fc) = (0, 0);
    shapes
        .iter()
        .map(|s| match s.kind {
            LayerKind::Conv => {
                conv += 1;
                format!("conv{conv}")
            }
            LayerKind::Fc => {
                fc += 1;
                format!("fc{fc}")
            }
        })
        .collect()
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(rel)
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let model: ModelFile = read_json(path)?;
        model.validate(path)?;
        Ok(model)
    }

    /// Shape chain, class count and existence of every referenced tensor.
    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config(format!("{}: model has no layers", path.display())));
        }
        let mut dims: Option<[usize; 3]> = None;
        for entry in &self.layers {
            let s = &entry.shape;
            s.validate()
                .map_err(|e| Error::Config(format!("{}: layer {}: {e}", path.display(), entry.name)))?;
            if let Some(d) = dims {
                if d != s.input_dims() {
                    return Err(Error::Config(format!(
                        "{}: layer {} expects input {:?}, previous layer produces {d:?}",
                        path.display(),
                        entry.name,
                        s.input_dims()
                    )));
                }
            }
            dims = Some(entry.post.output_dims(s.output_dims())?);
            for rel in [&entry.weights, &entry.bias, &entry.mask].into_iter().flatten() {
                let p = resolve(path, rel);
                if !p.is_file() {
                    return Err(Error::Config(format!("{}: missing tensor file {}", path.display(), p.display())));
                }
            }
        }
        let last = &self.layers[self.layers.len() - 1].shape;
        if last.n() != self.n_classes {
            return Err(Error::Config(format!(
                "{}: final layer has {} outputs but n_classes is {}",
                path.display(),
                last.n(),
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn has_weights(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_some())
    }

    /// Loads tensors into a network. A missing bias reads as zeros and a missing mask as dense.
    pub fn load_network(&self, path: &Path) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for entry in &self.layers {
            let s = entry.shape;
            let (m, n) = (s.m(), s.n());
            let read = |rel: &Option<String>, want: Vec<usize>| -> Result<Option<Vec<f32>>> {
                let Some(rel) = rel else { return Ok(None) };
                let t: Tensor = enprune::tensor::read_tensor(resolve(path, rel))?;
                if t.dims() != want.as_slice() {
                    return Err(Error::Shape {
                        layer: entry.name.clone(),
                        detail: format!("{rel} has dims {:?}, expected {want:?}", t.dims()),
                    });
                }
                Ok(Some(t.into_data()))
            };
            let weights = read(&entry.weights, vec![m, n])?
                .ok_or_else(|| Error::Config(format!("layer {} has no weights file", entry.name)))?;
            let bias = read(&entry.bias, vec![n])?.unwrap_or_else(|| vec![0.0; n]);
            let mask = read(&entry.mask, vec![m, n])?
                .map(|v| v.into_iter().map(|x| x != 0.0).collect())
                .unwrap_or_else(|| vec![true; m * n]);
            let mut bank = FilterBank::new(s, weights, bias, mask)?;
            if !bank.mask_holds() {
                bank.apply_mask();
            }
            layers.push(NetLayer { bank, post: entry.post });
        }
        Network::new(layers)
    }

    /// Writes `net` as `<dir>/model.json` plus one set of tensors per layer.
    pub fn save_network(net: &Network, dir: &Path, description: Option<String>) -> Result<PathBuf> {
        let shapes: Vec<LayerShape> = net.layers.iter().map(|l| l.bank.shape).collect();
        let names = layer_names(&shapes);
        let mut layers = Vec::with_capacity(net.len());
        for (layer, name) in net.layers.iter().zip(names) {
            let b = &layer.bank;
            let (m, n) = (b.m(), b.n());
            let files = [
                format!("{name}.weights.tnsr"),
                format!("{name}.bias.tnsr"),
                format!("{name}.mask.tnsr"),
            ];
            write_tensor_atomic(&dir.join(&files[0]), &Tensor::new(vec![m, n], b.weights.clone())?)?;
            write_tensor_atomic(&dir.join(&files[1]), &Tensor::new(vec![n], b.bias.clone())?)?;
            let mask = b.mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
            write_tensor_atomic(&dir.join(&files[2]), &Tensor::new(vec![m, n], mask)?)?;
            let [w, bi, ma] = files;
            layers.push(LayerEntry {
                name,
                shape: b.shape,
                post: layer.post,
                weights: Some(w),
                bias: Some(bi),
                mask: Some(ma),
            });
        }
        let model = ModelFile {
            description,
            n_classes: net.n_classes(),
            layers,
        };
        let path = dir.join("model.json");
        write_json(&path, &model)?;
        Ok(path)
    }
}
