use std::io::Write;
use std::path::Path;

use enprune::tensor::{encode, Tensor};
use enprune::{Error, Result, Scalar};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_tensor_atomic<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    atomic_write(path, &encode(t)?)
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Saves a dataset directory; each file is replaced atomically.
pub fn save_dataset(ds: &enprune::Dataset, dir: &Path) -> Result<()> {
    write_tensor_atomic(&dir.join("images.tnsr"), &ds.images)?;
    let labels = Tensor::new(vec![ds.labels.len()], ds.labels.iter().map(|&l| l as f32).collect())?;
    write_tensor_atomic(&dir.join("labels.tnsr"), &labels)?;
    write_json(&dir.join("split.json"), &ds.split)
}
