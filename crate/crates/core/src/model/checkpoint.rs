//! Checkpoint file: one JSON header line, then every parameter as
//! little-endian f32 in layout order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, Model, ModelConfig};
use crate::error::{Error, Result};

const FORMAT: &str = "proxsep-lstm-v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    step: usize,
    n_params: usize,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model> {
        Model::from_params(&self.config, self.params)
    }
}

/// Writes `model` rounded to f32.
pub fn save_checkpoint(path: &Path, model: &Model, step: usize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        crate::io::create_dir(dir)?;
    }
    let header = Header {
        format: FORMAT.into(),
        config: model.config.clone(),
        step,
        n_params: model.params.len(),
        tensors: model
            .layout
            .tensors(&model.config)
            .into_iter()
            .map(|(name, shape)| TensorInfo { name, shape })
            .collect(),
    };
    let mut buf = serde_json::to_vec(&header).map_err(|e| Error::Json {
        context: "checkpoint header".into(),
        source: e,
    })?;
    buf.push(b'\n');
    buf.reserve(4 * model.params.len());
    for p in &model.params {
        buf.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&line).map_err(|e| Error::Json {
        context: format!("checkpoint header in {}", path.display()),
        source: e,
    })?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: unknown format {:?}",
            path.display(),
            header.format
        )));
    }
    header.config.validate()?;
    let expected = Layout::new(&header.config).total;
    if header.n_params != expected {
        return Err(Error::Checkpoint(format!(
            "{}: header lists {} parameters, config implies {expected}",
            path.display(),
            header.n_params
        )));
    }
    let mut data = Vec::new();
    reader
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    if data.len() != 4 * expected {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} bytes of parameters, found {}",
            path.display(),
            4 * expected,
            data.len()
        )));
    }
    let params = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(Checkpoint {
        config: header.config,
        step: header.step,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::init(&ModelConfig {
            depth: 2,
            width: 5,
            n_freq: 9,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/m.ckpt");
        let m = model();
        save_checkpoint(&path, &m, 17).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.step, 17);
        assert_eq!(ck.config, m.config);
        assert_eq!(ck.into_model().unwrap(), m);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model(), 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Json { .. })));
    }
}
