//! Binary parameter blobs: magic, header length, JSON header, raw
//! little-endian `f64` arrays in declaration order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WCRCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: Value,
    shapes: Vec<Vec<usize>>,
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::IoFailure {
        path: "<checkpoint>".into(),
        message: what.into(),
    }
}

pub fn write_checkpoint(out: &mut impl Write, config: &Value, params: &[Tensor]) -> Result<()> {
    let header = Header {
        config: config.clone(),
        shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    let io = |e: std::io::Error| corrupt(e.to_string());
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for p in params {
        let bytes: Vec<u8> = p.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        out.write_all(&bytes).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<(Value, Vec<Tensor>)> {
    let io = |e: std::io::Error| corrupt(e.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(e.to_string()))?;
    let mut params = Vec::with_capacity(header.shapes.len());
    for shape in header.shapes {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; 8 * n];
        input.read_exact(&mut bytes).map_err(io)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    Ok((header.config, params))
}

pub fn save_checkpoint(path: &Path, config: &Value, params: &[Tensor]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(&mut out, config, params).map_err(|e| relabel(e, path))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Value, Vec<Tensor>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut std::io::BufReader::new(file)).map_err(|e| relabel(e, path))
}

fn relabel(err: Error, path: &Path) -> Error {
    match err {
        Error::IoFailure { message, .. } => Error::io(path, message),
        other => other,
    }
}
