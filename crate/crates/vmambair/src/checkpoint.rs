//! Checkpoint container: little-endian, magic "VMIR", format version,
//! length-prefixed key=value config text, then a tensor table of
//! (name, dtype tag, rank, extents, raw buffer). Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Dtype, Element, Tensor};

const MAGIC: [u8; 4] = *b"VMIR";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::State(format!("checkpoint io: {e}"))
}

fn dtype_tag(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

pub fn save<T: Element>(path: &Path, model: &Model<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(&MAGIC).map_err(io_err)?;
    write_u32(&mut w, VERSION)?;
    let cfg = model.cfg.to_kv();
    write_u32(&mut w, cfg.len() as u32)?;
    w.write_all(cfg.as_bytes()).map_err(io_err)?;
    let params = model.named_params();
    write_u32(&mut w, params.len() as u32)?;
    for (name, t) in &params {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&[dtype_tag(T::DTYPE), t.shape().len() as u8])
            .map_err(io_err)?;
        for &e in t.shape() {
            write_u32(&mut w, e as u32)?;
        }
        let data = t.data();
        match T::DTYPE {
            Dtype::F32 => {
                for v in data.iter() {
                    w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(io_err)?;
                }
            }
            Dtype::F64 => {
                for v in data.iter() {
                    w.write_all(&v.as_f64().to_le_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Read only the embedded config (to build a model before loading weights).
pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    read_header(&mut r)
}

fn read_header(r: &mut impl Read) -> Result<ModelConfig> {
    let magic = read_exact(r, 4)?;
    if magic != MAGIC {
        return Err(TensorError::State("checkpoint: bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(TensorError::State(format!(
            "checkpoint: unsupported version {version}"
        )));
    }
    let cfg_len = read_u32(r)? as usize;
    let cfg_text = String::from_utf8(read_exact(r, cfg_len)?)
        .map_err(|_| TensorError::State("checkpoint: config is not UTF-8".into()))?;
    ModelConfig::from_kv(&cfg_text)
}

/// Load weights into an already-built model. Names, shapes, and dtype must
/// match exactly.
pub fn load_into<T: Element>(path: &Path, model: &Model<T>) -> Result<()> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let _cfg = read_header(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    let params: std::collections::HashMap<String, Tensor<T>> =
        model.named_params().into_iter().collect();
    if count != params.len() {
        return Err(TensorError::State(format!(
            "checkpoint: {count} tensors, model has {}",
            params.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_exact(&mut r, name_len)?)
            .map_err(|_| TensorError::State("checkpoint: tensor name not UTF-8".into()))?;
        let mut meta = [0u8; 2];
        r.read_exact(&mut meta).map_err(io_err)?;
        let (tag, rank) = (meta[0], meta[1] as usize);
        if tag != dtype_tag(T::DTYPE) {
            return Err(TensorError::State(format!(
                "checkpoint: dtype tag {tag} does not match model element type"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let elem_size = match T::DTYPE {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        };
        let raw = read_exact(&mut r, numel * elem_size)?;
        let t = params
            .get(&name)
            .ok_or_else(|| TensorError::State(format!("checkpoint: unknown tensor '{name}'")))?;
        if t.shape() != shape.as_slice() {
            return Err(TensorError::State(format!(
                "checkpoint: shape mismatch for '{name}': file {:?}, model {:?}",
                shape,
                t.shape()
            )));
        }
        let data: Vec<T> = match T::DTYPE {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| T::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| T::of_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        t.set_data(data)?;
    }
    Ok(())
}
