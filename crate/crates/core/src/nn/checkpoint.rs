//! Binary model checkpoints.
//!
//! Little-endian layout: magic `SSAE`, version u32 = 1, layer count u32;
//! per layer u32 out, u32 in, one activation tag byte, row-major f64
//! weights, then f64 biases; finally a u64 length-prefixed UTF-8 metadata
//! blob of free-form `key=value` lines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, MlpModel};
use crate::error::{data_err, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SSAE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &MlpModel, metadata: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        w.write_all(&[layer.activation.tag()])?;
        for v in layer.weights.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in layer.bias.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let meta = metadata.as_bytes();
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpModel, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if magic != CHECKPOINT_MAGIC {
        return data_err(format!("{}: not a checkpoint (bad magic)", path.display()));
    }
    let version = read_u32(&mut r, path)?;
    if version != CHECKPOINT_VERSION {
        return data_err(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        ));
    }
    let n_layers = read_u32(&mut r, path)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return data_err(format!("{}: implausible layer count {n_layers}", path.display()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out_dim = read_u32(&mut r, path)? as usize;
        let in_dim = read_u32(&mut r, path)? as usize;
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag, path)?;
        let activation = Activation::from_tag(tag[0])?;
        let mut weights = vec![0.0f64; out_dim * in_dim];
        read_f64s(&mut r, &mut weights, path)?;
        let mut bias = vec![0.0f64; out_dim];
        read_f64s(&mut r, &mut bias, path)?;
        let weights = Array2::from_shape_vec((out_dim, in_dim), weights)
            .map_err(|e| crate::error::Error::Data(format!("{}: {e}", path.display())))?;
        layers.push(Layer { weights, bias: Array1::from_vec(bias), activation });
    }
    let meta_len = read_u64(&mut r, path)? as usize;
    let mut meta = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta, path)?;
    let metadata = String::from_utf8(meta)
        .map_err(|_| crate::error::Error::Data(format!("{}: metadata is not UTF-8", path.display())))?;
    let model = MlpModel::new(layers)?;
    Ok((model, metadata))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| crate::error::Error::Data(format!("{}: truncated checkpoint", path.display())))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, out: &mut [f64], path: &Path) -> Result<()> {
    let mut b = [0u8; 8];
    for v in out.iter_mut() {
        read_exact(r, &mut b, path)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(())
}
