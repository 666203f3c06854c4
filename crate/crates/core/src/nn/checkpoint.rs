//! Versioned little-endian checkpoint of layer shapes and parameters.
//!
//! Layout: magic `PCNN`, `u32` version, `u64` seed, `u32` layer count, then per
//! layer `u32 in`, `u32 out`, `u8 activation`, `in*out` weights, `out` biases
//! (all `f64`).

use std::io::{Read, Write};

use super::matrix::Matrix;
use super::model::{Activation, Dense, ModelGraph};
use super::NnError;

const MAGIC: &[u8; 4] = b"PCNN";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> NnError {
    NnError::Checkpoint(e.to_string())
}

pub fn save(model: &ModelGraph, mut w: impl Write) -> Result<(), NnError> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&model.seed().to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.layers().len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for l in model.layers() {
        w.write_all(&(l.in_dim() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(l.out_dim() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&[l.activation.code()]).map_err(io_err)?;
        for v in l.weights.as_slice().iter().chain(&l.bias) {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(io_err)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn load(mut r: impl Read) -> Result<ModelGraph, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed).map_err(io_err)?;
    let n = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let i = read_u32(&mut r)? as usize;
        let o = read_u32(&mut r)? as usize;
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(io_err)?;
        let act = Activation::from_code(code[0])
            .ok_or_else(|| NnError::Checkpoint(format!("unknown activation {}", code[0])))?;
        let w = read_f64s(&mut r, i * o)?;
        let b = read_f64s(&mut r, o)?;
        layers.push(Dense::new(Matrix::from_vec(i, o, w), b, act));
    }
    ModelGraph::from_layers(layers, u64::from_le_bytes(seed))
}

/// Loads a checkpoint and checks it has the same layer widths as `expected`.
pub fn load_compatible(r: impl Read, expected: &ModelGraph) -> Result<ModelGraph, NnError> {
    let model = load(r)?;
    if model.dims() != expected.dims() {
        return Err(NnError::Checkpoint(format!(
            "shape mismatch: checkpoint {:?}, expected {:?}",
            model.dims(),
            expected.dims()
        )));
    }
    Ok(model)
}
