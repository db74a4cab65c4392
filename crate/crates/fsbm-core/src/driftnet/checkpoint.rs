//! Versioned flat binary checkpoints for [`DriftNetwork`].
//!
//! Layout: header `{magic "FSBMNET\0", version u32, input_dim u32,
//! time_embed_dim u32, hidden_dim u32, n_blocks u32}`, then every parameter
//! tensor in the fixed [`NetParams::flat`] order as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::driftnet::network::{BlockParams, DriftNetwork, LinearParams, NetParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FSBMNET\0";
const VERSION: u32 = 1;

pub fn save_checkpoint(net: &DriftNetwork, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for dim in [
        VERSION,
        net.input_dim() as u32,
        net.time_embed_dim() as u32,
        net.hidden_dim() as u32,
        net.n_blocks() as u32,
    ] {
        w.write_all(&dim.to_le_bytes())?;
    }
    for tensor in net.params().flat() {
        for &x in tensor {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DriftNetwork> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, not a drift network checkpoint",
            &magic
        )));
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        Ok(u32::from_le_bytes(buf))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let input_dim = read_u32(&mut r)? as usize;
    let time_embed_dim = read_u32(&mut r)? as usize;
    let hidden_dim = read_u32(&mut r)? as usize;
    let n_blocks = read_u32(&mut r)? as usize;
    if input_dim == 0 || hidden_dim == 0 || n_blocks == 0 || time_embed_dim < 2 {
        return Err(Error::Checkpoint(format!(
            "implausible dimensions d={input_dim} te={time_embed_dim} h={hidden_dim} blocks={n_blocks}"
        )));
    }

    // Build a zero skeleton with the right shapes, then fill it in flat order.
    let zeros_lin = |out: usize, inp: usize| LinearParams {
        w: Array2::zeros((out, inp)),
        b: Array1::zeros(out),
    };
    let params = NetParams {
        input: zeros_lin(hidden_dim, input_dim + time_embed_dim),
        blocks: (0..n_blocks)
            .map(|_| BlockParams {
                lin1: zeros_lin(hidden_dim, hidden_dim + time_embed_dim),
                lin2: zeros_lin(hidden_dim, hidden_dim),
            })
            .collect(),
        head: zeros_lin(input_dim, hidden_dim),
    };
    let mut net = DriftNetwork::from_params(input_dim, time_embed_dim, hidden_dim, params)
        .map_err(|e| Error::Checkpoint(format!("invalid dimensions: {e}")))?;
    read_params_into(&mut r, net.params_mut())?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    if !net.params().all_finite() {
        return Err(Error::Checkpoint("checkpoint contains non-finite weights".into()));
    }
    Ok(net)
}

fn read_params_into(r: &mut impl Read, params: &mut NetParams) -> Result<()> {
    for tensor in params.flat_mut() {
        let mut bytes = vec![0u8; tensor.len() * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint("truncated parameter data".into()))?;
        for (x, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
    }
    Ok(())
}
