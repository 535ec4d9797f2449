//! Self-describing weight files: an 8-byte little-endian header length, a JSON
//! header, then every parameter as a little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ScoreNet, TensorSpec};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

const FORMAT: &str = "guided-planner-scorenet";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    architecture: Architecture,
    schedule: NoiseSchedule,
    fourier_frequencies: Vec<f64>,
    param_count: usize,
    tensors: Vec<TensorSpec>,
}

pub fn write_checkpoint(net: &ScoreNet<f32>, mut w: impl Write) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32le".into(),
        architecture: net.architecture().clone(),
        schedule: *net.schedule(),
        fourier_frequencies: net.fourier_frequencies().to_vec(),
        param_count: net.param_count(),
        tensors: net.tensors().to_vec(),
    };
    let text = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + text.len() + 4 * net.param_count());
    bytes.extend_from_slice(&(text.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&text);
    for p in net.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ScoreNet<f32>> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| bad(format!("header length: {e}")))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 26 {
        return Err(bad(format!("header length {len} is implausible")));
    }
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|e| bad(format!("header: {e}")))?;
    let header: Header = serde_json::from_slice(&text).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION || header.dtype != "f32le" {
        return Err(bad(format!(
            "unsupported checkpoint {} v{} {}",
            header.format, header.version, header.dtype
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| bad(format!("payload: {e}")))?;
    if payload.len() != 4 * header.param_count {
        return Err(bad(format!(
            "payload holds {} bytes, header declares {} parameters",
            payload.len(),
            header.param_count
        )));
    }
    let params: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("checkpoint weights"));
    }
    let net = ScoreNet::from_parts(header.architecture, header.schedule, header.fourier_frequencies, params)?;
    if net.tensors() != header.tensors.as_slice() {
        return Err(bad("tensor table does not match the architecture".into()));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &ScoreNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(net, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScoreNet<f32>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_outputs() {
        let net = ScoreNet::<f32>::new(Architecture::default(), NoiseSchedule::default(), 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.params(), net.params());
        let x = vec![0.1f32; 128];
        assert_eq!(back.forward(&x, 0.6).unwrap(), net.forward(&x, 0.6).unwrap());
    }

    #[test]
    fn truncated_payload_rejected() {
        let net = ScoreNet::<f32>::new(Architecture::default(), NoiseSchedule::default(), 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
