//! Flat binary weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "OGW1" | layer_count | layer_count x (kind, in_dim, out_dim, has_bias)
//!        | for each linear layer: weight (out x in, row-major) then bias, as f64 LE
//! ```
//!
//! `kind` is 0 for linear and 1 for ReLU.

use std::io::{Read, Write};

use super::{Layer, LayerKind, LayerSpec, Linear, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OGW1";

impl Network {
    pub fn write_weights<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let specs = self.specs();
        w.write_all(&(specs.len() as u32).to_le_bytes())?;
        for s in &specs {
            let kind: u32 = match s.kind {
                LayerKind::Linear => 0,
                LayerKind::Relu => 1,
            };
            for v in [kind, s.in_dim as u32, s.out_dim as u32, s.has_bias as u32] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for lin in self.linears() {
            for v in lin.weight.iter().chain(lin.bias.iter().flatten()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_weights<R: Read>(mut r: R) -> Result<Self> {
        let mut offset = 0usize;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, &mut offset)?;
        if &magic != MAGIC {
            return Err(format_err(0, "bad magic, expected OGW1"));
        }
        let count = read_u32(&mut r, &mut offset)? as usize;
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let at = offset;
            let kind = match read_u32(&mut r, &mut offset)? {
                0 => LayerKind::Linear,
                1 => LayerKind::Relu,
                other => return Err(format_err(at, &format!("unknown layer kind {other}"))),
            };
            let in_dim = read_u32(&mut r, &mut offset)? as usize;
            let out_dim = read_u32(&mut r, &mut offset)? as usize;
            let has_bias = read_u32(&mut r, &mut offset)? != 0;
            specs.push(LayerSpec { kind, in_dim, out_dim, has_bias });
        }
        let mut layers = Vec::with_capacity(count);
        for s in &specs {
            layers.push(match s.kind {
                LayerKind::Relu => Layer::Relu,
                LayerKind::Linear => {
                    let weight = read_f64s(&mut r, s.in_dim * s.out_dim, &mut offset)?;
                    let bias = if s.has_bias {
                        Some(read_f64s(&mut r, s.out_dim, &mut offset)?)
                    } else {
                        None
                    };
                    Layer::Linear(Linear { in_dim: s.in_dim, out_dim: s.out_dim, weight, bias })
                }
            });
        }
        Network::from_layers(layers)
    }
}

fn format_err(offset: usize, message: &str) -> Error {
    Error::Format { location: format!("byte {offset}"), message: message.to_string() }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut usize) -> Result<()> {
    r.read_exact(buf).map_err(|_| format_err(*offset, "unexpected end of file"))?;
    *offset += buf.len();
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut usize) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, offset)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, offset: &mut usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b, offset)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}
