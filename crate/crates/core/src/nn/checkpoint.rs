//! Model checkpoints: one line of JSON header, then little-endian f64 weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, Activation, Mlp};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    seed: u64,
}

/// Largest parameter count a checkpoint may declare.
const MAX_PARAMS: usize = 1 << 28;

impl Mlp {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = Header {
            layer_dims: self.layer_dims.clone(),
            activations: self.activations.clone(),
            seed: self.seed,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.weights.len() * 8);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("checkpoint header is not newline-terminated".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        if header.layer_dims.len() < 3 || header.layer_dims.contains(&0) {
            return Err(Error::Parse(format!(
                "bad layer dims {:?}",
                header.layer_dims
            )));
        }
        let count = header
            .layer_dims
            .windows(2)
            .try_fold(0usize, |acc, w| {
                w[0].checked_add(1)
                    .and_then(|a| a.checked_mul(w[1]))
                    .and_then(|p| acc.checked_add(p))
            })
            .filter(|&c| c <= MAX_PARAMS)
            .ok_or_else(|| Error::Parse("declared parameter count is too large".into()))?;
        debug_assert_eq!(count, param_count(&header.layer_dims));
        let payload = &bytes[newline + 1..];
        if payload.len() < count * 8 {
            return Err(Error::Truncated {
                needed: count * 8,
                available: payload.len(),
            });
        }
        if payload.len() > count * 8 {
            return Err(Error::Parse(format!(
                "{} trailing bytes after weights",
                payload.len() - count * 8
            )));
        }
        let weights = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Mlp::from_weights(header.layer_dims, header.activations, weights, header.seed)
            .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}
