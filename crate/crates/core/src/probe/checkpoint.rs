//! Probe checkpoint format:
//!
//! ```text
//! magic   "DAARPR01"    8 bytes
//! hlen    u64 LE        header length in bytes
//! header  JSON          layer dims, activation, head, trained flag,
//!                       training config (seeds included)
//! blob    f32 LE        per layer: weights row-major, then biases
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Head, MlpParams, N_LAYERS};
use super::train::TrainConfig;
use super::ProbeError;
use crate::report::to_stable_json;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DAARPR01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    layer_dims: Vec<usize>,
    activation: Activation,
    head: Head,
    trained: bool,
    train_config: Option<TrainConfig>,
}

pub fn checkpoint_bytes(params: &MlpParams, cfg: Option<&TrainConfig>) -> Result<Vec<u8>, ProbeError> {
    let header = Header {
        layer_dims: params.layer_dims.clone(),
        activation: params.activation,
        head: params.head,
        trained: params.trained,
        train_config: cfg.cloned(),
    };
    let header = to_stable_json(&header).map_err(|e| ProbeError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + params.param_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for l in 0..N_LAYERS {
        for v in params.weights[l].iter().chain(&params.biases[l]) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(MlpParams, Option<TrainConfig>), ProbeError> {
    let bad = |m: &str| ProbeError::Checkpoint(m.to_owned());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..hend])
        .map_err(|e| ProbeError::Checkpoint(format!("header: {e}")))?;
    if header.layer_dims.len() != N_LAYERS + 1 {
        return Err(bad("expected 6 layer dims"));
    }
    if header.layer_dims[N_LAYERS] != header.head.out_dim() {
        return Err(bad("head width does not match layer dims"));
    }
    let hidden: [usize; 4] = header.layer_dims[1..5].try_into().expect("checked length");
    let mut p = MlpParams::zeros(header.layer_dims[0], hidden, header.activation, header.head)?;
    p.trained = header.trained;
    let blob = &bytes[hend..];
    if blob.len() != p.param_count() * 4 {
        return Err(bad("parameter blob length does not match layer dims"));
    }
    let mut vals = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    for l in 0..N_LAYERS {
        for w in p.weights[l].iter_mut().chain(p.biases[l].iter_mut()) {
            *w = vals.next().expect("length checked");
        }
    }
    Ok((p, header.train_config))
}

pub fn save_checkpoint(params: &MlpParams, cfg: Option<&TrainConfig>, path: &Path) -> Result<(), ProbeError> {
    std::fs::write(path, checkpoint_bytes(params, cfg)?)
        .map_err(|e| ProbeError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, Option<TrainConfig>), ProbeError> {
    let bytes =
        std::fs::read(path).map_err(|e| ProbeError::Checkpoint(format!("{}: {e}", path.display())))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_stable() {
        let p = MlpParams::init(5, [6, 4, 3, 2], Activation::Tanh, Head::Classifier { classes: 3 }, 9)
            .unwrap();
        let cfg = TrainConfig {
            learning_rate: 3.3e-4,
            init_seed: 9,
            ..TrainConfig::default()
        };
        let bytes = checkpoint_bytes(&p, Some(&cfg)).unwrap();
        let (back, back_cfg) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(back_cfg.as_ref(), Some(&cfg));
        assert_eq!(checkpoint_bytes(&back, back_cfg.as_ref()).unwrap(), bytes);
        let mut rounded = p.clone();
        rounded.round_to_f32();
        assert_eq!(back, rounded);
    }

    #[test]
    fn rejects_corruption() {
        let p = MlpParams::init(2, [2, 2, 2, 2], Activation::Relu, Head::Regressor, 1).unwrap();
        let bytes = checkpoint_bytes(&p, None).unwrap();
        assert!(parse_checkpoint(&bytes[..bytes.len() - 4]).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(parse_checkpoint(&b).is_err());
    }
}
