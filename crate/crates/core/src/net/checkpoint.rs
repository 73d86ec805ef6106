//! Binary checkpoint format.
//!
//! ```text
//! magic "MFLDCKPT" | version u8 | header_len u32 LE | header JSON
//! | params f64 LE × param_count | SHA-256 of all preceding bytes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelLayout, ModelMeta, MotionFieldModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MFLDCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layout: ModelLayout,
    meta: ModelMeta,
    param_count: usize,
}

pub fn encode_checkpoint(model: &MotionFieldModel) -> Result<Vec<u8>> {
    model.validate()?;
    let header = serde_json::to_vec(&Header {
        layout: model.layout.clone(),
        meta: model.meta.clone(),
        param_count: model.param_count(),
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Layout("checkpoint header too large".into()))?;
    let mut out = Vec::with_capacity(13 + header.len() + 8 * model.params.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MotionFieldModel> {
    let corrupt = |msg: &str| Error::Corrupt(format!("checkpoint: {msg}"));
    let prefix = CHECKPOINT_MAGIC.len() + 5;
    if bytes.len() < prefix + DIGEST_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    if bytes[8] != CHECKPOINT_VERSION {
        return Err(corrupt(&format!("unsupported version {}", bytes[8])));
    }
    let header_len = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let body_end = bytes.len() - DIGEST_LEN;
    if prefix + header_len > body_end {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[prefix..prefix + header_len])
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    header.layout.validate()?;
    if header.param_count != header.layout.param_count() {
        return Err(Error::Layout(format!(
            "header param_count {} disagrees with layout {}",
            header.param_count,
            header.layout.param_count()
        )));
    }
    let payload = &bytes[prefix + header_len..body_end];
    if payload.len() != 8 * header.param_count {
        return Err(corrupt(&format!(
            "expected {} parameter bytes, found {}",
            8 * header.param_count,
            payload.len()
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(corrupt("checksum mismatch"));
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = MotionFieldModel {
        layout: header.layout,
        meta: header.meta,
        params,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(model: &MotionFieldModel, path: impl AsRef<Path>) -> Result<()> {
    crate::io::atomic_write(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MotionFieldModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tests::meta;
    use crate::net::NetConfig;

    fn model() -> MotionFieldModel {
        let cfg = NetConfig {
            hidden: vec![9, 7],
            ..Default::default()
        };
        MotionFieldModel::new(ModelLayout::new(5, 2, &cfg).unwrap(), meta(2), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m).unwrap()).unwrap();
        assert_eq!(back.layout, m.layout);
        assert_eq!(back.meta, m.meta);
        assert!(back
            .params
            .iter()
            .zip(&m.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncation_and_tampering_are_detected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        for cut in [0, 5, 13, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 40] ^= 1;
        assert!(matches!(
            decode_checkpoint(&flipped),
            Err(Error::Corrupt(_))
        ));
        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(
            decode_checkpoint(&version),
            Err(Error::Corrupt(_))
        ));
    }
}
