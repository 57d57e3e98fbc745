//! Binary checkpoint format.
//!
//! Layout: the 8 magic bytes `LRUCKPT1`, a u32 little-endian length prefix,
//! a UTF-8 JSON header of that length, then every tensor as little-endian
//! 64-bit floats in canonical order (layer-major, tensor names alphabetical
//! within a layer, then `b_out`, `w_out`). The header records
//! format_version, cell_kind, depth, hidden, vocab, vocab_table, metrics,
//! and the readout / tie_grid_weights flags needed to rebuild the network.
//! Tensor bytes are written verbatim, so a round-trip is bit-exact.

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::lattice::{NetworkConfig, NetworkParams, Readout, DEFAULT_BATCH, DEFAULT_BPTT};
use crate::CellKind;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LRUCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    cell_kind: CellKind,
    depth: usize,
    hidden: usize,
    vocab: usize,
    vocab_table: String,
    metrics: serde_json::Value,
    readout: Readout,
    tie_grid_weights: bool,
}

/// A loaded checkpoint: enough to evaluate or sample.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: NetworkParams,
    pub vocab: Vocab,
    pub metrics: serde_json::Value,
}

pub fn save(
    path: &Path,
    params: &NetworkParams,
    cfg: &NetworkConfig,
    vocab: &Vocab,
    metrics: serde_json::Value,
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        cell_kind: cfg.kind,
        depth: cfg.depth,
        hidden: cfg.hidden,
        vocab: cfg.vocab,
        vocab_table: vocab.table(),
        metrics,
        readout: cfg.readout,
        tie_grid_weights: cfg.tie_grid_weights,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header_bytes.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in params.tensors() {
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body_start = 12 + header_len;
    if bytes.len() < body_start {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body_start])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let vocab = Vocab::from_table(&header.vocab_table)?;
    if vocab.len() != header.vocab {
        return Err(Error::Checkpoint(format!(
            "vocab table has {} symbols, header says {}",
            vocab.len(),
            header.vocab
        )));
    }
    let mut config = NetworkConfig::new(header.cell_kind, header.depth, header.hidden, header.vocab);
    config.bptt = DEFAULT_BPTT;
    config.batch = DEFAULT_BATCH;
    config.readout = header.readout;
    config.tie_grid_weights = header.tie_grid_weights;

    let mut params = NetworkParams::zeros(&config)?;
    let mut offset = body_start;
    for t in params.tensors_mut() {
        let need = t.len() * 8;
        if bytes.len() < offset + need {
            return Err(Error::Checkpoint("truncated tensor data".into()));
        }
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            let start = offset + i * 8;
            *x = f64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        }
        offset += need;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - offset
        )));
    }
    Ok(Checkpoint {
        config,
        params,
        vocab,
        metrics: header.metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab_encode;
    use crate::lattice::init_network;

    #[test]
    fn round_trip_is_bit_exact() {
        let (vocab, _) = build_vocab_encode("the quick brown fox").unwrap();
        for kind in CellKind::ALL {
            let mut cfg = NetworkConfig::new(kind, 2, 5, vocab.len());
            cfg.readout = Readout::Horizontal;
            let params = init_network(&cfg, 77).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.lru");
            save(
                &path,
                &params,
                &cfg,
                &vocab,
                serde_json::json!({"best_epoch": 3}),
            )
            .unwrap();
            let ck = load(&path).unwrap();
            assert_eq!(ck.config.kind, kind);
            assert_eq!(ck.config.readout, Readout::Horizontal);
            assert_eq!(ck.vocab, vocab);
            assert_eq!(ck.metrics["best_epoch"], 3);
            for (a, b) in params.tensors().iter().zip(ck.params.tensors()) {
                assert_eq!(a.data(), b.data(), "{kind} tensors bit-exact");
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.lru");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_truncated_tensor_data() {
        let (vocab, _) = build_vocab_encode("abcd").unwrap();
        let cfg = NetworkConfig::new(CellKind::Gru, 1, 3, vocab.len());
        let params = init_network(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lru");
        save(&path, &params, &cfg, &vocab, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }
}
