//! Versioned binary checkpoint holding the model weights, optimizer state,
//! epoch counter, and a config snapshot.
//!
//! Layout: magic `HLN1`, format version (u32 LE), length-prefixed UTF-8
//! config snapshot in key=value lines, per-tensor records (u32 LE name
//! length, UTF-8 name, u32 LE rank, dims as u32 LE, fp32 LE payload), and a
//! trailing CRC32 (IEEE) of all preceding bytes.

use std::path::Path;

use crate::enhancer::ModelWeights;
use crate::error::{Error, Result};
use crate::tensor::AdamState;

pub const MAGIC: [u8; 4] = *b"HLN1";
pub const FORMAT_VERSION: u32 = 1;

const EPOCH_KEY: &str = "epoch";
const ADAM_T_KEY: &str = "adam_t";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub adam: AdamState,
    /// Epochs completed when the checkpoint was written.
    pub epoch: u32,
    /// Config snapshot lines (excluding the internal epoch/adam_t keys).
    pub config: Vec<(String, String)>,
}

// CRC32 (IEEE 802.3), table-driven.
fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB88320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(crc32_table);
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, shape.len() as u32);
    for &d in shape {
        push_u32(out, d as u32);
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a checkpoint to its wire format.
pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut snapshot = String::new();
    for (k, v) in &ckpt.config {
        snapshot.push_str(&format!("{k}={v}\n"));
    }
    snapshot.push_str(&format!("{EPOCH_KEY}={}\n", ckpt.epoch));
    snapshot.push_str(&format!("{ADAM_T_KEY}={}\n", ckpt.adam.step_count()));

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, snapshot.len() as u32);
    out.extend_from_slice(snapshot.as_bytes());

    let params = ckpt.weights.params();
    let (m, v) = ckpt.adam.moments();
    for (name, t) in &params {
        push_tensor(&mut out, name, t.shape(), t.data());
    }
    for ((name, t), buf) in params.iter().zip(m) {
        push_tensor(&mut out, &format!("adam.m.{name}"), t.shape(), buf);
    }
    for ((name, t), buf) in params.iter().zip(v) {
        push_tensor(&mut out, &format!("adam.v.{name}"), t.shape(), buf);
    }

    let crc = crc32(&out);
    push_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint("unexpected end of file".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses the wire format, verifying the trailing CRC and the version.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 4 + 4 {
        return Err(Error::CorruptCheckpoint("file too short".to_string()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let actual = crc32(body);
    if stored_crc != actual {
        return Err(Error::CorruptCheckpoint(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".to_string()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }

    let snap_len = r.u32()? as usize;
    let snapshot = std::str::from_utf8(r.take(snap_len)?)
        .map_err(|_| Error::CorruptCheckpoint("config snapshot is not utf-8".to_string()))?
        .to_string();

    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    while r.pos < body.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not utf-8".to_string()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::CorruptCheckpoint(format!("implausible rank {rank} for '{name}'")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, shape, data));
    }

    let mut epoch = 0u32;
    let mut adam_t = 0u64;
    let mut config = Vec::new();
    for line in snapshot.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        match k {
            EPOCH_KEY => {
                epoch = v
                    .parse()
                    .map_err(|_| Error::CorruptCheckpoint("bad epoch value".to_string()))?
            }
            ADAM_T_KEY => {
                adam_t = v
                    .parse()
                    .map_err(|_| Error::CorruptCheckpoint("bad adam_t value".to_string()))?
            }
            _ => config.push((k.to_string(), v.to_string())),
        }
    }

    let mut lookup: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> = tensors
        .into_iter()
        .map(|(n, s, d)| (n, (s, d)))
        .collect();

    let mut weights = ModelWeights::zeros();
    for (name, t) in weights.params_mut() {
        let (shape, data) = lookup
            .remove(&name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor '{name}'")))?;
        if shape != t.shape() {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor '{name}' has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&data);
    }

    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, t) in weights.params() {
        for (prefix, dst) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
            let key = format!("{prefix}{name}");
            let (shape, data) = lookup
                .remove(&key)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor '{key}'")))?;
            if shape != t.shape() {
                return Err(Error::CorruptCheckpoint(format!("tensor '{key}' has the wrong shape")));
            }
            dst.push(data);
        }
    }
    if !lookup.is_empty() {
        let extra: Vec<&String> = lookup.keys().collect();
        return Err(Error::CorruptCheckpoint(format!("unexpected tensors: {extra:?}")));
    }
    weights.validate().map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    Ok(Checkpoint {
        weights,
        adam: AdamState::from_buffers(m, v, adam_t)?,
        epoch,
        config,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint_to_bytes(ckpt);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ckpt".to_string());
    let tmp = dir.join(format!(".{stem}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::NotFound(format!("cannot read {}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn fresh_checkpoint(seed: u64) -> Checkpoint {
        let weights = ModelWeights::seeded_init(seed);
        let params: Vec<&Tensor> = weights.params().into_iter().map(|(_, t)| t).collect();
        let adam = AdamState::for_params(&params);
        Checkpoint {
            weights,
            adam,
            epoch: 3,
            config: vec![("seed".to_string(), seed.to_string())],
        }
    }

    #[test]
    fn crc32_known_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ckpt = fresh_checkpoint(21);
        let bytes = checkpoint_to_bytes(&ckpt);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back.weights, ckpt.weights);
        assert_eq!(back.adam, ckpt.adam);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.config, ckpt.config);
        // And serializing again reproduces the same bytes.
        assert_eq!(checkpoint_to_bytes(&back), bytes);
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.hln");
        let ckpt = fresh_checkpoint(5);
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.weights, ckpt.weights);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let ckpt = fresh_checkpoint(8);
        let bytes = checkpoint_to_bytes(&ckpt);
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(
            checkpoint_from_bytes(truncated),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn bit_flip_is_corrupt() {
        let ckpt = fresh_checkpoint(8);
        let mut bytes = checkpoint_to_bytes(&ckpt);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn future_version_is_unsupported() {
        let ckpt = fresh_checkpoint(8);
        let mut bytes = checkpoint_to_bytes(&ckpt);
        // Patch the version field and fix up the CRC so only the version is
        // at fault.
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        let body_len = bytes.len() - 4;
        let crc = crc32(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 999, .. })
        ));
    }
}
