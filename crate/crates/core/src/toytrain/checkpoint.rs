//! TOYM checkpoint: little-endian binary.
//!
//! ```text
//! "TOYM"  u32 version
//! u64 × 11  vocab_size feat_dim embed_dim enc_hidden aug_embed_dim dec_hidden
//!           attn_dim n_aug_ids max_decode_frames batch_size steps
//! f64 × 4   gate_loss_weight learning_rate grad_clip_norm feedback_dropout
//! u64       seed
//! u32       block count, then per block: u32 rows, u32 cols, rows·cols f64
//! ```

use std::fs;
use std::path::Path;

use super::model::{ToyConfig, ToyModel};
use super::tape::Tensor;
use super::ToyError;

pub const MAGIC: &[u8; 4] = b"TOYM";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &ToyModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(64 + model.n_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.vocab_size,
        c.feat_dim,
        c.embed_dim,
        c.enc_hidden,
        c.aug_embed_dim,
        c.dec_hidden,
        c.attn_dim,
        c.n_aug_ids,
        c.max_decode_frames,
        c.batch_size,
        c.steps,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in [c.gate_loss_weight, c.learning_rate, c.grad_clip_norm, c.feedback_dropout] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.rows as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols as u32).to_le_bytes());
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ToyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ToyError::MalformedCheckpoint(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ToyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ToyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, ToyError> {
        usize::try_from(self.u64()?).map_err(|_| ToyError::MalformedCheckpoint("dimension overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64, ToyError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToyModel, ToyError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ToyError::MalformedCheckpoint("missing TOYM magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ToyError::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let config = ToyConfig {
        vocab_size: r.usize()?,
        feat_dim: r.usize()?,
        embed_dim: r.usize()?,
        enc_hidden: r.usize()?,
        aug_embed_dim: r.usize()?,
        dec_hidden: r.usize()?,
        attn_dim: r.usize()?,
        n_aug_ids: r.usize()?,
        max_decode_frames: r.usize()?,
        batch_size: r.usize()?,
        steps: r.usize()?,
        gate_loss_weight: r.f64()?,
        learning_rate: r.f64()?,
        grad_clip_norm: r.f64()?,
        feedback_dropout: r.f64()?,
        seed: r.u64()?,
    };
    let n_blocks = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_blocks.min(64));
    for _ in 0..n_blocks {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(ToyError::MalformedCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    ToyModel::from_params(config, params)
        .map_err(|e| ToyError::MalformedCheckpoint(format!("inconsistent parameters: {e}")))
}

pub fn save_checkpoint(model: &ToyModel, path: impl AsRef<Path>) -> Result<(), ToyError> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyModel, ToyError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let model = ToyModel::new(ToyConfig {
            seed: 77,
            ..ToyConfig::tiny()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toym");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.infer(&[1, 2, 3], 1).unwrap(), model.infer(&[1, 2, 3], 1).unwrap());
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"TOYM");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = ToyModel::new(ToyConfig::tiny()).unwrap();
        let bytes = encode_checkpoint(&model);
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(ToyError::MalformedCheckpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(ToyError::MalformedCheckpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(ToyError::MalformedCheckpoint(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_checkpoint(&version), Err(ToyError::MalformedCheckpoint(_))));
    }
}
