//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SVDC" | version u16
//! family, depth, seq_len, embed_dim, vocab_size, n_classes, fc_hidden, k   (u32 each)
//! per parameter tensor, then per running-statistics tensor: len u64 | len x f32
//! epoch u32 | history count u32 | per record: epoch u32, loss f64, accuracy f64 (NaN = none)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::trainer::EpochRecord;
use crate::architecture::{ArchitectureSpec, Family, Model};
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SVDC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Header limits that keep a corrupt file from triggering huge allocations.
const MAX_VOCAB: u32 = 1 << 16;
const MAX_EMBED: u32 = 1 << 12;
const MAX_CLASSES: u32 = 1 << 16;
const MAX_HIDDEN: u32 = 1 << 15;
const MAX_SEQ_LEN: u32 = 1 << 24;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::arg(format!("{what} {v} does not fit the checkpoint header")))
}

pub fn save_checkpoint(model: &Model<f32>, epoch: usize, history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let s = &model.spec;
    w.write_all(&MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let header = [
        s.family.code(),
        to_u32(s.depth, "depth")?,
        to_u32(s.seq_len, "sequence length")?,
        to_u32(s.embed_dim, "embedding dimension")?,
        to_u32(s.vocab_size, "vocabulary size")?,
        to_u32(s.n_classes, "class count")?,
        to_u32(s.fc_hidden, "hidden width")?,
        to_u32(s.k, "k")?,
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    let params = model.params();
    for t in params.iter().map(|(_, t)| *t).chain(model.buffers()) {
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.write_all(&to_u32(epoch, "epoch")?.to_le_bytes())?;
    w.write_all(&to_u32(history.len(), "history length")?.to_le_bytes())?;
    for r in history {
        w.write_all(&to_u32(r.epoch, "epoch")?.to_le_bytes())?;
        w.write_all(&r.train_loss.to_le_bytes())?;
        w.write_all(&r.val_accuracy.unwrap_or(f64::NAN).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Truncated(what),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        self.bytes::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        self.bytes::<8>(what).map(u64::from_le_bytes)
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        self.bytes::<8>(what).map(f64::from_le_bytes)
    }

    fn f32_into(&mut self, out: &mut [f32]) -> Result<()> {
        let mut buf = vec![0u8; out.len() * 4];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Truncated("parameter values"),
            _ => Error::Io(e),
        })?;
        for (x, b) in out.iter_mut().zip(buf.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
        }
        Ok(())
    }
}

fn read_spec<R: Read>(r: &mut Reader<R>) -> Result<ArchitectureSpec> {
    let mut h = [0u32; 8];
    for v in &mut h {
        *v = r.u32("architecture header")?;
    }
    let [family, depth, seq_len, embed_dim, vocab_size, n_classes, fc_hidden, k] = h;
    let family =
        Family::from_code(family).ok_or_else(|| Error::InvalidHeader(format!("unknown family code {family}")))?;
    let limits = [
        ("sequence length", seq_len, MAX_SEQ_LEN),
        ("embedding dimension", embed_dim, MAX_EMBED),
        ("vocabulary size", vocab_size, MAX_VOCAB),
        ("class count", n_classes, MAX_CLASSES),
        ("hidden width", fc_hidden, MAX_HIDDEN),
        ("k", k, MAX_SEQ_LEN),
    ];
    for (what, v, max) in limits {
        if v > max {
            return Err(Error::InvalidHeader(format!("{what} {v} exceeds {max}")));
        }
    }
    let spec = ArchitectureSpec {
        family,
        depth: depth as usize,
        seq_len: seq_len as usize,
        embed_dim: embed_dim as usize,
        vocab_size: vocab_size as usize,
        n_classes: n_classes as usize,
        fc_hidden: fc_hidden as usize,
        k: k as usize,
    };
    spec.validate().map_err(|e| Error::InvalidHeader(e.to_string()))?;
    Ok(spec)
}

fn read_array<R: Read>(r: &mut Reader<R>, t: &mut Tensor<f32>, index: usize) -> Result<()> {
    let found = r.u64("array length")?;
    if found != t.len() as u64 {
        return Err(Error::LengthMismatch {
            index,
            expected: t.len(),
            found,
        });
    }
    r.f32_into(t.data_mut())
}

/// Reads a checkpoint, validating the magic, version, architecture header,
/// every array length and the absence of trailing bytes.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let magic = r.bytes::<4>("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.bytes::<2>("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let spec = read_spec(&mut r)?;
    let mut model = Model::<f32>::build(&spec, 0)?;
    let mut index = 0;
    for t in model.params_mut().into_iter().map(|(_, t)| t) {
        read_array(&mut r, t, index)?;
        index += 1;
    }
    for t in model.buffers_mut() {
        read_array(&mut r, t, index)?;
        index += 1;
    }
    let epoch = r.u32("epoch")? as usize;
    let count = r.u32("history length")?;
    let mut history = Vec::new();
    for _ in 0..count {
        let epoch = r.u32("history record")? as usize;
        let train_loss = r.f64("history record")?;
        let acc = r.f64("history record")?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy: (!acc.is_nan()).then_some(acc),
        });
    }
    let mut tail = [0u8; 1];
    if r.inner.read(&mut tail)? != 0 {
        return Err(Error::InvalidHeader("unexpected bytes after the history".into()));
    }
    Ok(Checkpoint { model, epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::{count_params, ArchitectureSpec};

    fn model() -> Model<f32> {
        Model::build(
            &ArchitectureSpec::new(Family::Svdcnn, 9, 4).with_seq_len(32).with_k(4),
            4,
        )
        .unwrap()
    }

    fn saved(m: &Model<f32>) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let hist = [EpochRecord {
            epoch: 1,
            train_loss: 1.2,
            val_accuracy: None,
        }];
        save_checkpoint(m, 1, &hist, &path).unwrap();
        (dir, path)
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let mut m = model();
        m.batch_norms_mut()[0].running_mean.data_mut()[0] = 0.75;
        let (_dir, path) = saved(&m);
        let c = load_checkpoint(&path).unwrap();
        let idx: Vec<usize> = (0..64).map(|i| i % 70).collect();
        let a = m.predict(&idx, 2).unwrap();
        let b = c.model.predict(&idx, 2).unwrap();
        assert_eq!(
            a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(c.epoch, 1);
        assert_eq!(c.history[0].val_accuracy, None);
    }

    #[test]
    fn size_tracks_parameter_storage() {
        let m = model();
        let (_dir, path) = saved(&m);
        let bytes = std::fs::metadata(&path).unwrap().len() as f64;
        let params = count_params(&m).total as f64 * 4.0;
        assert!((bytes - params) / params < 0.05);
    }

    #[test]
    fn corruption_is_detected() {
        let (_dir, path) = saved(&model());
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::UnsupportedVersion(9))));

        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated(_))));

        let mut bad = good.clone();
        bad[38] ^= 1; // low byte of the first array length
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::LengthMismatch { index: 0, .. })
        ));

        let mut bad = good.clone();
        bad[10] = 13; // depth
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::InvalidHeader(_))));

        let mut bad = good;
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::InvalidHeader(_))));
    }
}
