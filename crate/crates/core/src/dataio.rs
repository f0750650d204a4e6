//! Byte-level corpora and seeded batch sampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Byte-level vocabulary size.
pub const BYTE_VOCAB: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Token stream with a fixed train/validation boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    tokens: Vec<u8>,
    split_point: usize,
}

impl Corpus {
    /// Splits `bytes` at `round((1 - val_fraction) * len)`; both sides must hold a
    /// window of `seq_len + 1` tokens.
    pub fn from_bytes(bytes: Vec<u8>, val_fraction: f64, seq_len: usize) -> Result<Self> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::Data(format!(
                "val_fraction must lie in (0, 1), got {val_fraction}"
            )));
        }
        let window = seq_len + 1;
        if bytes.len() < 2 * window {
            return Err(Error::Data(format!(
                "corpus of {} bytes is too small for two windows of {window} tokens",
                bytes.len()
            )));
        }
        let split_point = ((1.0 - val_fraction) * bytes.len() as f64).round() as usize;
        if split_point < window || bytes.len() - split_point < window {
            return Err(Error::Data(format!(
                "split at {split_point} of {} leaves fewer than {window} tokens on one side",
                bytes.len()
            )));
        }
        Ok(Corpus {
            tokens: bytes,
            split_point,
        })
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn split_point(&self) -> usize {
        self.split_point
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn side(&self, split: Split) -> &[u8] {
        match split {
            Split::Train => &self.tokens[..self.split_point],
            Split::Val => &self.tokens[self.split_point..],
        }
    }
}

/// Reads a file as raw bytes and splits it for training.
pub fn load_corpus(path: impl AsRef<Path>, val_fraction: f64, seq_len: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_bytes(bytes, val_fraction, seq_len).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Identity tokenizer.
pub fn encode(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32).collect()
}

pub fn decode(tokens: &[u32]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|&t| u8::try_from(t).map_err(|_| Error::Data(format!("token {t} is not a byte"))))
        .collect()
}

/// `batch_size` windows, row-major `[batch_size, seq_len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// Absolute corpus offset of each window.
    pub offsets: Vec<usize>,
}

/// Random contiguous windows from one side of the split; targets are inputs shifted by one.
pub fn sample_batch(corpus: &Corpus, split: Split, batch_size: usize, seq_len: usize, rng: &mut Rng) -> Result<Batch> {
    let side = corpus.side(split);
    let base = match split {
        Split::Train => 0,
        Split::Val => corpus.split_point,
    };
    if side.len() < seq_len + 1 {
        return Err(Error::Data(format!(
            "{split:?} split has {} tokens, need {}",
            side.len(),
            seq_len + 1
        )));
    }
    let starts = (side.len() - seq_len) as u64;
    let mut inputs = Vec::with_capacity(batch_size * seq_len);
    let mut targets = Vec::with_capacity(batch_size * seq_len);
    let mut offsets = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let start = rng.below(starts) as usize;
        let window = &side[start..start + seq_len + 1];
        inputs.extend(window[..seq_len].iter().map(|&b| b as u32));
        targets.extend(window[1..].iter().map(|&b| b as u32));
        offsets.push(base + start);
    }
    Ok(Batch {
        batch_size,
        seq_len,
        inputs,
        targets,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn text(n: usize) -> Vec<u8> {
        (0..n).map(|i| b"the quick brown fox "[i % 20]).collect()
    }

    #[test]
    fn split_point_from_fraction() {
        let c = Corpus::from_bytes(text(1000), 0.1, 16).unwrap();
        assert_eq!(c.split_point(), 900);
        assert_eq!(c.side(Split::Train).len(), 900);
        assert_eq!(c.side(Split::Val).len(), 100);
    }

    #[test]
    fn empty_and_tiny_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        std::fs::File::create(&empty).unwrap();
        let err = load_corpus(&empty, 0.1, 8).unwrap_err();
        assert!(err.to_string().contains("empty.txt"));
        assert!(Corpus::from_bytes(text(17), 0.5, 8).is_err());
        let missing = dir.path().join("nope.txt");
        assert!(matches!(load_corpus(&missing, 0.1, 8), Err(Error::Io { .. })));
    }

    #[test]
    fn unbalanced_split_is_rejected() {
        assert!(Corpus::from_bytes(text(100), 0.01, 8).is_err());
        assert!(Corpus::from_bytes(text(100), 0.0, 8).is_err());
        assert!(Corpus::from_bytes(text(100), 1.0, 8).is_err());
    }

    #[test]
    fn utf8_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.txt");
        let s = "naïve café, 東京 — ünïcödé ".repeat(20);
        std::fs::File::create(&path).unwrap().write_all(s.as_bytes()).unwrap();
        let c = load_corpus(&path, 0.1, 8).unwrap();
        assert_eq!(decode(&encode(c.tokens())).unwrap(), s.as_bytes());
        assert!(decode(&[300]).is_err());
    }

    #[test]
    fn batches_are_reproducible_and_shifted() {
        let c = Corpus::from_bytes(text(5000), 0.1, 32).unwrap();
        let mut r1 = Rng::seed(5);
        let mut r2 = Rng::seed(5);
        let a = sample_batch(&c, Split::Train, 4, 32, &mut r1).unwrap();
        let b = sample_batch(&c, Split::Train, 4, 32, &mut r2).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            for t in 0..31 {
                assert_eq!(a.targets[i * 32 + t], a.inputs[i * 32 + t + 1]);
            }
            let off = a.offsets[i];
            assert_eq!(a.targets[i * 32 + 31], c.tokens()[off + 32] as u32);
        }
    }

    #[test]
    fn windows_never_cross_the_split() {
        let c = Corpus::from_bytes(text(400), 0.25, 20).unwrap();
        let mut r = Rng::seed(77);
        for _ in 0..500 {
            let t = sample_batch(&c, Split::Train, 3, 20, &mut r).unwrap();
            assert!(t.offsets.iter().all(|&o| o + 21 <= c.split_point()));
            let v = sample_batch(&c, Split::Val, 3, 20, &mut r).unwrap();
            assert!(v.offsets.iter().all(|&o| o >= c.split_point() && o + 21 <= c.len()));
        }
    }

    #[test]
    fn different_seeds_give_different_offsets() {
        let c = Corpus::from_bytes(text(100_000), 0.1, 64).unwrap();
        let mut same = 0;
        for s in 0..100u64 {
            let a = sample_batch(&c, Split::Train, 1, 64, &mut Rng::seed(2 * s)).unwrap();
            let b = sample_batch(&c, Split::Train, 1, 64, &mut Rng::seed(2 * s + 1)).unwrap();
            if a.offsets == b.offsets {
                same += 1;
            }
        }
        assert!(same <= 2, "{same} of 100 seed pairs collided");
    }
}
