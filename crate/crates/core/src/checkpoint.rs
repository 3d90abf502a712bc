//! Versioned binary container for trained models.
//!
//! Layout (all integers little-endian):
//! magic `TRNSDC01`, version u32, kind u8, variant u8, attention u8, dtype u8,
//! hidden u64, embedding u64, vocab u64, seed u64, metadata (u64 length +
//! UTF-8 JSON), tensor count u64, then per tensor: name (u64 length + UTF-8),
//! rank u64, dims u64 each, values.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::cells::Variant;
use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::scalar::Scalar;
use crate::seq2seq::{ModelConfig, Seq2SeqModel};
use crate::tagger::TaggerModel;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TRNSDC01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Seq2Seq,
    Tagger,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Seq2Seq => 0,
            ModelKind::Tagger => 1,
        }
    }

    fn from_code(c: u8) -> Result<ModelKind> {
        match c {
            0 => Ok(ModelKind::Seq2Seq),
            1 => Ok(ModelKind::Tagger),
            _ => Err(Error::Format(format!("unknown model kind {c}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub seed: u64,
    /// Free-form training metadata (epoch, accuracies, ...).
    pub metadata: Value,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_seq2seq(model: &Seq2SeqModel<T>, seed: u64, metadata: Value) -> Self {
        Checkpoint {
            kind: ModelKind::Seq2Seq,
            config: *model.config(),
            seed,
            metadata,
            params: model.params().clone(),
        }
    }

    pub fn from_tagger(model: &TaggerModel<T>, seed: u64, metadata: Value) -> Self {
        Checkpoint {
            kind: ModelKind::Tagger,
            config: *model.config(),
            seed,
            metadata,
            params: model.params().clone(),
        }
    }

    pub fn into_seq2seq(self) -> Result<Seq2SeqModel<T>> {
        if self.kind != ModelKind::Seq2Seq {
            return Err(Error::Format("checkpoint holds a tagger".into()));
        }
        Seq2SeqModel::from_params(self.config, self.params)
    }

    pub fn into_tagger(self) -> Result<TaggerModel<T>> {
        if self.kind != ModelKind::Tagger {
            return Err(Error::Format("checkpoint holds an encoder-decoder model".into()));
        }
        TaggerModel::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(self.config.variant.code());
        out.push(self.config.attention as u8);
        out.push(T::DTYPE);
        for v in [
            self.config.hidden as u64,
            self.config.embedding as u64,
            self.config.vocab as u64,
            self.seed,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_str(&mut out, &self.metadata.to_string());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::from_code(r.u8()?)?;
        let variant = Variant::from_code(r.u8()?)?;
        let attention = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad attention flag {b}"))),
        };
        let dtype = r.u8()?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint dtype {dtype} does not match requested dtype {}",
                T::DTYPE
            )));
        }
        let config = ModelConfig {
            variant,
            attention,
            hidden: r.usize()?,
            embedding: r.usize()?,
            vocab: r.usize()?,
        };
        let seed = r.u64()?;
        let metadata: Value = serde_json::from_str(&r.string()?)?;
        let count = r.usize()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.usize()?;
            if rank > 8 {
                return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let raw = r.take(n.checked_mul(T::BYTES).ok_or_else(|| Error::Format("overflow".into()))?)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            params.add(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            kind,
            config,
            seed,
            metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size does not fit in usize".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn bit_exact_round_trip() {
        for variant in Variant::ALL {
            for attention in [false, true] {
                let cfg = ModelConfig::new(variant, attention, 5, 3);
                let m = Seq2SeqModel::<f64>::initialized(cfg, &mut Rng::new(4)).unwrap();
                let ck = Checkpoint::from_seq2seq(&m, 4, serde_json::json!({"epoch": 10}));
                let bytes = ck.to_bytes();
                let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
                assert_eq!(back.to_bytes(), bytes);
                let m2 = back.into_seq2seq().unwrap();
                for (a, b) in m.params().tensors().iter().zip(m2.params().tensors()) {
                    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = TaggerModel::<f64>::initialized(ModelConfig::new(Variant::Lstm, false, 4, 3), &mut Rng::new(1)).unwrap();
        let bytes = Checkpoint::from_tagger(&m, 1, Value::Null).to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).is_err());
        let ck = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert!(ck.clone().into_seq2seq().is_err());
        assert!(ck.into_tagger().is_ok());
    }
}
