use std::path::Path;

use super::{ModelConfig, ModelError};
use crate::engine::{AdamState, ParamStore};
use crate::Tensor;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"MILC";
const GATE_ORDER: &str = "ifgo";

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f64>,
    pub adam: Option<AdamState>,
    /// Seed the run was started from.
    pub seed: u64,
    /// Free-form metadata (epoch, validation accuracy, ...).
    pub meta: serde_json::Value,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    meta: serde_json::Value,
    lstm_gate_order: String,
}

impl Checkpoint {
    /// Fails with `ConfigMismatch` unless this checkpoint was produced for a
    /// model of the same kind and parameter layout as `expected`.
    pub fn ensure_matches(&self, expected: &ModelConfig) -> Result<(), ModelError> {
        if self.config.name() != expected.name() {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint holds a {} model, expected {}",
                self.config.name(),
                expected.name()
            )));
        }
        let fresh = expected.init(0)?;
        let layout = |s: &ParamStore<f64>| s.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
        if layout(&fresh) != layout(&self.params) {
            return Err(ModelError::ConfigMismatch("parameter names or shapes differ".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = Header {
            config: self.config.clone(),
            seed: self.seed,
            meta: self.meta.clone(),
            lstm_gate_order: GATE_ORDER.into(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        write_tensors(&mut out, self.params.iter().map(|p| (p.name.as_str(), &p.value)));
        write_tensors(&mut out, self.params.buffers());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            write_name(&mut out, &p.name);
            out.push(u8::from(p.trainable));
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                write_tensors(&mut out, a.m.iter().map(|(k, v)| (k.as_str(), v)));
                write_tensors(&mut out, a.v.iter().map(|(k, v)| (k.as_str(), v)));
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing MILC header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(corrupt("file checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 6 };
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(&format!("header: {e}")))?;
        if header.lstm_gate_order != GATE_ORDER {
            return Err(corrupt(&format!("unsupported gate order `{}`", header.lstm_gate_order)));
        }
        let mut params = ParamStore::new();
        for (name, value) in r.tensors()? {
            if params.index_of(&name).is_some() {
                return Err(corrupt(&format!("duplicate tensor `{name}`")));
            }
            params.add(name, value);
        }
        for (name, value) in r.tensors()? {
            params.set_buffer(name, value);
        }
        let flags = r.u32()? as usize;
        if flags != params.len() {
            return Err(corrupt("freeze table does not cover every parameter"));
        }
        for _ in 0..flags {
            let name = r.name()?;
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                v => return Err(corrupt(&format!("bad freeze flag {v}"))),
            };
            params
                .get_mut(&name)
                .ok_or_else(|| corrupt(&format!("freeze flag for unknown `{name}`")))?
                .trainable = trainable;
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let m = r.tensors()?.into_iter().collect();
                let v = r.tensors()?.into_iter().collect();
                Some(AdamState { step, m, v })
            }
            v => return Err(corrupt(&format!("bad optimizer marker {v}"))),
        };
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            config: header.config,
            params,
            adam,
            seed: header.seed,
            meta: header.meta,
        })
    }
}

fn corrupt(msg: &str) -> ModelError {
    ModelError::CorruptPayload(msg.to_string())
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn write_tensors<'a>(out: &mut Vec<u8>, items: impl Iterator<Item = (&'a str, &'a Tensor<f64>)>) {
    let items: Vec<_> = items.collect();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        let start = out.len();
        write_name(out, name);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String, ModelError> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor<f64>)>, ModelError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let start = self.pos;
            let name = self.name()?;
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let crc = crc32fast::hash(&self.buf[start..self.pos]);
            if crc != self.u32()? {
                return Err(corrupt(&format!("checksum mismatch in `{name}`")));
            }
            out.push((name, Tensor::from_vec(&shape, data)));
        }
        Ok(out)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gradcheck::random_tensor;
    use crate::models::{CnnLstmConfig, FreezePolicy, ToySwinConfig};

    fn sample() -> Checkpoint {
        let config = ModelConfig::ToySwin(ToySwinConfig {
            freeze: FreezePolicy::PaperPolicy,
            ..Default::default()
        });
        let params = config.init(4).unwrap();
        let mut adam = AdamState { step: 7, ..Default::default() };
        adam.m.insert("head.out.w".into(), random_tensor(&[64, 8], 1));
        adam.v.insert("head.out.w".into(), random_tensor(&[64, 8], 2).map(|v| v * v));
        Checkpoint {
            config,
            params,
            adam: Some(adam),
            seed: 99,
            meta: serde_json::json!({"epoch": 3, "val_acc": 0.125}),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert!(back.params.same_values(&c.params));
        assert_eq!(back, c);
        let cnn = ModelConfig::CnnLstm(CnnLstmConfig::default());
        let c2 = Checkpoint {
            params: cnn.init(1).unwrap(),
            config: cnn,
            adam: None,
            seed: 1,
            meta: serde_json::Value::Null,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.milc");
        save_checkpoint(&c2, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c2);
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = sample().to_bytes();
        for cut in [5, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(ModelError::CorruptPayload(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(ModelError::CorruptPayload(_))));
        let mut versioned = bytes;
        versioned[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&versioned),
            Err(ModelError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn kind_and_layout_checked() {
        let c = sample();
        let cnn = ModelConfig::CnnLstm(CnnLstmConfig::default());
        assert!(matches!(c.ensure_matches(&cnn), Err(ModelError::ConfigMismatch(_))));
        c.ensure_matches(&c.config).unwrap();
        let wider = ModelConfig::ToySwin(ToySwinConfig {
            embed_dim: 8,
            ..Default::default()
        });
        assert!(matches!(c.ensure_matches(&wider), Err(ModelError::ConfigMismatch(_))));
    }
}
