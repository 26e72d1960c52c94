//! Binary checkpoint format. Little-endian throughout, written atomically
//! via a temp file rename so partial writes never shadow a valid file.

use std::fs;
use std::io::Write;
use std::path::Path;

use bbnet_core::config::{parse_kv_text, render_kv_text, ModelConfig};
use bbnet_core::params::ParamStore;
use bbnet_core::Tensor;

use crate::error::{AppError, AppResult};

const MAGIC: &[u8; 4] = b"BBCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub seed: u64,
    pub config: ModelConfig,
    pub store: ParamStore,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> AppResult<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(AppError::Checkpoint("truncated checkpoint".to_string()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> AppResult<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| AppError::Checkpoint("invalid utf-8 in checkpoint".to_string()))
    }
}

/// Serializes a checkpoint. Parameter order is the store's name order,
/// which is sorted, so equal states produce byte-identical files.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, ckpt.step);
    put_u64(&mut buf, ckpt.seed);
    put_str(&mut buf, &render_kv_text(&ckpt.config.to_kv()));
    let names: Vec<String> = ckpt.store.names().cloned().collect();
    put_u32(&mut buf, names.len() as u32);
    for name in &names {
        let t = ckpt.store.get(name).expect("name from store");
        put_str(&mut buf, name);
        put_u32(&mut buf, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
        for &v in t.data() {
            put_u64(&mut buf, v.to_bits());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> AppResult<Checkpoint> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(AppError::Checkpoint("bad magic, not a checkpoint".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(AppError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let step = r.u64()?;
    let seed = r.u64()?;
    let config_text = r.str()?;
    let mut kv = parse_kv_text(&config_text)
        .map_err(|e| AppError::Checkpoint(format!("embedded config: {e}")))?;
    let mut config = ModelConfig::default();
    config
        .apply_kv(&mut kv)
        .map_err(|e| AppError::Checkpoint(format!("embedded config: {e}")))?;
    if let Some(key) = kv.keys().next() {
        return Err(AppError::Checkpoint(format!(
            "embedded config has unknown key `{key}`"
        )));
    }
    config
        .validate()
        .map_err(|e| AppError::Checkpoint(format!("embedded config: {e}")))?;

    let n_params = r.u32()? as usize;
    let mut pairs = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_bits(r.u64()?));
        }
        pairs.push((name, Tensor::new(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(AppError::Checkpoint("trailing bytes after params".to_string()));
    }
    let store = ParamStore::from_pairs(&config, pairs)
        .map_err(|e| AppError::Checkpoint(format!("params: {e}")))?;
    Ok(Checkpoint {
        step,
        seed,
        config,
        store,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> AppResult<()> {
    let bytes = encode(ckpt);
    let tmp = path.with_extension("tmp");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| AppError::io(&tmp, e))?;
    f.sync_all().map_err(|e| AppError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes)
}

/// `summary` subcommand: config echo plus parameter and FLOP counts.
pub fn cmd_summary(path: &Path) -> AppResult<()> {
    let ckpt = load(path)?;
    let summary = bbnet_core::network::model_summary(&ckpt.store, &ckpt.config)?;
    println!("checkpoint: {}", path.display());
    println!("step: {}", ckpt.step);
    println!("seed: {}", ckpt.seed);
    print!("{}", render_kv_text(&ckpt.config.to_kv()));
    println!("param_count: {}", summary.param_count);
    println!("flop_estimate: {}", summary.flop_estimate);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> Checkpoint {
        let config = ModelConfig::tiny();
        let store = ParamStore::init(&config, 11);
        Checkpoint {
            step: 42,
            seed: 11,
            config,
            store,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ckpt = sample();
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.seed, 11);
        assert_eq!(back.config.channels, ckpt.config.channels);
        for name in ckpt.store.names() {
            let a = ckpt.store.get(name).unwrap();
            let b = back.store.get(name).unwrap();
            assert_eq!(a.shape(), b.shape(), "{name}");
            assert_eq!(a.data(), b.data(), "{name}");
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let ckpt = sample();
        assert_eq!(encode(&ckpt), encode(&ckpt));
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sub").join("ckpt_final.bbck");
        let ckpt = sample();
        save(&ckpt, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.step, ckpt.step);
        assert!(!path.with_extension("tmp").exists(), "temp file must be renamed away");
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.kind(), "checkpoint");
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode(&sample());
        let err = decode(&bytes[..bytes.len() - 9]).unwrap_err();
        assert_eq!(err.kind(), "checkpoint");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample());
        bytes.push(0);
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.kind(), "checkpoint");
    }
}
