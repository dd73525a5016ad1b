//! Binary checkpoints of a [`ParamStore`].
//!
//! Layout (little endian): magic, fingerprint string, then every parameter
//! as name, rank, dims and `f32` data, then every normalization layer as
//! name, channel count, running mean and running variance. Strings are
//! `u32`-length-prefixed UTF-8.

use std::fs;
use std::path::Path;

use autograd::{Float, NdArray};

use super::store::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GFCKPT01";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s<F: Float>(out: &mut Vec<u8>, values: &[F]) {
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode<F: Float>(store: &ParamStore<F>, fingerprint: &str) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_str(&mut out, fingerprint);
    put_u32(&mut out, store.params().len());
    for p in store.params() {
        put_str(&mut out, &p.name);
        put_u32(&mut out, p.value.ndim());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, p.value.data());
    }
    put_u32(&mut out, store.norms().len());
    for n in store.norms() {
        put_str(&mut out, &n.name);
        put_u32(&mut out, n.mean.len());
        put_f32s(&mut out, &n.mean);
        put_f32s(&mut out, &n.var);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 name".to_string())
    }

    fn f32s<F: Float>(&mut self, n: usize) -> std::result::Result<Vec<F>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    }
}

struct Stored {
    fingerprint: String,
    params: Vec<(String, Vec<usize>, Vec<f32>)>,
    norms: Vec<(String, Vec<f32>, Vec<f32>)>,
}

fn parse(bytes: &[u8]) -> std::result::Result<Stored, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let fingerprint = r.string()?;
    let n = r.u32()?;
    let mut params = Vec::new();
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("size overflow")?;
        params.push((name, shape, r.f32s(len)?));
    }
    let n = r.u32()?;
    let mut norms = Vec::new();
    for _ in 0..n {
        let name = r.string()?;
        let channels = r.u32()?;
        norms.push((name, r.f32s(channels)?, r.f32s(channels)?));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Stored { fingerprint, params, norms })
}

fn to_array<F: Float>(shape: &[usize], data: &[f32]) -> NdArray<F> {
    NdArray::from_vec(shape.to_vec(), data.iter().map(|&v| F::of(v as f64)).collect())
}

/// Restores `store` from `bytes`, returning the stored fingerprint. Every
/// parameter and norm must match by name, order and shape; on error the
/// store is left untouched.
pub fn decode_into<F: Float>(bytes: &[u8], store: &mut ParamStore<F>) -> std::result::Result<String, String> {
    let stored = parse(bytes)?;
    if stored.params.len() != store.params().len() {
        return Err(format!(
            "checkpoint has {} parameters, model has {}",
            stored.params.len(),
            store.params().len()
        ));
    }
    for (p, (name, shape, _)) in store.params().iter().zip(&stored.params) {
        if *name != p.name {
            return Err(format!("expected parameter `{}`, found `{name}`", p.name));
        }
        if shape != p.value.shape() {
            return Err(format!("shape mismatch for `{name}`: checkpoint {shape:?}, model {:?}", p.value.shape()));
        }
    }
    if stored.norms.len() != store.norms().len() {
        return Err(format!(
            "checkpoint has {} norm layers, model has {}",
            stored.norms.len(),
            store.norms().len()
        ));
    }
    for (norm, (name, mean, _)) in store.norms().iter().zip(&stored.norms) {
        if *name != norm.name {
            return Err(format!("expected norm `{}`, found `{name}`", norm.name));
        }
        if mean.len() != norm.mean.len() {
            return Err(format!(
                "channel mismatch for `{name}`: checkpoint {}, model {}",
                mean.len(),
                norm.mean.len()
            ));
        }
    }
    for (id, (_, shape, data)) in stored.params.iter().enumerate() {
        *store.value_mut(id) = to_array(shape, data);
    }
    for (norm, (_, mean, var)) in store.norms_mut().iter_mut().zip(&stored.norms) {
        norm.mean = mean.iter().map(|&v| F::of(v as f64)).collect();
        norm.var = var.iter().map(|&v| F::of(v as f64)).collect();
    }
    Ok(stored.fingerprint)
}

/// Copies every parameter and norm outside `skip_group` from the
/// checkpoint by name, ignoring the fingerprint and any extra entries.
/// Used to start training from pretrained backbone weights under a new
/// head. Returns the number of tensors copied.
pub fn load_except_group<F: Float>(path: &Path, store: &mut ParamStore<F>, skip_group: &str) -> Result<usize> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let err = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let stored = parse(&bytes).map_err(err)?;
    let mut scratch = store.clone();
    let mut copied = 0;
    for id in 0..scratch.params().len() {
        let p = scratch.param(id);
        if p.group == skip_group {
            continue;
        }
        let (_, shape, data) = stored
            .params
            .iter()
            .find(|(n, _, _)| *n == p.name)
            .ok_or_else(|| err(format!("missing parameter `{}`", p.name)))?;
        if shape != p.value.shape() {
            return Err(err(format!(
                "shape mismatch for `{}`: checkpoint {shape:?}, model {:?}",
                p.name,
                p.value.shape()
            )));
        }
        *scratch.value_mut(id) = to_array(shape, data);
        copied += 1;
    }
    for norm in scratch.norms_mut().iter_mut().filter(|n| n.group != skip_group) {
        let (_, mean, var) = stored
            .norms
            .iter()
            .find(|(n, _, _)| *n == norm.name)
            .ok_or_else(|| err(format!("missing norm `{}`", norm.name)))?;
        if mean.len() != norm.mean.len() {
            return Err(err(format!("channel mismatch for `{}`", norm.name)));
        }
        norm.mean = mean.iter().map(|&v| F::of(v as f64)).collect();
        norm.var = var.iter().map(|&v| F::of(v as f64)).collect();
        copied += 1;
    }
    *store = scratch;
    Ok(copied)
}

pub fn save<F: Float>(path: &Path, store: &ParamStore<F>, fingerprint: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, encode(store, fingerprint)).map_err(Error::io(path))
}

/// Loads into `store`. With `expected` set, a different stored fingerprint
/// is refused.
pub fn load<F: Float>(path: &Path, store: &mut ParamStore<F>, expected: Option<&str>) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let err = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut scratch = store.clone();
    let fingerprint = decode_into(&bytes, &mut scratch).map_err(err)?;
    if let Some(want) = expected {
        if want != fingerprint {
            return Err(err(format!("config fingerprint {fingerprint} does not match {want}")));
        }
    }
    *store = scratch;
    Ok(fingerprint)
}
