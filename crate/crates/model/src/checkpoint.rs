//! Checkpoint files: a JSON metadata record followed by named little-endian
//! arrays (parameters, then optimizer moments). Values round-trip bit-exactly.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use subaru_nn::{ParamStore, Scalar};

use crate::config::{NetworkConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::networks::Subaru;
use crate::optim::Adam;

const MAGIC: &[u8; 8] = b"SBRCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub network: NetworkConfig,
    pub train: Option<TrainConfig>,
    /// Optimizer steps taken.
    pub step: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub source_rate: u32,
    pub target_rate: u32,
    pub dtype: String,
    pub best_val_lsd: Option<f64>,
}

impl CheckpointMeta {
    pub fn new(network: &NetworkConfig, dtype: &str) -> Self {
        CheckpointMeta {
            config_hash: network.hash(),
            network: network.clone(),
            train: None,
            step: 0,
            epoch: 0,
            source_rate: network.source_rate,
            target_rate: network.target_rate,
            dtype: dtype.to_string(),
            best_val_lsd: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub arrays: Vec<(String, ArrayD<T>)>,
}

fn ck_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn write_array<T: Scalar, W: Write>(w: &mut W, name: &str, a: &ArrayD<T>) -> std::io::Result<()> {
    let nb = name.as_bytes();
    w.write_all(&(nb.len() as u32).to_le_bytes())?;
    w.write_all(nb)?;
    let width: u8 = if T::NAME == "f32" { 4 } else { 8 };
    w.write_all(&[width, a.ndim() as u8])?;
    for &d in a.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in a.iter() {
        if width == 4 {
            w.write_all(&(v.f64() as f32).to_le_bytes())?;
        } else {
            w.write_all(&v.f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_array<T: Scalar, R: Read>(r: &mut R, path: &Path) -> Result<(String, ArrayD<T>)> {
    let n = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut name = vec![0u8; n];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| ck_err(path, "array name is not UTF-8"))?;
    let [width, ndim] = read_exact::<_, 2>(r)?;
    let expect: u8 = if T::NAME == "f32" { 4 } else { 8 };
    if width != expect {
        return Err(ck_err(path, format!("{name}: stored width {width}, reading as {}", T::NAME)));
    }
    let shape = (0..ndim)
        .map(|_| read_exact(r).map(|b| u64::from_le_bytes(b) as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = if width == 4 {
            f32::from_le_bytes(read_exact(r)?) as f64
        } else {
            f64::from_le_bytes(read_exact(r)?)
        };
        data.push(T::c(v));
    }
    let a = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| ck_err(path, e.to_string()))?;
    Ok((name, a))
}

/// Writes parameters (trainable and running statistics) and, when given,
/// the Adam moments. The file is written to a temporary name first.
pub fn save<T: Scalar>(path: &Path, meta: &CheckpointMeta, store: &ParamStore<T>, adam: Option<&Adam<T>>) -> Result<()> {
    let mut arrays: Vec<(String, &ArrayD<T>)> = store.iter().map(|(_, p)| (format!("param/{}", p.name), &*p.value)).collect();
    if let Some(a) = adam {
        for (id, p) in store.iter() {
            if let Some(m) = a.m.get(id.0).and_then(|m| m.as_ref()) {
                arrays.push((format!("adam.m/{}", p.name), m));
            }
            if let Some(v) = a.v.get(id.0).and_then(|v| v.as_ref()) {
                arrays.push((format!("adam.v/{}", p.name), v));
            }
        }
    }
    let mut meta = meta.clone();
    meta.dtype = T::NAME.to_string();
    let json = serde_json::to_vec_pretty(&meta)?;
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&adam.map_or(0u64, |a| a.t).to_le_bytes())?;
        w.write_all(&(arrays.len() as u32).to_le_bytes())?;
        for (name, a) in &arrays {
            write_array(&mut w, name, a)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Metadata only, without reading the arrays.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_header(&mut r, path)
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<CheckpointMeta> {
    let magic: [u8; 8] = read_exact(r)?;
    if &magic != MAGIC {
        return Err(ck_err(path, "not a checkpoint file"));
    }
    let n = u64::from_le_bytes(read_exact(r)?) as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

/// Loaded checkpoint plus the stored Adam step count.
pub fn load<T: Scalar>(path: &Path) -> Result<(Checkpoint<T>, u64)> {
    if !path.is_file() {
        return Err(subaru_core::Error::MissingFile(path.to_path_buf()).into());
    }
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let meta = read_header(&mut r, path)?;
    let t = u64::from_le_bytes(read_exact(&mut r)?);
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let arrays = (0..count)
        .map(|_| read_array(&mut r, path))
        .collect::<Result<Vec<_>>>()?;
    Ok((Checkpoint { meta, arrays }, t))
}

impl<T: Scalar> Checkpoint<T> {
    fn find(&self, key: &str) -> Option<&ArrayD<T>> {
        self.arrays.iter().find(|(n, _)| n == key).map(|(_, a)| a)
    }

    /// Copies every stored parameter into `store`; names and shapes must
    /// match exactly.
    pub fn apply(&self, store: &mut ParamStore<T>, path: &Path) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.shape().to_vec())).collect();
        let stored = self.arrays.iter().filter(|(n, _)| n.starts_with("param/")).count();
        if stored != ids.len() {
            return Err(ck_err(path, format!("{stored} stored parameters, model has {}", ids.len())));
        }
        for (id, name, shape) in ids {
            let a = self
                .find(&format!("param/{name}"))
                .ok_or_else(|| ck_err(path, format!("missing parameter {name}")))?;
            if a.shape() != shape.as_slice() {
                return Err(ck_err(path, format!("{name}: shape {:?} vs {:?}", a.shape(), shape)));
            }
            store.set(id, a.clone());
        }
        Ok(())
    }

    /// Optimizer moments keyed by the parameter ids of `store`.
    pub fn adam(&self, store: &ParamStore<T>, adam: &mut Adam<T>, t: u64) {
        adam.t = t;
        adam.m = vec![None; store.len()];
        adam.v = vec![None; store.len()];
        for (id, p) in store.iter() {
            adam.m[id.0] = self.find(&format!("adam.m/{}", p.name)).cloned();
            adam.v[id.0] = self.find(&format!("adam.v/{}", p.name)).cloned();
        }
    }
}

/// Rebuilds the network stored in a checkpoint, with its parameters.
pub fn restore_model<T: Scalar>(path: &Path) -> Result<(Subaru, ParamStore<T>, CheckpointMeta)> {
    let (ck, _) = load::<T>(path)?;
    let mut store = ParamStore::new();
    let model = Subaru::new(ck.meta.network.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.apply(&mut store, path)?;
    Ok((model, store, ck.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", ArrayD::from_shape_fn(IxDyn(&[2, 3]), |i| (i[0] * 3 + i[1]) as f32 * 0.1f32.powi(3) - 1e-7), true);
        store.add("s", ArrayD::from_elem(IxDyn(&[2]), f32::MIN_POSITIVE), false);
        let mut adam = Adam::new(AdamConfig::default(), store.len());
        adam.step(&mut store, &vec![Some(ArrayD::from_elem(IxDyn(&[2, 3]), 0.3f32)), None], 1e-3);
        let meta = CheckpointMeta {
            step: 1,
            ..CheckpointMeta::new(&NetworkConfig::default(), "f32")
        };
        save(&path, &meta, &store, Some(&adam)).unwrap();
        let (ck, t) = load::<f32>(&path).unwrap();
        assert_eq!(ck.meta, meta);
        assert_eq!(t, 1);
        let mut fresh = store.clone();
        fresh.set(w, ArrayD::zeros(IxDyn(&[2, 3])));
        ck.apply(&mut fresh, &path).unwrap();
        for ((_, a), (_, b)) in store.iter().zip(fresh.iter()) {
            assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut back = Adam::new(AdamConfig::default(), 0);
        ck.adam(&fresh, &mut back, t);
        let (m0, m1) = (adam.m[0].as_ref().unwrap(), back.m[0].as_ref().unwrap());
        assert!(m0.iter().zip(m1.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(back.m[1].is_none());
        assert_eq!(read_meta(&path).unwrap().step, 1);
    }

    #[test]
    fn mismatched_model_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        let mut store = ParamStore::<f64>::new();
        store.add("w", ArrayD::zeros(IxDyn(&[3])), true);
        save(&path, &CheckpointMeta::new(&NetworkConfig::default(), "f64"), &store, None).unwrap();
        let (ck, _) = load::<f64>(&path).unwrap();
        let mut other = ParamStore::<f64>::new();
        other.add("w", ArrayD::zeros(IxDyn(&[4])), true);
        assert!(ck.apply(&mut other, &path).is_err());
        assert!(load::<f32>(&path).is_err());
        std::fs::write(&path, b"garbage!").unwrap();
        assert!(load::<f64>(&path).is_err());
    }
}
