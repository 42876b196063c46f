//! Portable parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  b"PSOMACKP"
//! version u32      currently 1
//! count   u32      number of parameters
//! per parameter, in registration order:
//!   name_len u32, name bytes (utf-8)
//!   trainable u8
//!   ndim u32, dims u64 x ndim
//!   offset u64     element offset into the values section
//! values  f64 x total, row-major little-endian
//! ```
//!
//! Values are stored as `f64` regardless of the in-memory scalar type; the
//! `f64` pipeline round-trips bit-exactly, and `f32` survives the widening
//! round trip unchanged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PSOMACKP";
const VERSION: u32 = 1;

pub fn save<T: Scalar>(path: &Path, params: &Params<T>) -> Result<()> {
    save_filtered(path, params, |_| true)
}

/// Saves only parameters whose name starts with one of the prefixes (used
/// for pretrained-decoder checkpoints that exclude adapter weights).
pub fn save_prefixed<T: Scalar>(path: &Path, params: &Params<T>, prefixes: &[&str]) -> Result<()> {
    save_filtered(path, params, |name| {
        prefixes.iter().any(|p| name.starts_with(p))
    })
}

fn save_filtered<T: Scalar>(
    path: &Path,
    params: &Params<T>,
    keep: impl Fn(&str) -> bool,
) -> Result<()> {
    let selected: Vec<_> = params.iter().filter(|(_, p)| keep(&p.name)).collect();
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(selected.len() as u32).to_le_bytes())?;

    let mut offset: u64 = 0;
    for (_, p) in &selected {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[u8::from(p.trainable)])?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += p.value.numel() as u64;
    }
    for (_, p) in &selected {
        for &v in p.value.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into an already-built store. Every file entry must
/// match a registered parameter by name and shape, and every registered
/// parameter must be covered; mismatches report the offending name.
pub fn load_into<T: Scalar>(path: &Path, params: &mut Params<T>) -> Result<()> {
    let uncovered = load_subset(path, params)?;
    if let Some(name) = uncovered.first() {
        return Err(Error::Checkpoint(format!(
            "model parameter '{name}' missing from checkpoint"
        )));
    }
    Ok(())
}

/// Like [`load_into`] but tolerates store parameters absent from the file,
/// returning their names. Used to restore a pretrained decoder into a model
/// whose adapter weights stay at initialization.
pub fn load_subset<T: Scalar>(path: &Path, params: &mut Params<T>) -> Result<Vec<String>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;

    struct Entry {
        name: String,
        trainable: bool,
        shape: Vec<usize>,
        offset: u64,
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let offset = read_u64(&mut r)?;
        entries.push(Entry {
            name,
            trainable: flag[0] != 0,
            shape,
            offset,
        });
    }

    let total: usize = entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    let mut values = vec![0f64; total];
    let mut buf = [0u8; 8];
    for v in &mut values {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }

    let mut covered = vec![false; params.len()];
    for e in &entries {
        let id = params.lookup(&e.name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint parameter '{}' not in model", e.name))
        })?;
        let p = params.get_mut(id);
        if p.value.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for parameter '{}': model {:?}, checkpoint {:?}",
                e.name,
                p.value.shape(),
                e.shape
            )));
        }
        let n = p.value.numel();
        let start = e.offset as usize;
        for (dst, src) in p.value.data_mut().iter_mut().zip(&values[start..start + n]) {
            *dst = T::from_f64(*src);
        }
        p.trainable = e.trainable;
        p.grad = None;
        covered[id.0] = true;
    }
    Ok(params
        .iter()
        .filter(|(id, _)| !covered[id.0])
        .map(|(_, p)| p.name.clone())
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> Params<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = Params::new();
        ps.register("decoder/embed", Tensor::randn(5, 3, 0.02, &mut rng))
            .unwrap();
        let b = ps
            .register("adapter/bias", Tensor::randn(1, 4, 0.02, &mut rng))
            .unwrap();
        ps.set_trainable(b, false);
        ps
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ps = sample_store();
        save(&path, &ps).unwrap();

        let mut restored = sample_store();
        for (id, _) in ps.iter().collect::<Vec<_>>() {
            restored.get_mut(id).value.data_mut().fill(0.0);
        }
        load_into(&path, &mut restored).unwrap();
        for ((_, a), (_, b)) in ps.iter().zip(restored.iter()) {
            assert_eq!(a.value.bit_checksum(), b.value.bit_checksum());
            assert_eq!(a.trainable, b.trainable);
        }
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save(&path, &sample_store()).unwrap();

        let mut wrong = Params::<f64>::new();
        wrong
            .register("decoder/embed", Tensor::zeros(vec![5, 4]))
            .unwrap();
        wrong
            .register("adapter/bias", Tensor::zeros(vec![1, 4]))
            .unwrap();
        let err = load_into(&path, &mut wrong).unwrap_err().to_string();
        assert!(err.contains("decoder/embed"), "{err}");
    }
}
