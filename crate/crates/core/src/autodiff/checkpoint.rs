//! Binary tensor archive: magic, version, tensor count, then per tensor the
//! name length, name, rank, dims and raw values, all little-endian.

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::{Tensor, TensorError};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CRSHCKPT";
pub const VERSION: u32 = 1;

fn ck(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

/// Ordered named tensors stored as 64-bit floats.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        let t = t.cast::<f64>();
        match self.tensors.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = t,
            None => self.tensors.push((name.to_string(), t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Stores every parameter value under `prefix` + its name.
    pub fn insert_params<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, p) in store.iter() {
            self.insert(&format!("{prefix}{}", p.name), &p.value);
        }
    }

    /// Loads every parameter of `store` from `prefix` + its name; names and
    /// shapes must all be present and agree.
    pub fn load_params<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        for p in store.iter_mut() {
            let key = format!("{prefix}{}", p.name);
            let t = self.get(&key).ok_or_else(|| TensorError::UnknownParameter(key.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(TensorError::Shape {
                    op: "checkpoint",
                    detail: format!("{key}: stored {:?}, model {:?}", t.shape(), p.value.shape()),
                });
            }
            p.value = t.cast();
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        let io = |e: std::io::Error| ck(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes()).map_err(io)?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(t.rank() as u32).to_le_bytes()).map_err(io)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, TensorError> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], TensorError> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| ck(format!("truncated archive: {e}")))?;
            Ok(b)
        }
        if &take::<8, _>(&mut r)? != MAGIC {
            return Err(ck("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(ck(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(take(&mut r)?);
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = u32::from_le_bytes(take(&mut r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| ck(format!("truncated name: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| ck("name is not UTF-8"))?;
            let rank = u32::from_le_bytes(take(&mut r)?) as usize;
            let dims: Vec<usize> =
                (0..rank).map(|_| take::<8, _>(&mut r).map(|b| u64::from_le_bytes(b) as usize)).collect::<Result<_, _>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| take::<8, _>(&mut r).map(f64::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
            tensors.push((name, Tensor::new(&dims, data)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| ck(e.to_string()))? != 0 {
            return Err(ck("trailing bytes after last tensor"));
        }
        Ok(Self { tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_is_exact() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Tensor::from_f64(&[2, 2], &[1.0, -0.1, 1e-300, 3.5]).unwrap()).unwrap();
        store.add("b", Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap()).unwrap();
        let mut ck = Checkpoint::new();
        ck.insert_params("p/", &store);
        ck.insert("step", &Tensor::scalar(7.0f64));
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::read(&bytes[..]).unwrap();
        assert_eq!(back, ck);
        let mut other = store.clone();
        other.iter_mut().for_each(|p| p.value = Tensor::zeros(p.value.shape()));
        back.load_params("p/", &mut other).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn corrupt_archives_rejected() {
        let mut ck = Checkpoint::new();
        ck.insert("x", &Tensor::scalar(1.0f64));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::read(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read(&bad[..]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::read(&long[..]).is_err());
    }
}
