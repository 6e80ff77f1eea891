//! Named parameter storage with seed-determined initialization.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Standard deviation of the zero-mean Gaussian used for every convolution and
/// linear weight.
pub const INIT_STD: f64 = 0.02;

/// Every tensor a set of networks owns, keyed by dotted path.
///
/// Initial values depend only on the store seed and the parameter name, never
/// on creation order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeSet<String>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeSet::new(),
            seed,
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> ParamPath<'_> {
        ParamPath {
            store: self,
            prefix: String::new(),
        }
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(name.as_bytes());
        let mut key = [0u8; 8];
        key.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.seed ^ u64::from_le_bytes(key))
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: Shape) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::InvalidInput(format!("parameter `{name}` created twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(tensor)
    }

    fn normal(&mut self, name: String, shape: Shape, mean: f64, std: f64) -> Result<Tensor> {
        let mut rng = self.rng_for(&name);
        let dist = Normal::new(mean, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let values = (0..shape.elem_count()).map(|_| dist.sample(&mut rng)).collect();
        self.insert(name, values, shape)
    }

    fn constant(&mut self, name: String, shape: Shape, value: f64) -> Result<Tensor> {
        let values = vec![value; shape.elem_count()];
        self.insert(name, values, shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn is_buffer(&self, name: &str) -> bool {
        self.buffers.contains(name)
    }

    /// Trainable parameters whose name starts with one of `prefixes`.
    pub fn trainable(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(n, _)| !self.buffers.contains(*n))
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    /// Number of trainable scalars under `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.trainable(&[prefix])
            .iter()
            .map(|(_, v)| v.as_tensor().elem_count())
            .sum()
    }

    /// Digest of every value under `prefix` (trainable and buffers).
    pub fn fingerprint(&self, prefix: &str) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in self.vars.iter().filter(|(n, _)| n.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            let values = var
                .as_tensor()
                .to_dtype(DType::F64)?
                .flatten_all()?
                .to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrites every parameter from `source`; names and shapes must match exactly.
    pub fn assign_from(&self, source: &HashMap<String, Tensor>, context: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let t = source.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("{context}: missing entry `{name}`"))
            })?;
            if t.dims() != var.as_tensor().dims() {
                return Err(Error::Checkpoint(format!(
                    "{context}: entry `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.as_tensor().dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)
                .map_err(|e| Error::Checkpoint(format!("{context}: entry `{name}`: {e}")))?;
        }
        Ok(())
    }
}

/// Cursor into a [`ParamStore`] under a dotted prefix.
pub struct ParamPath<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl<'a> ParamPath<'a> {
    pub fn pp(&mut self, segment: impl AsRef<str>) -> ParamPath<'_> {
        let prefix = if self.prefix.is_empty() {
            segment.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, segment.as_ref())
        };
        ParamPath {
            store: self.store,
            prefix,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub fn normal(&mut self, leaf: &str, shape: impl Into<Shape>, mean: f64, std: f64) -> Result<Tensor> {
        let name = self.name(leaf);
        self.store.normal(name, shape.into(), mean, std)
    }

    pub fn zeros(&mut self, leaf: &str, shape: impl Into<Shape>) -> Result<Tensor> {
        let name = self.name(leaf);
        self.store.constant(name, shape.into(), 0.0)
    }

    /// Non-trainable state (e.g. running statistics).
    pub fn buffer(&mut self, leaf: &str, shape: impl Into<Shape>, value: f64) -> Result<Var> {
        let name = self.name(leaf);
        self.store.constant(name.clone(), shape.into(), value)?;
        self.store.buffers.insert(name.clone());
        Ok(self.store.vars[&name].clone())
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_seed_and_name_only() {
        let mut a = ParamStore::new(7, DType::F32);
        let mut b = ParamStore::new(7, DType::F32);
        let wa = a.root().pp("x").normal("w", (4, 4), 0.0, INIT_STD).unwrap();
        b.root().pp("y").normal("w", (2,), 0.0, INIT_STD).unwrap();
        let wb = b.root().pp("x").normal("w", (4, 4), 0.0, INIT_STD).unwrap();
        let va = wa.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = wb.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);

        let mut c = ParamStore::new(8, DType::F32);
        let wc = c.root().pp("x").normal("w", (4, 4), 0.0, INIT_STD).unwrap();
        assert_ne!(va, wc.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    }

    #[test]
    fn buffers_are_not_trainable() {
        let mut s = ParamStore::new(0, DType::F32);
        {
            let mut p = s.root();
            let mut bn = p.pp("bn");
            bn.zeros("bias", 3).unwrap();
            bn.buffer("running_mean", 3, 0.0).unwrap();
        }
        let names: Vec<_> = s.trainable(&["bn"]).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["bn.bias".to_string()]);
        assert_eq!(s.count("bn"), 3);
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let mut s = ParamStore::new(0, DType::F32);
        s.root().zeros("w", (2, 2)).unwrap();
        let mut src = HashMap::new();
        src.insert("w".to_string(), Tensor::ones((2, 2), DType::F32, &Device::Cpu).unwrap());
        s.assign_from(&src, "test").unwrap();
        let v = s.get("w").unwrap().as_tensor().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(v, 4.0);
        src.insert("w".to_string(), Tensor::ones(3, DType::F32, &Device::Cpu).unwrap());
        assert!(s.assign_from(&src, "test").is_err());
        assert!(s.assign_from(&HashMap::new(), "test").is_err());
    }
}
