//! Named parameter storage, deterministic initialization and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of projection weights at initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the checkpoint
/// order and the order gradients are reported in.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

/// Seeded generator for the fixed initialization scheme: truncated normal
/// (std [`INIT_STD`], cut at two standard deviations) for weights, zeros
/// for biases, identity affine for norms.
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn trunc_normal<T: Scalar>(&mut self, dims: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(dims, |_| loop {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            if z.abs() <= 2.0 {
                break T::from_float(z * std);
            }
        })
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("parameter {name} registered twice")));
        }
        self.entries.insert(name, Param { tensor, trainable });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn param(&self, name: &str) -> Result<&Param<T>> {
        self.entries.get(name).ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.param(name)?.tensor)
    }

    /// Replaces a tensor; the new value must keep the registered dims.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        if slot.tensor.dims() != tensor.dims() {
            return Err(Error::shape(format!(
                "{name}: cannot replace {:?} with {:?}",
                slot.tensor.dims(),
                tensor.dims()
            )));
        }
        slot.tensor = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter().filter(|(_, p)| p.trainable).map(|(k, p)| (k, &p.tensor))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    /// Writes buffer updates such as batch-norm running statistics.
    pub fn apply_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (name, t) in updates {
            self.set(&name, t)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { tensor: p.tensor.cast(), trainable: p.trainable }))
                .collect(),
        }
    }

    /// Registers `{prefix}.weight` (truncated normal) and optionally a zero
    /// `{prefix}.bias` for a convolution `out x in_per_group x k x k`.
    pub fn add_conv(
        &mut self,
        init: &mut ParamInit,
        prefix: &str,
        out_c: usize,
        in_per_group: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<()> {
        self.insert(
            format!("{prefix}.weight"),
            init.trunc_normal(&[out_c, in_per_group, kernel, kernel], INIT_STD),
            true,
        )?;
        if bias {
            self.insert(format!("{prefix}.bias"), Tensor::zeros(&[out_c]), true)?;
        }
        Ok(())
    }

    pub fn add_batch_norm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.insert(format!("{prefix}.weight"), Tensor::ones(&[channels]), true)?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[channels]), true)?;
        self.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]), false)?;
        self.insert(format!("{prefix}.running_var"), Tensor::ones(&[channels]), false)?;
        Ok(())
    }

    /// Saves `manifest_path` (JSON) and a sibling `.msct` payload holding
    /// every tensor flattened and concatenated in store order.
    pub fn save_checkpoint(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let payload_path = payload_path(manifest_path);
        let total = self.num_elements();
        let mut flat = Vec::with_capacity(total);
        let mut entries = Vec::with_capacity(self.len());
        let mut offset = io::header_len(1);
        for (name, p) in self.iter() {
            entries.push(ManifestEntry {
                name: name.to_string(),
                dims: p.tensor.dims().to_vec(),
                dtype: T::NAME.to_string(),
                offset,
                trainable: p.trainable,
            });
            offset += p.tensor.numel() * T::BYTES;
            flat.extend_from_slice(p.tensor.data());
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            version: 1,
            dtype: T::NAME.to_string(),
            payload: payload_path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            elements: total,
            entries,
        };
        if total > 0 {
            io::save(&payload_path, &Tensor::new(&[total], flat)?)?;
        }
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
        fs::write(manifest_path, text + "\n")?;
        Ok(())
    }

    pub fn load_checkpoint(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)
            .map_err(|e| Error::format(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format != MANIFEST_FORMAT || manifest.dtype != T::NAME {
            return Err(Error::format(format!(
                "checkpoint is {} / {}, expected {MANIFEST_FORMAT} / {}",
                manifest.format,
                manifest.dtype,
                T::NAME
            )));
        }
        let mut store = Self::new();
        if manifest.elements == 0 {
            return Ok(store);
        }
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let bytes = fs::read(dir.join(&manifest.payload))?;
        let flat: Tensor<T> = io::decode(&bytes)?;
        if flat.numel() != manifest.elements {
            return Err(Error::format(format!(
                "payload holds {} elements, manifest lists {}",
                flat.numel(),
                manifest.elements
            )));
        }
        let base = io::header_len(1);
        for e in manifest.entries {
            let numel: usize = e.dims.iter().product();
            let start = e
                .offset
                .checked_sub(base)
                .filter(|o| o % T::BYTES == 0)
                .ok_or_else(|| Error::format(format!("{}: bad offset {}", e.name, e.offset)))?
                / T::BYTES;
            let data = flat
                .data()
                .get(start..start + numel)
                .ok_or_else(|| Error::format(format!("{}: range past payload end", e.name)))?;
            store.insert(e.name, Tensor::new(&e.dims, data.to_vec())?, e.trainable)?;
        }
        Ok(store)
    }
}

const MANIFEST_FORMAT: &str = "mscsa-checkpoint";

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("msct")
}

/// One tensor's location in the checkpoint payload. `offset` is the byte
/// offset of its first element from the start of the payload file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub payload: String,
    pub elements: usize,
    pub entries: Vec<ManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_with_bias_counts() {
        let mut store = ParamStore::<f32>::new();
        store.add_conv(&mut ParamInit::new(0), "p", 5, 3, 1, true).unwrap();
        assert_eq!(store.num_trainable_elements(), 3 * 5 + 5);
    }

    #[test]
    fn empty_store_has_no_params() {
        assert_eq!(ParamStore::<f64>::new().num_trainable_elements(), 0);
    }

    #[test]
    fn trunc_normal_is_bounded_and_seeded() {
        let a: Tensor<f64> = ParamInit::new(4).trunc_normal(&[1000], INIT_STD);
        let b: Tensor<f64> = ParamInit::new(4).trunc_normal(&[1000], INIT_STD);
        assert!(a.bit_eq(&b));
        assert!(a.max_abs() <= 2.0 * INIT_STD);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a", Tensor::ones(&[1]), true).unwrap();
        assert!(store.insert("a", Tensor::ones(&[1]), true).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut init = ParamInit::new(9);
        store.add_conv(&mut init, "a", 4, 2, 3, true).unwrap();
        store.add_batch_norm("n", 4).unwrap();
        let path = dir.path().join("ckpt.json");
        store.save_checkpoint(&path).unwrap();
        let back = ParamStore::<f64>::load_checkpoint(&path).unwrap();
        assert_eq!(back.len(), store.len());
        for ((n1, p1), (n2, p2)) in store.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.trainable, p2.trainable);
            assert!(p1.tensor.bit_eq(&p2.tensor));
        }
        assert!(ParamStore::<f32>::load_checkpoint(&path).is_err());
    }
}
