use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAG: AtomicU32 = AtomicU32::new(1);

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub(crate) tag: u32,
    pub(crate) index: usize,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Named, ordered collection of parameter tensors.
///
/// Names are dotted paths (`stage0.hfem1.block2.b5.weight`). Initialization
/// draws from a stream keyed by `(seed, name)`, so a tensor's initial value
/// does not depend on which other parameters exist.
#[derive(Clone, Debug)]
pub struct ParamStore<T = f32> {
    tag: u32,
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

/// 64-bit FNV-1a, used to derive per-parameter RNG streams.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic RNG for a named consumer under a global seed.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(key.as_bytes()));
    rng
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            seed,
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub(crate) fn tag(&self) -> u32 {
        self.tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.lookup.contains_key(name) {
            return Err(Error::usage(format!("duplicate parameter name {name}")));
        }
        let index = self.tensors.len();
        self.lookup.insert(name.to_string(), index);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId {
            tag: self.tag,
            index,
        })
    }

    /// He-normal initialization, `std = gain * sqrt(2 / fan_in)`.
    pub fn he_normal(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
    ) -> Result<ParamId> {
        let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
        let mut rng = keyed_rng(self.seed, name);
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng)));
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        debug_assert_eq!(id.tag, self.tag, "parameter id from another store");
        &self.tensors[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        debug_assert_eq!(id.tag, self.tag, "parameter id from another store");
        &mut self.tensors[id.index]
    }

    pub fn owns(&self, id: ParamId) -> bool {
        id.tag == self.tag && id.index < self.tensors.len()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&index| ParamId {
            tag: self.tag,
            index,
        })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(move |index| ParamId {
            tag: self.tag,
            index,
        })
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Count of scalars whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Zero tensors with the same layout, e.g. for gradient or moment buffers.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    /// Same layout and tag in another precision; ids stay valid.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tag: self.tag,
            seed: self.seed,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Overwrite values from named tensors; every name and shape must match.
    pub fn assign(&mut self, items: Vec<(String, Tensor<T>)>) -> Result<()> {
        if items.len() != self.tensors.len() {
            return Err(Error::dim(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                items.len()
            )));
        }
        for (name, t) in items {
            let idx = *self
                .lookup
                .get(&name)
                .ok_or_else(|| Error::dim(format!("unknown parameter {name}")))?;
            if t.shape() != self.tensors[idx].shape() {
                return Err(Error::dim(format!(
                    "parameter {name}: stored shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[idx].shape()
                )));
            }
            self.tensors[idx] = t;
        }
        Ok(())
    }
}

/// Writes tensors as a text manifest (`name<TAB>d0,d1,..<TAB>byte_offset`)
/// and a flat little-endian `f32` blob.
pub fn save_tensors<'a, T: Scalar>(
    manifest: &Path,
    blob: &Path,
    items: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let mut text = String::new();
    let mut bytes = Vec::new();
    for (name, t) in items {
        if name.contains(['\t', '\n']) {
            return Err(Error::usage(format!("tensor name {name:?} has tab or newline")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        text.push_str(&format!("{}\t{}\t{}\n", name, dims.join(","), bytes.len()));
        for v in t.data() {
            let v = v.to_f32().expect("f32 conversion");
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(manifest, text.as_bytes())?;
    write_file(blob, &bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Inverse of [`save_tensors`].
pub fn load_tensors<T: Scalar>(manifest: &Path, blob: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
    let ctx = manifest.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dims, offset] = fields[..] else {
            return Err(Error::parse(&ctx, format!("line {}: expected 3 fields", lineno + 1)));
        };
        let shape = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split(',')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(&ctx, format!("line {}: {e}", lineno + 1)))?
        };
        let offset: usize = offset
            .parse()
            .map_err(|e| Error::parse(&ctx, format!("line {}: {e}", lineno + 1)))?;
        let n: usize = shape.iter().product();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(Error::parse(&ctx, format!("tensor {name} runs past end of blob")));
        }
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((name.to_string(), Tensor::new(&shape, data)?));
    }
    Ok(out)
}
