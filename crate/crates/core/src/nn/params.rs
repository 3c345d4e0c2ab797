use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Rc<Tensor>,
    trainable: bool,
}

/// Named parameter arrays plus non-trainable buffers (running statistics).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter name {name}");
        let id = self.entries.len();
        self.entries.push(Entry { name: name.to_string(), value: Rc::new(value), trainable });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn get_rc(&self, id: ParamId) -> Rc<Tensor> {
        Rc::clone(&self.entries[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.get(id).shape(), value.shape(), "shape change for {}", self.entries[id.0].name);
        self.entries[id.0].value = Rc::new(value);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.name(id).starts_with(prefix))
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).numel()).sum()
    }

    /// Stable 64-bit fingerprint of all values under `prefix`.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in self.ids_with_prefix(prefix) {
            for b in self.name(id).bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            for v in self.get(id).data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Copy values from `other` for every name both stores share under `prefix`.
    pub fn copy_from(&mut self, other: &ParamStore, prefix: &str) -> usize {
        let mut n = 0;
        for id in other.ids_with_prefix(prefix) {
            if let Some(dst) = self.id(other.name(id)) {
                if self.get(dst).shape() == other.get(id).shape() {
                    self.entries[dst.0].value = other.get_rc(id);
                    n += 1;
                }
            }
        }
        n
    }
}

/// Parameter initializers, all driven by an explicit RNG.
pub mod init {
    use super::*;

    pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("valid std");
        Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng))
    }

    pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
    }

    /// He-uniform for ReLU layers with the given fan-in.
    pub fn kaiming(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
        uniform(rng, shape, (6.0 / fan_in.max(1) as f64).sqrt())
    }

    pub fn xavier(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        uniform(rng, shape, (6.0 / (fan_in + fan_out).max(1) as f64).sqrt())
    }
}
