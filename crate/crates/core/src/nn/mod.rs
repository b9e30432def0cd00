//! Minimal CPU neural-network machinery: a flat parameter store, a handful of
//! layer kernels and a small static-graph executor with reverse-mode
//! differentiation.
//!
//! Everything is generic over [`Scalar`] so the same network can run in f32
//! for training and in f64 for finite-difference gradient verification.

mod adam;
mod conv;
mod dense;
mod graph;
mod norm;

pub use adam::Adam;
pub use conv::Conv2d;
pub use dense::Dense;
pub use graph::{BnState, Graph, NodeId, Op, Tape, Value};
pub use norm::BatchNorm;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Element type of all network arrays.
pub trait Scalar:
    ndarray::LinalgScalar + PartialOrd + Send + Sync + std::fmt::Debug + std::fmt::Display
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maxv(self, other: Self) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn maxv(self, other: Self) -> Self {
        f32::max(self, other)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn maxv(self, other: Self) -> Self {
        f64::max(self, other)
    }
}

/// Handle into the flat parameter (or state) vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

/// Initialization rule for one parameter slot.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Variance-scaling uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
    HeUniform {
        fan_in: usize,
    },
    Zero,
    One,
}

/// Records slot layout and init rules while a network is being built.
#[derive(Debug, Default, Clone)]
pub struct Layout {
    slots: Vec<(Slot, Init)>,
    total: usize,
}

impl Layout {
    pub fn alloc(&mut self, len: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.total,
            len,
        };
        self.total += len;
        self.slots.push((slot, init));
        slot
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Flat vector of learnable parameters plus (lazily allocated) gradients.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    values: Vec<T>,
    grads: Option<Vec<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Materialize a layout, drawing initial values from a seeded stream.
    /// The draw order is the slot registration order, so two stores built
    /// from the same layout and seed are identical.
    pub fn init(layout: &Layout, rng: &mut ChaCha8Rng) -> Self {
        let mut values = vec![T::from_f64(0.0); layout.total];
        for (slot, init) in &layout.slots {
            match init {
                Init::HeUniform { fan_in } => {
                    let bound = (6.0 / *fan_in as f64).sqrt();
                    for v in &mut values[slot.offset..slot.offset + slot.len] {
                        *v = T::from_f64(rng.gen_range(-bound..bound));
                    }
                }
                Init::Zero => {}
                Init::One => {
                    for v in &mut values[slot.offset..slot.offset + slot.len] {
                        *v = T::from_f64(1.0);
                    }
                }
            }
        }
        ParamStore {
            values,
            grads: None,
        }
    }

    pub fn from_values(values: Vec<T>) -> Self {
        ParamStore {
            values,
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, slot: Slot) -> &[T] {
        &self.values[slot.offset..slot.offset + slot.len]
    }

    pub fn ensure_grads(&mut self) {
        if self.grads.is_none() {
            self.grads = Some(vec![T::from_f64(0.0); self.values.len()]);
        }
    }

    pub fn zero_grads(&mut self) {
        self.ensure_grads();
        for g in self.grads.as_mut().unwrap() {
            *g = T::from_f64(0.0);
        }
    }

    pub fn grads(&self) -> &[T] {
        self.grads.as_deref().expect("gradients not allocated")
    }

    pub fn grads_mut(&mut self) -> &mut [T] {
        self.grads.as_deref_mut().expect("gradients not allocated")
    }

    pub fn grad_slice_mut(&mut self, slot: Slot) -> &mut [T] {
        let g = self.grads.as_deref_mut().expect("gradients not allocated");
        &mut g[slot.offset..slot.offset + slot.len]
    }
}

/// Non-learnable per-layer state (normalization running statistics).
#[derive(Debug, Clone)]
pub struct StateStore<T> {
    values: Vec<T>,
}

impl<T: Scalar> StateStore<T> {
    pub fn init(layout: &Layout) -> Self {
        let mut values = vec![T::from_f64(0.0); layout.total];
        for (slot, init) in &layout.slots {
            if let Init::One = init {
                for v in &mut values[slot.offset..slot.offset + slot.len] {
                    *v = T::from_f64(1.0);
                }
            }
        }
        StateStore { values }
    }

    pub fn from_values(values: Vec<T>) -> Self {
        StateStore { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, slot: Slot) -> &[T] {
        &self.values[slot.offset..slot.offset + slot.len]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut [T] {
        &mut self.values[slot.offset..slot.offset + slot.len]
    }
}
