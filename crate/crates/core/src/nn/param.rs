use std::collections::BTreeMap;

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a parameter group inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor with its gradient and AdamW moments.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step: u64,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
            step: 0,
        }
    }
}

/// Ordered collection of parameter groups. Group order is the insertion
/// order, and it is also the order used by checkpoints and optimizer updates.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    groups: Vec<ParamGroup>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a group. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.groups.iter().all(|g| g.name != name),
            "parameter group {name:?} registered twice"
        );
        self.groups.push(ParamGroup::new(name, value));
        ParamId(self.groups.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamGroup {
        &mut self.groups[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.groups[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.groups[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.groups.iter().position(|g| g.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamGroup> {
        self.groups.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.groups.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.groups.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.groups.iter().map(|g| g.value.len()).sum()
    }

    /// Adds `scale * grads` into the stored gradients, in group order.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, g) in grads.iter() {
            let dst = &mut self.groups[id.0].grad;
            for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                *d += scale * s;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.groups {
            g.grad.fill(0.0);
        }
    }

    /// True when both sets hold the same names, shapes and bit-identical values.
    pub fn values_equal(&self, other: &ParamSet) -> bool {
        self.groups.len() == other.groups.len()
            && self.groups.iter().zip(&other.groups).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Copies values from `other` by group name; every group of `self` must be
    /// present with the same shape.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        for g in &mut self.groups {
            let src = other
                .groups
                .iter()
                .find(|o| o.name == g.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter group {:?}", g.name)))?;
            if src.value.shape() != g.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "group {:?}: model {:?}, checkpoint {:?}",
                    g.name,
                    g.value.shape(),
                    src.value.shape()
                )));
            }
            g.value = src.value.clone();
        }
        Ok(())
    }
}

/// Sparse gradient map produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: ParamId, grad: &Matrix) {
        match self.by_param.get_mut(&id) {
            Some(g) => g.add_assign(grad),
            None => {
                self.by_param.insert(id, grad.clone());
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    /// Merges `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            self.add(id, g);
        }
    }
}

/// Glorot-uniform initialisation for a `fan_in x fan_out` weight.
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, limit)
}

pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}
