use ndarray::Array2;

use super::{NnError, Real};

/// Named parameter arrays. Shapes are fixed once an array is added.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
}

impl<F> Default for ParamSet<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an array and returns its slot index.
    pub fn push(&mut self, name: impl Into<String>, value: Array2<F>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Array2<F> {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Array2<F> {
        &mut self.values[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Array2<F>] {
        &self.values
    }

    pub fn total_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Hard copy of every array from `other`.
    pub fn copy_from(&mut self, other: &Self) -> Result<(), NnError> {
        if !self.same_layout(other) {
            return Err(NnError::ShapeMismatch {
                context: "parameter copy",
                expected: self.values.iter().map(|v| v.len()).collect(),
                got: other.values.iter().map(|v| v.len()).collect(),
            });
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.assign(src);
        }
        Ok(())
    }

    /// Replaces one array, keeping its shape.
    pub fn set(&mut self, idx: usize, value: Array2<F>) -> Result<(), NnError> {
        if value.shape() != self.values[idx].shape() {
            return Err(NnError::ShapeMismatch {
                context: "parameter set",
                expected: self.values[idx].shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        self.values[idx] = value;
        Ok(())
    }

    pub fn zeros_like(&self) -> Vec<Array2<F>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }
}
