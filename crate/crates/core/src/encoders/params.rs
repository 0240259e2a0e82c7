use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named parameter tensors stored back to back in one flat vector.
/// Gradients use the same flat layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            specs: Vec::new(),
            data: Vec::new(),
            seed,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], mut init: impl FnMut() -> f64) -> ParamId {
        assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        let spec = TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        self.data.extend((0..spec.len()).map(|_| init()));
        self.specs.push(spec);
        ParamId(self.specs.len() - 1)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let s = &self.specs[id.0];
        s.offset..s.offset + s.len()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.range(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.data[r]
    }

    /// The part of a flat gradient vector belonging to `id`.
    pub fn slice_mut<'g>(&self, grad: &'g mut [f64], id: ParamId) -> &'g mut [f64] {
        &mut grad[self.range(id)]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Name of the tensor holding flat index `k`.
    pub fn tensor_of(&self, k: usize) -> &str {
        self.specs
            .iter()
            .find(|s| k >= s.offset && k < s.offset + s.len())
            .map(|s| s.name.as_str())
            .unwrap_or("?")
    }

    /// Fails with the name of the first tensor containing a non-finite entry of `values`.
    pub fn check_finite(&self, values: &[f64], gradient: bool) -> Result<()> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let name = self.tensor_of(k).to_string();
            return Err(if gradient {
                Error::NonFiniteGradient(name)
            } else {
                Error::Parameter(format!("non-finite value in parameter tensor `{name}`"))
            });
        }
        Ok(())
    }

    /// Replaces all values, checking the layout matches.
    pub fn load(&mut self, specs: &[TensorSpec], data: Vec<f64>) -> Result<()> {
        if specs != self.specs.as_slice() || data.len() != self.data.len() {
            return Err(Error::Shape(
                "parameter layout does not match the model".into(),
            ));
        }
        self.check_finite(&data, false)?;
        self.data = data;
        Ok(())
    }
}
