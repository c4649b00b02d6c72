use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{device, DTYPE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// U(-bound, bound)
    Uniform(f64),
    /// N(0, std²)
    Normal(f64),
}

/// Named trainable tensors with deterministic, seeded initialisation.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Creates the variable on first use; later calls with the same name
    /// share it.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(var) = self.vars.get(name) {
            if var.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} exists with shape {:?}, requested {shape:?}",
                    var.dims()
                )));
            }
            return Ok(var.as_tensor().clone());
        }
        let count: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; count],
            Init::Ones => vec![1.0; count],
            Init::Uniform(b) => (0..count).map(|_| self.rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => (0..count)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    z * std
                })
                .collect(),
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &device())?.to_dtype(DTYPE)?)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(tensor)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Flat f64 values of one parameter.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {name}")))?;
        Ok(var.as_tensor().flatten_all()?.to_vec1::<f64>()?)
    }

    /// Overwrites one parameter in place, keeping every layer's handle valid.
    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {name}")))?;
        if values.len() != var.elem_count() {
            return Err(Error::Shape(format!(
                "{name}: {} values for {} elements",
                values.len(),
                var.elem_count()
            )));
        }
        let t = Tensor::from_slice(values, var.dims(), &device())?;
        var.set(&t)?;
        Ok(())
    }
}
