use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::synth::LcgState;
use crate::tensor::{Real, Tensor};

/// One learnable tensor with its gradient and ADAM moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.dims());
        Param {
            name: name.into(),
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
        }
    }
}

/// Named parameters in insertion order.
///
/// `generation` advances on every optimiser step so forward caches taken
/// against older weights can be detected.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
    generation: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { params: Vec::new(), generation: 0 }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::param(format!("duplicate parameter '{name}'")));
        }
        self.params.push(Param::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn param(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn param_mut(&mut self, index: usize) -> &mut Param<T> {
        &mut self.params[index]
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.params[index].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Fresh zero gradient buffers shaped like the parameters.
    pub fn grad_buffers(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros(p.value.dims())).collect()
    }

    /// Adds `grads` (aligned with parameter order) into the stored gradients.
    pub fn accumulate(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::dim(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    /// Same parameters converted to another precision. Moments and grads are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param::new(p.name.clone(), p.value.cast()))
                .collect(),
            generation: self.generation,
        }
    }

    pub fn check_matches(&self, model: &ModelSpec) -> Result<()> {
        let shapes = model.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(Error::dim(format!(
                "model has {} parameters, store has {}",
                shapes.len(),
                self.params.len()
            )));
        }
        for (s, p) in shapes.iter().zip(&self.params) {
            if s.name != p.name || s.dims != p.value.dims() {
                return Err(Error::dim(format!(
                    "parameter '{}' {:?} does not match model entry '{}' {:?}",
                    p.name,
                    p.value.dims(),
                    s.name,
                    s.dims
                )));
            }
        }
        Ok(())
    }
}

/// He-normal kernels (`std = sqrt(2 / fan_in)`) from the LCG stream; zero biases.
pub fn init_params<T: Real>(model: &ModelSpec, rng: &mut LcgState) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for shape in model.param_shapes() {
        let value = if shape.is_bias {
            Tensor::zeros(&shape.dims)
        } else {
            let std = (2.0 / shape.fan_in as f64).sqrt();
            Tensor::from_fn(&shape.dims, |_| T::lit(std * rng.gaussian()))
        };
        store.insert(shape.name, value).expect("model parameter names are unique");
    }
    store
}
