use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::{Real, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Owns every trainable tensor of a model, addressed by id or dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) truncated to two standard deviations.
    TruncNormal(f64),
    /// He/Kaiming normal with the given fan-in, scaled by `gain`.
    KaimingFanIn {
        fan_in: usize,
        gain: f64,
    },
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        id
    }

    pub fn add_init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let value = init_tensor(shape, init, rng);
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `grad` into the accumulated gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        if grad.len() != p.value.numel() {
            return shape_err(
                "accumulate_grad",
                format!("{}: grad has {} values, param {}", p.name, grad.len(), p.value.numel()),
            );
        }
        match &mut p.grad {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                p.grad = Some(Tensor::new(p.value.shape().to_vec(), grad.to_vec())?);
            }
        }
        Ok(())
    }

    /// Replaces the value of a named parameter, checking the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let Some(id) = self.id(name) else {
            return invalid("set_value", format!("unknown parameter {name}"));
        };
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return shape_err(
                "set_value",
                format!("{name}: expected {:?}, got {:?}", p.value.shape(), value.shape()),
            );
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

pub fn init_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], init: Init, rng: &mut R) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape.to_vec()),
        Init::Ones => Tensor::full(shape.to_vec(), T::one()),
        Init::TruncNormal(std) => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            Tensor::from_fn(shape.to_vec(), |_| loop {
                let z: f64 = normal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::of(z * std);
                }
            })
        }
        Init::KaimingFanIn { fan_in, gain } => {
            let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape.to_vec(), |_| T::of(normal.sample(rng)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn accumulate_adds_up() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::zeros(vec![2]));
        s.accumulate_grad(id, &[1.0, 2.0]).unwrap();
        s.accumulate_grad(id, &[1.0, 2.0]).unwrap();
        assert_eq!(s.get(id).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
        s.zero_grad();
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn trunc_normal_stays_within_two_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f32> = init_tensor(&[1000], Init::TruncNormal(0.02), &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04 + 1e-7));
    }

    #[test]
    fn count_sums_all_elements() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.w", Tensor::zeros(vec![3, 4]));
        s.add("a.b", Tensor::zeros(vec![4]));
        s.add("c", Tensor::zeros(vec![5]));
        assert_eq!(s.count(), 21);
        assert_eq!(s.count_prefix("a."), 16);
    }
}
