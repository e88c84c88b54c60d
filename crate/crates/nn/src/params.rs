use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Rc<ArrayD<T>>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Named parameter arrays. Non-trainable entries hold running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite initial value in {name}"
        );
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value: Rc::new(value),
            trainable,
        });
        ParamId(id)
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|i| &self.params[i.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: ArrayD<T>) {
        assert_eq!(
            value.shape(),
            self.params[id.0].value.shape(),
            "shape change for {}",
            self.params[id.0].name
        );
        self.params[id.0].value = Rc::new(value);
    }

    pub(crate) fn values(&self) -> Vec<Rc<ArrayD<T>>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Trainable scalars whose name starts with `prefix` (all for "").
    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable && p.name.starts_with(prefix))
            .map(|p| p.numel())
            .sum()
    }

    /// Same parameters converted to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Rc::new(p.value.mapv(|v| U::c(v.f64()))),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Uniform in [-bound, bound].
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> ArrayD<T> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| T::c(rng.gen_range(-bound..=bound)))
}

/// Fan-in scaled uniform initialisation, bound 1/sqrt(fan_in).
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<T> {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}
