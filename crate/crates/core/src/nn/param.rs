use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Real;

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> Param<F> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![F::zero(); n],
            grad: vec![F::zero(); n],
        }
    }

    /// Uniform in `[-bound, bound]`; values are drawn in f64 so f32 and f64
    /// models built from one seed agree up to rounding.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in p.value.iter_mut() {
            *v = F::lit(rng.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn cast<G: Real>(&self) -> Param<G> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| G::lit(v.as_f64())).collect(),
            grad: vec![G::zero(); self.value.len()],
        }
    }
}

/// Anything that owns parameters.
pub trait Module<F: Real> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}
