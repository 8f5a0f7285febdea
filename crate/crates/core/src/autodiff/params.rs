use super::tape::{Gradients, Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors with their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F = f32> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    grads: Vec<Option<Vec<F>>>,
    frozen: Vec<bool>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            frozen: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(None);
        self.frozen.push(false);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn grad(&self, id: ParamId) -> Option<&[F]> {
        self.grads[id.0].as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Frozen parameters are bound as constants and skipped by [`sgd_step`].
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`; returns one [`Var`] per parameter,
    /// indexable by `ParamId::index`.
    pub fn bind(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.values
            .iter()
            .zip(&self.frozen)
            .map(|(v, frozen)| {
                if *frozen {
                    tape.constant(v.clone())
                } else {
                    tape.param(v.clone())
                }
            })
            .collect()
    }

    /// Records every parameter as a constant.
    pub fn bind_constant(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect()
    }

    /// Adds the gradients of a backward pass into the stored grads. Trainable
    /// parameters the loss does not depend on receive an explicit zero.
    pub fn accumulate(&mut self, grads: &Gradients<F>, vars: &[Var]) {
        for (i, var) in vars.iter().enumerate() {
            if self.frozen[i] {
                continue;
            }
            let n = self.values[i].len();
            let slot = self.grads[i].get_or_insert_with(|| vec![F::zero(); n]);
            if let Some(g) = grads.get(*var) {
                for (s, v) in slot.iter_mut().zip(g) {
                    *s += *v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Copies values of every parameter whose name `source` also holds.
    pub fn copy_matching(&mut self, source: &ParamSet<F>, filter: impl Fn(&str) -> bool) {
        for (i, name) in self.names.iter().enumerate() {
            if !filter(name) {
                continue;
            }
            if let Some(j) = source.find(name) {
                self.values[i] = source.values[j.0].clone();
            }
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: vec![None; self.values.len()],
            frozen: self.frozen.clone(),
        }
    }

    /// Order-sensitive FNV-1a hash of names and value bits of the selected parameters.
    pub fn checksum(&self, filter: impl Fn(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, v) in self.iter() {
            if !filter(name) {
                continue;
            }
            name.bytes().for_each(&mut eat);
            for x in v.data() {
                x.as_f64()
                    .to_bits()
                    .to_le_bytes()
                    .into_iter()
                    .for_each(&mut eat);
            }
        }
        h
    }
}

/// `p <- p - lr * grad` for every trainable parameter, then clears all grads.
pub fn sgd_step<F: Scalar>(params: &mut ParamSet<F>, learning_rate: F) -> Result<()> {
    for i in 0..params.values.len() {
        if params.frozen[i] {
            continue;
        }
        if params.grads[i].is_none() {
            return Err(Error::Contract(format!(
                "sgd_step: parameter '{}' has no gradient",
                params.names[i]
            )));
        }
    }
    for i in 0..params.values.len() {
        if params.frozen[i] {
            continue;
        }
        let g = params.grads[i].as_ref().unwrap();
        for (p, gv) in params.values[i].data_mut().iter_mut().zip(g) {
            *p -= learning_rate * *gv;
        }
    }
    params.zero_grads();
    Ok(())
}

/// Adam moment estimates for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        let zeros: Vec<Vec<F>> = params
            .values
            .iter()
            .map(|v| vec![F::zero(); v.len()])
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// Bias-corrected Adam update of every trainable parameter, then clears all grads.
    pub fn step(&mut self, params: &mut ParamSet<F>, learning_rate: f64) -> Result<()> {
        if self.m.len() != params.values.len() {
            return Err(Error::Contract(
                "optimizer state belongs to a different parameter set".into(),
            ));
        }
        for i in 0..params.values.len() {
            if !params.frozen[i] && params.grads[i].is_none() {
                return Err(Error::Contract(format!(
                    "adam step: parameter '{}' has no gradient",
                    params.names[i]
                )));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let step =
            learning_rate * (1.0 - b2.powi(self.t as i32)).sqrt() / (1.0 - b1.powi(self.t as i32));
        let (b1, b2, step, eps) = (F::c(b1), F::c(b2), F::c(step), F::c(self.eps));
        for i in 0..params.values.len() {
            if params.frozen[i] {
                continue;
            }
            let g = params.grads[i].as_ref().unwrap();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, gv), mi), vi) in params.values[i]
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (F::one() - b1) * *gv;
                *vi = b2 * *vi + (F::one() - b2) * *gv * *gv;
                *p -= step * *mi / (vi.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
