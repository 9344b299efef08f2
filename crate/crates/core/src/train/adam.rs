use crate::error::{Error, Result};
use crate::tensor::{Float, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient to this global L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam with bias correction. Moments are kept for every parameter of the
/// store, zero-initialized, and only touched for the ids being stepped.
#[derive(Clone, Debug)]
pub struct Adam<T: Float> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor<T> {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &Tensor<T> {
        &self.v[id.index()]
    }

    /// Replaces the moments (e.g. from a checkpoint); shapes must match.
    pub fn restore(&mut self, t: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Usage(format!(
                "optimizer state has {} tensors, model has {}",
                m.len(),
                self.m.len()
            )));
        }
        for (old, new) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if old.shape() != new.shape() {
                return Err(Error::dim("adam restore", old.shape(), new.shape()));
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One update of `ids` from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, ids: &[ParamId]) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Usage("optimizer was built for a different parameter store".into()));
        }
        let c = &self.config;
        let mut scale = T::one();
        if let Some(max_norm) = c.clip_norm {
            let norm = ids
                .iter()
                .flat_map(|&id| store.grad(id).data())
                .map(|g| g.as_f64() * g.as_f64())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                scale = T::lit(max_norm / norm);
            }
        }
        self.t += 1;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for &id in ids {
            let p = store.param_mut(id);
            if p.grad.shape() != p.value.shape() {
                return Err(Error::dim("adam", p.value.shape(), p.grad.shape()));
            }
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                let g = g * scale;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
