//! Adam with optional global-norm clipping and decoupled weight decay.

use ctma_autograd::{Float, Tensor};

use crate::config::TrainOptions;
use crate::nn::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self::from(&TrainOptions::default())
    }
}

impl From<&TrainOptions> for AdamParams {
    fn from(o: &TrainOptions) -> Self {
        Self {
            beta1: o.adam_beta1,
            beta2: o.adam_beta2,
            eps: o.adam_eps,
            weight_decay: o.weight_decay,
            grad_clip: o.grad_clip,
        }
    }
}

/// First and second moment estimates, one slot per store entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub hyper: AdamParams,
    pub t: u64,
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Adam<T> {
    pub fn new(hyper: AdamParams, n_entries: usize) -> Self {
        Self { hyper, t: 0, m: vec![None; n_entries], v: vec![None; n_entries] }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(grads: &[(ParamId, Tensor<T>)]) -> f64 {
        grads
            .iter()
            .flat_map(|(_, g)| g.data().iter())
            .map(|&x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) {
        self.t += 1;
        let h = &self.hyper;
        let clip = if h.grad_clip > 0.0 {
            let n = Self::grad_norm(grads);
            if n > h.grad_clip {
                h.grad_clip / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        let (b1, b2) = (h.beta1, h.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (b1t, b2t, eps, lr_t) = (T::from_f64(b1), T::from_f64(b2), T::from_f64(h.eps), T::from_f64(lr));
        let (c1t, c2t, clip_t, wd) = (T::from_f64(c1), T::from_f64(c2), T::from_f64(clip), T::from_f64(h.weight_decay * lr));
        for (id, g) in grads {
            let i = id.index();
            let shape = g.shape().to_vec();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let p = store.get_mut(*id);
            for (((pk, &gk), mk), vk) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                let gk = gk * clip_t;
                *mk = b1t * *mk + (T::one() - b1t) * gk;
                *vk = b2t * *vk + (T::one() - b2t) * gk * gk;
                let mhat = *mk / c1t;
                let vhat = *vk / c2t;
                *pk -= wd * *pk + lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
