use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamStore;
use crate::tensor::{Float, Tensor};
use crate::vsgc::{Blob, Payload};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient (`g + λ w`) before the moments.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn gan() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor in
/// store order.
#[derive(Clone, Debug)]
pub struct Adam<F: Float = f64> {
    config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    steps: u64,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| vec![F::zero(); p.numel()])
                .collect()
        };
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One update of every parameter with the matching gradient.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.steps += 1;
        let c = &self.config;
        let (b1, b2) = (F::num(c.beta1), F::num(c.beta2));
        let bc1 = F::num(1.0 - c.beta1.powi(self.steps as i32));
        let bc2 = F::num(1.0 - c.beta2.powi(self.steps as i32));
        let (lr, eps, wd) = (F::num(lr), F::num(c.eps), F::num(c.weight_decay));
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let w = params.get(id).data();
            let g = grads[k].data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut next = Vec::with_capacity(w.len());
            for i in 0..w.len() {
                let gi = g[i] + wd * w[i];
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                next.push(w[i] - lr * mh / (vh.sqrt() + eps));
            }
            params.set(id, next);
        }
    }

    /// `[m_0, v_0, m_1, v_1, ...]` followed by nothing else; the step count
    /// travels separately.
    pub fn to_blobs(&self) -> Vec<Blob> {
        self.m
            .iter()
            .zip(&self.v)
            .flat_map(|(m, v)| {
                [m, v].map(|x| Blob {
                    dims: vec![x.len()],
                    payload: Payload::F64(x.iter().map(|a| a.as_f64()).collect()),
                })
            })
            .collect()
    }

    pub fn load_blobs(&mut self, blobs: &[Blob], steps: u64) -> Result<()> {
        if blobs.len() != 2 * self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer state has {} tensors, expected {}",
                blobs.len(),
                2 * self.m.len()
            )));
        }
        for (k, pair) in blobs.chunks_exact(2).enumerate() {
            for (slot, blob) in [&mut self.m[k], &mut self.v[k]].into_iter().zip(pair) {
                let Payload::F64(vals) = &blob.payload else {
                    return Err(Error::invalid("optimizer moments must be f64"));
                };
                if vals.len() != slot.len() {
                    return Err(Error::shape(format!(
                        "moment {k} has {} values, expected {}",
                        vals.len(),
                        slot.len()
                    )));
                }
                *slot = vals.iter().map(|&x| F::num(x)).collect();
            }
        }
        self.steps = steps;
        Ok(())
    }

    pub fn bit_equal(&self, other: &Self) -> bool {
        let eq = |a: &Vec<Vec<F>>, b: &Vec<Vec<F>>| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.len() == y.len()
                        && x.iter()
                            .zip(y)
                            .all(|(p, q)| p.as_f64().to_bits() == q.as_f64().to_bits())
                })
        };
        self.steps == other.steps && eq(&self.m, &other.m) && eq(&self.v, &other.v)
    }
}
