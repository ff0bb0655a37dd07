use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || grads.len() != self.first.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![store.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in store.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in store.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(values));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(vec![0.5, -2.0]);
        let mut adam = Adam::new(0.1, &s);
        for _ in 0..3 {
            adam.step(&mut s, &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(s.tensors()[0].data(), &[0.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut s = store(vec![1.0, 1.0, 1.0]);
        let mut adam = Adam::new(1e-3, &s);
        adam.step(&mut s, &[Tensor::from_vec(vec![3.0, -0.02, 250.0])]).unwrap();
        let w = s.tensors()[0].data();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert!((w[2] - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn converges_on_a_convex_quadratic() {
        // f(w) = ‖w‖², ∇f = 2w, from ‖w₀‖ = 1. Constant-rate Adam settles
        // into an oscillation of amplitude ~lr around the optimum, so the
        // 100-step bound depends on the rate; 0.04 lands inside it.
        let mut s = store(vec![1.0]);
        let mut adam = Adam::new(0.04, &s);
        for _ in 0..100 {
            let g: Vec<f64> = s.tensors()[0].data().iter().map(|w| 2.0 * w).collect();
            adam.step(&mut s, &[Tensor::from_vec(g)]).unwrap();
        }
        let norm = s.tensors()[0].data().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "‖w‖ = {norm}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = store(vec![1.0, 2.0]);
        let mut adam = Adam::new(0.1, &s);
        assert!(adam.step(&mut s, &[Tensor::zeros(&[3])]).is_err());
        assert!(adam.step(&mut s, &[]).is_err());
    }
}
