use crate::tensor::{ParamStore, Tensor};

/// Adam optimizer state, one moment pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients accumulated in `store`.
    pub fn update(&mut self, store: &mut ParamStore) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for a different store");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((x, &g), mi), vi) in value.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, &v) in values.iter().enumerate() {
            s.add(format!("p{i}"), Tensor::from_vec(vec![v]));
        }
        s
    }

    fn set_grads(s: &mut ParamStore, g: &[f64]) {
        for (p, &gi) in s.iter_mut().zip(g) {
            p.grad.data_mut()[0] = gi;
        }
    }

    #[test]
    fn first_step_from_zero() {
        let mut s = store_with(&[0.0]);
        set_grads(&mut s, &[1.0]);
        let mut adam = AdamState::new(&s, 0.1);
        adam.update(&mut s);
        let x = s.flatten()[0];
        assert!((x - -0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((x - -0.0999999995).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let mut s = store_with(&[0.25, -3.0]);
        let mut adam = AdamState::new(&s, 0.1);
        for _ in 0..5 {
            adam.update(&mut s);
        }
        assert_eq!(s.flatten(), vec![0.25, -3.0]);
    }

    #[test]
    fn zero_learning_rate_is_inert() {
        let mut s = store_with(&[0.5, 1.5]);
        let mut adam = AdamState::new(&s, 0.0);
        for k in 0..4 {
            set_grads(&mut s, &[k as f64, -2.0]);
            adam.update(&mut s);
        }
        assert_eq!(s.flatten(), vec![0.5, 1.5]);
    }

    #[test]
    fn identical_histories_evolve_identically() {
        let mut s = store_with(&[0.7, 0.7]);
        let mut adam = AdamState::new(&s, 0.01);
        for g in [0.3, -1.2, 4.0, 0.0, 0.5] {
            set_grads(&mut s, &[g, g]);
            adam.update(&mut s);
        }
        let f = s.flatten();
        assert_eq!(f[0].to_bits(), f[1].to_bits());
        assert_eq!(adam.step, 5);
    }
}
