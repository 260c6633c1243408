use super::tape::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |_: ()| -> Vec<Option<Tensor>> {
            store
                .iter()
                .map(|(_, e)| e.trainable.then(|| Tensor::zeros(e.value.shape())))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(()),
            second: zeros(()),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(dim_err!(
                "optimizer tracks {} parameters, store has {}, gradients {}",
                self.first.len(),
                store.len(),
                grads.len()
            ));
        }
        for (id, g) in grads.iter() {
            if g.shape() != store.get(id).shape() {
                return Err(dim_err!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.entry(id).name,
                    store.get(id).shape()
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let (Some(m), Some(v)) = (&mut self.first[id.0], &mut self.second[id.0]) else {
                continue;
            };
            let p = store.get_mut(id).data_mut();
            for (((pv, mv), vv), &gv) in p
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tape::Tape;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::filled(&[1], w), true);
        s
    }

    fn grad_of_square(store: &ParamStore) -> Gradients {
        let id = store.id("w").unwrap();
        let mut tape = Tape::new();
        let w = tape.param(store, id);
        // d/dw of (2·w0)·w is 2·w0, the derivative of w² at w0
        let twice: Vec<f64> = store.get(id).data().iter().map(|v| 2.0 * v).collect();
        let lin = tape.mul_const(w, twice).unwrap();
        let loss = tape.sum_all(lin);
        tape.backward(loss, store).unwrap()
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = scalar_store(0.7);
        let mut adam = AdamState::new(&store, 1e-3);
        let zeros = Gradients::zeros_like(&store);
        for _ in 0..5 {
            adam.step(&mut store, &zeros).unwrap();
        }
        assert_eq!(store.get(store.id("w").unwrap()).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(2.0);
        let mut adam = AdamState::new(&store, 1e-3);
        let g = grad_of_square(&store);
        adam.step(&mut store, &g).unwrap();
        let w = store.get(store.id("w").unwrap()).data()[0];
        assert!(((2.0 - w) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn matches_scalar_oracle_on_square() {
        // hand-rolled scalar Adam on f(w) = w², w0 = 1
        let (lr, b1, b2, eps) = (1e-3, 0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(&store, lr);
        for _ in 0..3 {
            let g = grad_of_square(&store);
            adam.step(&mut store, &g).unwrap();
        }
        let got = store.get(store.id("w").unwrap()).data()[0];
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        assert_eq!(adam.steps_taken(), 3);
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(&store, 1e-3);
        let mut other = ParamStore::new();
        other.add("a", Tensor::filled(&[1], 0.0), true);
        other.add("b", Tensor::filled(&[1], 0.0), true);
        let g = Gradients::zeros_like(&other);
        assert!(adam.step(&mut store, &g).is_err());
    }
}
