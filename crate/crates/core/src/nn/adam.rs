use ndarray::{Array2, Zip};

use super::{Grads, NnError, ParamSet, Real};

/// Adam optimiser state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<F>>,
    pub v: Vec<Array2<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamSet<F>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<F>, grads: &Grads<F>) -> Result<(), NnError> {
        let shapes_ok = grads.values.len() == params.len()
            && self.m.len() == params.len()
            && (0..params.len()).all(|i| {
                grads.values[i].shape() == params.get(i).shape()
                    && self.m[i].shape() == params.get(i).shape()
            });
        if !shapes_ok {
            return Err(NnError::ShapeMismatch {
                context: "adam update",
                expected: (0..params.len()).map(|i| params.get(i).len()).collect(),
                got: grads.values.iter().map(|g| g.len()).collect(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - self.beta1), F::lit(1.0 - self.beta2));
        let bc1 = F::lit(1.0 - self.beta1.powi(t));
        let bc2 = F::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (F::lit(self.lr), F::lit(self.eps));
        for i in 0..params.len() {
            Zip::from(params.get_mut(i))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads.values[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
