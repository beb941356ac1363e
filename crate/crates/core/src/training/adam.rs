use crate::numerics::ParamSet;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<S: ParamSet>(lr: f64, params: &S) -> Self {
        let zeros: Vec<Vec<f64>> = params.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently accumulated in `params`.
    pub fn step<S: ParamSet>(&mut self, params: &mut S) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (((x, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}
