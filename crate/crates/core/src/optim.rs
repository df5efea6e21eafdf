//! AdamW with bias correction and decoupled weight decay.

use crate::tensor::{NumError, Tensor};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over all parameters. `grads[i]` of `None` means the
    /// parameter did not participate in the loss; it still receives weight
    /// decay but no moment update from a gradient of zero would differ, so
    /// a zero gradient is assumed.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
    ) -> Result<(), NumError> {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state size mismatch");
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(NumError::NonFiniteGrad { index: i });
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let zero = Tensor::zeros(0, 0);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].unwrap_or(&zero);
            let pd = p.data_mut();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            for k in 0..pd.len() {
                let gk = if g.data().is_empty() { 0.0 } else { g.data()[k] };
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gk;
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = md[k] / bc1;
                let vhat = vd[k] / bc2;
                pd[k] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * pd[k]);
            }
        }
        Ok(())
    }
}
