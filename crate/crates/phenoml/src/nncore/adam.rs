use super::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// Per-tensor first/second moment estimates plus the shared step counter.
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Tensor2D>,
    v: Vec<Tensor2D>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor2D], cfg: AdamConfig) -> Self {
        let m = params.iter().map(|p| Tensor2D::zeros(p.rows(), p.cols())).collect();
        let v = params.iter().map(|p| Tensor2D::zeros(p.rows(), p.cols())).collect();
        AdamState { cfg, m, v, t: 0 }
    }

    /// One bias-corrected update, in place.
    pub fn step(&mut self, params: &mut [Tensor2D], grads: &[Tensor2D]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (((pv, &gv), mv), vv) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
