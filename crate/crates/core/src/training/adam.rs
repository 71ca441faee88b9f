use crate::error::{GpnError, Result};

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-parameter decay coefficient.
    weight_decay: Vec<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// `sizes[i]` is the length of parameter `i`; `weight_decay[i]` its decay.
    pub fn new(lr: f64, sizes: &[usize], weight_decay: Vec<f64>) -> Result<Self> {
        if sizes.len() != weight_decay.len() {
            return Err(GpnError::Parameter("one weight decay per parameter required".into()));
        }
        if !(lr > 0.0) {
            return Err(GpnError::Parameter(format!("learning rate {lr} must be positive")));
        }
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn weight_decay(&self) -> &[f64] {
        &self.weight_decay
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(GpnError::shape("parameter list does not match optimizer state"));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() || params[i].len() != self.m[i].len() {
                return Err(GpnError::shape(format!("parameter {i} changed size")));
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(GpnError::Numeric(format!("non-finite gradient {bad} in parameter {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let wd = self.weight_decay[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let g = grads[i][k] + wd * p[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
