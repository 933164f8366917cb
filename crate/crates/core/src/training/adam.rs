use crate::error::{Error, Result};
use crate::model::{ParamGrads, TinyModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates, one `m`/`v` buffer per
/// parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Result<Self> {
        config.validate()?;
        let m: Vec<Vec<f64>> = shapes.into_iter().map(|len| vec![0.0; len]).collect();
        Ok(Self {
            config,
            t: 0,
            v: m.clone(),
            m,
        })
    }

    pub fn for_model(config: AdamConfig, model: &TinyModel) -> Result<Self> {
        Self::new(config, model.parameters().iter().map(|t| t.len()))
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "adam tensors",
                self.m.len(),
                if params.len() != self.m.len() { params.len() } else { grads.len() },
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                let bad = if p.len() != m.len() { p.len() } else { g.len() };
                return Err(Error::dim("adam tensor", m.len(), bad));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut TinyModel, grads: &ParamGrads) -> Result<()> {
        self.step(&mut model.parameters_mut(), grads.tensors())
    }
}
