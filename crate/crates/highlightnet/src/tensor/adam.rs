use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPS: f32 = 1e-8;

/// ADAM optimizer state: first/second moment buffers per parameter plus the
/// global step count. Moment hyperparameters are the standard defaults
/// (beta1 0.9, beta2 0.999, epsilon 1e-8).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    /// Zero-initialized state for the given parameter list. The order of
    /// `params` is the contract: every later [`AdamState::step`] must pass
    /// the same parameters in the same order.
    pub fn for_params(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Rebuilds state from checkpointed buffers.
    pub fn from_buffers(m: Vec<Vec<f32>>, v: Vec<Vec<f32>>, t: u64) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid_state("adam moment buffers are inconsistent".to_string()));
        }
        Ok(AdamState { m, v, t })
    }

    /// Applies one bias-corrected ADAM update in place. Every parameter must
    /// carry a gradient (see [`Tensor::set_grad`]).
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f32) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid_state(format!(
                "adam state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match p.grad() {
                Some(g) if g.len() == p.numel() => {}
                Some(_) => {
                    return Err(Error::invalid_state(format!("parameter {i} has a grad of the wrong size")))
                }
                None => return Err(Error::invalid_state(format!("parameter {i} has no gradient"))),
            }
            if self.m[i].len() != p.numel() {
                return Err(Error::invalid_state(format!("adam buffers for parameter {i} have the wrong size")));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);

        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad().expect("validated above").to_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..g.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
