use super::network::{Gradients, Network};
use super::Real;
use crate::error::{Error, Result};

/// Adam optimiser state: one first/second moment buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> AdamState<F> {
    /// Zeroed moments for tensors of the given lengths.
    pub fn new(tensor_lens: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: tensor_lens.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn for_network(net: &Network<F>, lr: f64) -> Self {
        let lens: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::new(&lens, lr)
    }

    /// One update over parallel parameter/gradient tensors. Nothing is
    /// modified if any gradient is non-finite.
    pub fn apply(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam state has {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::Dimension(format!("tensor {k}: length mismatch")));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::TrainingDiverged {
                what: "gradient",
                epoch: 0,
                last_good: None,
            });
        }

        self.t += 1;
        let t = self.t as i32;
        let b1 = F::lit(self.beta1);
        let b2 = F::lit(self.beta2);
        let one = F::one();
        let corr1 = F::lit(1.0 - self.beta1.powi(t));
        let corr2 = F::lit(1.0 - self.beta2.powi(t));
        let lr = F::lit(self.lr);
        let eps = F::lit(self.eps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to every network parameter.
pub fn adam_step<F: Real>(
    net: &mut Network<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = net.tensors_mut();
    state.apply(&mut p, &g)
}
