use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamSet;

/// Lion coefficients for one parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LionHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Lion momentum for every parameter and the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub momentum: ParamSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            momentum: params.zeros_like(),
            step: 0,
        }
    }

    /// Fails unless the momentum has the names and shapes of `params`.
    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        let same = self.momentum.len() == params.len()
            && params
                .iter()
                .all(|(name, p)| self.momentum.get(name).is_some_and(|m| m.shape() == p.shape()));
        if same {
            Ok(())
        } else {
            Err(Error::Checkpoint("optimizer state does not match the parameters".into()))
        }
    }
}

/// One Lion update in place:
/// `u = sign(b1*m + (1-b1)*g)`, `p -= lr*(u + wd*p)`, `m = b2*m + (1-b2)*g`.
pub fn lion_step(params: &mut [f64], grads: &[f64], momentum: &mut [f64], hp: LionHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != momentum.len() {
        return Err(Error::arg(format!(
            "lion_step: lengths differ ({} params, {} grads, {} momentum)",
            params.len(),
            grads.len(),
            momentum.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("non-finite gradient at element {i}")));
    }
    for ((p, &g), m) in params.iter_mut().zip(grads).zip(momentum.iter_mut()) {
        let c = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        let u = if c > 0.0 {
            1.0
        } else if c < 0.0 {
            -1.0
        } else {
            0.0
        };
        *p -= hp.lr * (u + hp.weight_decay * *p);
        *m = hp.beta2 * *m + (1.0 - hp.beta2) * g;
    }
    Ok(())
}
