use serde::{Deserialize, Serialize};

use crate::powerflow::CHANNELS;

/// Reactive residual form. `Sin` is the AC identity `Q = V I sin(theta - delta)`;
/// `Cos` reproduces the cosine form printed alongside the active residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LqMode {
    #[default]
    Sin,
    Cos,
}

/// `(L_P, L_Q)` for per-bus `[V, I, theta, delta, P, Q]` rows:
/// `L_P = (1/N) sum |P - V I cos(theta - delta)|^2` and the reactive analogue.
pub fn physics_residuals(x: &[[f64; CHANNELS]], mode: LqMode) -> (f64, f64) {
    let n = x.len() as f64;
    let mut lp = 0.0;
    let mut lq = 0.0;
    for &[v, i, th, de, p, q] in x {
        let phi = th - de;
        lp += (p - v * i * phi.cos()).powi(2);
        let reactive = match mode {
            LqMode::Sin => phi.sin(),
            LqMode::Cos => phi.cos(),
        };
        lq += (q - v * i * reactive).powi(2);
    }
    (lp / n, lq / n)
}

/// Loss weights and settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_data: f64,
    pub lambda_phy: f64,
    /// Weight of the observed-channel reconstruction term inside `L_Data`.
    pub recon_weight: f64,
    pub lq_mode: LqMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_data: 1.0, lambda_phy: 0.2, recon_weight: 0.1, lq_mode: LqMode::Sin }
    }
}

/// Components of the total loss, averaged over the samples they cover.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub bce: f64,
    pub recon: f64,
    pub l_data: f64,
    pub l_p: f64,
    pub l_q: f64,
    pub total: f64,
}

impl LossParts {
    pub fn combine(bce: f64, recon: f64, l_p: f64, l_q: f64, w: &LossWeights) -> Self {
        let l_data = bce + w.recon_weight * recon;
        LossParts { bce, recon, l_data, l_p, l_q, total: total_loss(l_data, l_p, l_q, w) }
    }

    pub fn accumulate(&mut self, other: &LossParts, scale: f64) {
        self.bce += scale * other.bce;
        self.recon += scale * other.recon;
        self.l_data += scale * other.l_data;
        self.l_p += scale * other.l_p;
        self.l_q += scale * other.l_q;
        self.total += scale * other.total;
    }
}

/// `L_T = lambda_data * L_Data + lambda_phy * (L_P + L_Q)`.
pub fn total_loss(l_data: f64, l_p: f64, l_q: f64, w: &LossWeights) -> f64 {
    w.lambda_data * l_data + w.lambda_phy * (l_p + l_q)
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
