//! Mean-aggregation message passing with a reconstruction head and a
//! pooled classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{Normalizer, INPUT_DIM};
use super::loss::{bce_with_logit, sigmoid, LossParts, LossWeights, LqMode};
use crate::error::{Error, Result};
use crate::powerflow::CHANNELS;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { hidden: 32, layers: 2 }
    }
}

/// Offsets of each parameter block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    /// Per message-passing layer: (input width, W_self, W_nb, bias).
    layers: Vec<(usize, usize, usize, usize)>,
    w_rec: usize,
    b_rec: usize,
    w_cls: usize,
    b_cls: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let h = arch.hidden;
        let mut off = 0;
        let mut layers = Vec::with_capacity(arch.layers);
        for l in 0..arch.layers {
            let d = if l == 0 { INPUT_DIM } else { h };
            let ws = off;
            let wn = ws + h * d;
            let b = wn + h * d;
            off = b + h;
            layers.push((d, ws, wn, b));
        }
        let w_rec = off;
        let b_rec = w_rec + CHANNELS * h;
        let w_cls = b_rec + CHANNELS;
        let b_cls = w_cls + h;
        Layout { layers, w_rec, b_rec, w_cls, b_cls, total: b_cls + 1 }
    }
}

/// Graph the model runs on: neighbour lists per bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub normalizer: Normalizer,
    layout: Layout,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Node states per layer, `h[0]` is the input.
    h: Vec<Vec<f64>>,
    /// Mean neighbour aggregate per layer.
    m: Vec<Vec<f64>>,
    /// Pooled final state.
    pooled: Vec<f64>,
    /// Reconstruction in standardized units, `N x CHANNELS`.
    pub xhat: Vec<f64>,
    pub logit: f64,
}

impl DetectorModel {
    /// Xavier-uniform weights, zero biases.
    pub fn new(arch: Architecture, normalizer: Normalizer, seed: u64) -> Result<Self> {
        if arch.hidden == 0 || arch.layers == 0 {
            return Err(Error::Config("detector needs at least one layer of positive width".into()));
        }
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = stream(seed, &[0xde7]);
        let h = arch.hidden;
        let mut fill = |start: usize, fan_in: usize, fan_out: usize, params: &mut [f64]| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = rng.random_range(-a..a);
            }
        };
        for &(d, ws, wn, _) in &layout.layers {
            fill(ws, d, h, &mut params);
            fill(wn, d, h, &mut params);
        }
        fill(layout.w_rec, h, CHANNELS, &mut params);
        fill(layout.w_cls, h, 1, &mut params);
        Ok(DetectorModel { arch, params, normalizer, layout })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_parts(arch: Architecture, params: Vec<f64>, normalizer: Normalizer) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::Training(format!("expected {} parameters, got {}", layout.total, params.len())));
        }
        Ok(DetectorModel { arch, params, normalizer, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn forward(&self, graph: &Graph, x: &[f64]) -> Forward {
        let n = graph.n();
        let hd = self.arch.hidden;
        let p = &self.params;
        let mut hs = vec![x.to_vec()];
        let mut ms = Vec::with_capacity(self.arch.layers);
        for &(d, ws, wn, b) in &self.layout.layers {
            let h = hs.last().unwrap();
            let mut m = vec![0.0; n * d];
            for v in 0..n {
                let nb = &graph.neighbors[v];
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                let row = &mut m[v * d..(v + 1) * d];
                for &u in nb {
                    for (r, &hu) in row.iter_mut().zip(&h[u * d..(u + 1) * d]) {
                        *r += hu * inv;
                    }
                }
            }
            let mut out = vec![0.0; n * hd];
            for v in 0..n {
                let hv = &h[v * d..(v + 1) * d];
                let mv = &m[v * d..(v + 1) * d];
                for k in 0..hd {
                    let wsk = &p[ws + k * d..ws + (k + 1) * d];
                    let wnk = &p[wn + k * d..wn + (k + 1) * d];
                    let mut s = p[b + k];
                    for j in 0..d {
                        s += wsk[j] * hv[j] + wnk[j] * mv[j];
                    }
                    out[v * hd + k] = s.tanh();
                }
            }
            ms.push(m);
            hs.push(out);
        }
        let hl = hs.last().unwrap();
        let mut xhat = vec![0.0; n * CHANNELS];
        for v in 0..n {
            let hv = &hl[v * hd..(v + 1) * hd];
            for c in 0..CHANNELS {
                let w = &p[self.layout.w_rec + c * hd..self.layout.w_rec + (c + 1) * hd];
                xhat[v * CHANNELS + c] = p[self.layout.b_rec + c] + w.iter().zip(hv).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut pooled = vec![0.0; hd];
        for v in 0..n {
            for k in 0..hd {
                pooled[k] += hl[v * hd + k] / n as f64;
            }
        }
        let wc = &p[self.layout.w_cls..self.layout.w_cls + hd];
        let logit = p[self.layout.b_cls] + wc.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
        Forward { h: hs, m: ms, pooled, xhat, logit }
    }

    pub fn logit(&self, graph: &Graph, x: &[f64]) -> f64 {
        self.forward(graph, x).logit
    }

    pub fn probability(&self, graph: &Graph, x: &[f64]) -> f64 {
        sigmoid(self.logit(graph, x))
    }

    /// Reconstruction mapped back to physical units.
    pub fn physical(&self, xhat: &[f64]) -> Vec<[f64; CHANNELS]> {
        let norm = &self.normalizer;
        xhat.chunks_exact(CHANNELS)
            .enumerate()
            .map(|(v, row)| std::array::from_fn(|c| row[c] * norm.std[v][c] + norm.mean[v][c]))
            .collect()
    }

    /// Loss of one sample; when `grad` is given, adds `scale` times the
    /// gradient of the total loss into it.
    pub fn loss_and_grad(
        &self,
        graph: &Graph,
        x: &[f64],
        observed: &[bool],
        label: f64,
        w: &LossWeights,
        grad: Option<(&mut [f64], f64)>,
    ) -> LossParts {
        let n = graph.n();
        let fwd = self.forward(graph, x);
        let phys = self.physical(&fwd.xhat);

        let bce = bce_with_logit(fwd.logit, label);
        let n_obs = observed.iter().filter(|&&o| o).count();
        let mut recon = 0.0;
        for v in 0..n {
            for c in 0..CHANNELS {
                if observed[v * CHANNELS + c] {
                    recon += (fwd.xhat[v * CHANNELS + c] - x[v * INPUT_DIM + c]).powi(2);
                }
            }
        }
        if n_obs > 0 {
            recon /= n_obs as f64;
        }
        // Physics residuals and their gradients w.r.t. the physical outputs.
        let mut lp = 0.0;
        let mut lq = 0.0;
        let mut dphys = vec![[0.0; CHANNELS]; n];
        let inv_n = 1.0 / n as f64;
        for (row, d) in phys.iter().zip(dphys.iter_mut()) {
            let [v, i, th, de, p, q] = *row;
            let phi = th - de;
            let (s, c) = phi.sin_cos();
            let rp = p - v * i * c;
            lp += rp * rp * inv_n;
            let gp = 2.0 * rp * inv_n;
            d[4] += gp;
            d[0] -= gp * i * c;
            d[1] -= gp * v * c;
            d[2] += gp * v * i * s;
            d[3] -= gp * v * i * s;
            let (f, df) = match w.lq_mode {
                LqMode::Sin => (s, c),
                LqMode::Cos => (c, -s),
            };
            let rq = q - v * i * f;
            lq += rq * rq * inv_n;
            let gq = 2.0 * rq * inv_n;
            d[5] += gq;
            d[0] -= gq * i * f;
            d[1] -= gq * v * f;
            d[2] -= gq * v * i * df;
            d[3] += gq * v * i * df;
        }
        let parts = LossParts::combine(bce, recon, lp, lq, w);
        if let Some((g, scale)) = grad {
            self.backward(graph, x, observed, label, w, &fwd, &dphys, n_obs, g, scale);
        }
        parts
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        graph: &Graph,
        x: &[f64],
        observed: &[bool],
        label: f64,
        w: &LossWeights,
        fwd: &Forward,
        dphys: &[[f64; CHANNELS]],
        n_obs: usize,
        g: &mut [f64],
        scale: f64,
    ) {
        let n = graph.n();
        let hd = self.arch.hidden;
        let p = &self.params;
        let lay = &self.layout;
        let norm = &self.normalizer;

        let dz = scale * w.lambda_data * (sigmoid(fwd.logit) - label);
        let rec_coef = if n_obs > 0 { scale * w.lambda_data * w.recon_weight * 2.0 / n_obs as f64 } else { 0.0 };
        let mut dxhat = vec![0.0; n * CHANNELS];
        for v in 0..n {
            for c in 0..CHANNELS {
                let k = v * CHANNELS + c;
                let mut d = scale * w.lambda_phy * dphys[v][c] * norm.std[v][c];
                if observed[k] {
                    d += rec_coef * (fwd.xhat[k] - x[v * INPUT_DIM + c]);
                }
                dxhat[k] = d;
            }
        }

        let hl = fwd.h.last().unwrap();
        let mut dh = vec![0.0; n * hd];
        for v in 0..n {
            let hv = &hl[v * hd..(v + 1) * hd];
            let dhv = &mut dh[v * hd..(v + 1) * hd];
            for c in 0..CHANNELS {
                let d = dxhat[v * CHANNELS + c];
                if d == 0.0 {
                    continue;
                }
                g[lay.b_rec + c] += d;
                let wrow = lay.w_rec + c * hd;
                for k in 0..hd {
                    g[wrow + k] += d * hv[k];
                    dhv[k] += d * p[wrow + k];
                }
            }
            for k in 0..hd {
                dhv[k] += dz * p[lay.w_cls + k] / n as f64;
            }
        }
        for k in 0..hd {
            g[lay.w_cls + k] += dz * fwd.pooled[k];
        }
        g[lay.b_cls] += dz;

        for (l, &(d, ws, wn, b)) in lay.layers.iter().enumerate().rev() {
            let h_in = &fwd.h[l];
            let h_out = &fwd.h[l + 1];
            let m = &fwd.m[l];
            let mut dpre = vec![0.0; n * hd];
            for i in 0..n * hd {
                dpre[i] = dh[i] * (1.0 - h_out[i] * h_out[i]);
            }
            let mut dh_in = vec![0.0; n * d];
            let mut dm = vec![0.0; n * d];
            for v in 0..n {
                let hv = &h_in[v * d..(v + 1) * d];
                let mv = &m[v * d..(v + 1) * d];
                for k in 0..hd {
                    let dp = dpre[v * hd + k];
                    if dp == 0.0 {
                        continue;
                    }
                    g[b + k] += dp;
                    for j in 0..d {
                        g[ws + k * d + j] += dp * hv[j];
                        g[wn + k * d + j] += dp * mv[j];
                        dh_in[v * d + j] += dp * p[ws + k * d + j];
                        dm[v * d + j] += dp * p[wn + k * d + j];
                    }
                }
            }
            if l == 0 {
                break;
            }
            for v in 0..n {
                let nb = &graph.neighbors[v];
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                for &u in nb {
                    for j in 0..d {
                        dh_in[u * d + j] += dm[v * d + j] * inv;
                    }
                }
            }
            dh = dh_in;
        }
    }
}
