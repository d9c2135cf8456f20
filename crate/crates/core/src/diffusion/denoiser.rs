//! Transformer noise predictor over the `m` future steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::linear;
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

const P: &str = "denoiser";
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks: 2,
            ffn: 128,
            time_dim: 32,
            cond_dim: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.heads > 0
            && self.width % self.heads == 0
            && self.ffn > 0
            && self.time_dim >= 2
            && self.time_dim % 2 == 0
            && self.cond_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid denoiser settings (width must divide by heads, time_dim must be even): {self:?}"
            )))
        }
    }
}

/// Registers denoiser weights. The output head starts at zero so an
/// untrained model predicts no noise.
pub fn init_denoiser<R: Rng + ?Sized>(
    store: &mut ParamStore,
    cfg: &DenoiserConfig,
    feature_dim: usize,
    scores: usize,
    m: usize,
    rng: &mut R,
) {
    let w = cfg.width;
    store.init_linear(&format!("{P}.cond"), feature_dim + scores, cfg.cond_dim, rng);
    store.init_linear(&format!("{P}.in"), 2 + cfg.time_dim + cfg.cond_dim, w, rng);
    store.init_uniform(&format!("{P}.pos"), &[m, w], 0.1, rng);
    for b in 0..cfg.blocks {
        for part in ["q", "k", "v", "o"] {
            store.init_linear(&format!("{P}.b{b}.{part}"), w, w, rng);
        }
        store.init_linear(&format!("{P}.b{b}.ff1"), w, cfg.ffn, rng);
        store.init_linear(&format!("{P}.b{b}.ff2"), cfg.ffn, w, rng);
    }
    store.insert(format!("{P}.out.w"), Tensor::zeros(&[w, 2]));
    store.insert(format!("{P}.out.b"), Tensor::zeros(&[2]));
}

/// Sinusoidal embedding of diffusion step `t`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}

/// Shape facts recovered from stored weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiserDims {
    pub cond_in: usize,
    pub m: usize,
}

pub fn denoiser_dims(store: &ParamStore) -> Result<DenoiserDims> {
    Ok(DenoiserDims {
        cond_in: store.require(&format!("{P}.cond.w"))?.shape()[0],
        m: store.require(&format!("{P}.pos"))?.shape()[0],
    })
}

/// Predicts noise `[B, 2m]` for noisy futures `y_t` (`[B, 2m]`).
///
/// `cond` is `[B, F + S]`: encoder features followed by scores mapped to
/// `[-1, 1]`. `steps` holds each row's diffusion step.
pub fn denoise(g: &mut Graph, store: &ParamStore, cfg: &DenoiserConfig, y_t: Var, cond: Var, steps: &[usize]) -> Result<Var> {
    let dims = denoiser_dims(store)?;
    let (b, m, w) = (steps.len(), dims.m, cfg.width);
    if g.shape(y_t) != [b, 2 * m] {
        return Err(Error::shape("denoise", format!("y_t is {:?}, expected [{b}, {}]", g.shape(y_t), 2 * m)));
    }
    if g.shape(cond) != [b, dims.cond_in] {
        return Err(Error::shape(
            "denoise",
            format!("condition is {:?}, expected [{b}, {}]", g.shape(cond), dims.cond_in),
        ));
    }
    let per_token: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, m)).collect();

    let c = linear(g, store, &format!("{P}.cond"), cond)?;
    let c = g.leaky_relu(c)?;
    let c = g.gather_rows(c, &per_token)?;

    let mut temb = Vec::with_capacity(b * m * cfg.time_dim);
    for t in steps {
        let e = time_embedding(*t, cfg.time_dim);
        for _ in 0..m {
            temb.extend_from_slice(&e);
        }
    }
    let temb = g.input(Tensor::matrix(b * m, cfg.time_dim, temb)?)?;
    let y = g.reshape(y_t, &[b * m, 2])?;

    let tokens = g.concat(&[y, temb, c], 1)?;
    let x = linear(g, store, &format!("{P}.in"), tokens)?;
    let pos = g.param(store, &format!("{P}.pos"))?;
    let token_pos: Vec<usize> = (0..b * m).map(|i| i % m).collect();
    let pos = g.gather_rows(pos, &token_pos)?;
    let mut x = g.add(x, pos)?;

    let dh = w / cfg.heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for blk in 0..cfg.blocks {
        let pre = format!("{P}.b{blk}");
        let h = g.layer_norm(x, LN_EPS)?;
        let q = linear(g, store, &format!("{pre}.q"), h)?;
        let k = linear(g, store, &format!("{pre}.k"), h)?;
        let v = linear(g, store, &format!("{pre}.v"), h)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let split = |g: &mut Graph, a: Var| -> Result<Var> {
                let s = g.slice(a, 1, hd * dh, dh)?;
                g.reshape(s, &[b, m, dh])
            };
            let qh = split(g, q)?;
            let kh = split(g, k)?;
            let vh = split(g, v)?;
            let kt = g.transpose(kh)?;
            let att = g.matmul(qh, kt)?;
            let att = g.scale(att, inv_sqrt)?;
            let att = g.softmax(att)?;
            let o = g.matmul(att, vh)?;
            heads.push(g.reshape(o, &[b * m, dh])?);
        }
        let cat = g.concat(&heads, 1)?;
        let o = linear(g, store, &format!("{pre}.o"), cat)?;
        x = g.add(x, o)?;

        let h = g.layer_norm(x, LN_EPS)?;
        let f = linear(g, store, &format!("{pre}.ff1"), h)?;
        let f = g.leaky_relu(f)?;
        let f = linear(g, store, &format!("{pre}.ff2"), f)?;
        x = g.add(x, f)?;
    }
    let h = g.layer_norm(x, LN_EPS)?;
    let out = linear(g, store, &format!("{P}.out"), h)?;
    g.reshape(out, &[b, 2 * m])
}
