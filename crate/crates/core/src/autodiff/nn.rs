//! Layer helpers built from graph ops. Parameters are looked up by name prefix.

use rand::Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// `x · {prefix}.w + {prefix}.b`.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Registers GRU cell parameters with the PyTorch-style `±1/sqrt(hidden)` init.
pub fn init_gru<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) {
    let k = 1.0 / (hidden as f64).sqrt();
    store.init_uniform(&format!("{prefix}.wx"), &[input, 3 * hidden], k, rng);
    store.init_uniform(&format!("{prefix}.wh"), &[hidden, 3 * hidden], k, rng);
    store.init_uniform(&format!("{prefix}.bx"), &[3 * hidden], k, rng);
    store.init_uniform(&format!("{prefix}.bh"), &[3 * hidden], k, rng);
}

/// One GRU step: `x` is `[B, input]`, `h` is `[B, hidden]`.
///
/// Gate layout along the `3·hidden` axis is update, reset, candidate.
pub fn gru_step(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let hidden = g.shape(h)[1];
    let wx = g.param(store, &format!("{prefix}.wx"))?;
    let wh = g.param(store, &format!("{prefix}.wh"))?;
    let bx = g.param(store, &format!("{prefix}.bx"))?;
    let bh = g.param(store, &format!("{prefix}.bh"))?;
    let gx = g.matmul(x, wx)?;
    let gx = g.add_row(gx, bx)?;
    let gh = g.matmul(h, wh)?;
    let gh = g.add_row(gh, bh)?;

    let zx = g.slice(gx, 1, 0, hidden)?;
    let zh = g.slice(gh, 1, 0, hidden)?;
    let z = g.add(zx, zh)?;
    let z = g.sigmoid(z)?;

    let rx = g.slice(gx, 1, hidden, hidden)?;
    let rh = g.slice(gh, 1, hidden, hidden)?;
    let r = g.add(rx, rh)?;
    let r = g.sigmoid(r)?;

    let nx = g.slice(gx, 1, 2 * hidden, hidden)?;
    let nh = g.slice(gh, 1, 2 * hidden, hidden)?;
    let nh = g.mul(r, nh)?;
    let n = g.add(nx, nh)?;
    let n = g.tanh(n)?;

    // h' = (1 - z)·n + z·h
    let d = g.sub(h, n)?;
    let zd = g.mul(z, d)?;
    g.add(n, zd)
}
