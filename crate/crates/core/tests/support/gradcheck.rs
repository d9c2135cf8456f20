//! Central finite-difference oracle for every registered graph op.
//!
//! Shared by the core gradient-check tests and the acceptance harness.

#![allow(dead_code)]

use ctd_core::autodiff::{Graph, Tensor, Var};
use ctd_core::Result;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub const OPS: &[&str] = &[
    "add", "sub", "mul", "add_row", "affine", "matmul", "matmul_batched", "transpose",
    "transpose_batched", "concat0", "concat1", "concat2", "slice", "sum", "mean", "square", "exp",
    "log", "tanh", "sigmoid", "leaky_relu", "softmax", "gather_rows", "reshape", "layer_norm",
];

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct Case {
    pub op: &'static str,
    pub inputs: Vec<Tensor>,
    build: Build,
}

fn dim<R: Rng>(rng: &mut R) -> usize {
    rng.random_range(1..=4)
}

fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Entries bounded away from zero, so kinks and poles stay outside the FD stencil.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], positive: bool) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if positive || rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random instance of `op` with random shapes.
pub fn case<R: Rng>(op: &'static str, rng: &mut R) -> Case {
    let (p, q, r) = (dim(rng), dim(rng), dim(rng));
    let b = dim(rng);
    let mk = |inputs: Vec<Tensor>, build: Build| Case { op, inputs, build };
    match op {
        "add" => mk(vec![rand_tensor(rng, &[p, q]), rand_tensor(rng, &[p, q])], Box::new(|g, v| g.add(v[0], v[1]))),
        "sub" => mk(vec![rand_tensor(rng, &[p, q]), rand_tensor(rng, &[p, q])], Box::new(|g, v| g.sub(v[0], v[1]))),
        "mul" => mk(vec![rand_tensor(rng, &[b, p, q]), rand_tensor(rng, &[b, p, q])], Box::new(|g, v| g.mul(v[0], v[1]))),
        "add_row" => mk(vec![rand_tensor(rng, &[b, p, q]), rand_tensor(rng, &[q])], Box::new(|g, v| g.add_row(v[0], v[1]))),
        "affine" => {
            let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
            mk(vec![rand_tensor(rng, &[p, q])], Box::new(move |g, v| g.affine(v[0], s, t)))
        }
        "matmul" => mk(vec![rand_tensor(rng, &[p, q]), rand_tensor(rng, &[q, r])], Box::new(|g, v| g.matmul(v[0], v[1]))),
        "matmul_batched" => mk(
            vec![rand_tensor(rng, &[b, p, q]), rand_tensor(rng, &[b, q, r])],
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        "transpose" => mk(vec![rand_tensor(rng, &[p, q])], Box::new(|g, v| g.transpose(v[0]))),
        "transpose_batched" => mk(vec![rand_tensor(rng, &[b, p, q])], Box::new(|g, v| g.transpose(v[0]))),
        "concat0" => mk(
            vec![rand_tensor(rng, &[p, q]), rand_tensor(rng, &[r, q])],
            Box::new(|g, v| g.concat(&[v[0], v[1]], 0)),
        ),
        "concat1" => mk(
            vec![rand_tensor(rng, &[p, q]), rand_tensor(rng, &[p, r]), rand_tensor(rng, &[p, b])],
            Box::new(|g, v| g.concat(&[v[0], v[1], v[2]], 1)),
        ),
        "concat2" => mk(
            vec![rand_tensor(rng, &[b, p, q]), rand_tensor(rng, &[b, p, r])],
            Box::new(|g, v| g.concat(&[v[0], v[1]], 2)),
        ),
        "slice" => {
            let shape = [b, p + 1, q];
            let axis = rng.random_range(0..3);
            let start = rng.random_range(0..shape[axis]);
            let len = rng.random_range(1..=shape[axis] - start);
            mk(vec![rand_tensor(rng, &shape)], Box::new(move |g, v| g.slice(v[0], axis, start, len)))
        }
        "sum" => mk(vec![rand_tensor(rng, &[p, q])], Box::new(|g, v| g.sum(v[0]))),
        "mean" => mk(vec![rand_tensor(rng, &[b, p, q])], Box::new(|g, v| g.mean(v[0]))),
        "square" => mk(vec![rand_tensor(rng, &[p, q])], Box::new(|g, v| g.square(v[0]))),
        "exp" => mk(vec![rand_tensor(rng, &[p, q])], Box::new(|g, v| g.exp(v[0]))),
        "log" => mk(vec![away_from_zero(rng, &[p, q], true)], Box::new(|g, v| g.log(v[0]))),
        "tanh" => mk(vec![rand_tensor(rng, &[p, q])], Box::new(|g, v| g.tanh(v[0]))),
        "sigmoid" => mk(vec![rand_tensor(rng, &[p, q])], Box::new(|g, v| g.sigmoid(v[0]))),
        "leaky_relu" => mk(vec![away_from_zero(rng, &[p, q], false)], Box::new(|g, v| g.leaky_relu(v[0]))),
        "softmax" => mk(vec![rand_tensor(rng, &[b, p, q + 1])], Box::new(|g, v| g.softmax(v[0]))),
        "gather_rows" => {
            let idx: Vec<usize> = (0..r + 2).map(|_| rng.random_range(0..p)).collect();
            mk(vec![rand_tensor(rng, &[p, q])], Box::new(move |g, v| g.gather_rows(v[0], &idx)))
        }
        "reshape" => mk(vec![rand_tensor(rng, &[p, q, r])], Box::new(move |g, v| g.reshape(v[0], &[p * q, r]))),
        "layer_norm" => mk(vec![rand_tensor(rng, &[p, q + 1])], Box::new(|g, v| g.layer_norm(v[0], 1e-5))),
        other => panic!("no gradcheck case for op `{other}`"),
    }
}

fn weighted_loss(case: &Case, weights: &[f64], inputs: &[Tensor], g: &mut Graph) -> Result<(Var, Vec<Var>)> {
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect::<Result<_>>()?;
    let out = (case.build)(g, &vars)?;
    let w = g.input(Tensor::new(g.shape(out).to_vec(), weights.to_vec())?)?;
    let p = g.mul(out, w)?;
    Ok((g.sum(p)?, vars))
}

/// Largest relative error between backward() and central finite differences
/// over every input element. The loss is a random weighting of the op output.
pub fn max_rel_error<R: Rng>(case: &Case, rng: &mut R) -> f64 {
    let mut probe = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| probe.input(t.clone()).unwrap()).collect();
    let out = (case.build)(&mut probe, &vars).unwrap();
    let weights: Vec<f64> = (0..probe.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let (loss, vars) = weighted_loss(case, &weights, &case.inputs, &mut g).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(&case.inputs)
        .map(|(v, t)| g.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |inputs: &[Tensor]| {
        let mut g = Graph::new();
        let (loss, _) = weighted_loss(case, &weights, inputs, &mut g).unwrap();
        g.value(loss).item()
    };
    let mut worst: f64 = 0.0;
    for (k, t) in case.inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}
