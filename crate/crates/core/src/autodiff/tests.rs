use super::*;
use crate::Error;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(0.0)).unwrap();
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn identity_matmul_is_noop() {
    let mut g = Graph::new();
    let a = Tensor::matrix(3, 3, (0..9).map(|v| v as f64 * 1.5 - 4.0).collect()).unwrap();
    let i = g.input(Tensor::identity(3)).unwrap();
    let av = g.input(a.clone()).unwrap();
    let y = g.matmul(i, av).unwrap();
    assert_eq!(g.value(y), &a);
}

#[test]
fn softmax_of_one_zero() {
    // e/(e+1) and 1/(e+1)
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 0.0])).unwrap();
    let y = g.softmax(x).unwrap();
    assert!(close(g.value(y).data(), &[0.7310585786300049, 0.2689414213699951], 1e-15));
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let sq = g.square(x).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn sigmoid_dot_gradient_at_zero_weight() {
    let xs = vec![0.5, -1.0, 3.0];
    let mut g = Graph::new();
    let w = g.variable(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap()).unwrap();
    let x = g.input(Tensor::matrix(3, 1, xs.clone()).unwrap()).unwrap();
    let z = g.matmul(w, x).unwrap();
    let s = g.sigmoid(z).unwrap();
    g.backward(s).unwrap();
    let want: Vec<f64> = xs.iter().map(|v| 0.25 * v).collect();
    assert!(close(g.grad(w).unwrap().data(), &want, 1e-15));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let y = g.square(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(s)) if s == vec![2]));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(err.to_string().contains("[2, 3]"), "{err}");
    let c = g.input(Tensor::zeros(&[3, 2])).unwrap();
    assert!(g.add(a, c).unwrap_err().to_string().starts_with("add"));
    let bias = g.input(Tensor::zeros(&[2])).unwrap();
    assert!(g.add_row(a, bias).is_err());
    assert!(g.gather_rows(a, &[0, 2]).is_err());
}

#[test]
fn non_finite_results_are_errors() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert!(matches!(g.log(x), Err(Error::NonFinite { op: "log" })));
    assert!(g.input(Tensor::scalar(f64::NAN)).is_err());
}

#[test]
fn repeated_backward_after_zero_grad_is_idempotent() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![0.3, -0.7])).unwrap();
    let t = g.tanh(x).unwrap();
    let loss = g.sum(t).unwrap();
    g.backward(loss).unwrap();
    let first = g.grad(x).unwrap();
    g.backward(loss).unwrap();
    let doubled = g.grad(x).unwrap();
    assert!(close(doubled.data(), &first.data().iter().map(|v| 2.0 * v).collect::<Vec<_>>(), 1e-15));
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), first);
}

#[test]
fn frozen_params_get_no_gradient() {
    let mut store = ParamStore::new();
    store.insert("enc.w", Tensor::vector(vec![1.0]));
    store.insert("head.w", Tensor::vector(vec![2.0]));
    let mut g = Graph::new();
    g.freeze_prefix("enc.");
    let a = g.param(&store, "enc.w").unwrap();
    let b = g.param(&store, "head.w").unwrap();
    let p = g.mul(a, b).unwrap();
    let loss = g.sum(p).unwrap();
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    assert_eq!(grads.len(), 1);
    assert_eq!(grads["head.w"].data(), &[1.0]);
    assert_eq!(g.param(&store, "head.w").unwrap(), b);
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(vec![0.25, -3.0]));
    let before = store.clone();
    let mut adam = Adam::new(1e-3).unwrap();
    let grads = [("w".to_string(), Tensor::zeros(&[2]))].into_iter().collect();
    for _ in 0..10 {
        adam.step(&mut store, &grads).unwrap();
    }
    for (a, b) in store.get("w").unwrap().data().iter().zip(before.get("w").unwrap().data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(adam.steps(), 10);
}

#[test]
fn adam_constant_gradient_descends() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(vec![0.0, 0.0]));
    let mut adam = Adam::new(1e-2).unwrap();
    let grads = [("w".to_string(), Tensor::vector(vec![0.5, -2.0]))].into_iter().collect();
    for _ in 0..100 {
        adam.step(&mut store, &grads).unwrap();
    }
    let w = store.get("w").unwrap().data();
    assert!(w[0] < -0.5 && w[1] > 0.5, "{w:?}");
}

#[test]
fn adam_minimizes_quadratic() {
    // (w - 3)^2 from w = -2
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(-2.0));
    let mut adam = Adam::new(1e-2).unwrap();
    let mut converged_at = None;
    for step in 0..2000 {
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let d = g.affine(w, 1.0, -3.0).unwrap();
        let loss = g.square(d).unwrap();
        g.backward(loss).unwrap();
        adam.step(&mut store, &g.param_grads()).unwrap();
        if converged_at.is_none() && (store.get("w").unwrap().item() - 3.0).abs() < 1e-3 {
            converged_at = Some(step);
        }
    }
    assert!(converged_at.is_some());
    assert!((store.get("w").unwrap().item() - 3.0).abs() < 1e-3);
}

#[test]
fn adam_rejects_nan_gradient_and_bad_lr() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(1.0));
    let mut adam = Adam::new(1e-3).unwrap();
    let grads = [("w".to_string(), Tensor::scalar(f64::NAN))].into_iter().collect();
    let err = adam.step(&mut store, &grads).unwrap_err();
    assert!(err.to_string().contains("`w`"), "{err}");
    assert!(Adam::new(0.0).is_err());
    assert!(Adam::new(-1.0).is_err());
}

#[test]
fn concat_slice_gradients_partition_upstream() {
    let mut g = Graph::new();
    let a = g.variable(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let b = g.variable(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap()).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    let w = g.input(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.25, -1.0]).unwrap()).unwrap();
    let p = g.mul(c, w).unwrap();
    let loss = g.sum(p).unwrap();
    g.backward(loss).unwrap();
    // d/dc = w; split across a (cols 0..2) and b (col 2).
    assert_eq!(g.grad(a).unwrap().data(), &[1.0, -2.0, 0.5, 0.25]);
    assert_eq!(g.grad(b).unwrap().data(), &[3.0, -1.0]);
}

#[test]
fn identical_inputs_give_bit_identical_results() {
    let run = || {
        let mut g = Graph::new();
        let x = g.variable(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.7, 1.1, -1.3]).unwrap()).unwrap();
        let w = g.variable(Tensor::matrix(3, 2, vec![0.5, 0.4, -0.3, 0.2, 0.9, -0.8]).unwrap()).unwrap();
        let h = g.matmul(x, w).unwrap();
        let s = g.softmax(h).unwrap();
        let l = g.layer_norm(s, 1e-5).unwrap();
        let sq = g.square(l).unwrap();
        let loss = g.mean(sq).unwrap();
        g.backward(loss).unwrap();
        (g.value(loss).item().to_bits(), g.grad(x).unwrap(), g.grad(w).unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}
