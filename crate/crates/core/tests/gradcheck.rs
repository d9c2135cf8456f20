mod support;

use ctd_core::autodiff::{nn, Graph, ParamStore, Tensor};
use ctd_core::rng::rng_from;
use proptest::prelude::*;
use support::gradcheck::{case, max_rel_error, OPS};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>(), which in 0..OPS.len()) {
        let mut rng = rng_from(seed);
        let c = case(OPS[which], &mut rng);
        let err = max_rel_error(&c, &mut rng);
        prop_assert!(err < 1e-4, "{}: rel err {err}", c.op);
    }
}

#[test]
fn all_ops_pass_on_fixed_seeds() {
    for (i, op) in OPS.iter().enumerate() {
        let mut rng = rng_from(1000 + i as u64);
        let c = case(op, &mut rng);
        let err = max_rel_error(&c, &mut rng);
        assert!(err < 1e-4, "{op}: rel err {err}");
    }
}

#[test]
fn gru_composite_matches_finite_differences() {
    let mut rng = rng_from(42);
    let mut store = ParamStore::new();
    nn::init_gru(&mut store, "gru", 3, 4, &mut rng);
    store.init_linear("head", 4, 1, &mut rng);
    let x = Tensor::matrix(2, 3, vec![0.2, -0.4, 0.9, 1.1, 0.0, -0.3]).unwrap();

    let loss_of = |store: &ParamStore| {
        let mut g = Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let h0 = g.input(Tensor::zeros(&[2, 4])).unwrap();
        let h1 = nn::gru_step(&mut g, store, "gru", xv, h0).unwrap();
        let h2 = nn::gru_step(&mut g, store, "gru", xv, h1).unwrap();
        let y = nn::linear(&mut g, store, "head", h2).unwrap();
        let y = g.sigmoid(y).unwrap();
        let loss = g.sum(y).unwrap();
        (g, loss)
    };
    let (mut g, loss) = loss_of(&store);
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    for (name, t) in store.iter() {
        for i in 0..t.len() {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += 1e-5;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= 1e-5;
            let (gp, lp) = loss_of(&plus);
            let (gm, lm) = loss_of(&minus);
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / 2e-5;
            let a = grads[name].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < 1e-4, "{name}[{i}]: analytic {a} numeric {numeric}");
        }
    }
    // every weight receives gradient
    for (name, gr) in &grads {
        assert!(gr.data().iter().any(|v| *v != 0.0), "{name} got an all-zero gradient");
    }
}
