use super::*;
use crate::data::synth::{generate_synthetic, Scenario, SynthConfig};
use crate::encoder::{init_encoder, EncoderConfig};
use crate::rng::rng_from;

fn small_cfg(steps: usize) -> DiffusionConfig {
    DiffusionConfig {
        steps,
        denoiser: DenoiserConfig {
            width: 16,
            heads: 2,
            blocks: 1,
            ffn: 16,
            time_dim: 8,
            cond_dim: 8,
        },
        epochs: 1,
        batch_size: 16,
        ..DiffusionConfig::default()
    }
}

fn store(cfg: &DiffusionConfig, scores: usize) -> ParamStore {
    let mut s = ParamStore::new();
    let enc = EncoderConfig {
        ego_hidden: 6,
        edge_hidden: 4,
    };
    init_encoder(&mut s, &enc, &mut rng_from(1));
    init_denoiser(&mut s, &cfg.denoiser, enc.feature_dim(), scores, 12, &mut rng_from(2));
    s
}

#[test]
fn one_step_zero_noise_prediction_divides_by_sqrt_alpha() {
    let cfg = DiffusionConfig {
        beta_start: 0.3,
        beta_end: 0.3,
        ..small_cfg(1)
    };
    let s = store(&cfg, 1);
    let model = Model::new(&s, &cfg, 1.0, 0.4).unwrap();
    let y1: Vec<f64> = (0..24).map(|i| i as f64 * 0.1 - 1.0).collect();
    let cond = vec![condition_row(&[0.0; 10], &[0.5])];
    let out = model
        .reverse(vec![y1.clone()], &cond, SampleMode::PaperMean, &mut rng_from(3))
        .unwrap();
    let a = 0.7f64.sqrt();
    for (o, y) in out[0].iter().zip(&y1) {
        assert!((o - y / a).abs() < 1e-15);
    }
}

#[test]
fn paper_mean_is_deterministic_given_start() {
    let cfg = small_cfg(5);
    let mut s = store(&cfg, 1);
    s.init_linear("denoiser.out", 16, 2, &mut rng_from(4));
    let model = Model::new(&s, &cfg, 1.0, 0.4).unwrap();
    let start = vec![vec![0.3; 24]];
    let cond = vec![condition_row(&[0.1; 10], &[0.2])];
    let a = model.reverse(start.clone(), &cond, SampleMode::PaperMean, &mut rng_from(5)).unwrap();
    let b = model.reverse(start, &cond, SampleMode::PaperMean, &mut rng_from(6)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn best_of_counts_and_grid() {
    let cfg = small_cfg(3);
    let s = store(&cfg, 1);
    let model = Model::new(&s, &cfg, 1.0, 0.4).unwrap();
    let f = vec![0.0; 10];
    assert_eq!(model.best_of(&f, [0.0, 0.0], 1, 1, &mut rng_from(7)).unwrap().len(), 1);
    let preds = model.best_of(&f, [0.0, 0.0], 20, 20, &mut rng_from(7)).unwrap();
    assert_eq!(preds.len(), 400);
    let mut cs: Vec<f64> = preds.iter().map(|p| p.c).collect();
    cs.dedup();
    assert_eq!(cs.len(), 20);
    assert_eq!(cs, c_grid(20));
    assert_ne!(preds[0].future, preds[1].future);
    assert!(model.best_of(&f, [0.0, 0.0], 0, 3, &mut rng_from(7)).is_err());
}

#[test]
fn score_count_mismatch_is_reported() {
    let cfg = small_cfg(3);
    let s = store(&cfg, 2);
    let model = Model::new(&s, &cfg, 1.0, 0.4).unwrap();
    assert_eq!(model.scores, 2);
    let err = model
        .sample(&[0.0; 10], [0.0, 0.0], &[vec![0.5]], SampleMode::Ancestral, &mut rng_from(1))
        .unwrap_err();
    assert!(err.to_string().contains("score count mismatch"), "{err}");
}

#[test]
fn untrained_loss_is_near_dimension_count() {
    let corpus = generate_synthetic(Scenario::TIntersection, 200, 1, &SynthConfig::default()).unwrap();
    let cfg = DiffusionConfig {
        lr: 1e-12,
        ..small_cfg(100)
    };
    let mut s = store(&cfg, 1);
    let scores: BTreeMap<u64, Vec<f64>> = corpus.trajectories.iter().map(|t| (t.id, vec![0.5])).collect();
    let scale = future_scale(&corpus.trajectories).unwrap();
    let r = train_diffusion(&mut s, &cfg, &corpus.trajectories, &scores, scale, 0.4, 9).unwrap();
    let l = r.epoch_loss[0];
    assert!((l - 24.0).abs() < 0.2 * 24.0, "{l}");
}

#[test]
fn missing_scores_are_an_error() {
    let corpus = generate_synthetic(Scenario::TIntersection, 20, 1, &SynthConfig::default()).unwrap();
    let cfg = small_cfg(10);
    let mut s = store(&cfg, 1);
    let mut scores: BTreeMap<u64, Vec<f64>> = corpus.trajectories.iter().map(|t| (t.id, vec![0.5])).collect();
    scores.remove(&5);
    let err = train_diffusion(&mut s, &cfg, &corpus.trajectories, &scores, 1.0, 0.4, 9).unwrap_err();
    assert!(err.to_string().contains("missing score"));
}

#[test]
fn unknown_mode_is_rejected() {
    assert!("ddim".parse::<SampleMode>().is_err());
    assert_eq!("paper-mean".parse::<SampleMode>().unwrap(), SampleMode::PaperMean);
}
