//! Pairwise-preference scorer with a KDE entropy regularizer.
//!
//! The scorer maps a history feature and an ego-relative future to a score
//! in (0, 1). Preference probabilities follow the BTL model applied to the
//! scores themselves.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::linear;
use crate::autodiff::{sigmoid, Adam, Graph, ParamStore, Tensor, Var};
use crate::data::pairs::PairwiseSample;
use crate::data::{relative, Point, Trajectory};
use crate::encoder::{encode_batch, Scene, POS_SCALE};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, StdRng};

/// Added to every density value before normalizing or taking logs.
const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreTrainConfig {
    pub hidden: Vec<usize>,
    /// Weight of the entropy term.
    pub lambda: f64,
    /// Number of grid points the density is evaluated at.
    pub k: usize,
    pub bandwidth: f64,
    /// Normalize the grid densities to a probability vector before the
    /// entropy sum. When false the raw densities are used.
    pub normalize_entropy: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub freeze_encoder: bool,
    /// Rotate each training pair by a fresh random angle every epoch.
    pub rotate_augment: bool,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 128, 64],
            lambda: 1.0,
            k: 20,
            bandwidth: 0.05,
            normalize_entropy: true,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            freeze_encoder: false,
            rotate_augment: true,
        }
    }
}

impl ScoreTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("score training: {msg}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.k < 2 {
            return bad("k must be >= 2");
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad("bandwidth must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return bad("hidden sizes must be >= 1");
        }
        Ok(())
    }
}

fn prefix(name: &str) -> String {
    format!("scorer.{name}")
}

/// Registers an MLP scorer named `name` for features of width `feature_dim`
/// and futures of `m` points.
pub fn init_scorer<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    feature_dim: usize,
    m: usize,
    hidden: &[usize],
    rng: &mut R,
) {
    let p = prefix(name);
    let mut width = feature_dim + 2 * m;
    for (i, h) in hidden.iter().enumerate() {
        store.init_linear(&format!("{p}.l{i}"), width, *h, rng);
        width = *h;
    }
    store.init_linear(&format!("{p}.l{}", hidden.len()), width, 1, rng);
}

fn layer_count(store: &ParamStore, name: &str) -> Result<usize> {
    let p = prefix(name);
    let n = (0..).take_while(|i| store.contains(&format!("{p}.l{i}.w"))).count();
    if n == 0 {
        return Err(Error::Checkpoint(format!("no scorer named `{name}` in parameters")));
    }
    Ok(n)
}

/// Names of all scorers present in `store`.
pub fn scorer_names(store: &ParamStore) -> Vec<String> {
    let mut names: Vec<String> = store
        .iter()
        .filter_map(|(k, _)| k.strip_prefix("scorer.")?.strip_suffix(".l0.w").map(str::to_string))
        .collect();
    names.sort();
    names
}

/// Network input for a batch of futures: each future in its history's
/// heading frame (origin at the last history point, +x along the mean
/// history heading), scaled. A stationary history keeps the world axes.
pub fn future_input(futures: &[&[Point]], histories: &[&[Point]]) -> Result<Tensor> {
    let m = futures.first().map_or(0, |f| f.len());
    let mut data = Vec::with_capacity(futures.len() * 2 * m);
    for (f, h) in futures.iter().zip(histories) {
        if f.len() != m {
            return Err(Error::InvalidArgument(format!("futures of mixed length {} and {m}", f.len())));
        }
        let (first, last) = (h[0], h[h.len() - 1]);
        let d = [last[0] - first[0], last[1] - first[1]];
        let norm = d[0].hypot(d[1]);
        let (cos, sin) = if norm > 1e-9 { (d[0] / norm, d[1] / norm) } else { (1.0, 0.0) };
        for p in relative(f, last) {
            data.push((cos * p[0] + sin * p[1]) / POS_SCALE);
            data.push((cos * p[1] - sin * p[0]) / POS_SCALE);
        }
    }
    Tensor::matrix(futures.len(), 2 * m, data)
}

/// Scores `[B, 1]` for features `[B, F]` and future input `[B, 2m]`.
pub fn score_batch(g: &mut Graph, store: &ParamStore, name: &str, features: Var, futures: Var) -> Result<Var> {
    let layers = layer_count(store, name)?;
    let p = prefix(name);
    let want = store.require(&format!("{p}.l0.w"))?.shape()[0];
    let got = g.shape(features)[1] + g.shape(futures)[1];
    if want != got {
        return Err(Error::shape(
            "score",
            format!("scorer `{name}` expects input width {want}, got {got}"),
        ));
    }
    let mut x = g.concat(&[features, futures], 1)?;
    for i in 0..layers {
        x = linear(g, store, &format!("{p}.l{i}"), x)?;
        if i + 1 < layers {
            x = g.leaky_relu(x)?;
        }
    }
    g.sigmoid(x)
}

/// Probability that the item scored `a` is preferred over the one scored `b`.
pub fn btl_prob(a: f64, b: f64) -> f64 {
    sigmoid(a - b)
}

/// `-Σ log σ(s_w - s_l)` for winner and loser scores of equal shape.
pub fn btl_nll(g: &mut Graph, winners: Var, losers: Var) -> Result<Var> {
    let d = g.sub(winners, losers)?;
    let p = g.sigmoid(d)?;
    let lp = g.log(p)?;
    let s = g.sum(lp)?;
    g.neg(s)
}

/// Winner and loser scores `[B, 1]` of a batch of labeled pairs.
pub fn pair_scores(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    batch: &[&PairwiseSample],
    dt: f64,
) -> Result<(Var, Var)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("pair batch is empty".into()));
    }
    let n = batch[0].history.len();
    let scenes: Vec<Scene> = batch
        .iter()
        .map(|p| Scene {
            history: &p.history,
            neighbors: &p.neighbors,
        })
        .collect();
    let f = encode_batch(g, store, &scenes, n, dt)?;
    let histories: Vec<&[Point]> = batch.iter().map(|p| p.history.as_slice()).collect();
    let winners: Vec<&[Point]> = batch.iter().map(|p| p.winner()).collect();
    let losers: Vec<&[Point]> = batch.iter().map(|p| p.loser()).collect();
    let yw = g.input(future_input(&winners, &histories)?)?;
    let yl = g.input(future_input(&losers, &histories)?)?;
    let sw = score_batch(g, store, name, f, yw)?;
    let sl = score_batch(g, store, name, f, yl)?;
    Ok((sw, sl))
}

/// Negative log-likelihood of the labels, summed over the batch.
pub fn mle_loss(g: &mut Graph, store: &ParamStore, name: &str, batch: &[&PairwiseSample], dt: f64) -> Result<Var> {
    let (sw, sl) = pair_scores(g, store, name, batch, dt)?;
    btl_nll(g, sw, sl)
}

/// Entropy of a Gaussian KDE of `scores` (`[N, 1]`) sampled at `i/k`, `i = 1..=k`.
pub fn entropy_penalty(g: &mut Graph, scores: Var, k: usize, bandwidth: f64, normalize: bool) -> Result<Var> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("entropy grid needs k >= 2, got {k}")));
    }
    let shape = g.shape(scores).to_vec();
    if shape.len() != 2 || shape[1] != 1 || shape[0] < 2 {
        return Err(Error::shape("entropy_penalty", format!("expected [N>=2, 1] scores, got {shape:?}")));
    }
    let n = shape[0];
    let ones_k = g.input(Tensor::full(&[k, 1], 1.0))?;
    let st = g.transpose(scores)?;
    let tiled = g.matmul(ones_k, st)?;
    let grid: Vec<f64> = (1..=k).flat_map(|i| std::iter::repeat_n(i as f64 / k as f64, n)).collect();
    let grid = g.input(Tensor::matrix(k, n, grid)?)?;
    let diff = g.sub(tiled, grid)?;
    let sq = g.square(diff)?;
    let arg = g.scale(sq, -0.5 / (bandwidth * bandwidth))?;
    let kern = g.exp(arg)?;
    let avg = g.input(Tensor::full(&[n, 1], 1.0 / n as f64))?;
    let dens = g.matmul(kern, avg)?;
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let dens = g.affine(dens, norm, DENSITY_FLOOR)?;
    let p = if normalize {
        let total = g.sum(dens)?;
        let log_total = g.log(total)?;
        let neg = g.neg(log_total)?;
        let inv = g.exp(neg)?;
        let inv = g.reshape(inv, &[1, 1])?;
        g.matmul(dens, inv)?
    } else {
        dens
    };
    let lp = g.log(p)?;
    let plp = g.mul(p, lp)?;
    let s = g.sum(plp)?;
    g.neg(s)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub name: String,
    /// Mean per-pair loss of each epoch, entropy term included.
    pub epoch_loss: Vec<f64>,
    pub heldout_accuracy: Option<f64>,
    pub heldout_score_std: Option<f64>,
    /// Counts of held-out scores in ten equal bins over [0, 1].
    pub histogram: Vec<usize>,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
}

impl ScoreReport {
    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "scorer {}: {} train pairs, {} held-out pairs", self.name, self.train_pairs, self.heldout_pairs)?;
        for (i, l) in self.epoch_loss.iter().enumerate() {
            writeln!(w, "epoch {:>4}  loss {l:.6}", i + 1)?;
        }
        if let Some(a) = self.heldout_accuracy {
            writeln!(w, "held-out accuracy {a:.4}")?;
        }
        if let Some(s) = self.heldout_score_std {
            writeln!(w, "held-out score std {s:.4}")?;
        }
        writeln!(w, "histogram {:?}", self.histogram)
    }
}

/// Minibatch Adam on `L_mle - λ·H`. The scorer `name` must already be
/// initialized in `store`; encoder weights are updated too unless frozen.
pub fn train_scorer(
    store: &mut ParamStore,
    name: &str,
    train: &[PairwiseSample],
    heldout: &[PairwiseSample],
    dt: f64,
    cfg: &ScoreTrainConfig,
    seed: u64,
) -> Result<ScoreReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    layer_count(store, name)?;
    let mut adam = Adam::new(cfg.lr)?;
    let mut rng: StdRng = derived_rng(seed, 0x5C0E);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = ScoreReport {
        name: name.to_string(),
        train_pairs: train.len(),
        heldout_pairs: heldout.len(),
        ..ScoreReport::default()
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let rotated: Vec<PairwiseSample> = if cfg.rotate_augment {
                idx.iter()
                    .map(|i| train[*i].rotated(rng.random_range(0.0..std::f64::consts::TAU)))
                    .collect()
            } else {
                Vec::new()
            };
            let batch: Vec<&PairwiseSample> = if cfg.rotate_augment {
                rotated.iter().collect()
            } else {
                idx.iter().map(|i| &train[*i]).collect()
            };
            let mut g = Graph::new();
            if cfg.freeze_encoder {
                g.freeze_prefix("encoder.");
            }
            let (sw, sl) = pair_scores(&mut g, store, name, &batch, dt)?;
            let mut loss = btl_nll(&mut g, sw, sl)?;
            if cfg.lambda > 0.0 {
                let all = g.concat(&[sw, sl], 0)?;
                let h = entropy_penalty(&mut g, all, cfg.k, cfg.bandwidth, cfg.normalize_entropy)?;
                let h = g.scale(h, cfg.lambda)?;
                loss = g.sub(loss, h)?;
            }
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!("scorer loss diverged at epoch {}", epoch + 1)));
            }
            total += lv;
            g.backward(loss)?;
            adam.step(store, &g.param_grads())?;
        }
        report.epoch_loss.push(total / train.len() as f64);
    }
    if !heldout.is_empty() {
        let (acc, scores) = evaluate_pairs(store, name, heldout, dt)?;
        report.heldout_accuracy = Some(acc);
        report.heldout_score_std = Some(std_dev(&scores));
        report.histogram = histogram(&scores, 10);
    }
    Ok(report)
}

/// Fraction of pairs whose winner outscores the loser, and every score seen.
pub fn evaluate_pairs(store: &ParamStore, name: &str, pairs: &[PairwiseSample], dt: f64) -> Result<(f64, Vec<f64>)> {
    let mut correct = 0;
    let mut scores = Vec::with_capacity(2 * pairs.len());
    for chunk in pairs.chunks(256) {
        let batch: Vec<&PairwiseSample> = chunk.iter().collect();
        let mut g = Graph::new();
        g.freeze_prefix("");
        let (sw, sl) = pair_scores(&mut g, store, name, &batch, dt)?;
        let (w, l) = (g.value(sw).data(), g.value(sl).data());
        correct += w.iter().zip(l).filter(|(a, b)| a > b).count();
        scores.extend_from_slice(w);
        scores.extend_from_slice(l);
    }
    Ok((correct as f64 / pairs.len() as f64, scores))
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn histogram(xs: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for x in xs {
        let i = ((x * bins as f64) as usize).min(bins - 1);
        h[i] += 1;
    }
    h
}

/// Scores of each trajectory's ground-truth future under scorer `name`.
pub fn score_trajectories(store: &ParamStore, name: &str, trajs: &[Trajectory], dt: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trajs.len());
    for chunk in trajs.chunks(256) {
        let n = chunk[0].history.len();
        let scenes: Vec<Scene> = chunk
            .iter()
            .map(|t| Scene {
                history: &t.history,
                neighbors: &t.neighbors,
            })
            .collect();
        let mut g = Graph::new();
        g.freeze_prefix("");
        let f = encode_batch(&mut g, store, &scenes, n, dt)?;
        let futures: Vec<&[Point]> = chunk.iter().map(|t| t.future.as_slice()).collect();
        let histories: Vec<&[Point]> = chunk.iter().map(|t| t.history.as_slice()).collect();
        let y = g.input(future_input(&futures, &histories)?)?;
        let s = score_batch(&mut g, store, name, f, y)?;
        out.extend_from_slice(g.value(s).data());
    }
    Ok(out)
}

/// Per-trajectory scores for one or more constraints, keyed by id.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<u64, Vec<f64>>,
}

impl ScoreTable {
    pub fn compute(store: &ParamStore, names: &[String], trajs: &[Trajectory], dt: f64) -> Result<Self> {
        let mut rows: BTreeMap<u64, Vec<f64>> = trajs.iter().map(|t| (t.id, Vec::new())).collect();
        for name in names {
            for (t, s) in trajs.iter().zip(score_trajectories(store, name, trajs, dt)?) {
                rows.get_mut(&t.id).expect("id present").push(s);
            }
        }
        Ok(Self {
            names: names.to_vec(),
            rows,
        })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "id,{}", self.names.join(","))?;
        for (id, vals) in &self.rows {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{id},{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Data("scores file is empty".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"id") || cols.len() < 2 {
            return Err(Error::Parse {
                line: 1,
                msg: "scores header must be `id,<constraint>...`".into(),
            });
        }
        let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut rows = BTreeMap::new();
        for (i, line) in lines {
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != cols.len() {
                return Err(bad(format!("expected {} columns, got {}", cols.len(), cells.len())));
            }
            let id: u64 = cells[0].parse().map_err(|_| bad(format!("bad id `{}`", cells[0])))?;
            let vals = cells[1..]
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .ok()
                        .filter(|v| (0.0..=1.0).contains(v))
                        .ok_or_else(|| bad(format!("score `{c}` is not a number in [0, 1]")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.insert(id, vals);
        }
        Ok(Self { names, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_encoder, EncoderConfig};
    use crate::rng::rng_from;

    #[test]
    fn btl_values() {
        assert_eq!(btl_prob(0.3, 0.3), 0.5);
        assert!((btl_prob(1.0, 0.0) - 0.7310585786300049).abs() < 1e-15);
        for (a, b) in [(0.9, 0.1), (-3.0, 40.0), (1e-8, 0.0)] {
            assert_eq!(btl_prob(a, b) + btl_prob(b, a), 1.0);
        }
    }

    #[test]
    fn future_input_is_in_the_history_heading_frame() {
        let h: Vec<Point> = (0..8).map(|i| [1.0 + 0.5 * i as f64, 2.0 + 0.5 * i as f64]).collect();
        // One step straight ahead, then one step to the left of the heading.
        let s = 0.5f64.hypot(0.5);
        let f = vec![[h[7][0] + 0.5, h[7][1] + 0.5], [h[7][0], h[7][1] + 1.0]];
        let x = future_input(&[&f], &[&h]).unwrap();
        let want = [s, 0.0, s, s];
        for (a, b) in x.data().iter().zip(want) {
            assert!((a - b / POS_SCALE).abs() < 1e-12, "{:?}", x.data());
        }
        let still = vec![h[7]; 8];
        let y = future_input(&[&f], &[&still]).unwrap();
        assert!((y.data()[1] - 0.5 / POS_SCALE).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_score_one_half() {
        let mut s = ParamStore::new();
        init_encoder(&mut s, &EncoderConfig::default(), &mut rng_from(1));
        init_scorer(&mut s, "x", 96, 12, &[16, 8], &mut rng_from(2));
        let names: Vec<String> = s.iter().filter(|(k, _)| k.starts_with("scorer.")).map(|(k, _)| k.clone()).collect();
        for k in names {
            s.get_mut(&k).unwrap().data_mut().fill(0.0);
        }
        let t = Trajectory {
            id: 0,
            history: (0..8).map(|i| [i as f64, 0.0]).collect(),
            future: (8..20).map(|i| [i as f64, 1.0]).collect(),
            neighbors: vec![],
            maneuver: None,
        };
        assert_eq!(score_trajectories(&s, "x", &[t], 0.4).unwrap(), vec![0.5]);
    }

    #[test]
    fn scores_csv_round_trip() {
        let mut rows = BTreeMap::new();
        rows.insert(3, vec![0.25, 0.125]);
        rows.insert(9, vec![0.1, 0.9]);
        let t = ScoreTable {
            names: vec!["turn-right".into(), "slow-down".into()],
            rows,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,turn-right,slow-down\n"));
        assert_eq!(ScoreTable::read_csv(&text).unwrap(), t);
        assert!(matches!(ScoreTable::read_csv("id,a\n1,2.0\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn entropy_rejects_small_grid() {
        let mut g = Graph::new();
        let s = g.input(Tensor::matrix(2, 1, vec![0.2, 0.4]).unwrap()).unwrap();
        assert!(entropy_penalty(&mut g, s, 1, 0.05, true).is_err());
    }
}
