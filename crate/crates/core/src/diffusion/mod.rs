//! Score-conditioned denoising diffusion over future trajectories.
//!
//! Futures are modeled ego-relative and divided by a corpus-wide scale, so
//! the data has roughly unit variance like the injected noise.

mod denoiser;
mod schedule;

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use denoiser::{denoise, denoiser_dims, init_denoiser, time_embedding, DenoiserConfig, DenoiserDims};
pub use schedule::{Schedule, ScheduleKind};

use crate::autodiff::{Adam, Graph, ParamStore, Tensor};
use crate::data::{flatten, relative, Point, Trajectory};
use crate::encoder::{encode_all, Scene};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, StdRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Noise-free mean update at every step.
    PaperMean,
    /// Mean update plus `sqrt(β_t)·z` for every step but the last.
    Ancestral,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-mean" => Ok(SampleMode::PaperMean),
            "ancestral" => Ok(SampleMode::Ancestral),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling mode `{other}` (expected paper-mean or ancestral)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub schedule: ScheduleKind,
    pub denoiser: DenoiserConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sample_mode: SampleMode,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.05,
            schedule: ScheduleKind::Linear,
            denoiser: DenoiserConfig::default(),
            epochs: 60,
            batch_size: 64,
            lr: 1e-3,
            sample_mode: SampleMode::Ancestral,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.steps, self.beta_start, self.beta_end, self.schedule)
            .map_err(|e| Error::Config(format!("diffusion schedule: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.denoiser.validate()?;
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("diffusion batch_size must be >= 1 and lr > 0".into()));
        }
        Ok(())
    }
}

/// Pooled standard deviation of ego-relative future coordinates.
pub fn future_scale(trajs: &[Trajectory]) -> Result<f64> {
    let vals: Vec<f64> = trajs.iter().flat_map(|t| flatten(&t.future_relative())).collect();
    if vals.is_empty() {
        return Err(Error::Data("no futures to compute a scale from".into()));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    if !(var > 0.0) {
        return Err(Error::Data("futures have zero spread".into()));
    }
    Ok(var.sqrt())
}

/// Condition row for the denoiser: features then scores mapped to [-1, 1].
pub fn condition_row(feature: &[f64], scores: &[f64]) -> Vec<f64> {
    feature.iter().copied().chain(scores.iter().map(|c| 2.0 * c - 1.0)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    /// Mean per-sample loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub samples: usize,
}

/// Everything needed to train or sample, minus the weights.
#[derive(Clone, Debug)]
pub struct Model<'a> {
    pub store: &'a ParamStore,
    pub cfg: &'a DiffusionConfig,
    pub schedule: Schedule,
    pub scale: f64,
    pub dt: f64,
    pub scores: usize,
}

impl<'a> Model<'a> {
    pub fn new(store: &'a ParamStore, cfg: &'a DiffusionConfig, scale: f64, dt: f64) -> Result<Self> {
        let dims = denoiser_dims(store)?;
        let feat = crate::encoder::encoder_config(store)?.feature_dim();
        if dims.cond_in < feat {
            return Err(Error::Checkpoint("denoiser condition narrower than encoder feature".into()));
        }
        Ok(Self {
            store,
            cfg,
            schedule: cfg.schedule()?,
            scale,
            dt,
            scores: dims.cond_in - feat,
        })
    }

    pub fn m(&self) -> usize {
        denoiser_dims(self.store).map(|d| d.m).unwrap_or(0)
    }

    pub fn features(&self, scenes: &[Scene]) -> Result<Vec<Vec<f64>>> {
        let n = scenes.first().map_or(0, |s| s.history.len());
        encode_all(self.store, scenes, n, self.dt)
    }

    /// Predicted noise for normalized noisy futures, without gradients.
    pub fn predict_noise(&self, y_t: &[Vec<f64>], cond: &[Vec<f64>], steps: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        g.freeze_prefix("");
        let w = y_t.first().map_or(0, |r| r.len());
        let y = g.input(Tensor::matrix(y_t.len(), w, y_t.concat())?)?;
        let cw = cond.first().map_or(0, |r| r.len());
        let c = g.input(Tensor::matrix(cond.len(), cw, cond.concat())?)?;
        let out = denoise(&mut g, self.store, &self.cfg.denoiser, y, c, steps)?;
        let v = g.value(out);
        Ok((0..y_t.len()).map(|i| v.row(i).to_vec()).collect())
    }

    /// Runs the reverse process from `y_T` for each condition row and
    /// returns normalized futures.
    pub fn reverse(&self, y_start: Vec<Vec<f64>>, cond: &[Vec<f64>], mode: SampleMode, rng: &mut StdRng) -> Result<Vec<Vec<f64>>> {
        let mut y = y_start;
        let steps = self.schedule.steps();
        for t in (1..=steps).rev() {
            let eps = self.predict_noise(&y, cond, &vec![t; y.len()])?;
            let (a, b, ab) = (
                self.schedule.alpha_at(t)?,
                self.schedule.beta_at(t)?,
                self.schedule.alpha_bar_at(t)?,
            );
            let coef = b / (1.0 - ab).sqrt();
            let inv = 1.0 / a.sqrt();
            let noise = mode == SampleMode::Ancestral && t > 1;
            let sigma = b.sqrt();
            for (row, e) in y.iter_mut().zip(&eps) {
                for (v, ev) in row.iter_mut().zip(e) {
                    *v = inv * (*v - coef * ev);
                    if noise {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += sigma * z;
                    }
                }
            }
        }
        Ok(y)
    }

    /// One future per score vector in `conds`, in world coordinates.
    pub fn sample(
        &self,
        feature: &[f64],
        origin: Point,
        conds: &[Vec<f64>],
        mode: SampleMode,
        rng: &mut StdRng,
    ) -> Result<Vec<Vec<Point>>> {
        let m = self.m();
        let mut out = Vec::with_capacity(conds.len());
        for chunk in conds.chunks(SAMPLE_CHUNK) {
            let mut rows = Vec::with_capacity(chunk.len());
            for c in chunk {
                if c.len() != self.scores {
                    return Err(Error::ScoreCount {
                        expected: self.scores,
                        got: c.len(),
                    });
                }
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidArgument(format!("scores must lie in [0, 1], got {c:?}")));
                }
                rows.push(condition_row(feature, c));
            }
            let start: Vec<Vec<f64>> = (0..chunk.len())
                .map(|_| (0..2 * m).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            for y in self.reverse(start, &rows, mode, rng)? {
                out.push(self.to_world(&y, origin));
            }
        }
        Ok(out)
    }

    pub fn to_world(&self, y: &[f64], origin: Point) -> Vec<Point> {
        y.chunks(2)
            .map(|c| [c[0] * self.scale + origin[0], c[1] * self.scale + origin[1]])
            .collect()
    }

    /// `n_c` evenly spaced condition values (midpoints of `n_c` equal bins),
    /// `n_s` ancestral draws each. Every score of the condition is set to
    /// the same grid value.
    pub fn best_of(
        &self,
        feature: &[f64],
        origin: Point,
        n_c: usize,
        n_s: usize,
        rng: &mut StdRng,
    ) -> Result<Vec<Prediction>> {
        if n_c == 0 || n_s == 0 {
            return Err(Error::InvalidArgument("N_c and N_s must be >= 1".into()));
        }
        let grid = c_grid(n_c);
        let conds: Vec<Vec<f64>> = grid
            .iter()
            .flat_map(|c| std::iter::repeat_n(vec![*c; self.scores], n_s))
            .collect();
        let futures = self.sample(feature, origin, &conds, SampleMode::Ancestral, rng)?;
        Ok(futures
            .into_iter()
            .enumerate()
            .map(|(i, future)| Prediction {
                c: grid[i / n_s],
                draw: i % n_s,
                future,
            })
            .collect())
    }
}

const SAMPLE_CHUNK: usize = 100;

/// Midpoint grid `(i + 0.5) / n` for `i = 0..n`.
pub fn c_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub c: f64,
    pub draw: usize,
    pub future: Vec<Point>,
}

/// Trains the denoiser already registered in `store` on `trajs` with their
/// precomputed scores. Encoder and scorer weights are left untouched.
pub fn train_diffusion(
    store: &mut ParamStore,
    cfg: &DiffusionConfig,
    trajs: &[Trajectory],
    scores: &BTreeMap<u64, Vec<f64>>,
    scale: f64,
    dt: f64,
    seed: u64,
) -> Result<DiffusionReport> {
    cfg.validate()?;
    if trajs.is_empty() {
        return Err(Error::Data("no training trajectories".into()));
    }
    let model = Model::new(store, cfg, scale, dt)?;
    let schedule = model.schedule.clone();
    let m = model.m();
    let expected = model.scores;
    let mut conds = Vec::with_capacity(trajs.len());
    let scenes: Vec<Scene> = trajs
        .iter()
        .map(|t| Scene {
            history: &t.history,
            neighbors: &t.neighbors,
        })
        .collect();
    let feats = model.features(&scenes)?;
    for (t, f) in trajs.iter().zip(&feats) {
        let s = scores
            .get(&t.id)
            .ok_or_else(|| Error::Data(format!("missing score for trajectory {}", t.id)))?;
        if s.len() != expected {
            return Err(Error::ScoreCount {
                expected,
                got: s.len(),
            });
        }
        conds.push(condition_row(f, s));
    }
    let targets: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| {
            if t.future.len() != m {
                return Err(Error::Data(format!(
                    "trajectory {} has {} future points, model expects {m}",
                    t.id,
                    t.future.len()
                )));
            }
            Ok(flatten(&relative(&t.future, t.origin())).into_iter().map(|v| v / scale).collect())
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(cfg.lr)?;
    let mut rng = derived_rng(seed, 0xD1FF);
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    let mut report = DiffusionReport {
        samples: trajs.len(),
        ..DiffusionReport::default()
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let b = idx.len();
            let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
            let mut eps = Vec::with_capacity(b * 2 * m);
            let mut yt = Vec::with_capacity(b * 2 * m);
            let mut cond = Vec::with_capacity(b * conds[0].len());
            for (i, t) in idx.iter().zip(&steps) {
                let e: Vec<f64> = (0..2 * m).map(|_| rng.sample(StandardNormal)).collect();
                yt.extend(schedule::noise_with(schedule.alpha_bar[t - 1], &targets[*i], &e));
                eps.extend(e);
                cond.extend_from_slice(&conds[*i]);
            }
            let mut g = Graph::new();
            let y = g.input(Tensor::matrix(b, 2 * m, yt)?)?;
            let c = g.input(Tensor::matrix(b, conds[0].len(), cond)?)?;
            let e = g.input(Tensor::matrix(b, 2 * m, eps)?)?;
            let pred = denoise(&mut g, store, &cfg.denoiser, y, c, &steps)?;
            let d = g.sub(e, pred)?;
            let sq = g.square(d)?;
            let s = g.sum(sq)?;
            let loss = g.scale(s, 1.0 / b as f64)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!("diffusion loss diverged at epoch {}", epoch + 1)));
            }
            total += lv * b as f64;
            g.backward(loss)?;
            adam.step(store, &g.param_grads())?;
        }
        report.epoch_loss.push(total / trajs.len() as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
