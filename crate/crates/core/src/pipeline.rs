//! Training stages that read and produce checkpoints.
//!
//! Each stage derives its own random streams from one seed, so a stage
//! rerun with the same inputs and seed reproduces its output exactly.

use std::collections::BTreeMap;

use crate::autodiff::ParamStore;
use crate::checkpoint::{Checkpoint, Meta, FRAME};
use crate::config::Config;
use crate::data::pairs::{make_pairs, Annotator, ConstraintKind, PairOptions, PairSet, PairwiseSample, SplitSel};
use crate::data::{Corpus, Trajectory};
use crate::diffusion::{future_scale, init_denoiser, train_diffusion, DiffusionReport, Model};
use crate::encoder::{encoder_config, init_encoder};
use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::scoring::{init_scorer, scorer_names, train_scorer, ScoreReport, ScoreTable};

const STREAM_ENCODER: u64 = 1;
const STREAM_SCORER: u64 = 2;
const STREAM_HELDOUT: u64 = 3;
const STREAM_DENOISER: u64 = 4;

/// Pair labeling options for `kind` taken from the config.
pub fn pair_options(cfg: &Config, kind: ConstraintKind) -> PairOptions {
    let p = &cfg.pairs;
    PairOptions {
        annotator: Annotator {
            kind,
            tie_threshold: if kind.is_speed() { p.speed_tie_threshold } else { p.turn_tie_threshold },
        },
        fraction: p.fraction,
        pairs_per_history: p.pairs_per_history,
        split: p.split,
        candidates: p.candidates.clone(),
    }
}

/// Held-out pairs labeled from the corpus test split.
pub fn heldout_pairs(corpus: &Corpus, cfg: &Config, kind: ConstraintKind, seed: u64) -> Result<Vec<PairwiseSample>> {
    let mut opts = pair_options(cfg, kind);
    opts.split = SplitSel::Test;
    opts.fraction = cfg.pairs.heldout_fraction;
    Ok(make_pairs(corpus, &opts, crate::rng::derive_seed(seed, STREAM_HELDOUT))?.0)
}

fn check_corpus(meta: &Meta, corpus: &Corpus) -> Result<()> {
    let c = &corpus.meta;
    if c.n != meta.n || c.m != meta.m || (c.dt - meta.dt).abs() > 1e-12 {
        return Err(Error::Data(format!(
            "corpus has n={} m={} dt={} but checkpoint was built for n={} m={} dt={}",
            c.n, c.m, c.dt, meta.n, meta.m, meta.dt
        )));
    }
    Ok(())
}

/// Fresh checkpoint holding only an initialized encoder.
pub fn new_checkpoint(corpus: &Corpus, cfg: &Config, seed: u64) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    init_encoder(&mut params, &cfg.encoder, &mut derived_rng(seed, STREAM_ENCODER));
    Ok(Checkpoint {
        meta: Meta {
            n: corpus.meta.n,
            m: corpus.meta.m,
            dt: corpus.meta.dt,
            frame: FRAME.into(),
            feature_dim: cfg.encoder.feature_dim(),
            scale: None,
            constraints: Vec::new(),
            score_count: 0,
            config: cfg.clone(),
        },
        params,
    })
}

/// Trains (or retrains) the scorer for `pairs.constraint` inside `ckpt`.
///
/// Joint encoder training is refused when the checkpoint already holds
/// other scorers, since it would silently change their inputs.
pub fn train_score_stage(
    ckpt: &mut Checkpoint,
    corpus: &Corpus,
    pairs: &PairSet,
    heldout: &[PairwiseSample],
    cfg: &Config,
    seed: u64,
) -> Result<ScoreReport> {
    cfg.validate()?;
    check_corpus(&ckpt.meta, corpus)?;
    if (pairs.dt - ckpt.meta.dt).abs() > 1e-12 {
        return Err(Error::Data(format!("pairs use dt={} but corpus dt={}", pairs.dt, ckpt.meta.dt)));
    }
    if ckpt.meta.score_count > 0 {
        return Err(Error::InvalidArgument(
            "checkpoint already has a trained denoiser; train scorers first".into(),
        ));
    }
    let name = pairs.constraint.name().to_string();
    let others: Vec<String> = scorer_names(&ckpt.params).into_iter().filter(|s| *s != name).collect();
    if !cfg.score.freeze_encoder && !others.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint already holds scorer(s) {others:?}; train with a frozen encoder to keep them valid"
        )));
    }
    let enc = encoder_config(&ckpt.params)?;
    ckpt.params.remove_prefix(&format!("scorer.{name}."));
    init_scorer(
        &mut ckpt.params,
        &name,
        enc.feature_dim(),
        ckpt.meta.m,
        &cfg.score.hidden,
        &mut derived_rng(seed, STREAM_SCORER),
    );
    let report = train_scorer(&mut ckpt.params, &name, &pairs.pairs, heldout, ckpt.meta.dt, &cfg.score, seed)?;
    if !ckpt.meta.constraints.contains(&name) {
        ckpt.meta.constraints.push(name);
    }
    ckpt.meta.config.score = cfg.score.clone();
    ckpt.meta.config.pairs = cfg.pairs.clone();
    Ok(report)
}

/// Trains the denoiser on the corpus train split, conditioned on the
/// `constraints` columns of `scores` in that order.
pub fn train_diffusion_stage(
    ckpt: &mut Checkpoint,
    corpus: &Corpus,
    scores: &ScoreTable,
    constraints: &[String],
    cfg: &Config,
    seed: u64,
) -> Result<DiffusionReport> {
    cfg.validate()?;
    check_corpus(&ckpt.meta, corpus)?;
    if constraints.is_empty() {
        return Err(Error::InvalidArgument("at least one constraint is needed".into()));
    }
    let mut cols = Vec::with_capacity(constraints.len());
    for c in constraints {
        let i = scores
            .names
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| Error::Data(format!("scores file has no `{c}` column")))?;
        cols.push(i);
    }
    let (train, _) = corpus.split();
    let train: Vec<Trajectory> = train.into_iter().cloned().collect();
    let mut rows = BTreeMap::new();
    for t in &train {
        let r = scores
            .rows
            .get(&t.id)
            .ok_or_else(|| Error::Data(format!("missing score for trajectory {}", t.id)))?;
        rows.insert(t.id, cols.iter().map(|i| r[*i]).collect::<Vec<f64>>());
    }
    let scale = future_scale(&train)?;
    let enc = encoder_config(&ckpt.params)?;
    ckpt.params.remove_prefix("denoiser.");
    init_denoiser(
        &mut ckpt.params,
        &cfg.diffusion.denoiser,
        enc.feature_dim(),
        constraints.len(),
        ckpt.meta.m,
        &mut derived_rng(seed, STREAM_DENOISER),
    );
    let report = train_diffusion(&mut ckpt.params, &cfg.diffusion, &train, &rows, scale, ckpt.meta.dt, seed)?;
    let mut order: Vec<String> = constraints.to_vec();
    order.extend(ckpt.meta.constraints.iter().filter(|c| !constraints.contains(c)).cloned());
    ckpt.meta.constraints = order;
    ckpt.meta.score_count = constraints.len();
    ckpt.meta.scale = Some(scale);
    ckpt.meta.config.diffusion = cfg.diffusion.clone();
    Ok(report)
}

impl Checkpoint {
    /// Sampling view of a checkpoint with a trained denoiser.
    pub fn model(&self) -> Result<Model<'_>> {
        let scale = self
            .meta
            .scale
            .filter(|_| self.meta.score_count > 0)
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no trained denoiser".into()))?;
        let model = Model::new(&self.params, &self.meta.config.diffusion, scale, self.meta.dt)?;
        if model.scores != self.meta.score_count {
            return Err(Error::Checkpoint(format!(
                "metadata says {} scores but denoiser takes {}",
                self.meta.score_count, model.scores
            )));
        }
        Ok(model)
    }

    /// Constraint kinds the denoiser is conditioned on, in order.
    pub fn conditioned_on(&self) -> Result<Vec<ConstraintKind>> {
        self.meta.constraints[..self.meta.score_count].iter().map(|s| s.parse()).collect()
    }
}
