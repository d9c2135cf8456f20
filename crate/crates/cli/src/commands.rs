use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ctd_core::checkpoint::Checkpoint;
use ctd_core::config::Config;
use ctd_core::data::ethucy::import_ethucy;
use ctd_core::data::pairs::{make_pairs, ConstraintKind, PairSet, SplitSel};
use ctd_core::data::synth::{generate_synthetic, Scenario};
use ctd_core::data::{Corpus, Trajectory};
use ctd_core::diffusion::SampleMode;
use ctd_core::encoder::Scene;
use ctd_core::eval::{self, svg};
use ctd_core::pipeline;
use ctd_core::rng::{derive_seed, rng_from};
use ctd_core::scoring::ScoreTable;
use ctd_core::{Error, Result};

use crate::{Cli, Command};

#[derive(Args, Debug)]
pub struct GenData {
    #[arg(long, default_value = "t-intersection")]
    scenario: Scenario,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ImportEthucy {
    /// Annotation file, or a directory searched recursively for *.txt.
    #[arg(long)]
    raw: PathBuf,
    /// Scene subdirectory to prefer under `--raw`, used as the corpus name.
    #[arg(long, default_value = "")]
    scene: String,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the JSON import report; stderr when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MakePairs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    constraint: ConstraintKind,
    /// Fraction of the selected split whose histories are labeled.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    split: Option<SplitSel>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainScore {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Existing checkpoint to add this scorer to.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Keep encoder weights fixed.
    #[arg(long)]
    freeze_encoder: bool,
    /// Held-out pair file; by default pairs are labeled from the test split.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training report (loss curve, accuracy, score histogram); stderr when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreCorpus {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainDiffusion {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Scores to condition on, in order; defaults to every scorer in the checkpoint.
    #[arg(long, value_delimiter = ',')]
    constraints: Vec<ConstraintKind>,
    #[arg(long)]
    out: PathBuf,
    /// CSV of per-epoch loss.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Trajectory ids whose histories are used; defaults to the first test trajectory.
    #[arg(long, value_delimiter = ',')]
    id: Vec<u64>,
    /// Score value per conditioned constraint, in checkpoint order.
    #[arg(long = "c", value_delimiter = ',', required = true)]
    c: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long)]
    mode: Option<SampleMode>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overlay figure; with several ids, `-<id>` is added to the file stem.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    n_c: Option<usize>,
    #[arg(long)]
    n_s: Option<usize>,
    /// Test histories evaluated; 0 means all.
    #[arg(long)]
    max_histories: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepKind {
    Ablation,
    Adherence,
    Grid,
}

#[derive(Args, Debug)]
pub struct Sweep {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Constraint swept by `adherence`; defaults to the first conditioned one.
    #[arg(long)]
    constraint: Option<ConstraintKind>,
    #[arg(long)]
    max_histories: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a, &cfg),
        Command::ImportEthucy(a) => import(a, &cfg),
        Command::MakePairs(a) => pairs(a, &cfg),
        Command::TrainScore(a) => train_score(a, cfg),
        Command::ScoreCorpus(a) => score_corpus(a),
        Command::TrainDiffusion(a) => train_diffusion(a, &cfg),
        Command::Predict(a) => predict(a, &cfg),
        Command::Eval(a) => evaluate(a, &cfg),
        Command::Sweep(a) => sweep(a, &cfg),
    }
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_err(p: &Path, e: io::Error) -> Error {
    Error::Data(format!("{}: {e}", p.display()))
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| io_err(p, e))
}

fn read_corpus(p: &Path) -> Result<Corpus> {
    Corpus::read_jsonl(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

fn gen_data(a: GenData, cfg: &Config) -> Result<()> {
    let corpus = generate_synthetic(a.scenario, a.count, cfg.seed, &cfg.synth)?;
    corpus.write_jsonl(&a.out)
}

fn import(a: ImportEthucy, cfg: &Config) -> Result<()> {
    let (corpus, report) = import_ethucy(&a.raw, &a.scene, &cfg.import)?;
    corpus.write_jsonl(&a.out)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(p) => write_file(p, &text),
        None => {
            eprintln!("{text}");
            Ok(())
        }
    }
}

fn pairs(a: MakePairs, cfg: &Config) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let mut opts = pipeline::pair_options(cfg, a.constraint);
    if let Some(f) = a.fraction {
        opts.fraction = f;
    }
    if let Some(s) = a.split {
        opts.split = s;
    }
    let (pairs, report) = make_pairs(&corpus, &opts, cfg.seed)?;
    eprintln!(
        "{} histories, {} pairs, {} ties skipped",
        report.histories, report.pairs, report.skipped_ties
    );
    PairSet {
        constraint: a.constraint,
        dt: corpus.meta.dt,
        pairs,
    }
    .write_jsonl(&a.out)
}

fn train_score(a: TrainScore, mut cfg: Config) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let set = PairSet::read_jsonl(&a.pairs)?;
    cfg.score.freeze_encoder |= a.freeze_encoder;
    let heldout = match &a.heldout {
        Some(p) => {
            let h = PairSet::read_jsonl(p)?;
            if h.constraint != set.constraint {
                return Err(Error::InvalidArgument(format!(
                    "held-out pairs are for {} but training pairs are for {}",
                    h.constraint, set.constraint
                )));
            }
            h.pairs
        }
        None => pipeline::heldout_pairs(&corpus, &cfg, set.constraint, cfg.seed)?,
    };
    let mut ckpt = match &a.init {
        Some(p) => Checkpoint::load(p)?,
        None => pipeline::new_checkpoint(&corpus, &cfg, cfg.seed)?,
    };
    let report = pipeline::train_score_stage(&mut ckpt, &corpus, &set, &heldout, &cfg, cfg.seed)?;
    ckpt.meta.config.seed = cfg.seed;
    ckpt.save(&a.out)?;
    let mut text = Vec::new();
    report.write_text(&mut text)?;
    match &a.report {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            io::stderr().write_all(&text)?;
            Ok(())
        }
    }
}

fn score_corpus(a: ScoreCorpus) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    if ckpt.meta.constraints.is_empty() {
        return Err(Error::InvalidArgument("checkpoint has no scorers".into()));
    }
    let table = ScoreTable::compute(&ckpt.params, &ckpt.meta.constraints, &corpus.trajectories, ckpt.meta.dt)?;
    let mut w = sink(&a.out)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn train_diffusion(a: TrainDiffusion, cfg: &Config) -> Result<()> {
    let mut ckpt = Checkpoint::load(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    let text = std::fs::read_to_string(&a.scores).map_err(|e| io_err(&a.scores, e))?;
    let table = ScoreTable::read_csv(&text)?;
    let names: Vec<String> = if a.constraints.is_empty() {
        ckpt.meta.constraints.clone()
    } else {
        a.constraints.iter().map(|k| k.name().to_string()).collect()
    };
    for n in &names {
        if !ckpt.meta.constraints.contains(n) {
            return Err(Error::InvalidArgument(format!("checkpoint has no `{n}` scorer")));
        }
    }
    let report = pipeline::train_diffusion_stage(&mut ckpt, &corpus, &table, &names, cfg, cfg.seed)?;
    ckpt.meta.config.seed = cfg.seed;
    ckpt.save(&a.out)?;
    if let Some(p) = &a.report {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in report.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        write_file(p, &s)?;
    }
    eprintln!(
        "trained on {} samples, final loss {:.6}",
        report.samples,
        report.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn test_histories(corpus: &Corpus, max: usize) -> Vec<Trajectory> {
    let (_, test) = corpus.split();
    let take = if max == 0 { test.len() } else { max.min(test.len()) };
    test.into_iter().take(take).cloned().collect()
}

fn scene(t: &Trajectory) -> Scene<'_> {
    Scene {
        history: &t.history,
        neighbors: &t.neighbors,
    }
}

fn with_suffix(p: &Path, id: u64) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = p.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    p.with_file_name(format!("{stem}-{id}{ext}"))
}

fn predict(a: Predict, cfg: &Config) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    if a.c.len() != model.scores {
        return Err(Error::ScoreCount {
            expected: model.scores,
            got: a.c.len(),
        });
    }
    if a.samples == 0 {
        return Err(Error::InvalidArgument("--samples must be >= 1".into()));
    }
    let corpus = read_corpus(&a.corpus)?;
    let chosen: Vec<&Trajectory> = if a.id.is_empty() {
        test_histories(&corpus, 1)
            .first()
            .and_then(|t| corpus.trajectories.iter().find(|x| x.id == t.id))
            .into_iter()
            .collect()
    } else {
        a.id.iter()
            .map(|id| {
                corpus
                    .trajectories
                    .iter()
                    .find(|t| t.id == *id)
                    .ok_or_else(|| Error::Data(format!("no trajectory with id {id}")))
            })
            .collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        return Err(Error::Data("corpus has no test trajectories".into()));
    }
    let mode = a.mode.unwrap_or(ckpt.meta.config.diffusion.sample_mode);
    let scenes: Vec<Scene> = chosen.iter().map(|t| scene(t)).collect();
    let feats = model.features(&scenes)?;
    let names = &ckpt.meta.constraints[..model.scores];
    let mut w = sink(&a.out)?;
    writeln!(w, "id,draw,{},step,x,y", names.join(","))?;
    let c_cols: Vec<String> = a.c.iter().map(|c| c.to_string()).collect();
    let conds = vec![a.c.clone(); a.samples];
    for (t, f) in chosen.iter().zip(&feats) {
        let mut rng = rng_from(derive_seed(cfg.seed, t.id));
        let futures = model.sample(f, t.origin(), &conds, mode, &mut rng)?;
        for (d, fut) in futures.iter().enumerate() {
            for (k, p) in fut.iter().enumerate() {
                writeln!(w, "{},{d},{},{},{},{}", t.id, c_cols.join(","), k + 1, p[0], p[1])?;
            }
        }
        if let Some(p) = &a.svg {
            let path = if chosen.len() > 1 { with_suffix(p, t.id) } else { p.clone() };
            let shade = a.c[0];
            let samples: Vec<(f64, Vec<_>)> = futures.into_iter().map(|f| (shade, f)).collect();
            let title = format!("trajectory {} at c = {:?}", t.id, a.c);
            write_file(&path, &svg::trajectory_overlay(&title, &t.history, Some(&t.future), &samples))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn evaluate(a: Eval, cfg: &Config) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let corpus = read_corpus(&a.corpus)?;
    let trajs = test_histories(&corpus, a.max_histories.unwrap_or(cfg.eval.max_histories));
    if trajs.is_empty() {
        return Err(Error::Data("corpus has no test trajectories".into()));
    }
    let report = eval::evaluate(
        &model,
        &trajs,
        a.n_c.unwrap_or(cfg.eval.n_c),
        a.n_s.unwrap_or(cfg.eval.n_s),
        cfg.seed,
        0,
    )?;
    let cv = eval::constant_velocity_report(&trajs)?;
    let mut w = sink(&a.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    eprintln!(
        "{} histories: minADE {:.4} minFDE {:.4} (constant velocity {:.4} / {:.4}) in {:.1}s",
        trajs.len(),
        report.min_ade,
        report.min_fde,
        cv.min_ade,
        cv.min_fde,
        report.runtime_seconds
    );
    Ok(())
}

fn sweep(a: Sweep, cfg: &Config) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let kinds = ckpt.conditioned_on()?;
    let corpus = read_corpus(&a.corpus)?;
    let trajs = test_histories(&corpus, a.max_histories.unwrap_or(cfg.eval.max_histories));
    if trajs.is_empty() {
        return Err(Error::Data("corpus has no test trajectories".into()));
    }
    let mut w = sink(&a.out)?;
    let figure = match a.kind {
        SweepKind::Ablation => {
            let reports = eval::ablation_sweep(&model, &trajs, &eval::ABLATION_GRID, cfg.seed)?;
            eval::write_sweep_csv(&reports, &mut w)?;
            let pts: Vec<(f64, f64)> = reports.iter().map(|r| (r.n_c as f64, r.min_ade)).collect();
            svg::line_plot("minADE by N_c (N_c·N_s ≤ 400)", "N_c", "minADE (m)", &[("minADE".into(), pts)])
        }
        SweepKind::Adherence => {
            let kind = a.constraint.unwrap_or(kinds[0]);
            let axis = kinds.iter().position(|k| *k == kind).ok_or_else(|| {
                Error::InvalidArgument(format!("the denoiser is not conditioned on {kind}"))
            })?;
            let r = eval::adherence_curve(
                &model,
                &trajs,
                kind,
                axis,
                cfg.eval.adherence_grid,
                cfg.eval.adherence_samples,
                cfg.seed,
            )?;
            r.write_csv(&mut w)?;
            let pts = r.grid.iter().copied().zip(r.mean_feature.iter().copied()).collect();
            let ylabel = if kind.is_speed() { "mean speed (m/s)" } else { "signed turn (rad)" };
            svg::line_plot(&format!("{kind}: rho = {:.3}", r.rho), "c", ylabel, &[(kind.to_string(), pts)])
        }
        SweepKind::Grid => {
            if kinds.len() != 2 {
                return Err(Error::ScoreCount {
                    expected: 2,
                    got: kinds.len(),
                });
            }
            let r = eval::multi_constraint_grid(
                &model,
                &trajs,
                [kinds[0], kinds[1]],
                cfg.eval.grid_size,
                cfg.eval.grid_samples,
                cfg.seed,
            )?;
            r.write_csv(&mut w)?;
            let series = r
                .cells
                .chunk_by(|x, y| x.c1 == y.c1)
                .map(|row| {
                    let y = |c: &eval::GridCell| if kinds[0].is_speed() { c.mean_speed } else { c.mean_turn };
                    (format!("c1 = {:.2}", row[0].c1), row.iter().map(|c| (c.c2, y(c))).collect())
                })
                .collect::<Vec<_>>();
            svg::line_plot(
                &format!("{} feature across {} score", kinds[0], kinds[1]),
                "c2",
                if kinds[0].is_speed() { "mean speed (m/s)" } else { "signed turn (rad)" },
                &series,
            )
        }
    };
    w.flush()?;
    if let Some(p) = &a.svg {
        write_file(p, &figure)?;
    }
    Ok(())
}
