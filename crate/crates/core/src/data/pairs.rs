//! Automated pairwise labeling of candidate futures.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::trajectory_features;
use super::trajectory::{is_test_id, Corpus, Point, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from, StdRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    SlowDown,
    TurnRight,
    TurnLeft,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::SlowDown => "slow-down",
            ConstraintKind::TurnRight => "turn-right",
            ConstraintKind::TurnLeft => "turn-left",
        }
    }

    pub fn default_tie_threshold(self) -> f64 {
        match self {
            ConstraintKind::SlowDown => 0.1,
            ConstraintKind::TurnRight | ConstraintKind::TurnLeft => 0.087,
        }
    }

    /// Whether the constraint is read off the speed axis rather than the turn axis.
    pub fn is_speed(self) -> bool {
        self == ConstraintKind::SlowDown
    }

    /// Sign relating the underlying feature to preference: a larger
    /// `direction() * feature` is preferred.
    pub fn direction(self) -> f64 {
        match self {
            ConstraintKind::SlowDown | ConstraintKind::TurnRight => -1.0,
            ConstraintKind::TurnLeft => 1.0,
        }
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow-down" => Ok(ConstraintKind::SlowDown),
            "turn-right" => Ok(ConstraintKind::TurnRight),
            "turn-left" => Ok(ConstraintKind::TurnLeft),
            other => Err(Error::InvalidArgument(format!(
                "unknown constraint `{other}` (expected slow-down, turn-right or turn-left)"
            ))),
        }
    }
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Labels a pair of futures by a structured proxy of the constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotator {
    pub kind: ConstraintKind,
    /// Feature gaps below this are ties and the pair is skipped.
    pub tie_threshold: f64,
}

impl Annotator {
    pub fn new(kind: ConstraintKind) -> Self {
        Self {
            kind,
            tie_threshold: kind.default_tie_threshold(),
        }
    }

    /// Index of the preferred future, or `None` for a skipped pair.
    pub fn label(&self, history: &[Point], a: &[Point], b: &[Point], dt: f64) -> Result<Option<u8>> {
        let fa = trajectory_features(a, history, dt)?;
        let fb = trajectory_features(b, history, dt)?;
        let (va, vb) = if self.kind.is_speed() {
            (fa.mean_speed, fb.mean_speed)
        } else {
            if !fa.turn_defined || !fb.turn_defined {
                return Ok(None);
            }
            (fa.signed_turn, fb.signed_turn)
        };
        if !((va - vb).abs() >= self.tie_threshold) {
            return Ok(None);
        }
        let d = self.kind.direction();
        Ok(Some(if d * va > d * vb { 0 } else { 1 }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSample {
    /// Id of the corpus trajectory the history came from.
    pub id: u64,
    pub history: Vec<Point>,
    #[serde(default)]
    pub neighbors: Vec<Vec<Point>>,
    pub future_a: Vec<Point>,
    pub future_b: Vec<Point>,
    pub label: u8,
}

impl PairwiseSample {
    pub fn winner(&self) -> &[Point] {
        if self.label == 0 {
            &self.future_a
        } else {
            &self.future_b
        }
    }

    pub fn loser(&self) -> &[Point] {
        if self.label == 0 {
            &self.future_b
        } else {
            &self.future_a
        }
    }

    /// The whole sample rotated by `angle` radians about the last history
    /// point. Speed and signed turn labels are unchanged by rotation.
    pub fn rotated(&self, angle: f64) -> Self {
        let o = *self.history.last().expect("non-empty history");
        let (sin, cos) = angle.sin_cos();
        let rot = |pts: &[Point]| -> Vec<Point> {
            pts.iter()
                .map(|p| {
                    let (x, y) = (p[0] - o[0], p[1] - o[1]);
                    [o[0] + cos * x - sin * y, o[1] + sin * x + cos * y]
                })
                .collect()
        };
        Self {
            id: self.id,
            history: rot(&self.history),
            neighbors: self.neighbors.iter().map(|n| rot(n)).collect(),
            future_a: rot(&self.future_a),
            future_b: rot(&self.future_b),
            label: self.label,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            future_a: self.future_b.clone(),
            future_b: self.future_a.clone(),
            label: 1 - self.label,
            ..self.clone()
        }
    }
}

/// Constant-velocity extrapolation with a random speed change and a
/// constant random yaw rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateConfig {
    /// Range of the factor applied to the last observed speed.
    pub speed_factor: [f64; 2],
    pub min_speed: f64,
    pub max_speed: f64,
    /// Yaw rate is drawn from `[-max_yaw_rate, max_yaw_rate]`, rad/s.
    pub max_yaw_rate: f64,
    /// Time over which the speed eases to its new value, seconds.
    pub ease_seconds: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            speed_factor: [0.3, 1.7],
            min_speed: 0.2,
            max_speed: 3.0,
            max_yaw_rate: 0.6,
            ease_seconds: 1.2,
        }
    }
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.speed_factor[0] > 0.0
            && self.speed_factor[0] <= self.speed_factor[1]
            && self.min_speed >= 0.0
            && self.min_speed <= self.max_speed
            && self.max_yaw_rate >= 0.0
            && self.ease_seconds >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid candidate generator settings: {self:?}")))
        }
    }

    pub fn sample(&self, history: &[Point], m: usize, dt: f64, rng: &mut StdRng) -> Vec<Point> {
        let n = history.len();
        let last = history[n - 1];
        let v = [(last[0] - history[n - 2][0]) / dt, (last[1] - history[n - 2][1]) / dt];
        let v0 = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let mut heading = if v0 > 1e-9 {
            v[1].atan2(v[0])
        } else {
            let d = [last[0] - history[0][0], last[1] - history[0][1]];
            d[1].atan2(d[0])
        };
        let factor = rng.random_range(self.speed_factor[0]..=self.speed_factor[1]);
        let v1 = (v0 * factor).clamp(self.min_speed, self.max_speed);
        let yaw = rng.random_range(-self.max_yaw_rate..=self.max_yaw_rate);
        let mut p = last;
        (1..=m)
            .map(|k| {
                let t = k as f64 * dt;
                let w = if self.ease_seconds > 0.0 {
                    (t / self.ease_seconds).min(1.0)
                } else {
                    1.0
                };
                let speed = v0 + (v1 - v0) * w;
                heading += yaw * dt;
                p = [p[0] + speed * dt * heading.cos(), p[1] + speed * dt * heading.sin()];
                p
            })
            .collect()
    }
}

/// Which part of the corpus histories are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitSel {
    All,
    Train,
    Test,
}

impl FromStr for SplitSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SplitSel::All),
            "train" => Ok(SplitSel::Train),
            "test" => Ok(SplitSel::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}` (expected all, train or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairOptions {
    pub annotator: Annotator,
    /// Fraction of eligible histories that get labeled, in (0, 1].
    pub fraction: f64,
    pub pairs_per_history: usize,
    pub split: SplitSel,
    pub candidates: CandidateConfig,
}

impl PairOptions {
    pub fn new(kind: ConstraintKind) -> Self {
        Self {
            annotator: Annotator::new(kind),
            fraction: 0.01,
            pairs_per_history: 4,
            split: SplitSel::Train,
            candidates: CandidateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PairReport {
    pub histories: usize,
    pub pairs: usize,
    pub skipped_ties: usize,
}

/// Number of histories labeled for a given pool size.
pub fn selected_count(pool: usize, fraction: f64) -> usize {
    ((fraction * pool as f64).round() as usize).clamp(1, pool.max(1))
}

pub fn make_pairs(corpus: &Corpus, opts: &PairOptions, seed: u64) -> Result<(Vec<PairwiseSample>, PairReport)> {
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {}", opts.fraction)));
    }
    if opts.pairs_per_history == 0 {
        return Err(Error::InvalidArgument("pairs_per_history must be >= 1".into()));
    }
    opts.candidates.validate()?;
    let mut pool: Vec<&Trajectory> = corpus
        .trajectories
        .iter()
        .filter(|t| match opts.split {
            SplitSel::All => true,
            SplitSel::Train => !is_test_id(t.id),
            SplitSel::Test => is_test_id(t.id),
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::Data("no trajectories in the selected split".into()));
    }
    let count = selected_count(pool.len(), opts.fraction);
    pool.shuffle(&mut rng_from(seed));
    pool.truncate(count);
    pool.sort_by_key(|t| t.id);

    let (m, dt) = (corpus.meta.m, corpus.meta.dt);
    let mut report = PairReport {
        histories: count,
        ..PairReport::default()
    };
    let mut out = Vec::new();
    for t in pool {
        let mut rng = derived_rng(seed, t.id);
        for _ in 0..opts.pairs_per_history {
            let a = opts.candidates.sample(&t.history, m, dt, &mut rng);
            let b = opts.candidates.sample(&t.history, m, dt, &mut rng);
            match opts.annotator.label(&t.history, &a, &b, dt)? {
                Some(label) if a != b => out.push(PairwiseSample {
                    id: t.id,
                    history: t.history.clone(),
                    neighbors: t.neighbors.clone(),
                    future_a: a,
                    future_b: b,
                    label,
                }),
                _ => report.skipped_ties += 1,
            }
        }
    }
    report.pairs = out.len();
    Ok((out, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairsHeader {
    pub format: String,
    pub version: u32,
    pub constraint: ConstraintKind,
    pub dt: f64,
}

const PAIRS_FORMAT: &str = "ctd-pairs";

#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub constraint: ConstraintKind,
    pub dt: f64,
    pub pairs: Vec<PairwiseSample>,
}

impl PairSet {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = PairsHeader {
            format: PAIRS_FORMAT.into(),
            version: 1,
            constraint: self.constraint,
            dt: self.dt,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Data(format!("cannot open pairs {}: {e}", path.display())))?;
        let mut header: Option<PairsHeader> = None;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            };
            if header.is_none() {
                let h: PairsHeader = serde_json::from_str(&line).map_err(parse_err)?;
                if h.format != PAIRS_FORMAT || h.version != 1 {
                    return Err(Error::Data(format!("unsupported pairs format {} v{}", h.format, h.version)));
                }
                header = Some(h);
                continue;
            }
            let p: PairwiseSample = serde_json::from_str(&line).map_err(parse_err)?;
            if p.label > 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("label must be 0 or 1, got {}", p.label),
                });
            }
            pairs.push(p);
        }
        let h = header.ok_or_else(|| Error::Data("pairs file has no header".into()))?;
        Ok(Self {
            constraint: h.constraint,
            dt: h.dt,
            pairs,
        })
    }
}
