use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Planar position in meters.
pub type Point = [f64; 2];

pub const DEFAULT_N: usize = 8;
pub const DEFAULT_M: usize = 12;
pub const DEFAULT_DT: f64 = 0.4;
pub const DEFAULT_V_MAX: f64 = 4.0;

/// What a synthetic agent does at the junction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    Left,
    Right,
    Straight,
}

/// One agent's observed history, ground-truth future and neighbor histories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub history: Vec<Point>,
    pub future: Vec<Point>,
    #[serde(default)]
    pub neighbors: Vec<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maneuver: Option<Maneuver>,
}

impl Trajectory {
    /// Last observed position; the origin of the ego-relative frame.
    pub fn origin(&self) -> Point {
        *self.history.last().expect("non-empty history")
    }

    /// Future translated into the ego-relative frame.
    pub fn future_relative(&self) -> Vec<Point> {
        relative(&self.future, self.origin())
    }
}

pub fn relative(points: &[Point], origin: Point) -> Vec<Point> {
    points.iter().map(|p| [p[0] - origin[0], p[1] - origin[1]]).collect()
}

pub fn translate(points: &[Point], by: Point) -> Vec<Point> {
    points.iter().map(|p| [p[0] + by[0], p[1] + by[1]]).collect()
}

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

pub fn unflatten(values: &[f64]) -> Vec<Point> {
    values.chunks(2).map(|c| [c[0], c[1]]).collect()
}

/// Corpus-wide settings recorded in the header line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub n: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: CorpusMeta,
}

const CORPUS_FORMAT: &str = "ctd-corpus";

/// Membership of the held-out split: 20% of ids, chosen by hash.
pub fn is_test_id(id: u64) -> bool {
    derive_seed(0x7E57_5E1E_C7ED, id) % 5 == 0
}

impl Corpus {
    pub fn new(meta: CorpusMeta, trajectories: Vec<Trajectory>) -> Result<Self> {
        let c = Self { meta, trajectories };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Non-empty, uniform `n`/`m`, finite coordinates.
    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        if !(self.meta.dt > 0.0) || self.meta.n < 2 || self.meta.m < 2 {
            return Err(Error::Data(format!(
                "invalid corpus header: dt={} n={} m={}",
                self.meta.dt, self.meta.n, self.meta.m
            )));
        }
        for t in &self.trajectories {
            if t.history.len() != self.meta.n || t.future.len() != self.meta.m {
                return Err(Error::Data(format!(
                    "trajectory {}: history/future length {}/{} but corpus has n={} m={}",
                    t.id,
                    t.history.len(),
                    t.future.len(),
                    self.meta.n,
                    self.meta.m
                )));
            }
            if let Some(nb) = t.neighbors.iter().find(|nb| nb.len() != self.meta.n) {
                return Err(Error::Data(format!(
                    "trajectory {}: neighbor history has {} points, expected {}",
                    t.id,
                    nb.len(),
                    self.meta.n
                )));
            }
            let finite = t
                .history
                .iter()
                .chain(&t.future)
                .chain(t.neighbors.iter().flatten())
                .all(|p| p[0].is_finite() && p[1].is_finite());
            if !finite {
                return Err(Error::Data(format!("trajectory {}: non-finite coordinate", t.id)));
            }
        }
        Ok(())
    }

    /// Ids whose consecutive ego steps exceed `v_max · dt`.
    pub fn speed_violations(&self, v_max: f64) -> Vec<u64> {
        let bound = v_max * self.meta.dt;
        self.trajectories
            .iter()
            .filter(|t| {
                t.history
                    .iter()
                    .chain(&t.future)
                    .collect::<Vec<_>>()
                    .windows(2)
                    .any(|w| dist(*w[0], *w[1]) > bound)
            })
            .map(|t| t.id)
            .collect()
    }

    /// Splits into (train, test) by [`is_test_id`].
    pub fn split(&self) -> (Vec<&Trajectory>, Vec<&Trajectory>) {
        self.trajectories.iter().partition(|t| !is_test_id(t.id))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = CorpusHeader {
            format: CORPUS_FORMAT.into(),
            version: 1,
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        writeln!(w)?;
        for t in &self.trajectories {
            serde_json::to_writer(&mut *w, t)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("cannot open corpus {}: {e}", path.display())))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header: CorpusHeader = loop {
            match lines.next() {
                None => return Err(Error::Data("corpus file has no header".into())),
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("bad corpus header: {e}"),
                    })?;
                }
            }
        };
        if header.format != CORPUS_FORMAT || header.version != 1 {
            return Err(Error::Data(format!(
                "unsupported corpus format {} v{}",
                header.format, header.version
            )));
        }
        let mut trajectories = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            trajectories.push(t);
        }
        Corpus::new(header.meta, trajectories)
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
