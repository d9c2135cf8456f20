//! Best-of-N displacement metrics and constraint adherence sweeps.

pub mod svg;

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::data::features::trajectory_features;
use crate::data::pairs::ConstraintKind;
use crate::data::{dist, Point, Trajectory};
use crate::diffusion::{c_grid, Model, SampleMode};
use crate::encoder::Scene;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Minimum over samples of the average and of the final displacement.
pub fn min_ade_fde(samples: &[Vec<Point>], truth: &[Point]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let (mut ade, mut fde) = (f64::INFINITY, f64::INFINITY);
    for s in samples {
        if s.len() != truth.len() {
            return Err(Error::shape("min_ade_fde", format!("sample has {} points, truth {}", s.len(), truth.len())));
        }
        let d: Vec<f64> = s.iter().zip(truth).map(|(a, b)| dist(*a, *b)).collect();
        ade = ade.min(d.iter().sum::<f64>() / d.len() as f64);
        fde = fde.min(*d.last().expect("non-empty future"));
    }
    Ok((ade, fde))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn scene(t: &Trajectory) -> Scene<'_> {
    Scene {
        history: &t.history,
        neighbors: &t.neighbors,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryMetric {
    pub id: u64,
    pub min_ade: f64,
    pub min_fde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub n_c: usize,
    pub n_s: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub per_trajectory: Vec<TrajectoryMetric>,
    pub runtime_seconds: f64,
}

impl MetricReport {
    fn from_rows(n_c: usize, n_s: usize, rows: Vec<TrajectoryMetric>, started: Instant) -> Self {
        let k = rows.len().max(1) as f64;
        Self {
            n_c,
            n_s,
            min_ade: rows.iter().map(|r| r.min_ade).sum::<f64>() / k,
            min_fde: rows.iter().map(|r| r.min_fde).sum::<f64>() / k,
            per_trajectory: rows,
            runtime_seconds: started.elapsed().as_secs_f64(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "id,n_c,n_s,min_ade,min_fde")?;
        for r in &self.per_trajectory {
            writeln!(w, "{},{},{},{},{}", r.id, self.n_c, self.n_s, r.min_ade, r.min_fde)?;
        }
        writeln!(w, "mean,{},{},{},{}", self.n_c, self.n_s, self.min_ade, self.min_fde)?;
        Ok(())
    }
}

/// Best-of-`n_c·n_s` metrics over `trajs`. Draws for trajectory `id` in
/// cell `cell` come from a stream derived from `(seed, cell, id)`.
pub fn evaluate(model: &Model, trajs: &[Trajectory], n_c: usize, n_s: usize, seed: u64, cell: u64) -> Result<MetricReport> {
    let started = Instant::now();
    let scenes: Vec<Scene> = trajs.iter().map(scene).collect();
    let feats = model.features(&scenes)?;
    let mut rows = Vec::with_capacity(trajs.len());
    for (t, f) in trajs.iter().zip(&feats) {
        let mut rng = rng_from(derive_seed(derive_seed(seed, cell), t.id));
        let preds = model.best_of(f, t.origin(), n_c, n_s, &mut rng)?;
        let samples: Vec<Vec<Point>> = preds.into_iter().map(|p| p.future).collect();
        let (ade, fde) = min_ade_fde(&samples, &t.future)?;
        rows.push(TrajectoryMetric {
            id: t.id,
            min_ade: ade,
            min_fde: fde,
        });
    }
    Ok(MetricReport::from_rows(n_c, n_s, rows, started))
}

/// The `(N_c, N_s)` combinations of the ablation table.
pub const ABLATION_GRID: [(usize, usize); 5] = [(20, 20), (20, 1), (15, 5), (10, 10), (5, 15)];

pub fn ablation_sweep(model: &Model, trajs: &[Trajectory], grid: &[(usize, usize)], seed: u64) -> Result<Vec<MetricReport>> {
    grid.iter()
        .enumerate()
        .map(|(i, (c, s))| evaluate(model, trajs, *c, *s, seed, i as u64))
        .collect()
}

pub fn write_sweep_csv<W: Write>(reports: &[MetricReport], w: &mut W) -> Result<()> {
    writeln!(w, "n_c,n_s,min_ade,min_fde,runtime_seconds")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{}", r.n_c, r.n_s, r.min_ade, r.min_fde, r.runtime_seconds)?;
    }
    Ok(())
}

/// Constant-velocity extrapolation of the last history step.
pub fn constant_velocity(history: &[Point], m: usize) -> Vec<Point> {
    let n = history.len();
    let (last, prev) = (history[n - 1], history[n - 2]);
    let v = [last[0] - prev[0], last[1] - prev[1]];
    (1..=m).map(|k| [last[0] + k as f64 * v[0], last[1] + k as f64 * v[1]]).collect()
}

pub fn constant_velocity_report(trajs: &[Trajectory]) -> Result<MetricReport> {
    let started = Instant::now();
    let rows = trajs
        .iter()
        .map(|t| {
            let (ade, fde) = min_ade_fde(&[constant_velocity(&t.history, t.future.len())], &t.future)?;
            Ok(TrajectoryMetric {
                id: t.id,
                min_ade: ade,
                min_fde: fde,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport::from_rows(1, 1, rows, started))
}

/// Feature a constraint is read from.
pub fn feature_of(kind: ConstraintKind, future: &[Point], history: &[Point], dt: f64) -> Result<Option<f64>> {
    let f = trajectory_features(future, history, dt)?;
    Ok(if kind.is_speed() {
        Some(f.mean_speed)
    } else {
        f.turn_defined.then_some(f.signed_turn)
    })
}

/// Below this |ρ| a model is reported as not adhering.
pub const ADHERENCE_THRESHOLD: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdherenceReport {
    pub constraint: ConstraintKind,
    pub axis: usize,
    pub grid: Vec<f64>,
    pub mean_feature: Vec<f64>,
    pub rho: f64,
    /// Fraction of adjacent grid steps moving in the constraint's direction.
    pub monotone_fraction: f64,
    pub adherent: bool,
    pub runtime_seconds: f64,
}

impl AdherenceReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let feat = if self.constraint.is_speed() { "mean_speed" } else { "signed_turn" };
        writeln!(w, "c,{feat}")?;
        for (c, f) in self.grid.iter().zip(&self.mean_feature) {
            writeln!(w, "{c},{f}")?;
        }
        writeln!(
            w,
            "# constraint={} rho={} monotone_fraction={} adherent={}",
            self.constraint, self.rho, self.monotone_fraction, self.adherent
        )?;
        Ok(())
    }
}

fn sample_features(
    model: &Model,
    trajs: &[Trajectory],
    conds: &[Vec<f64>],
    n_s: usize,
    kinds: &[ConstraintKind],
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    // out[cell][kind] collects feature values over histories and draws.
    let mut out = vec![vec![Vec::new(); kinds.len()]; conds.len()];
    let scenes: Vec<Scene> = trajs.iter().map(scene).collect();
    let feats = model.features(&scenes)?;
    let rows: Vec<Vec<f64>> = conds.iter().flat_map(|c| std::iter::repeat_n(c.clone(), n_s)).collect();
    for (t, f) in trajs.iter().zip(&feats) {
        let mut rng = rng_from(derive_seed(seed, t.id));
        let samples = model.sample(f, t.origin(), &rows, SampleMode::Ancestral, &mut rng)?;
        for (i, s) in samples.iter().enumerate() {
            for (k, kind) in kinds.iter().enumerate() {
                if let Some(v) = feature_of(*kind, s, &t.history, model.dt)? {
                    out[i / n_s][k].push(v);
                }
            }
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn monotone_fraction(values: &[f64], direction: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let good = values.windows(2).filter(|w| direction * (w[1] - w[0]) > 0.0).count();
    good as f64 / (values.len() - 1) as f64
}

/// Sweeps score `axis` over a `grid_n`-point grid, holding other scores at 0.5.
pub fn adherence_curve(
    model: &Model,
    trajs: &[Trajectory],
    kind: ConstraintKind,
    axis: usize,
    grid_n: usize,
    n_s: usize,
    seed: u64,
) -> Result<AdherenceReport> {
    if axis >= model.scores {
        return Err(Error::InvalidArgument(format!(
            "constraint axis {axis} out of range for a model with {} scores",
            model.scores
        )));
    }
    if grid_n < 2 || n_s == 0 || trajs.is_empty() {
        return Err(Error::InvalidArgument("adherence needs grid >= 2, N_s >= 1 and test histories".into()));
    }
    let started = Instant::now();
    let grid = c_grid(grid_n);
    let conds: Vec<Vec<f64>> = grid
        .iter()
        .map(|c| {
            let mut v = vec![0.5; model.scores];
            v[axis] = *c;
            v
        })
        .collect();
    let vals = sample_features(model, trajs, &conds, n_s, &[kind], seed)?;
    let mean_feature: Vec<f64> = vals.iter().map(|v| mean(&v[0])).collect();
    let rho = spearman(&grid, &mean_feature);
    Ok(AdherenceReport {
        constraint: kind,
        axis,
        monotone_fraction: monotone_fraction(&mean_feature, kind.direction()),
        adherent: rho.abs() >= ADHERENCE_THRESHOLD,
        grid,
        mean_feature,
        rho,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub c1: f64,
    pub c2: f64,
    pub mean_turn: f64,
    pub mean_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    pub constraints: [ConstraintKind; 2],
    pub cells: Vec<GridCell>,
    /// Spearman ρ of each axis against its own feature, averaged over the
    /// values the other axis is held at.
    pub rho: [f64; 2],
    /// `effect[a][f]`: mean absolute change of feature `f` (0 = axis 1's
    /// feature, 1 = axis 2's) across axis `a`'s range, in units of that
    /// feature's spread over all samples.
    pub effect: [[f64; 2]; 2],
    pub runtime_seconds: f64,
}

impl GridReport {
    /// Matched-axis effect over cross-axis effect, per axis.
    pub fn separation(&self) -> [f64; 2] {
        [self.effect[0][0] / self.effect[0][1], self.effect[1][1] / self.effect[1][0]]
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "c1,c2,mean_turn,mean_speed")?;
        for c in &self.cells {
            writeln!(w, "{},{},{},{}", c.c1, c.c2, c.mean_turn, c.mean_speed)?;
        }
        let sep = self.separation();
        writeln!(
            w,
            "# axes={},{} rho={},{} separation={},{}",
            self.constraints[0], self.constraints[1], self.rho[0], self.rho[1], sep[0], sep[1]
        )?;
        Ok(())
    }
}

fn std_of(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

/// Two-score sweep over a `grid_n × grid_n` grid of condition values.
pub fn multi_constraint_grid(
    model: &Model,
    trajs: &[Trajectory],
    kinds: [ConstraintKind; 2],
    grid_n: usize,
    n_s: usize,
    seed: u64,
) -> Result<GridReport> {
    if model.scores != 2 {
        return Err(Error::ScoreCount {
            expected: 2,
            got: model.scores,
        });
    }
    if grid_n < 2 || n_s == 0 || trajs.is_empty() {
        return Err(Error::InvalidArgument("grid needs size >= 2, N_s >= 1 and test histories".into()));
    }
    let started = Instant::now();
    let grid = c_grid(grid_n);
    let conds: Vec<Vec<f64>> = grid.iter().flat_map(|a| grid.iter().map(move |b| vec![*a, *b])).collect();
    let vals = sample_features(model, trajs, &conds, n_s, &kinds, seed)?;
    // feat[i][j][k]: mean of feature k at (grid[i], grid[j]).
    let feat: Vec<Vec<[f64; 2]>> = (0..grid_n)
        .map(|i| (0..grid_n).map(|j| [mean(&vals[i * grid_n + j][0]), mean(&vals[i * grid_n + j][1])]).collect())
        .collect();
    let spread = [
        std_of(&vals.iter().flat_map(|v| v[0].clone()).collect::<Vec<_>>()),
        std_of(&vals.iter().flat_map(|v| v[1].clone()).collect::<Vec<_>>()),
    ];
    let line = |axis: usize, held: usize, k: usize| -> Vec<f64> {
        (0..grid_n)
            .map(|v| if axis == 0 { feat[v][held][k] } else { feat[held][v][k] })
            .collect()
    };
    let mut rho = [0.0; 2];
    let mut effect = [[0.0; 2]; 2];
    for axis in 0..2 {
        for held in 0..grid_n {
            rho[axis] += spearman(&grid, &line(axis, held, axis)) / grid_n as f64;
            for (k, e) in effect[axis].iter_mut().enumerate() {
                let l = line(axis, held, k);
                *e += (l[grid_n - 1] - l[0]).abs() / spread[k] / grid_n as f64;
            }
        }
    }
    let turn_k = if kinds[0].is_speed() { 1 } else { 0 };
    let cells = (0..grid_n)
        .flat_map(|i| (0..grid_n).map(move |j| (i, j)))
        .map(|(i, j)| GridCell {
            c1: grid[i],
            c2: grid[j],
            mean_turn: feat[i][j][turn_k],
            mean_speed: feat[i][j][1 - turn_k],
        })
        .collect();
    Ok(GridReport {
        constraints: kinds,
        cells,
        rho,
        effect,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sample_scores_zero() {
        let gt: Vec<Point> = (0..12).map(|i| [i as f64, 0.5]).collect();
        assert_eq!(min_ade_fde(&[gt.clone()], &gt).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hand_computed_minimum() {
        let gt = vec![[0.0, 0.0]; 12];
        let a = vec![[1.0, 0.0]; 12];
        let b = vec![[0.0, 0.5]; 12];
        assert_eq!(min_ade_fde(&[a, b], &gt).unwrap(), (0.5, 0.5));
        assert!(min_ade_fde(&[], &gt).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), 0.0);
    }

    #[test]
    fn monotone_fraction_counts_direction() {
        assert_eq!(monotone_fraction(&[3.0, 2.0, 2.5, 1.0], -1.0), 2.0 / 3.0);
    }

    #[test]
    fn constant_velocity_continues_last_step() {
        let h: Vec<Point> = (0..8).map(|i| [i as f64 * 0.5, 1.0]).collect();
        let cv = constant_velocity(&h, 3);
        assert_eq!(cv, vec![[4.0, 1.0], [4.5, 1.0], [5.0, 1.0]]);
    }
}
