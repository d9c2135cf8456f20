//! Synthetic pedestrian scenes.
//!
//! Each agent walks toward a junction at a constant speed, then turns left,
//! turns right or keeps going along an arc of random radius while easing to
//! a second speed. Both speeds are drawn from the same range, so the future
//! speed and turn are only partly predictable from the history.

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::trajectory::{dist, Corpus, CorpusMeta, Maneuver, Point, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, StdRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    TIntersection,
    StraightHall,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::TIntersection => "t-intersection",
            Scenario::StraightHall => "straight-hall",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t-intersection" => Ok(Scenario::TIntersection),
            "straight-hall" => Ok(Scenario::StraightHall),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}` (expected t-intersection or straight-hall)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Std of the positional jitter; each draw is clipped to 2σ in norm.
    pub jitter: f64,
    /// Relative weights of left, right and straight maneuvers.
    pub maneuver_mix: [f64; 3],
    pub max_neighbors: usize,
    pub neighbor_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: super::DEFAULT_N,
            m: super::DEFAULT_M,
            dt: super::DEFAULT_DT,
            speed_min: 0.5,
            speed_max: 2.5,
            jitter: 0.03,
            maneuver_mix: [1.0, 1.0, 1.0],
            max_neighbors: 3,
            neighbor_radius: 5.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n >= 2
            && self.m >= 2
            && self.dt > 0.0
            && self.speed_min > 0.0
            && self.speed_min <= self.speed_max
            && self.jitter >= 0.0
            && self.maneuver_mix.iter().all(|w| *w >= 0.0)
            && self.maneuver_mix.iter().sum::<f64>() > 0.0
            && self.neighbor_radius > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic data settings: {self:?}")))
        }
    }

    /// Normalized maneuver probabilities (left, right, straight).
    pub fn maneuver_probabilities(&self) -> [f64; 3] {
        let s: f64 = self.maneuver_mix.iter().sum();
        self.maneuver_mix.map(|w| w / s)
    }
}

const SUBSTEPS: usize = 20;
const RAMP_SECONDS: f64 = 1.2;

pub fn generate_synthetic(scenario: Scenario, count: usize, seed: u64, cfg: &SynthConfig) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    cfg.validate()?;
    let trajectories = (0..count as u64)
        .map(|id| generate_one(scenario, id, &mut derived_rng(seed, id), cfg))
        .collect();
    Corpus::new(
        CorpusMeta {
            scenario: scenario.name().into(),
            seed,
            dt: cfg.dt,
            n: cfg.n,
            m: cfg.m,
        },
        trajectories,
    )
}

fn pick_maneuver(rng: &mut StdRng, cfg: &SynthConfig) -> Maneuver {
    let [l, r, _] = cfg.maneuver_probabilities();
    let u: f64 = rng.random();
    if u < l {
        Maneuver::Left
    } else if u < l + r {
        Maneuver::Right
    } else {
        Maneuver::Straight
    }
}

fn generate_one(scenario: Scenario, id: u64, rng: &mut StdRng, cfg: &SynthConfig) -> Trajectory {
    let heading_noise = Normal::new(0.0, 0.08).unwrap();
    let total = cfg.n + cfg.m;

    let base_heading = match scenario {
        Scenario::TIntersection => FRAC_PI_2,
        Scenario::StraightHall => {
            if rng.random_bool(0.5) {
                0.0
            } else {
                PI
            }
        }
    };
    let heading0 = base_heading + heading_noise.sample(rng);
    let v_in = rng.random_range(cfg.speed_min..=cfg.speed_max);
    let v_out = rng.random_range(cfg.speed_min..=cfg.speed_max);
    let junction_time = rng.random_range((cfg.n as f64 - 2.0)..=(cfg.n as f64 + 4.0)) * cfg.dt;
    let maneuver = pick_maneuver(rng, cfg);
    let sweep = match scenario {
        Scenario::TIntersection => rng.random_range(0.7..=1.0) * FRAC_PI_2,
        Scenario::StraightHall => rng.random_range(0.2..=0.6),
    };
    let turn = match maneuver {
        Maneuver::Left => sweep,
        Maneuver::Right => -sweep,
        Maneuver::Straight => Normal::new(0.0, 0.05).unwrap().sample(rng),
    };
    let radius = rng.random_range(1.0..=3.0);

    // Integrate heading and position on a fine grid; keep every SUBSTEPS-th point.
    let h = cfg.dt / SUBSTEPS as f64;
    let mut pos = [0.0, 0.0];
    let mut heading = heading0;
    let mut turned: f64 = 0.0;
    let mut path = Vec::with_capacity(total);
    path.push(pos);
    for k in 0..(total - 1) * SUBSTEPS {
        let t = k as f64 * h;
        let ramp = ((t - junction_time) / RAMP_SECONDS).clamp(0.0, 1.0);
        let speed = v_in + (v_out - v_in) * ramp;
        if t >= junction_time && turned.abs() < turn.abs() {
            let dh = (speed / radius * h).min(turn.abs() - turned.abs()) * turn.signum();
            heading += dh;
            turned += dh;
        }
        pos[0] += speed * h * heading.cos();
        pos[1] += speed * h * heading.sin();
        if (k + 1) % SUBSTEPS == 0 {
            path.push(pos);
        }
    }

    // Place the junction near the world origin.
    let jk = ((junction_time / cfg.dt).round() as usize).min(total - 1);
    let lateral = Normal::new(0.0, 0.4).unwrap().sample(rng);
    let anchor = path[jk];
    let shift = [lateral - anchor[0], -anchor[1]];
    let mut points: Vec<Point> = path
        .iter()
        .map(|p| jittered([p[0] + shift[0], p[1] + shift[1]], cfg.jitter, rng))
        .collect();
    let future = points.split_off(cfg.n);
    let history = points;

    let neighbors = neighbor_histories(history[cfg.n - 1], rng, cfg);
    Trajectory {
        id,
        history,
        future,
        neighbors,
        maneuver: Some(maneuver),
    }
}

fn jittered(p: Point, sigma: f64, rng: &mut StdRng) -> Point {
    if sigma == 0.0 {
        return p;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    let (mut dx, mut dy) = (normal.sample(rng), normal.sample(rng));
    let norm = (dx * dx + dy * dy).sqrt();
    if norm > 2.0 * sigma {
        dx *= 2.0 * sigma / norm;
        dy *= 2.0 * sigma / norm;
    }
    [p[0] + dx, p[1] + dy]
}

/// Straight walkers passing within the inclusion radius at the last
/// history step, nearest first.
fn neighbor_histories(ego_last: Point, rng: &mut StdRng, cfg: &SynthConfig) -> Vec<Vec<Point>> {
    let k = rng.random_range(0..=cfg.max_neighbors);
    let mut out: Vec<(f64, Vec<Point>)> = (0..k)
        .map(|_| {
            let r = rng.random_range(0.8..cfg.neighbor_radius * 0.9);
            let phi = rng.random_range(0.0..2.0 * PI);
            let psi = rng.random_range(0.0..2.0 * PI);
            let v = rng.random_range(0.5..2.0);
            let last = [ego_last[0] + r * phi.cos(), ego_last[1] + r * phi.sin()];
            let hist: Vec<Point> = (0..cfg.n)
                .map(|i| {
                    let back = (cfg.n - 1 - i) as f64 * cfg.dt * v;
                    jittered([last[0] - back * psi.cos(), last[1] - back * psi.sin()], cfg.jitter, rng)
                })
                .collect();
            (dist(hist[cfg.n - 1], ego_last), hist)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(_, h)| h).collect()
}
