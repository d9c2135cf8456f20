//! History encoder: an ego GRU over position and velocity plus an edge GRU
//! over each neighbor's relative position, mean-pooled across neighbors.
//!
//! All inputs are expressed in the ego-relative frame, so the feature is
//! invariant to translating the whole scene.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{gru_step, init_gru};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::data::Point;
use crate::error::{Error, Result};

/// Positions are divided by this before entering any network, meters.
pub const POS_SCALE: f64 = 4.0;
/// Velocities are divided by this, m/s.
pub const VEL_SCALE: f64 = 2.0;

const EGO: &str = "encoder.ego";
const EDGE: &str = "encoder.edge";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub ego_hidden: usize,
    pub edge_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            ego_hidden: 64,
            edge_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn feature_dim(&self) -> usize {
        self.ego_hidden + self.edge_hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.ego_hidden == 0 || self.edge_hidden == 0 {
            return Err(Error::Config("encoder hidden sizes must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn init_encoder<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    init_gru(store, EGO, 4, cfg.ego_hidden, rng);
    init_gru(store, EDGE, 2, cfg.edge_hidden, rng);
}

/// Reads the encoder dimensions back from stored weights.
pub fn encoder_config(store: &ParamStore) -> Result<EncoderConfig> {
    let ego = store.require(&format!("{EGO}.wh"))?.shape()[0];
    let edge = store.require(&format!("{EDGE}.wh"))?.shape()[0];
    Ok(EncoderConfig {
        ego_hidden: ego,
        edge_hidden: edge,
    })
}

/// One history and its neighbors, in world coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub history: &'a [Point],
    pub neighbors: &'a [Vec<Point>],
}

/// Encodes a batch of scenes into a `[B, d_e + d_n]` feature node.
pub fn encode_batch(g: &mut Graph, store: &ParamStore, scenes: &[Scene], n: usize, dt: f64) -> Result<Var> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("encoder batch is empty".into()));
    }
    for s in scenes {
        if s.history.len() != n {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {n} history points, got {}",
                s.history.len()
            )));
        }
        if let Some(nb) = s.neighbors.iter().find(|nb| nb.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {n}-point neighbor histories, got {}",
                nb.len()
            )));
        }
    }
    let cfg = encoder_config(store)?;
    let b = scenes.len();

    let mut h = g.input(Tensor::zeros(&[b, cfg.ego_hidden]))?;
    for t in 0..n {
        let mut x = Vec::with_capacity(b * 4);
        for s in scenes {
            let o = s.history[n - 1];
            let p = s.history[t];
            let prev = s.history[t.max(1) - 1];
            let next = s.history[t.max(1)];
            x.extend([
                (p[0] - o[0]) / POS_SCALE,
                (p[1] - o[1]) / POS_SCALE,
                (next[0] - prev[0]) / dt / VEL_SCALE,
                (next[1] - prev[1]) / dt / VEL_SCALE,
            ]);
        }
        let x = g.input(Tensor::matrix(b, 4, x)?)?;
        h = gru_step(g, store, EGO, x, h)?;
    }

    let total: usize = scenes.iter().map(|s| s.neighbors.len()).sum();
    let edge = if total == 0 {
        g.input(Tensor::zeros(&[b, cfg.edge_hidden]))?
    } else {
        let mut he = g.input(Tensor::zeros(&[total, cfg.edge_hidden]))?;
        for t in 0..n {
            let mut x = Vec::with_capacity(total * 2);
            for s in scenes {
                let e = s.history[t];
                for nb in s.neighbors {
                    x.extend([(nb[t][0] - e[0]) / POS_SCALE, (nb[t][1] - e[1]) / POS_SCALE]);
                }
            }
            let x = g.input(Tensor::matrix(total, 2, x)?)?;
            he = gru_step(g, store, EDGE, x, he)?;
        }
        // Row i averages the edge states of scene i; empty scenes get a zero row.
        let mut agg = vec![0.0; b * total];
        let mut col = 0;
        for (i, s) in scenes.iter().enumerate() {
            let k = s.neighbors.len();
            for _ in 0..k {
                agg[i * total + col] = 1.0 / k as f64;
                col += 1;
            }
        }
        let agg = g.input(Tensor::matrix(b, total, agg)?)?;
        g.matmul(agg, he)?
    };
    g.concat(&[h, edge], 1)
}

/// Feature vector of a single scene.
pub fn encode(store: &ParamStore, history: &[Point], neighbors: &[Vec<Point>], dt: f64) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let scene = Scene { history, neighbors };
    let f = encode_batch(&mut g, store, &[scene], history.len(), dt)?;
    Ok(g.value(f).data().to_vec())
}

/// Features for many scenes without recording gradients, in chunks.
pub fn encode_all(store: &ParamStore, scenes: &[Scene], n: usize, dt: f64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(256) {
        let mut g = Graph::new();
        g.freeze_prefix("");
        let f = encode_batch(&mut g, store, chunk, n, dt)?;
        let v = g.value(f);
        out.extend((0..chunk.len()).map(|i| v.row(i).to_vec()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::translate;
    use crate::rng::rng_from;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        init_encoder(&mut s, &EncoderConfig::default(), &mut rng_from(4));
        s
    }

    fn random_scene(rng: &mut crate::rng::StdRng, k: usize) -> (Vec<Point>, Vec<Vec<Point>>) {
        let mut walk = |start: Point| {
            let mut p = start;
            (0..8)
                .map(|_| {
                    p = [p[0] + rng.random_range(-0.6..0.6), p[1] + rng.random_range(-0.6..0.6)];
                    p
                })
                .collect::<Vec<Point>>()
        };
        let h = walk([1.0, 2.0]);
        let nbs = (0..k).map(|i| walk([i as f64, -1.0])).collect();
        (h, nbs)
    }

    #[test]
    fn no_neighbors_gives_zero_edge_half() {
        let s = store();
        let (h, _) = random_scene(&mut rng_from(1), 0);
        let f = encode(&s, &h, &[], 0.4).unwrap();
        assert_eq!(f.len(), 96);
        assert!(f[64..].iter().all(|v| *v == 0.0));
        assert!(f[..64].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let s = store();
        let (h, nbs) = random_scene(&mut rng_from(2), 3);
        let a = encode(&s, &h, &nbs, 0.4).unwrap();
        let rev: Vec<_> = nbs.iter().rev().cloned().collect();
        let b = encode(&s, &h, &rev, 0.4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn translating_a_dyadic_scene_is_exact() {
        let s = store();
        let h: Vec<Point> = (0..8).map(|i| [i as f64 * 0.5, (i * i) as f64 * 0.125]).collect();
        let nbs = vec![(0..8).map(|i| [1.0 - i as f64 * 0.25, 2.0]).collect::<Vec<Point>>()];
        let a = encode(&s, &h, &nbs, 0.4).unwrap();
        let moved: Vec<Vec<Point>> = nbs.iter().map(|n| translate(n, [10.0, -3.0])).collect();
        let b = encode(&s, &translate(&h, [10.0, -3.0]), &moved, 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translating_a_random_scene_is_near_exact() {
        let s = store();
        let (h, nbs) = random_scene(&mut rng_from(3), 2);
        let a = encode(&s, &h, &nbs, 0.4).unwrap();
        let moved: Vec<Vec<Point>> = nbs.iter().map(|n| translate(n, [10.0, -3.0])).collect();
        let b = encode(&s, &translate(&h, [10.0, -3.0]), &moved, 0.4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_single_scene() {
        let s = store();
        let mut rng = rng_from(5);
        let scenes: Vec<_> = (0..4).map(|k| random_scene(&mut rng, k % 3)).collect();
        let refs: Vec<Scene> = scenes
            .iter()
            .map(|(h, n)| Scene {
                history: h,
                neighbors: n,
            })
            .collect();
        let batch = encode_all(&s, &refs, 8, 0.4).unwrap();
        for ((h, n), row) in scenes.iter().zip(&batch) {
            let single = encode(&s, h, n, 0.4).unwrap();
            for (x, y) in single.iter().zip(row) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_weight_receives_gradient() {
        let s = store();
        let mut rng = rng_from(6);
        let scenes: Vec<_> = (0..3).map(|k| random_scene(&mut rng, k + 1)).collect();
        let refs: Vec<Scene> = scenes
            .iter()
            .map(|(h, n)| Scene {
                history: h,
                neighbors: n,
            })
            .collect();
        let mut g = Graph::new();
        let f = encode_batch(&mut g, &s, &refs, 8, 0.4).unwrap();
        let sq = g.square(f).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads.len(), s.len());
        for (name, gr) in grads {
            assert!(gr.data().iter().any(|v| *v != 0.0), "{name} has zero gradient");
        }
    }

    #[test]
    fn wrong_history_length_is_rejected() {
        let s = store();
        let h: Vec<Point> = vec![[0.0, 0.0]; 5];
        assert!(encode_batch(&mut Graph::new(), &s, &[Scene { history: &h, neighbors: &[] }], 8, 0.4).is_err());
    }
}
