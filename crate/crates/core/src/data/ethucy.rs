//! Import of `frame_id ped_id x y` annotation files.
//!
//! Tracks are linearly resampled onto a shared time grid (multiples of `dt`
//! from time zero), so every pedestrian's grid index refers to the same
//! instant and neighbor lookup is a plain index match.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::trajectory::{dist, Corpus, CorpusMeta, Point, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportOptions {
    /// Frames per second of the `frame_id` column.
    pub frame_rate: f64,
    pub dt: f64,
    pub n: usize,
    pub m: usize,
    pub stride: usize,
    pub neighbor_radius: f64,
    pub max_neighbors: usize,
    /// Observation gaps longer than this split a track, seconds.
    pub max_gap: f64,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            frame_rate: 25.0,
            dt: super::DEFAULT_DT,
            n: super::DEFAULT_N,
            m: super::DEFAULT_M,
            stride: 1,
            neighbor_radius: 5.0,
            max_neighbors: 16,
            max_gap: 2.0,
        }
    }
}

impl ImportOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frame_rate > 0.0
            && self.dt > 0.0
            && self.n >= 2
            && self.m >= 2
            && self.stride >= 1
            && self.neighbor_radius > 0.0
            && self.max_gap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid import options: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ImportReport {
    pub files: usize,
    pub tracks: usize,
    /// Tracks (or gap-split pieces) shorter than `n + m` grid steps.
    pub skipped_short: usize,
    pub segments: usize,
}

#[derive(Clone, Copy, Debug)]
struct Obs {
    time: f64,
    pos: Point,
}

/// Parses one annotation file into per-pedestrian observation lists.
fn parse_file(text: &str, origin: &str, frame_rate: f64) -> Result<BTreeMap<i64, Vec<Obs>>> {
    let mut tracks: BTreeMap<i64, Vec<Obs>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| Error::Parse {
            line: i + 1,
            msg: format!("{origin}: {msg}"),
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected `frame_id ped_id x y`, got {} fields", fields.len())));
        }
        let mut vals = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("field {} `{f}` is not a number", k + 1)))?;
        }
        if vals[1].fract() != 0.0 {
            return Err(bad(format!("pedestrian id `{}` is not an integer", fields[1])));
        }
        tracks.entry(vals[1] as i64).or_default().push(Obs {
            time: vals[0] / frame_rate,
            pos: [vals[2], vals[3]],
        });
    }
    for obs in tracks.values_mut() {
        obs.sort_by(|a, b| a.time.total_cmp(&b.time));
        obs.dedup_by(|b, a| (a.time - b.time).abs() < 1e-12);
    }
    Ok(tracks)
}

/// Resampled track: grid index of the first point and positions.
struct GridTrack {
    start: i64,
    points: Vec<Point>,
}

impl GridTrack {
    fn at(&self, k: i64) -> Option<Point> {
        let i = k - self.start;
        (i >= 0 && (i as usize) < self.points.len()).then(|| self.points[i as usize])
    }
}

const GRID_EPS: f64 = 1e-9;

/// Linear interpolation of `obs` at every grid time `k·dt` it covers.
fn resample(obs: &[Obs], dt: f64) -> Option<GridTrack> {
    let (first, last) = (obs.first()?.time, obs.last()?.time);
    let k0 = (first / dt - GRID_EPS).ceil() as i64;
    let k1 = (last / dt + GRID_EPS).floor() as i64;
    if k1 < k0 {
        return None;
    }
    let mut points = Vec::with_capacity((k1 - k0 + 1) as usize);
    let mut j = 0;
    for k in k0..=k1 {
        let t = k as f64 * dt;
        while j + 1 < obs.len() && obs[j + 1].time < t - GRID_EPS {
            j += 1;
        }
        let a = obs[j];
        let p = if (t - a.time).abs() <= GRID_EPS * dt.max(1.0) || j + 1 == obs.len() {
            a.pos
        } else {
            let b = obs[j + 1];
            if (b.time - t).abs() <= GRID_EPS * dt.max(1.0) {
                b.pos
            } else {
                let w = (t - a.time) / (b.time - a.time);
                [a.pos[0] + w * (b.pos[0] - a.pos[0]), a.pos[1] + w * (b.pos[1] - a.pos[1])]
            }
        };
        points.push(p);
    }
    Some(GridTrack { start: k0, points })
}

fn split_gaps(obs: Vec<Obs>, max_gap: f64) -> Vec<Vec<Obs>> {
    let mut out: Vec<Vec<Obs>> = vec![Vec::new()];
    for o in obs {
        let cur = out.last_mut().unwrap();
        if let Some(prev) = cur.last() {
            if o.time - prev.time > max_gap {
                out.push(Vec::new());
            }
        }
        out.last_mut().unwrap().push(o);
    }
    out
}

/// Segments one file's tracks into trajectories, continuing ids from `next_id`.
fn segment_file(
    tracks: BTreeMap<i64, Vec<Obs>>,
    opts: &ImportOptions,
    next_id: &mut u64,
    report: &mut ImportReport,
) -> Vec<Trajectory> {
    let window = opts.n + opts.m;
    let mut grid: Vec<GridTrack> = Vec::new();
    for (_, obs) in tracks {
        report.tracks += 1;
        for piece in split_gaps(obs, opts.max_gap) {
            match resample(&piece, opts.dt) {
                Some(g) if g.points.len() >= window => grid.push(g),
                _ => report.skipped_short += 1,
            }
        }
    }

    let mut out = Vec::new();
    for (ti, track) in grid.iter().enumerate() {
        let mut s = 0;
        while s + window <= track.points.len() {
            let history = track.points[s..s + opts.n].to_vec();
            let future = track.points[s + opts.n..s + window].to_vec();
            let k_first = track.start + s as i64;
            let k_last = k_first + opts.n as i64 - 1;
            let ego_last = history[opts.n - 1];
            let mut neighbors: Vec<(f64, Vec<Point>)> = grid
                .iter()
                .enumerate()
                .filter(|(oi, _)| *oi != ti)
                .filter_map(|(_, other)| {
                    let h: Option<Vec<Point>> = (k_first..=k_last).map(|k| other.at(k)).collect();
                    let h = h?;
                    let d = dist(h[opts.n - 1], ego_last);
                    (d <= opts.neighbor_radius).then_some((d, h))
                })
                .collect();
            neighbors.sort_by(|a, b| a.0.total_cmp(&b.0));
            neighbors.truncate(opts.max_neighbors);
            out.push(Trajectory {
                id: *next_id,
                history,
                future,
                neighbors: neighbors.into_iter().map(|(_, h)| h).collect(),
                maneuver: None,
            });
            *next_id += 1;
            report.segments += 1;
            s += opts.stride;
        }
    }
    out
}

/// Annotation files under `path`: the file itself, `path/scene` if that
/// directory exists, or `path`, searched recursively for `*.txt`.
fn collect_files(path: &Path, scene: &str) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let scene_dir = path.join(scene);
    let root = if scene_dir.is_dir() { scene_dir } else { path.to_path_buf() };
    let mut files = Vec::new();
    let mut stack = vec![root];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "txt") {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Imports a scene from an annotation file or directory of files.
pub fn import_ethucy(path: &Path, scene: &str, opts: &ImportOptions) -> Result<(Corpus, ImportReport)> {
    opts.validate()?;
    if !path.exists() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    let files = collect_files(path, scene)?;
    let mut report = ImportReport::default();
    let mut trajectories = Vec::new();
    let mut next_id = 0;
    for f in &files {
        let text = fs::read_to_string(f)?;
        let tracks = parse_file(&text, &f.display().to_string(), opts.frame_rate)?;
        report.files += 1;
        trajectories.extend(segment_file(tracks, opts, &mut next_id, &mut report));
    }
    if report.tracks == 0 {
        return Err(Error::Data("no tracks".into()));
    }
    if trajectories.is_empty() {
        return Err(Error::Data(format!(
            "no track is long enough for {} steps ({} skipped)",
            opts.n + opts.m,
            report.skipped_short
        )));
    }
    let corpus = Corpus::new(
        CorpusMeta {
            scenario: scene.to_string(),
            seed: 0,
            dt: opts.dt,
            n: opts.n,
            m: opts.m,
        },
        trajectories,
    )?;
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn one_pedestrian_twenty_frames_gives_one_segment() {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..20).map(|t| format!("{}\t1.0\t{}.0\t0.0\n", t * 10, t)).collect();
        let p = write(dir.path(), "ped.txt", &text);
        let (c, report) = import_ethucy(&p, "any", &ImportOptions::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.segments, 1);
        let t = &c.trajectories[0];
        for (i, p) in t.history.iter().enumerate() {
            assert!((p[0] - i as f64).abs() < 1e-9 && p[1].abs() < 1e-9);
        }
        for (i, p) in t.future.iter().enumerate() {
            assert!((p[0] - (i + 8) as f64).abs() < 1e-9);
        }
        assert!(t.neighbors.is_empty());
    }

    #[test]
    fn empty_file_has_no_tracks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "empty.txt", "");
        let err = import_ethucy(&p, "x", &ImportOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "no tracks");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.txt", "0 1 0.0 0.0\n10 1 zero 0.0\n");
        match import_ethucy(&p, "x", &ImportOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "short.txt", "0 1 0.0\n");
        assert!(matches!(import_ethucy(&p, "x", &ImportOptions::default()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn ten_hertz_track_resamples_to_exact_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let speed = 1.3;
        // frame rate 10 Hz, 80 frames = 7.9 s of linear motion at 1.3 m/s heading (0.6, 0.8).
        let text: String = (0..80)
            .map(|f| {
                let t = f as f64 / 10.0;
                format!("{f} 4 {} {}\n", 2.0 + 0.6 * speed * t, -1.0 + 0.8 * speed * t)
            })
            .collect();
        let p = write(dir.path(), "fast.txt", &text);
        let opts = ImportOptions {
            frame_rate: 10.0,
            ..ImportOptions::default()
        };
        let (c, _) = import_ethucy(&p, "x", &opts).unwrap();
        assert!(!c.is_empty());
        for t in &c.trajectories {
            let pts: Vec<Point> = t.history.iter().chain(&t.future).copied().collect();
            for w in pts.windows(2) {
                assert!((dist(w[0], w[1]) - opts.dt * speed).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn already_resampled_track_is_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let coords: Vec<Point> = (0..25).map(|i| [(i as f64 * 0.37).sin() * 3.0, i as f64 * 0.51]).collect();
        let text: String = coords
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{} 2 {} {}\n", i * 10, p[0], p[1]))
            .collect();
        let p = write(dir.path(), "grid.txt", &text);
        let (c, _) = import_ethucy(&p, "x", &ImportOptions::default()).unwrap();
        assert_eq!(c.len(), 25 - 20 + 1);
        for (s, t) in c.trajectories.iter().enumerate() {
            let pts: Vec<Point> = t.history.iter().chain(&t.future).copied().collect();
            for (i, q) in pts.iter().enumerate() {
                let want = coords[s + i];
                assert!((q[0] - want[0]).abs() < 1e-9 && (q[1] - want[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn short_tracks_skipped_and_windows_keep_ids_apart() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        for f in 0..22 {
            text += &format!("{} 1 {} 0.0\n", f * 10, f as f64 * 0.5);
            text += &format!("{} 2 {} 1.0\n", f * 10, f as f64 * 0.5);
        }
        for f in 0..5 {
            text += &format!("{} 3 0.0 -1.0\n", f * 10);
        }
        let p = write(dir.path(), "scene.txt", &text);
        let (c, report) = import_ethucy(&p, "x", &ImportOptions::default()).unwrap();
        assert_eq!(report.tracks, 3);
        assert_eq!(report.skipped_short, 1);
        assert_eq!(report.segments, 6);
        for t in &c.trajectories {
            // ped 1 runs along y=0, ped 2 along y=1: a window never mixes them.
            let y = t.history[0][1];
            assert!(t.history.iter().chain(&t.future).all(|p| p[1] == y));
            assert_eq!(t.neighbors.len(), 1);
            assert_eq!(t.neighbors[0][0][1], 1.0 - y);
        }
    }

    #[test]
    fn scene_subdirectory_is_preferred() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("hotel/train")).unwrap();
        let text: String = (0..20).map(|t| format!("{} 1 {}.0 0.0\n", t * 10, t)).collect();
        write(&dir.path().join("hotel/train"), "a.txt", &text);
        write(dir.path(), "other.txt", "garbage line\n");
        let (c, report) = import_ethucy(dir.path(), "hotel", &ImportOptions::default()).unwrap();
        assert_eq!(report.files, 1);
        assert_eq!(c.meta.scenario, "hotel");
    }
}
