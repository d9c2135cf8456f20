use std::f64::consts::PI;

use super::trajectory::{dist, Point};
use crate::error::{Error, Result};

/// Speed and heading change of a future relative to its history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Features {
    /// Mean of per-step speed over the future, m/s. The first step runs from
    /// the last history point to the first future point.
    pub mean_speed: f64,
    /// Wrapped angle from the mean history heading to the future's overall
    /// direction, radians, counter-clockwise positive.
    pub signed_turn: f64,
    /// False when either direction is degenerate; `signed_turn` is then 0.
    pub turn_defined: bool,
}

const DEGENERATE: f64 = 1e-9;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

pub fn trajectory_features(future: &[Point], history: &[Point], dt: f64) -> Result<Features> {
    if future.len() < 2 || history.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "features need at least 2 history and 2 future points, got {} and {}",
            history.len(),
            future.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let last = history[history.len() - 1];
    let mut total = dist(last, future[0]);
    for w in future.windows(2) {
        total += dist(w[0], w[1]);
    }
    let mean_speed = total / future.len() as f64 / dt;

    // Mean of the history step vectors telescopes to (last - first) / (n - 1).
    let h = [last[0] - history[0][0], last[1] - history[0][1]];
    let f = [
        future[future.len() - 1][0] - future[0][0],
        future[future.len() - 1][1] - future[0][1],
    ];
    let hn = (h[0] * h[0] + h[1] * h[1]).sqrt();
    let fnorm = (f[0] * f[0] + f[1] * f[1]).sqrt();
    let (signed_turn, turn_defined) = if hn < DEGENERATE || fnorm < DEGENERATE {
        (0.0, false)
    } else {
        let cross = h[0] * f[1] - h[1] * f[0];
        let dot = h[0] * f[0] + h[1] * f[1];
        (wrap_angle(cross.atan2(dot)), true)
    };
    Ok(Features {
        mean_speed,
        signed_turn,
        turn_defined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(start: usize, len: usize, step: Point) -> Vec<Point> {
        (start..start + len)
            .map(|i| [i as f64 * step[0], i as f64 * step[1]])
            .collect()
    }

    #[test]
    fn straight_line_at_one_meter_per_second() {
        let dt = 0.4;
        let h = line(0, 8, [0.4, 0.0]);
        let f = line(8, 12, [0.4, 0.0]);
        let feat = trajectory_features(&f, &h, dt).unwrap();
        assert!((feat.mean_speed - 1.0).abs() < 1e-12);
        assert_eq!(feat.signed_turn, 0.0);
        assert!(feat.turn_defined);
    }

    #[test]
    fn clockwise_quarter_turn_is_negative_half_pi() {
        // History heads +x; future heads -y from the last point.
        let h = line(0, 8, [1.0, 0.0]);
        let f: Vec<Point> = (1..=12).map(|i| [7.0, -(i as f64)]).collect();
        let feat = trajectory_features(&f, &h, 0.4).unwrap();
        assert!((feat.signed_turn + PI / 2.0).abs() < 1e-9, "{}", feat.signed_turn);
        let ccw: Vec<Point> = (1..=12).map(|i| [7.0, i as f64]).collect();
        let feat = trajectory_features(&ccw, &h, 0.4).unwrap();
        assert!((feat.signed_turn - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn stationary_future_flags_turn() {
        let h = line(0, 8, [1.0, 0.0]);
        let f = vec![[7.0, 0.0]; 12];
        let feat = trajectory_features(&f, &h, 0.4).unwrap();
        assert_eq!(feat.mean_speed, 0.0);
        assert_eq!(feat.signed_turn, 0.0);
        assert!(!feat.turn_defined);
    }

    #[test]
    fn wrap_stays_in_half_open_interval() {
        for k in -20..=20 {
            let a = wrap_angle(k as f64 * 0.9);
            assert!(a > -PI && a <= PI);
        }
        assert_eq!(wrap_angle(-PI), PI);
    }
}
