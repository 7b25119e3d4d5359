use serde::{Deserialize, Serialize};

use super::{ApproxContour, ClosedContour, Pixel};
use crate::error::{Error, Result};

/// Significance measure ranking candidate dominant points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceMeasure {
    /// Cosine of the angle between the two support arms.
    KCosine,
    /// Turning angle between the two support arms.
    KCurvature,
    /// Chain-code direction change at the point (0..=4).
    OneCurvature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxConfig {
    /// Below this many dominant points the border is subsampled uniformly.
    pub min_points: usize,
    /// Upper bound on the region-of-support half width k.
    pub max_support: usize,
    pub measure: SignificanceMeasure,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            min_points: 300,
            max_support: 12,
            measure: SignificanceMeasure::KCosine,
        }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_points == 0 {
            return Err(Error::InvalidConfig("approx.min_points must be positive".into()));
        }
        if self.max_support == 0 {
            return Err(Error::InvalidConfig("approx.max_support must be positive".into()));
        }
        Ok(())
    }
}

/// Teh-Chin dominant points of a closed border.
///
/// Points where the chain code does not turn are never dominant. For the rest,
/// the region of support grows while the chord keeps lengthening and the
/// relative deviation keeps rising; a point survives if no candidate within
/// half its support is more significant. Among adjacent survivors with unit
/// support only the more significant one is kept.
pub fn approximate_dominant_points(contour: &ClosedContour, cfg: &ApproxConfig) -> Result<ApproxContour> {
    cfg.validate()?;
    let n = contour.len();
    if n < 4 {
        return Err(Error::DegenerateContour(n));
    }
    // The measures assume an 8-connected chain code; corner pixels whose
    // neighbors are already adjacent are skipped and indices mapped back.
    let mut chain = eight_connected_chain(&contour.points);
    if chain.len() < 4 {
        chain = (0..n).collect();
    }
    let pts: Vec<Pixel> = chain.iter().map(|&i| contour.points[i]).collect();
    let indices: Vec<usize> = teh_chin(&pts, cfg).into_iter().map(|i| chain[i]).collect();
    if indices.len() < cfg.min_points.min(n) {
        return Ok(uniform_subsample(contour, cfg.min_points));
    }
    Ok(ApproxContour {
        points: indices.iter().map(|&i| contour.points[i]).collect(),
        source_indices: indices,
        source_len: n,
    })
}

/// Indices of a cyclic 8-connected sub-chain: a point is dropped when it sits
/// on the inner side of a diagonal step between its kept predecessor and its
/// successor.
fn eight_connected_chain(points: &[Pixel]) -> Vec<usize> {
    let n = points.len();
    let mut kept = vec![0];
    for i in 1..n {
        let prev = points[*kept.last().expect("starts non-empty")];
        let (p, next) = (points[i], points[(i + 1) % n]);
        let (dx, dy) = (next.x - prev.x, next.y - prev.y);
        let diagonal = dx.abs() == 1 && dy.abs() == 1;
        let inner = dx * (p.y - prev.y) - dy * (p.x - prev.x) > 0;
        if !(diagonal && inner) {
            kept.push(i);
        }
    }
    kept
}

fn teh_chin(pts: &[Pixel], cfg: &ApproxConfig) -> Vec<usize> {
    let n = pts.len();
    let at = |i: isize| pts[i.rem_euclid(n as isize) as usize];

    let curv1: Vec<u8> = (0..n as isize)
        .map(|i| {
            let din = chain_code(at(i - 1), at(i));
            let dout = chain_code(at(i), at(i + 1));
            let s = (dout + 8 - din) % 8;
            s.min(8 - s)
        })
        .collect();

    let max_k = cfg.max_support.min((n - 1) / 2).max(1);
    let mut support = vec![0usize; n];
    let mut sig = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        if curv1[i] == 0 {
            continue;
        }
        let ii = i as isize;
        let k = region_of_support(|k| (at(ii - k as isize), at(ii), at(ii + k as isize)), max_k);
        support[i] = k;
        let (a, p, b) = (at(ii - k as isize), at(ii), at(ii + k as isize));
        sig[i] = match cfg.measure {
            SignificanceMeasure::KCosine => k_cosine(a, p, b),
            SignificanceMeasure::KCurvature => k_curvature(a, p, b),
            SignificanceMeasure::OneCurvature => curv1[i] as f64,
        };
    }

    let mut keep: Vec<bool> = (0..n)
        .map(|i| {
            support[i] > 0
                && (1..=support[i] / 2).all(|j| sig[(i + j) % n] <= sig[i] && sig[(i + n - j % n) % n] <= sig[i])
        })
        .collect();

    // Thin runs of neighboring unit-support survivors.
    let unit: Vec<bool> = (0..n).map(|i| keep[i] && support[i] == 1).collect();
    if unit.iter().any(|&u| !u) {
        for i in 0..n {
            if !unit[i] {
                continue;
            }
            let before = (i + n - 1) % n;
            let after = (i + 1) % n;
            let beaten_by = |j: usize| unit[j] && (sig[j] > sig[i] || (sig[j] == sig[i] && j == before));
            if beaten_by(before) || beaten_by(after) {
                keep[i] = false;
            }
        }
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// `min(m, n)` border points at uniform cyclic index spacing, starting at 0.
pub(crate) fn uniform_subsample(contour: &ClosedContour, m: usize) -> ApproxContour {
    let n = contour.len();
    let m = m.min(n);
    let indices: Vec<usize> = (0..m).map(|i| i * n / m).collect();
    ApproxContour {
        points: indices.iter().map(|&i| contour.points[i]).collect(),
        source_indices: indices,
        source_len: n,
    }
}

fn chain_code(from: Pixel, to: Pixel) -> u8 {
    match (to.x - from.x, to.y - from.y) {
        (1, 0) => 0,
        (1, -1) => 1,
        (0, -1) => 2,
        (-1, -1) => 3,
        (-1, 0) => 4,
        (-1, 1) => 5,
        (0, 1) => 6,
        (1, 1) => 7,
        d => unreachable!("border step {d:?} is not 8-adjacent"),
    }
}

/// Chord length and twice the signed triangle area for support k.
fn chord(a: Pixel, p: Pixel, b: Pixel) -> (f64, f64) {
    let (cx, cy) = ((b.x - a.x) as f64, (b.y - a.y) as f64);
    let (vx, vy) = ((p.x - a.x) as f64, (p.y - a.y) as f64);
    ((cx * cx + cy * cy).sqrt(), cx * vy - cy * vx)
}

fn region_of_support(arms: impl Fn(usize) -> (Pixel, Pixel, Pixel), max_k: usize) -> usize {
    let mut k = 1;
    while k < max_k {
        let (a, p, b) = arms(k);
        let (l, cross) = chord(a, p, b);
        let (a1, p1, b1) = arms(k + 1);
        let (l1, cross1) = chord(a1, p1, b1);
        if l >= l1 {
            break;
        }
        // d/l with d = cross / l.
        if l > 0.0 {
            let (r, r1) = (cross / (l * l), cross1 / (l1 * l1));
            if (cross > 0.0 && r >= r1) || (cross < 0.0 && r <= r1) {
                break;
            }
        }
        k += 1;
    }
    k
}

fn k_cosine(a: Pixel, p: Pixel, b: Pixel) -> f64 {
    let (ux, uy) = ((a.x - p.x) as f64, (a.y - p.y) as f64);
    let (vx, vy) = ((b.x - p.x) as f64, (b.y - p.y) as f64);
    let norm = ((ux * ux + uy * uy) * (vx * vx + vy * vy)).sqrt();
    if norm == 0.0 {
        -1.0
    } else {
        (ux * vx + uy * vy) / norm
    }
}

fn k_curvature(a: Pixel, p: Pixel, b: Pixel) -> f64 {
    let t0 = ((p.y - a.y) as f64).atan2((p.x - a.x) as f64);
    let t1 = ((b.y - p.y) as f64).atan2((b.x - p.x) as f64);
    let mut d = (t1 - t0).abs();
    if d > std::f64::consts::PI {
        d = 2.0 * std::f64::consts::PI - d;
    }
    d
}
