//! Fermat-spiral scan patterns: generation at a target linear overlap,
//! overlap diagnostics, travel-distance ordering, and CSV import/export.
//!
//! Linear overlap between two probe positions a distance d apart is defined
//! as 1 − d/(2·probe_radius); the per-pattern figure uses each point's
//! nearest-neighbor distance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Golden angle in radians, π(3 − √5) ≈ 137.5078°.
pub fn golden_angle() -> f64 {
    std::f64::consts::PI * (3.0 - 5f64.sqrt())
}

/// An ordered set of scan positions in meters, with the nominal probe radius
/// and the overlap the pattern was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPattern {
    positions: Vec<(f64, f64)>,
    probe_radius: f64,
    target_overlap: f64,
}

impl ScanPattern {
    pub fn new(positions: Vec<(f64, f64)>, probe_radius: f64, target_overlap: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Argument("scan pattern needs at least one position".into()));
        }
        if !(probe_radius > 0.0) {
            return Err(Error::Argument(format!("probe radius must be > 0, got {probe_radius}")));
        }
        let mut sorted = positions.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("positions must not be NaN"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("scan pattern contains duplicate positions".into()));
        }
        Ok(Self { positions, probe_radius, target_overlap })
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn probe_radius(&self) -> f64 {
        self.probe_radius
    }

    pub fn target_overlap(&self) -> f64 {
        self.target_overlap
    }

    /// Total open-path travel length visiting positions in order.
    pub fn path_length(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| dist(w[0], w[1]))
            .sum()
    }

    /// Distance from each position to its nearest other position.
    pub fn nearest_neighbor_distances(&self) -> Vec<f64> {
        let n = self.positions.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if i != j {
                    best = best.min(dist(self.positions[i], self.positions[j]));
                }
            }
            out.push(best);
        }
        out
    }

    /// Linear overlap per position from nearest-neighbor distances.
    pub fn nearest_neighbor_overlaps(&self) -> Vec<f64> {
        self.nearest_neighbor_distances()
            .iter()
            .map(|d| 1.0 - d / (2.0 * self.probe_radius))
            .collect()
    }

    /// Mean linear overlap of the pattern.
    pub fn mean_overlap(&self) -> f64 {
        let o = self.nearest_neighbor_overlaps();
        o.iter().sum::<f64>() / o.len() as f64
    }

    /// Largest distance of any position from the pattern origin.
    pub fn max_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|&(x, y)| x.hypot(y))
            .fold(0.0, f64::max)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Fermat spiral: position i at radius scale·√i, angle i·golden angle.
pub fn fermat_spiral(
    n_points: usize,
    scale: f64,
    probe_radius: f64,
    target_overlap: f64,
) -> Result<ScanPattern> {
    if n_points == 0 {
        return Err(Error::Argument("fermat_spiral: n_points must be ≥ 1".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::Argument(format!("fermat_spiral: scale must be > 0, got {scale}")));
    }
    let ga = golden_angle();
    let positions = (0..n_points)
        .map(|i| {
            let r = scale * (i as f64).sqrt();
            let theta = i as f64 * ga;
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    ScanPattern::new(positions, probe_radius, target_overlap)
}

/// Spiral scale whose mean nearest-neighbor linear overlap hits the target,
/// found by bisection (overlap decreases monotonically with scale).
/// `target_overlap` must lie in [0, 1); 0 means neighboring probes just
/// touch.
pub fn scale_for_overlap(probe_radius: f64, target_overlap: f64, n_points: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&target_overlap) {
        return Err(Error::Argument(format!(
            "target overlap must be in [0, 1), got {target_overlap}"
        )));
    }
    if n_points < 2 {
        return Err(Error::Argument(
            "overlap calibration needs at least 2 scan positions".into(),
        ));
    }
    if !(probe_radius > 0.0) {
        return Err(Error::Argument(format!("probe radius must be > 0, got {probe_radius}")));
    }
    let overlap_at = |scale: f64| -> Result<f64> {
        Ok(fermat_spiral(n_points, scale, probe_radius, target_overlap)?.mean_overlap())
    };
    let mut lo = probe_radius * 1e-9;
    let mut hi = probe_radius;
    let mut grow = 0;
    while overlap_at(hi)? > target_overlap {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::Domain("overlap bisection failed to bracket target".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if overlap_at(mid)? > target_overlap {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Shorter-travel reordering of the pattern: nearest-neighbor construction
/// followed by 2-opt refinement, compared against the input order so the
/// returned path is never longer than the original.
pub fn order_tsp(pattern: &ScanPattern) -> ScanPattern {
    let pts = pattern.positions();
    let n = pts.len();
    if n <= 2 {
        return pattern.clone();
    }

    let mut order: Vec<usize> = {
        let mut visited = vec![false; n];
        let mut tour = Vec::with_capacity(n);
        let mut current = 0usize;
        visited[0] = true;
        tour.push(0);
        for _ in 1..n {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (j, &seen) in visited.iter().enumerate() {
                if !seen {
                    let d = dist(pts[current], pts[j]);
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
            }
            visited[best] = true;
            tour.push(best);
            current = best;
        }
        tour
    };

    two_opt(&mut order, pts);

    let reordered: Vec<(f64, f64)> = order.iter().map(|&i| pts[i]).collect();
    let candidate = ScanPattern {
        positions: reordered,
        probe_radius: pattern.probe_radius,
        target_overlap: pattern.target_overlap,
    };
    if candidate.path_length() < pattern.path_length() {
        candidate
    } else {
        pattern.clone()
    }
}

/// In-place 2-opt on an open path: reverse any segment whose boundary edges
/// shorten, repeat until a pass makes no improvement (pass count capped).
fn two_opt(order: &mut [usize], pts: &[(f64, f64)]) {
    let n = order.len();
    let max_passes = n * n;
    for _ in 0..max_passes {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let mut delta = 0.0;
                if i > 0 {
                    delta += dist(pts[order[i - 1]], pts[order[j]])
                        - dist(pts[order[i - 1]], pts[order[i]]);
                }
                if j < n - 1 {
                    delta += dist(pts[order[i]], pts[order[j + 1]])
                        - dist(pts[order[j]], pts[order[j + 1]]);
                }
                if delta < -1e-12 {
                    order[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Write `index,x_m,y_m` rows. Values use Rust's shortest round-trippable
/// decimal form, so import reproduces the exact binary doubles.
pub fn write_positions_csv(pattern: &ScanPattern, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("index,x_m,y_m\n");
    for (i, &(x, y)) in pattern.positions().iter().enumerate() {
        writeln!(out, "{i},{x},{y}").expect("string write cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read positions written by [`write_positions_csv`]. `probe_radius` and
/// `target_overlap` are metadata not stored in the CSV and must be supplied.
pub fn read_positions_csv(
    path: impl AsRef<Path>,
    probe_radius: f64,
    target_overlap: f64,
) -> Result<ScanPattern> {
    let text = fs::read_to_string(&path)?;
    let mut byte_offset = 0u64;
    let mut positions = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let this_offset = byte_offset;
        byte_offset += line.len() as u64 + 1;
        if line_no == 0 {
            if line.trim() != "index,x_m,y_m" {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("expected header 'index,x_m,y_m', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format {
                offset: this_offset,
                message: format!("line {}: expected 3 fields, got {}", line_no + 1, fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::Format {
                offset: this_offset,
                message: format!("line {}: bad {what} '{s}': {e}", line_no + 1),
            })
        };
        let idx: usize = fields[0].trim().parse().map_err(|e| Error::Format {
            offset: this_offset,
            message: format!("line {}: bad index '{}': {e}", line_no + 1, fields[0]),
        })?;
        if idx != positions.len() {
            return Err(Error::Format {
                offset: this_offset,
                message: format!(
                    "line {}: index {} out of order, expected {}",
                    line_no + 1,
                    idx,
                    positions.len()
                ),
            });
        }
        positions.push((parse(fields[1], "x_m")?, parse(fields[2], "y_m")?));
    }
    ScanPattern::new(positions, probe_radius, target_overlap)
}
