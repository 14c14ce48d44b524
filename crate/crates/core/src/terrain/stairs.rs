use serde::{Deserialize, Serialize};

use crate::grid::GridGeometry;

use super::{HeightMap, TerrainFeatures};

/// Geometry bands a run of risers must satisfy to count as a staircase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StairConfig {
    pub rise_min: f64,
    pub rise_max: f64,
    pub tread_min: f64,
    pub tread_max: f64,
    /// Per-cell elevation change that opens a riser.
    pub jump_threshold: f64,
    /// A riser may be smeared over at most this many cell boundaries.
    pub max_riser_cells: usize,
    pub min_risers: usize,
}

impl Default for StairConfig {
    fn default() -> Self {
        StairConfig {
            rise_min: 0.08,
            rise_max: 0.25,
            tread_min: 0.20,
            tread_max: 0.40,
            jump_threshold: 0.03,
            max_riser_cells: 3,
            min_risers: 2,
        }
    }
}

/// Boolean stair membership per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StairMask {
    pub geometry: GridGeometry,
    pub cells: Vec<bool>,
}

impl StairMask {
    pub fn empty(geometry: GridGeometry) -> Self {
        StairMask { geometry, cells: vec![false; geometry.len()] }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Intersection over union with another mask of the same geometry.
    pub fn iou(&self, other: &StairMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.cells.iter().zip(&other.cells) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Riser {
    /// Boundary index (between sample `first` and `first + 1`) where the riser starts.
    first: usize,
    last: usize,
    rise: f64,
}

impl Riser {
    fn position(&self) -> f64 {
        (self.first + self.last) as f64 / 2.0
    }
}

/// Marks cells belonging to runs of at least `min_risers` parallel risers of
/// consistent sign with rise and tread inside the configured bands. Rows and
/// columns are scanned independently; the result is the union. Marked cells
/// span from the first riser to one mean tread past the highest riser.
pub fn detect_stairs(map: &HeightMap, features: &TerrainFeatures, config: &StairConfig) -> StairMask {
    let g = *map.geometry();
    let mut mask = StairMask::empty(g);
    if g.ensure_aligned(&features.geometry, "stairs").is_err() {
        return mask;
    }
    let mut profile = Vec::new();
    for row in 0..g.height {
        profile.clear();
        profile.extend((0..g.width).map(|x| map.get((x, row)).map(f64::from)));
        for cell in scan_profile(&profile, g.resolution, config) {
            mask.cells[g.index((cell, row))] = true;
        }
    }
    for col in 0..g.width {
        profile.clear();
        profile.extend((0..g.height).map(|y| map.get((col, y)).map(f64::from)));
        for cell in scan_profile(&profile, g.resolution, config) {
            mask.cells[g.index((col, cell))] = true;
        }
    }
    mask
}

fn scan_profile(profile: &[Option<f64>], res: f64, config: &StairConfig) -> Vec<usize> {
    let risers = find_risers(profile, config);
    let mut marked = Vec::new();
    let mut i = 0;
    while i < risers.len() {
        let sign = risers[i].rise.signum();
        let mut j = i;
        while j + 1 < risers.len() {
            let (a, b) = (risers[j], risers[j + 1]);
            let tread = (b.position() - a.position()) * res;
            let flat_between = profile[a.last + 1..=b.first].iter().all(Option::is_some);
            if b.rise.signum() == sign && tread >= config.tread_min && tread <= config.tread_max && flat_between {
                j += 1;
            } else {
                break;
            }
        }
        let count = j - i + 1;
        if count >= config.min_risers {
            let first = risers[i];
            let last = risers[j];
            let mean_tread_cells = ((last.position() - first.position()) / (count - 1) as f64).round() as usize;
            let (lo, hi) = if sign > 0.0 {
                // ascending: first tread starts after the first riser, top tread follows the last
                (first.last + 1, (last.last + mean_tread_cells).min(profile.len() - 1))
            } else {
                (first.first.saturating_sub(mean_tread_cells - 1), last.first)
            };
            marked.extend((lo..=hi).filter(|&k| profile[k].is_some()));
        }
        i = j + 1;
    }
    marked
}

/// Groups consecutive same-sign boundary jumps into risers and keeps those
/// whose total rise lies in the configured band.
fn find_risers(profile: &[Option<f64>], config: &StairConfig) -> Vec<Riser> {
    let mut out = Vec::new();
    let mut current: Option<Riser> = None;
    for k in 0..profile.len().saturating_sub(1) {
        let d = match (profile[k], profile[k + 1]) {
            (Some(a), Some(b)) => b - a,
            _ => {
                flush(&mut current, &mut out, config);
                continue;
            }
        };
        if d.abs() < config.jump_threshold {
            flush(&mut current, &mut out, config);
            continue;
        }
        match current.as_mut() {
            Some(r) if r.rise.signum() == d.signum() => {
                r.last = k;
                r.rise += d;
            }
            _ => {
                flush(&mut current, &mut out, config);
                current = Some(Riser { first: k, last: k, rise: d });
            }
        }
    }
    flush(&mut current, &mut out, config);
    out
}

fn flush(current: &mut Option<Riser>, out: &mut Vec<Riser>, config: &StairConfig) {
    if let Some(r) = current.take() {
        let cells = r.last - r.first + 1;
        let rise = r.rise.abs();
        if cells <= config.max_riser_cells && rise >= config.rise_min && rise <= config.rise_max {
            out.push(r);
        } else {
            // an out-of-band jump breaks any run in progress
            out.push(Riser { rise: f64::NAN, ..r });
        }
    }
}
