use crate::grid::GridGeometry;

use super::HeightMap;

/// Geometric per-cell features. Unknown cells carry `NaN` in every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainFeatures {
    pub geometry: GridGeometry,
    /// Radians in `[0, π/2]`.
    pub slope: Vec<f32>,
    /// Residual standard deviation to the local best-fit plane, meters.
    pub roughness: Vec<f32>,
    /// Largest absolute elevation difference to a known 8-neighbour, meters.
    pub max_step: Vec<f32>,
    pub window: usize,
}

impl TerrainFeatures {
    #[inline]
    pub fn is_unknown(&self, idx: usize) -> bool {
        self.slope[idx].is_nan()
    }
}

/// Computes slope (central differences), roughness (plane-fit residual over a
/// `(2·window+1)²` neighbourhood) and max step (8-neighbourhood) per cell.
pub fn compute_features(map: &HeightMap, window: usize) -> TerrainFeatures {
    let window = window.max(1);
    let g = *map.geometry();
    let n = g.len();
    let mut slope = vec![f32::NAN; n];
    let mut roughness = vec![f32::NAN; n];
    let mut max_step = vec![f32::NAN; n];
    let res = g.resolution;
    let z = |x: i64, y: i64| -> Option<f64> {
        if g.contains_signed(x, y) {
            map.get((x as usize, y as usize)).map(f64::from)
        } else {
            None
        }
    };

    for cy in 0..g.height {
        for cx in 0..g.width {
            let idx = g.index((cx, cy));
            let Some(zc) = map.get_index(idx).map(f64::from) else { continue };
            let (x, y) = (cx as i64, cy as i64);

            let gx = axis_gradient(z(x - 1, y), zc, z(x + 1, y), res);
            let gy = axis_gradient(z(x, y - 1), zc, z(x, y + 1), res);
            slope[idx] = (gx.hypot(gy)).atan() as f32;

            let mut step = 0.0f64;
            for (dx, dy) in NEIGHBORS8 {
                if let Some(zn) = z(x + dx, y + dy) {
                    step = step.max((zn - zc).abs());
                }
            }
            max_step[idx] = step as f32;

            roughness[idx] = plane_residual_std(map, &g, cx, cy, zc, window) as f32;
        }
    }
    TerrainFeatures { geometry: g, slope, roughness, max_step, window }
}

const NEIGHBORS8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn axis_gradient(prev: Option<f64>, center: f64, next: Option<f64>, res: f64) -> f64 {
    match (prev, next) {
        (Some(a), Some(b)) => (b - a) / (2.0 * res),
        (None, Some(b)) => (b - center) / res,
        (Some(a), None) => (center - a) / res,
        (None, None) => 0.0,
    }
}

/// Unbiased residual standard deviation (`RSS / (n - 3)`) of the least-squares
/// plane through the known cells of the window. Coordinates are in cells and
/// elevations are centered on the middle cell to keep the sums small.
fn plane_residual_std(map: &HeightMap, g: &GridGeometry, cx: usize, cy: usize, zc: f64, window: usize) -> f64 {
    let w = window as i64;
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sz, mut sxz, mut syz, mut szz) = (0.0f64, 0.0, 0.0, 0.0);
    for dy in -w..=w {
        for dx in -w..=w {
            let (x, y) = (cx as i64 + dx, cy as i64 + dy);
            if !g.contains_signed(x, y) {
                continue;
            }
            let Some(zv) = map.get((x as usize, y as usize)) else { continue };
            let v = f64::from(zv) - zc;
            let (fx, fy) = (dx as f64, dy as f64);
            n += 1.0;
            sx += fx;
            sy += fy;
            sxx += fx * fx;
            syy += fy * fy;
            sxy += fx * fy;
            sz += v;
            sxz += fx * v;
            syz += fy * v;
            szz += v * v;
        }
    }
    if n < 4.0 {
        return 0.0;
    }
    // normal equations for v = a + b·x + c·y
    let m = nalgebra::Matrix3::new(n, sx, sy, sx, sxx, sxy, sy, sxy, syy);
    let rhs = nalgebra::Vector3::new(sz, sxz, syz);
    let Some(sol) = m.lu().solve(&rhs) else { return 0.0 };
    let rss = szz - sol.dot(&rhs);
    (rss.max(0.0) / (n - 3.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(n: usize) -> GridGeometry {
        GridGeometry::new(0.025, (0.0, 0.0), n, n).unwrap()
    }

    fn interior(f: &TerrainFeatures) -> impl Iterator<Item = usize> + '_ {
        let w = f.window;
        let g = f.geometry;
        (w..g.height - w).flat_map(move |y| (w..g.width - w).map(move |x| g.index((x, y))))
    }

    #[test]
    fn constant_field_is_featureless() {
        let map = HeightMap::flat(geometry(20), 0.3);
        let f = compute_features(&map, 2);
        for i in interior(&f) {
            assert_eq!(f.slope[i], 0.0);
            assert!(f.roughness[i] < 1e-7);
            assert_eq!(f.max_step[i], 0.0);
        }
    }

    #[test]
    fn inclined_plane_slope() {
        let g = geometry(30);
        let elev = (0..g.len()).map(|i| (0.1 * g.cell_center(g.cell_of_index(i)).0) as f32).collect();
        let map = HeightMap::from_parts(g, elev, vec![true; g.len()]).unwrap();
        let f = compute_features(&map, 2);
        for i in interior(&f) {
            assert!((f.slope[i] as f64 - 0.1f64.atan()).abs() < 1e-4, "slope {}", f.slope[i]);
            assert!(f.roughness[i] < 1e-5);
        }
    }

    #[test]
    fn uniform_noise_roughness_matches_sigma() {
        // σ of uniform(-a, a) is a/√3; a = 0.01 → 0.005774
        let sigma = 0.01 / 3f64.sqrt();
        let g = geometry(80);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let elev = (0..g.len()).map(|_| rng.gen_range(-0.01f32..0.01)).collect();
        let map = HeightMap::from_parts(g, elev, vec![true; g.len()]).unwrap();
        let f = compute_features(&map, 2);
        let vals: Vec<f64> = interior(&f).map(|i| f.roughness[i] as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - sigma).abs() / sigma < 0.2, "mean roughness {mean}");
    }

    #[test]
    fn unknown_cells_propagate_nan() {
        let mut map = HeightMap::flat(geometry(10), 0.0);
        map.set((4, 4), None);
        let f = compute_features(&map, 1);
        let i = f.geometry.index((4, 4));
        assert!(f.is_unknown(i));
        assert!(f.roughness[i].is_nan() && f.max_step[i].is_nan());
        // neighbours of a hole still get finite values
        assert!(f.slope[f.geometry.index((5, 4))].is_finite());
    }

    #[test]
    fn max_step_sees_ledge() {
        let g = geometry(10);
        let elev = (0..g.len()).map(|i| if g.cell_of_index(i).0 >= 5 { 0.4 } else { 0.0 }).collect();
        let map = HeightMap::from_parts(g, elev, vec![true; g.len()]).unwrap();
        let f = compute_features(&map, 1);
        assert!((f.max_step[g.index((4, 5))] - 0.4).abs() < 1e-6);
        assert!((f.max_step[g.index((5, 5))] - 0.4).abs() < 1e-6);
        assert_eq!(f.max_step[g.index((2, 5))], 0.0);
    }
}
