//! Uniform cell grids over the torus for nearest-neighbor and
//! fixed-radius queries. Cells are searched ring by ring with a metric
//! lower bound per ring, so query results are identical to brute force.

use std::collections::{HashMap, HashSet};

use crate::real::Real;
use crate::torus::TorusPoint;

pub(crate) struct CellGrid<S: Real, const D: usize> {
    res: i64,
    cells: HashMap<[i64; D], Vec<u32>>,
    points: Vec<TorusPoint<S, D>>,
}

impl<S: Real, const D: usize> CellGrid<S, D> {
    pub fn new(points: Vec<TorusPoint<S, D>>, res: usize) -> Self {
        let res = res.max(1) as i64;
        let mut cells: HashMap<[i64; D], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(res, p)).or_default().push(i as u32);
        }
        Self { res, cells, points }
    }

    /// Distance to the nearest stored point; None when the grid is empty.
    pub fn nearest_distance(&self, x: &TorusPoint<S, D>) -> Option<S> {
        if self.points.is_empty() {
            return None;
        }
        let c0 = cell_of(self.res, x);
        let mut seen = HashSet::new();
        let mut best: Option<S> = None;
        let mut r = 0i64;
        loop {
            if let Some(b) = best {
                // A cell first reached at ring r only holds points at
                // distance >= (r-1)/res from x.
                if r >= 1 && b <= S::of((r - 1) as f64) / S::of(self.res as f64) {
                    break;
                }
            }
            if r > self.res {
                break;
            }
            for cell in ring_cells::<D>(self.res, c0, r, &mut seen) {
                if let Some(idx) = self.cells.get(&cell) {
                    for &i in idx {
                        let d = x.distance(&self.points[i as usize]);
                        best = Some(match best {
                            None => d,
                            Some(b) => b.min(d),
                        });
                    }
                }
            }
            r += 1;
        }
        best
    }

    /// Indices of all stored points strictly within `radius` of `x`,
    /// ascending.
    pub fn within(&self, x: &TorusPoint<S, D>, radius: S) -> Vec<u32> {
        let mut out = Vec::new();
        if self.points.is_empty() || !(radius > S::zero()) {
            return out;
        }
        let c0 = cell_of(self.res, x);
        let mut seen = HashSet::new();
        // Rings beyond radius*res + 1 only hold points at distance >= radius.
        let rmax = ((radius.as_f64() * self.res as f64).floor() as i64 + 1).min(self.res);
        for r in 0..=rmax {
            for cell in ring_cells::<D>(self.res, c0, r, &mut seen) {
                if let Some(idx) = self.cells.get(&cell) {
                    for &i in idx {
                        if x.distance(&self.points[i as usize]) < radius {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn cell_of<S: Real, const D: usize>(res: i64, p: &TorusPoint<S, D>) -> [i64; D] {
    let mut c = [0i64; D];
    for d in 0..D {
        let f = (p.coords()[d] * S::of(res as f64)).floor().as_f64() as i64;
        c[d] = f.clamp(0, res - 1);
    }
    c
}

/// Cells at Chebyshev offset exactly `r` from `center`, modulo wrapping;
/// `seen` keeps wrapped duplicates out, so every cell is yielded exactly
/// once over increasing r, at its true toral cell offset.
fn ring_cells<const D: usize>(
    res: i64,
    center: [i64; D],
    r: i64,
    seen: &mut HashSet<[i64; D]>,
) -> Vec<[i64; D]> {
    let mut out = Vec::new();
    let mut off = [-r; D];
    'outer: loop {
        if off.iter().map(|o| o.abs()).max().unwrap_or(0) == r {
            let mut cell = [0i64; D];
            for d in 0..D {
                cell[d] = (center[d] + off[d]).rem_euclid(res);
            }
            if seen.insert(cell) {
                out.push(cell);
            }
        }
        for d in 0..D {
            off[d] += 1;
            if off[d] <= r {
                continue 'outer;
            }
            off[d] = -r;
        }
        break;
    }
    out
}
