//! Planar geometry on the square parcel: minimal-image displacements on the
//! torus, disk intersection areas and a uniform cell grid for neighbor search.

use std::f64::consts::PI;

use crate::model::Position;

/// Square parcel `[0, side)²`, either wrapped (torus) or bounded.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Domain {
    pub side: f64,
    pub periodic: bool,
}

impl Domain {
    pub fn torus(side: f64) -> Self {
        Domain {
            side,
            periodic: true,
        }
    }

    pub fn bounded(side: f64) -> Self {
        Domain {
            side,
            periodic: false,
        }
    }

    /// Displacement from `from` to `to`: minimal image on the torus, plain
    /// difference on a bounded parcel.
    #[inline]
    pub fn delta(&self, from: Position, to: Position) -> TorusVec {
        if self.periodic {
            torus_delta(from, to, self.side)
        } else {
            TorusVec {
                dx: to[0] - from[0],
                dy: to[1] - from[1],
            }
        }
    }

    pub fn distance(&self, a: Position, b: Position) -> f64 {
        self.delta(a, b).norm()
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..self.side).contains(&p[0]) && (0.0..self.side).contains(&p[1])
    }

    /// Maps `p + offset` back into the parcel on the torus. On a bounded
    /// parcel the raw sum is returned; callers decide what leaving means.
    pub fn translate(&self, p: Position, offset: [f64; 2]) -> Position {
        let q = [p[0] + offset[0], p[1] + offset[1]];
        if self.periodic {
            [wrap(q[0], self.side), wrap(q[1], self.side)]
        } else {
            q
        }
    }
}

/// Reduces `x` into `[0, side)`.
pub fn wrap(x: f64, side: f64) -> f64 {
    let y = x.rem_euclid(side);
    // rem_euclid can round up to `side` for tiny negative inputs.
    if y >= side {
        0.0
    } else {
        y
    }
}

/// Minimal-image displacement. Components lie in `[-L/2, L/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusVec {
    pub dx: f64,
    pub dy: f64,
}

impl TorusVec {
    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn norm2(&self) -> f64 {
        self.dx * self.dx + self.dy * self.dy
    }
}

fn minimal_image(d: f64, side: f64) -> f64 {
    let half = 0.5 * side;
    // Differences of coordinates in [0, side) need at most one shift.
    if d.abs() < side {
        return if d >= half {
            d - side
        } else if d < -half {
            d + side
        } else {
            d
        };
    }
    let mut m = d - side * (d / side + 0.5).floor();
    if m >= half {
        m -= side;
    } else if m < -half {
        m += side;
    }
    m
}

/// Minimal-image displacement `p2 - p1` on the torus of side `side`.
/// A component of exactly `side / 2` maps to `-side / 2`.
pub fn torus_delta(p1: Position, p2: Position, side: f64) -> TorusVec {
    TorusVec {
        dx: minimal_image(p2[0] - p1[0], side),
        dy: minimal_image(p2[1] - p1[1], side),
    }
}

/// Area of the intersection of two disks with radii `r1`, `r2` whose centers
/// are `d` apart.
pub fn lens_area(r1: f64, r2: f64, d: f64) -> f64 {
    // Fixed argument order keeps the result exactly symmetric.
    let (r1, r2) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
    if d >= r1 + r2 {
        return 0.0;
    }
    let small = r1.min(r2);
    if d <= (r1 - r2).abs() {
        return PI * small * small;
    }
    let d2 = d * d;
    let c1 = ((d2 + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0);
    let c2 = ((d2 + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0);
    let kite = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    let area = r1 * r1 * c1.acos() + r2 * r2 * c2.acos() - 0.5 * kite.max(0.0).sqrt();
    area.clamp(0.0, PI * small * small)
}

/// Uniform cell grid over the parcel, storing individual ids per cell.
///
/// With a cell side of at least `2 r_max`, two disks of radius `<= r_max`
/// can only overlap if their centers sit in the same or adjacent cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    domain: Domain,
    per_side: usize,
    cell_size: f64,
    cells: Vec<Vec<u64>>,
    /// Positions parallel to `cells`.
    positions: Vec<Vec<Position>>,
}

impl SpatialGrid {
    /// Builds an empty grid whose cells are at least
    /// `max(min_cell_size, side / 64)` wide.
    pub fn new(domain: Domain, min_cell_size: f64) -> Self {
        let target = min_cell_size.max(domain.side / 64.0);
        let per_side = ((domain.side / target).floor() as usize).max(1);
        Self::with_cells_per_side(domain, per_side)
    }

    pub fn with_cells_per_side(domain: Domain, per_side: usize) -> Self {
        SpatialGrid {
            domain,
            per_side,
            cell_size: domain.side / per_side as f64,
            cells: vec![Vec::new(); per_side * per_side],
            positions: vec![Vec::new(); per_side * per_side],
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cells_per_side(&self) -> usize {
        self.per_side
    }

    fn axis_index(&self, x: f64) -> usize {
        let i = (x / self.cell_size).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.per_side - 1)
        }
    }

    pub fn cell_of(&self, p: Position) -> usize {
        self.axis_index(p[1]) * self.per_side + self.axis_index(p[0])
    }

    pub fn insert(&mut self, id: u64, p: Position) {
        let c = self.cell_of(p);
        self.cells[c].push(id);
        self.positions[c].push(p);
    }

    /// Removes `id` from the cell of `p`. Returns false if it was not there.
    pub fn remove(&mut self, id: u64, p: Position) -> bool {
        let c = self.cell_of(p);
        match self.cells[c].iter().position(|&x| x == id) {
            Some(i) => {
                self.cells[c].swap_remove(i);
                self.positions[c].swap_remove(i);
                true
            }
            None => false,
        }
    }

    pub fn cell_members(&self, cell: usize) -> &[u64] {
        &self.cells[cell]
    }

    /// Positions of [`SpatialGrid::cell_members`], in the same order.
    pub fn cell_positions(&self, cell: usize) -> &[Position] {
        &self.positions[cell]
    }

    pub fn clear(&mut self) {
        self.cells.iter_mut().for_each(Vec::clear);
        self.positions.iter_mut().for_each(Vec::clear);
    }

    /// Distinct cells of the 3x3 block around the cell of `p`.
    pub fn neighborhood(&self, p: Position) -> Vec<usize> {
        let (cells, n) = self.neighborhood_cells(p);
        cells[..n].to_vec()
    }

    /// Allocation-free form of [`SpatialGrid::neighborhood`]: the first `n`
    /// entries are the distinct cells.
    pub fn neighborhood_cells(&self, p: Position) -> ([usize; 9], usize) {
        let n = self.per_side;
        let cx = self.axis_index(p[0]);
        let cy = self.axis_index(p[1]);
        let axis = |c: usize| -> ([usize; 3], usize) {
            match (c, self.domain.periodic) {
                _ if n == 1 => ([0, 0, 0], 1),
                (0, true) => ([n - 1, 0, 1 % n], 3),
                (0, false) => ([0, 1, 0], 2),
                (c, true) if c == n - 1 => ([c - 1, c, 0], 3),
                (c, false) if c == n - 1 => ([c - 1, c, 0], 2),
                (c, _) => ([c - 1, c, c + 1], 3),
            }
        };
        let (xs, nx) = axis(cx);
        let (ys, ny) = axis(cy);
        let mut out = [0usize; 9];
        let mut len = 0;
        for &y in &ys[..ny] {
            for &x in &xs[..nx] {
                let c = y * n + x;
                // Wrapping duplicates cells only on grids narrower than 3.
                if n >= 3 || !out[..len].contains(&c) {
                    out[len] = c;
                    len += 1;
                }
            }
        }
        (out, len)
    }

    /// All ids registered in the 3x3 neighborhood of `p`.
    pub fn candidates(&self, p: Position) -> Vec<u64> {
        let mut out = Vec::new();
        for c in self.neighborhood(p) {
            out.extend_from_slice(&self.cells[c]);
        }
        out
    }
}

/// Ids whose zone of influence may intersect the disk of `x` (a superset of
/// the true overlaps), excluding `x` itself.
pub fn grid_neighbors(grid: &SpatialGrid, x: &crate::model::Individual) -> Vec<u64> {
    let mut ids = grid.candidates(x.p);
    ids.retain(|&id| id != x.id);
    ids
}
