use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

/// Uniform 2-D node lattice with a domain mask.
///
/// `nx`, `ny` count cells, so there are `(nx + 1) * (ny + 1)` nodes. Node
/// `(i, j)` sits at `origin + h * (i, j)`. A node is interior when it and all
/// eight of its lattice neighbours lie in the domain; every other in-domain
/// node is a boundary node carrying Dirichlet data.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    h: f64,
    origin: [f64; 2],
    mask: Vec<NodeKind>,
}

const NEIGHBOURS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl Grid {
    /// Full rectangle: edge nodes are boundary, the rest interior.
    pub fn rectangle(nx: usize, ny: usize, h: f64, origin: [f64; 2]) -> Result<Self> {
        Self::from_predicate(nx, ny, h, origin, |_| true)
    }

    /// `[0, 1]^2` with `cells` cells per side.
    pub fn unit_square(cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(invalid("unit square needs at least one cell"));
        }
        Self::rectangle(cells, cells, 1.0 / cells as f64, [0.0, 0.0])
    }

    /// Nodes with `r_in <= |x - center| <= r_out`.
    pub fn annulus(nx: usize, ny: usize, h: f64, origin: [f64; 2], center: [f64; 2], r_in: f64, r_out: f64) -> Result<Self> {
        if !(r_in > 0.0 && r_out > r_in) {
            return Err(invalid(format!("annulus needs 0 < r_in < r_out, got ({r_in}, {r_out})")));
        }
        Self::from_predicate(nx, ny, h, origin, |x| {
            let r = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
            r >= r_in && r <= r_out
        })
    }

    /// Annulus centred at the origin on the box `[-r_out, r_out]^2` with
    /// `cells` cells per side.
    pub fn centered_annulus(cells: usize, r_in: f64, r_out: f64) -> Result<Self> {
        if cells < 4 {
            return Err(invalid("annulus needs at least 4 cells per side"));
        }
        let h = 2.0 * r_out / cells as f64;
        Self::annulus(cells, cells, h, [-r_out, -r_out], [0.0, 0.0], r_in, r_out)
    }

    /// Lattice nodes for which `inside` holds are in the domain; nodes off the
    /// lattice edge count as outside.
    pub fn from_predicate(nx: usize, ny: usize, h: f64, origin: [f64; 2], inside: impl Fn([f64; 2]) -> bool) -> Result<Self> {
        let active = (0..(nx + 1) * (ny + 1))
            .map(|k| {
                let (i, j) = (k % (nx + 1), k / (nx + 1));
                inside([origin[0] + h * i as f64, origin[1] + h * j as f64])
            })
            .collect();
        Self::from_active(nx, ny, h, origin, active)
    }

    /// Domain given node by node in row-major order (`i` fastest).
    pub fn from_active(nx: usize, ny: usize, h: f64, origin: [f64; 2], active: Vec<bool>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("grid spacing must be positive, got {h}")));
        }
        if nx < 2 || ny < 2 {
            return Err(invalid("grid needs at least 2 cells per direction"));
        }
        let (w, hgt) = (nx + 1, ny + 1);
        if active.len() != w * hgt {
            return Err(crate::error::Error::DimensionMismatch {
                expected: w * hgt,
                got: active.len(),
            });
        }
        let mut mask = vec![NodeKind::Exterior; w * hgt];
        for k in 0..w * hgt {
            if !active[k] {
                continue;
            }
            let (i, j) = ((k % w) as isize, (k / w) as isize);
            let all = NEIGHBOURS_8.iter().all(|&(di, dj)| {
                let (a, b) = (i + di, j + dj);
                a >= 0 && b >= 0 && (a as usize) < w && (b as usize) < hgt && active[b as usize * w + a as usize]
            });
            mask[k] = if all { NodeKind::Interior } else { NodeKind::Boundary };
        }
        let grid = Self { nx, ny, h, origin, mask };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        let interior: Vec<usize> = (0..self.node_count()).filter(|&k| self.mask[k] == NodeKind::Interior).collect();
        let Some(&start) = interior.first() else {
            return Err(invalid("domain has no interior nodes"));
        };
        // connectivity of the interior through 4-neighbours
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(k) = stack.pop() {
            count += 1;
            for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if let Some(nb) = self.neighbor(k, di, dj) {
                    if !seen[nb] && self.mask[nb] == NodeKind::Interior {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
        }
        if count != interior.len() {
            return Err(invalid("interior of the domain is not connected"));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.nx + 1
    }

    pub fn height(&self) -> usize {
        self.ny + 1
    }

    pub fn node_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn mask(&self) -> &[NodeKind] {
        &self.mask
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width() + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.width(), k / self.width())
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.coords(k);
        [self.origin[0] + self.h * i as f64, self.origin[1] + self.h * j as f64]
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        self.mask[k]
    }

    pub fn is_interior(&self, k: usize) -> bool {
        self.mask[k] == NodeKind::Interior
    }

    /// Interior or boundary.
    pub fn is_active(&self, k: usize) -> bool {
        self.mask[k] != NodeKind::Exterior
    }

    pub fn neighbor(&self, k: usize, di: isize, dj: isize) -> Option<usize> {
        let (i, j) = self.coords(k);
        let (a, b) = (i as isize + di, j as isize + dj);
        if a < 0 || b < 0 || a as usize >= self.width() || b as usize >= self.height() {
            None
        } else {
            Some(self.index(a as usize, b as usize))
        }
    }

    pub fn active_neighbor(&self, k: usize, di: isize, dj: isize) -> Option<usize> {
        self.neighbor(k, di, dj).filter(|&nb| self.is_active(nb))
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| self.is_interior(k))
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| self.is_active(k))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| self.mask[k] == NodeKind::Boundary)
    }

    /// Upper corner of the lattice box.
    pub fn extent(&self) -> [f64; 2] {
        [self.origin[0] + self.h * self.nx as f64, self.origin[1] + self.h * self.ny as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_mask() {
        let g = Grid::unit_square(4).unwrap();
        assert_eq!(g.node_count(), 25);
        assert_eq!(g.interior_nodes().count(), 9);
        assert_eq!(g.boundary_nodes().count(), 16);
        assert_eq!(g.point(g.index(4, 2)), [1.0, 0.5]);
    }

    #[test]
    fn annulus_interior_has_active_neighbourhood() {
        let g = Grid::centered_annulus(40, 0.3, 1.0).unwrap();
        for k in g.interior_nodes() {
            for (di, dj) in NEIGHBOURS_8 {
                assert!(g.active_neighbor(k, di, dj).is_some());
            }
        }
        let centre = g.index(20, 20);
        assert_eq!(g.kind(centre), NodeKind::Exterior);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Grid::rectangle(4, 4, 0.0, [0.0, 0.0]).is_err());
        assert!(Grid::rectangle(1, 4, 0.1, [0.0, 0.0]).is_err());
        assert!(Grid::centered_annulus(20, 0.5, 0.4).is_err());
        // two separated discs
        let two = Grid::from_predicate(40, 20, 0.05, [0.0, 0.0], |x| {
            ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() < 0.4 || ((x[0] - 1.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() < 0.4
        });
        assert!(two.is_err());
    }
}
