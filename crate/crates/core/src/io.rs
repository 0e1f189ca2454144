//! Field snapshots and problem definition files.
//!
//! A snapshot is CSV with one header line `# {json}` describing the grid,
//! followed by a column line and one row `i,j,mask,values...` per node.
//! Floats are written in Rust's shortest round-trip form, so reading a
//! snapshot back reproduces every value bit for bit.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact::ExactSolution;
use crate::field::{ScalarField, Sym2, SymMatrixField, VectorField};
use crate::grid::{Grid, NodeKind};
use crate::solver::{DirichletProblem, SolutionReport, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Vector,
    SymMatrix,
}

impl FieldKind {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Self::Scalar => &["value"],
            Self::Vector => &["x", "y"],
            Self::SymMatrix => &["xx", "xy", "yy"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
    pub field_kind: FieldKind,
    /// Free-form label, e.g. `"u"` or `"du"`.
    pub name: String,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub grid: Arc<Grid>,
    /// Per node, `field_kind.columns().len()` components.
    pub values: Vec<Vec<f64>>,
}

fn mask_name(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Interior => "interior",
        NodeKind::Boundary => "boundary",
        NodeKind::Exterior => "exterior",
    }
}

fn write_rows<W: Write>(mut w: W, grid: &Grid, kind: FieldKind, name: &str, row: impl Fn(usize) -> Vec<f64>) -> Result<()> {
    let header = SnapshotHeader {
        nx: grid.nx(),
        ny: grid.ny(),
        h: grid.h(),
        origin: grid.origin(),
        field_kind: kind,
        name: name.to_string(),
    };
    writeln!(w, "# {}", serde_json::to_string(&header)?)?;
    writeln!(w, "i,j,mask,{}", kind.columns().join(","))?;
    for k in 0..grid.node_count() {
        let (i, j) = grid.coords(k);
        write!(w, "{i},{j},{}", mask_name(grid.kind(k)))?;
        for v in row(k) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_scalar_snapshot<W: Write>(w: W, f: &ScalarField, name: &str) -> Result<()> {
    write_rows(w, f.grid(), FieldKind::Scalar, name, |k| vec![f.at(k)])
}

pub fn write_vector_snapshot<W: Write>(w: W, f: &VectorField, name: &str) -> Result<()> {
    write_rows(w, f.grid(), FieldKind::Vector, name, |k| f.at(k).to_vec())
}

pub fn write_sym_matrix_snapshot<W: Write>(w: W, f: &SymMatrixField, name: &str) -> Result<()> {
    write_rows(w, f.grid(), FieldKind::SymMatrix, name, |k| {
        let m = f.at(k);
        vec![m.xx, m.xy, m.yy]
    })
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Snapshot(format!("line {line}: {msg}"))
}

/// Parses a snapshot and rebuilds its grid from the mask column; the mask
/// classification must agree with the one the grid derives.
pub fn read_snapshot<R: BufRead>(r: R) -> Result<Snapshot> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| bad(1, "empty snapshot"))??;
    let json = first.strip_prefix("# ").ok_or_else(|| bad(1, "missing '# ' header"))?;
    let header: SnapshotHeader = serde_json::from_str(json)?;
    let cols = header.field_kind.columns();
    let expected_cols = format!("i,j,mask,{}", cols.join(","));
    let second = lines.next().ok_or_else(|| bad(2, "missing column line"))??;
    if second != expected_cols {
        return Err(bad(2, format!("expected columns '{expected_cols}', got '{second}'")));
    }
    let (w, hgt) = (header.nx + 1, header.ny + 1);
    let n = w * hgt;
    let mut kinds = vec![None; n];
    let mut values = vec![Vec::new(); n];
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 3;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 + cols.len() {
            return Err(bad(lineno, format!("expected {} fields, got {}", 3 + cols.len(), parts.len())));
        }
        let i: usize = parts[0].parse().map_err(|e| bad(lineno, e))?;
        let j: usize = parts[1].parse().map_err(|e| bad(lineno, e))?;
        if i >= w || j >= hgt {
            return Err(bad(lineno, format!("node ({i}, {j}) outside the lattice")));
        }
        let kind = match parts[2] {
            "interior" => NodeKind::Interior,
            "boundary" => NodeKind::Boundary,
            "exterior" => NodeKind::Exterior,
            other => return Err(bad(lineno, format!("unknown mask '{other}'"))),
        };
        let k = j * w + i;
        if kinds[k].is_some() {
            return Err(bad(lineno, format!("duplicate node ({i}, {j})")));
        }
        kinds[k] = Some(kind);
        values[k] = parts[3..].iter().map(|s| s.parse::<f64>().map_err(|e| bad(lineno, e))).collect::<Result<_>>()?;
    }
    if let Some(k) = kinds.iter().position(Option::is_none) {
        return Err(Error::Snapshot(format!("node ({}, {}) missing", k % w, k / w)));
    }
    let kinds: Vec<NodeKind> = kinds.into_iter().map(|k| k.expect("checked")).collect();
    let active = kinds.iter().map(|&k| k != NodeKind::Exterior).collect();
    let grid = Grid::from_active(header.nx, header.ny, header.h, header.origin, active)?;
    if grid.mask() != kinds.as_slice() {
        return Err(Error::Snapshot("mask column disagrees with the interior/boundary rule".into()));
    }
    Ok(Snapshot {
        header,
        grid: Arc::new(grid),
        values,
    })
}

impl Snapshot {
    fn expect_kind(&self, kind: FieldKind) -> Result<()> {
        if self.header.field_kind != kind {
            return Err(Error::Snapshot(format!("expected a {kind:?} field, found {:?}", self.header.field_kind)));
        }
        Ok(())
    }

    pub fn into_scalar(self) -> Result<ScalarField> {
        self.expect_kind(FieldKind::Scalar)?;
        ScalarField::new(self.grid, self.values.into_iter().map(|v| v[0]).collect())
    }

    pub fn into_vector(self) -> Result<VectorField> {
        self.expect_kind(FieldKind::Vector)?;
        VectorField::new(self.grid, self.values.into_iter().map(|v| [v[0], v[1]]).collect())
    }

    pub fn into_sym_matrix(self) -> Result<SymMatrixField> {
        self.expect_kind(FieldKind::SymMatrix)?;
        SymMatrixField::new(self.grid, self.values.into_iter().map(|v| Sym2::new(v[0], v[1], v[2])).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Square,
    /// Centred on the lattice box.
    Annulus { r_in: f64, r_out: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundarySpec {
    Exact { solution: ExactSolution },
    /// `[i, j, value]` for every boundary node.
    Nodes { values: Vec<(usize, usize, f64)> },
}

/// Problem definition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub shape: Shape,
    pub p: f64,
    pub eps: f64,
    pub boundary: BoundarySpec,
    /// Defaults to `[0, 0]` for squares and to the box centred at the
    /// origin for annuli.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin.unwrap_or(match self.shape {
            Shape::Square => [0.0, 0.0],
            Shape::Annulus { .. } => [-0.5 * self.h * self.nx as f64, -0.5 * self.h * self.ny as f64],
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        let origin = self.origin();
        match self.shape {
            Shape::Square => Grid::rectangle(self.nx, self.ny, self.h, origin),
            Shape::Annulus { r_in, r_out } => {
                let center = [origin[0] + 0.5 * self.h * self.nx as f64, origin[1] + 0.5 * self.h * self.ny as f64];
                Grid::annulus(self.nx, self.ny, self.h, origin, center, r_in, r_out)
            }
        }
    }

    pub fn problem(&self) -> Result<DirichletProblem> {
        let grid = Arc::new(self.grid()?);
        match &self.boundary {
            BoundarySpec::Exact { solution } => {
                if solution.dim() != 2 {
                    return Err(Error::DimensionMismatch { expected: 2, got: solution.dim() });
                }
                let mut values = vec![0.0; grid.node_count()];
                for k in grid.boundary_nodes() {
                    values[k] = solution.value(&grid.point(k))?;
                }
                DirichletProblem::new(ScalarField::new(grid, values)?, self.p, self.eps)
            }
            BoundarySpec::Nodes { values: list } => {
                let mut values = vec![0.0; grid.node_count()];
                let mut seen = vec![false; grid.node_count()];
                for &(i, j, v) in list {
                    if i > grid.nx() || j > grid.ny() || grid.kind(grid.index(i, j)) != NodeKind::Boundary {
                        return Err(invalid(format!("({i}, {j}) is not a boundary node")));
                    }
                    let k = grid.index(i, j);
                    values[k] = v;
                    seen[k] = true;
                }
                if let Some(k) = grid.boundary_nodes().find(|&k| !seen[k]) {
                    return Err(invalid(format!("no boundary value for node {:?}", grid.coords(k))));
                }
                DirichletProblem::new(ScalarField::new(grid, values)?, self.p, self.eps)
            }
        }
    }

    pub fn exact_solution(&self) -> Option<&ExactSolution> {
        match &self.boundary {
            BoundarySpec::Exact { solution } => Some(solution),
            BoundarySpec::Nodes { .. } => None,
        }
    }
}

/// JSON block written next to a solution snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetadata {
    pub p: f64,
    pub eps: f64,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub accelerated_steps: usize,
    pub final_update: f64,
    pub final_energy: f64,
    pub energy_history: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_l2_error: Option<f64>,
}

impl SolutionMetadata {
    pub fn new(problem: &DirichletProblem, report: &SolutionReport, relative_l2_error: Option<f64>) -> Self {
        let g = problem.grid();
        Self {
            p: problem.p(),
            eps: problem.eps(),
            nx: g.nx(),
            ny: g.ny(),
            h: g.h(),
            outer_iters: report.outer_iters,
            inner_iters: report.inner_iters,
            accelerated_steps: report.accelerated_steps,
            final_update: report.final_update,
            final_energy: report.final_energy,
            energy_history: report.energy_history.clone(),
            relative_l2_error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_snapshot_round_trip_is_exact() {
        let grid = Arc::new(Grid::centered_annulus(12, 0.3, 1.0).unwrap());
        let f = ScalarField::from_fn(grid, |x| (x[0] * 3.1).sin() / 7.0 + x[1]).unwrap();
        let mut buf = Vec::new();
        write_scalar_snapshot(&mut buf, &f, "u").unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back.header.name, "u");
        let g = back.into_scalar().unwrap();
        assert_eq!(g.values(), f.values());
        assert_eq!(**g.grid(), **f.grid());
    }

    #[test]
    fn vector_and_matrix_snapshots() {
        let grid = Arc::new(Grid::unit_square(5).unwrap());
        let v = VectorField::from_fn(grid.clone(), |x| [x[0] / 3.0, -x[1]]).unwrap();
        let mut buf = Vec::new();
        write_vector_snapshot(&mut buf, &v, "du").unwrap();
        let snap = read_snapshot(buf.as_slice()).unwrap();
        assert!(snap.clone().into_scalar().is_err());
        assert_eq!(snap.into_vector().unwrap().values(), v.values());
        let m = SymMatrixField::from_fn(grid, |x| Sym2::new(x[0], 0.1, x[1] / 7.0)).unwrap();
        let mut buf = Vec::new();
        write_sym_matrix_snapshot(&mut buf, &m, "d2u").unwrap();
        assert_eq!(read_snapshot(buf.as_slice()).unwrap().into_sym_matrix().unwrap().values(), m.values());
    }

    #[test]
    fn malformed_snapshots_are_rejected() {
        assert!(read_snapshot("".as_bytes()).is_err());
        assert!(read_snapshot("{}\n".as_bytes()).is_err());
        let grid = Arc::new(Grid::unit_square(3).unwrap());
        let mut buf = Vec::new();
        write_scalar_snapshot(&mut buf, &ScalarField::zeros(grid), "u").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(read_snapshot(truncated.as_bytes()).is_err());
        let relabelled = text.replacen("0,0,boundary", "0,0,interior", 1);
        assert!(read_snapshot(relabelled.as_bytes()).is_err());
    }

    #[test]
    fn problem_file_with_exact_boundary() {
        let json = r#"{"nx": 32, "ny": 32, "h": 0.0625, "shape": {"type": "annulus", "r_in": 0.3, "r_out": 1.0},
            "p": 3.0, "eps": 1e-8,
            "boundary": {"type": "exact", "solution": {"kind": "radial_power", "center": [0.0, 0.0], "p": 3.0}}}"#;
        let pf = ProblemFile::from_json(json).unwrap();
        assert_eq!(pf.origin(), [-1.0, -1.0]);
        let pb = pf.problem().unwrap();
        let k = pb.grid().boundary_nodes().next().unwrap();
        let x = pb.grid().point(k);
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        assert!((pb.boundary().at(k) - rho.sqrt()).abs() < 1e-14);
        let back = ProblemFile::from_json(&serde_json::to_string(&pf).unwrap()).unwrap();
        assert_eq!(back, pf);
    }

    #[test]
    fn problem_file_with_node_list() {
        let grid = Grid::unit_square(2).unwrap();
        let values: Vec<(usize, usize, f64)> = grid.boundary_nodes().map(|k| (grid.coords(k).0, grid.coords(k).1, 1.0)).collect();
        let mut pf = ProblemFile {
            nx: 2,
            ny: 2,
            h: 0.5,
            shape: Shape::Square,
            p: 2.0,
            eps: 1e-3,
            boundary: BoundarySpec::Nodes { values: values.clone() },
            origin: None,
            solver: None,
        };
        assert!(pf.problem().is_ok());
        pf.boundary = BoundarySpec::Nodes { values: values[1..].to_vec() };
        assert!(pf.problem().is_err());
        pf.boundary = BoundarySpec::Nodes { values: vec![(1, 1, 0.0)] };
        assert!(pf.problem().is_err());
    }
}
