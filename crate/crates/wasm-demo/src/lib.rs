//! Browser bindings for three interactive views: a scatter of sampled
//! matrix-inequality margins, a heatmap of a small annulus solve, and the
//! admissible-exponent thresholds as functions of `p`.
//!
//! Each export returns a flat `Float64Array` so the page can draw it
//! without any serialization layer.

use plaplab::estimates::{threshold_sharp, threshold_two_sided};
use plaplab::sampling::{gaussian_sym_matrix, gaussian_vector, stream_rng};
use plaplab::solver::{solve, SolverConfig};
use plaplab::suite::{gap_scale, radial_problem, radial_solution};
use plaplab::tensor::{matrix_inequality_residual_from, quad_invariants, sharpness_gap_from};
use wasm_bindgen::prelude::*;

/// Largest grid the page may request; keeps a solve well under a second.
pub const MAX_CELLS: usize = 96;

/// `count` pairs `(residual / scale, improvement / gap_scale)` for Gaussian
/// `(A, e)` in dimension `n`, flattened.
pub fn inequality_scatter(seed: u64, n: usize, count: usize) -> Result<Vec<f64>, String> {
    if !(2..=12).contains(&n) {
        return Err(format!("dimension must be in 2..=12, got {n}"));
    }
    let mut rng = stream_rng(seed, n as u64);
    let mut out = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let a = gaussian_sym_matrix(&mut rng, n);
        let e = gaussian_vector(&mut rng, n);
        let q = quad_invariants(&a, &e).map_err(|e| e.to_string())?;
        let gap = sharpness_gap_from(&q).map_err(|e| e.to_string())?;
        out.push(matrix_inequality_residual_from(&q) / q.scale());
        out.push(gap.improvement() / gap_scale(&q));
    }
    Ok(out)
}

/// Solves the radial annulus benchmark. Layout: `[side, outer_iters,
/// relative_error, u...]` with `side * side` node values row by row and
/// `NaN` outside the domain.
pub fn annulus_solution(p: f64, cells: usize) -> Result<Vec<f64>, String> {
    if !(8..=MAX_CELLS).contains(&cells) {
        return Err(format!("cells must be in 8..={MAX_CELLS}, got {cells}"));
    }
    let problem = radial_problem(p, cells, 1e-10).map_err(|e| e.to_string())?;
    let report = solve(&problem, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let sol = radial_solution(p);
    let err = plaplab::solver::relative_l2_error(&report.u, |x| sol.value(&x).unwrap_or(f64::NAN));
    let grid = problem.grid();
    let mut out = vec![(cells + 1) as f64, report.outer_iters as f64, err];
    out.extend((0..grid.node_count()).map(|k| if grid.is_active(k) { report.u.at(k) } else { f64::NAN }));
    Ok(out)
}

/// `samples` triples `(p, sharp, two_sided)` for `p` evenly spaced in `(1, 10]`.
pub fn threshold_table(n: usize, samples: usize) -> Result<Vec<f64>, String> {
    if n < 2 || samples < 2 {
        return Err("need n >= 2 and at least two samples".to_string());
    }
    Ok((1..=samples)
        .flat_map(|i| {
            let p = 1.0 + 9.0 * i as f64 / samples as f64;
            [p, threshold_sharp(n, p), threshold_two_sided(n, p)]
        })
        .collect())
}

#[wasm_bindgen(js_name = inequalityScatter)]
pub fn inequality_scatter_js(seed: u32, n: usize, count: usize) -> Result<Vec<f64>, JsError> {
    inequality_scatter(seed as u64, n, count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = annulusSolution)]
pub fn annulus_solution_js(p: f64, cells: usize) -> Result<Vec<f64>, JsError> {
    annulus_solution(p, cells).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = thresholdTable)]
pub fn threshold_table_js(n: usize, samples: usize) -> Result<Vec<f64>, JsError> {
    threshold_table(n, samples).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_is_nonnegative_and_planar_equality() {
        let v = inequality_scatter(3, 4, 200).unwrap();
        assert_eq!(v.len(), 400);
        assert!(v.chunks(2).all(|c| c[0] >= -1e-12 && c[1] >= -1e-12));
        let v = inequality_scatter(3, 2, 50).unwrap();
        assert!(v.chunks(2).all(|c| c[0].abs() < 1e-10));
        assert!(inequality_scatter(3, 1, 5).is_err());
    }

    #[test]
    fn annulus_layout() {
        let v = annulus_solution(3.0, 16).unwrap();
        let side = v[0] as usize;
        assert_eq!(v.len(), 3 + side * side);
        assert!(v[2] < 1e-2);
        // corners are outside the annulus, the node right of the hole is inside
        assert!(v[3].is_nan());
        let mid = 3 + (side / 2) * side + side - 2;
        assert!(v[mid].is_finite());
        assert!(annulus_solution(3.0, 4).is_err());
    }

    #[test]
    fn thresholds_are_ordered() {
        let t = threshold_table(3, 90).unwrap();
        assert!(t.chunks(3).all(|c| c[1] <= c[2]));
        assert!(t.chunks(3).filter(|c| c[0] < 2.0).all(|c| c[1] < c[2]));
    }
}
