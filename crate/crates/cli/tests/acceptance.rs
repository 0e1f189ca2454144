//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Reference values come from oracles written here, independent of
//! the code paths under test.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use plaplab::estimates::{change_of_scale_check, coefficient_triple, threshold_sharp, threshold_two_sided};
use plaplab::field::VectorField;
use plaplab::sampling::{gaussian_sym_matrix, gaussian_vector, log_uniform, stream_rng};
use plaplab::solver::{solve, SolverConfig};
use plaplab::suite::{self, radial_problem, RESIDUAL_TOL};
use plaplab::tensor::{matrix_inequality_residual, sharpness_gap, two_sided_residual, SymMatrix, Vector};
use plaplab::Grid;
use plaplab_cli::config::{EstimatesConfig, ExperimentConfig, SolveConfig};
use plaplab_cli::estimates::EstimatesReport;
use plaplab_cli::report::stability_rows;
use plaplab_cli::solve::SolveReport;
use plaplab_cli::verify::InequalityReport;

const SEED: u64 = 20_261_015;
const BIN: &str = env!("CARGO_BIN_EXE_plaplab");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn plaplab(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("the plaplab binary runs")
}

fn dense(a: &SymMatrix) -> DMatrix<f64> {
    let n = a.dim();
    DMatrix::from_fn(n, n, |i, j| a.get(i, j))
}

/// The matrix inequality in the eigenbasis of `A`: with `A = Q diag(λ) Q^T`
/// and `a = Q^T e`, every invariant becomes a weighted power sum.
fn oracle_matrix_residual(a: &SymMatrix, e: &Vector) -> f64 {
    let eig = SymmetricEigen::new(dense(a));
    let c = eig.eigenvectors.transpose() * DVector::from_column_slice(e.as_slice());
    let n = a.dim() as f64;
    let (mut e2, mut l2, mut l2a, mut tr, mut la) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (l, x) in eig.eigenvalues.iter().zip(c.iter()) {
        e2 += x * x;
        l2 += l * l;
        l2a += l * l * x * x;
        tr += l;
        la += l * x * x;
    }
    e2 * e2 * l2 - 2.0 * e2 * l2a - (e2 * tr - la).powi(2) / (n - 1.0) + la * la
}

/// Invariants by dense matrix products.
fn oracle_invariants(a: &SymMatrix, e: &Vector) -> (f64, f64, f64, f64, f64) {
    let m = dense(a);
    let v = DVector::from_column_slice(e.as_slice());
    let av = &m * &v;
    (v.norm_squared(), m.norm_squared(), av.norm_squared(), m.trace(), v.dot(&av))
}

fn criterion_1(dir: &Path) -> (Verdict, Option<InequalityReport>) {
    let out = dir.join("c1");
    let t = Instant::now();
    let run = plaplab(&["verify-inequalities", "--seed", &SEED.to_string(), "--out", out.to_str().unwrap()]);
    let secs = t.elapsed().as_secs_f64();
    let text = match std::fs::read_to_string(out.join("inequalities.json")) {
        Ok(t) => t,
        Err(e) => return (verdict(false, format!("no report: {e}")), None),
    };
    let report: InequalityReport = serde_json::from_str(&text).unwrap();
    let dims_ok = report.dims.iter().map(|d| d.n).eq(2..=8) && report.dims.iter().all(|d| d.samples == 1_000_000);
    let violations: u64 = report.dims.iter().map(|d| d.violations).sum();
    let n2 = &report.dims[0];

    let mut rng = stream_rng(SEED, 1);
    let mut worst: f64 = 0.0;
    for n in 2..=8 {
        for _ in 0..2000 {
            let a = gaussian_sym_matrix(&mut rng, n).scaled(log_uniform(&mut rng, 1e-3, 1e3));
            let e = gaussian_vector(&mut rng, n).scaled(log_uniform(&mut rng, 1e-3, 1e3));
            let scale = (e.norm_sq().powi(2) * a.norm_sq()).max(1.0);
            let lib = matrix_inequality_residual(&a, &e).unwrap();
            worst = worst.max((lib - oracle_matrix_residual(&a, &e)).abs() / scale);
        }
    }
    let pass = run.status.success() && dims_ok && violations == 0 && n2.equality_violations == 0 && n2.max_abs_residual <= 1e-10 && worst <= 1e-10 && secs < 60.0;
    let detail = format!(
        "7x10^6 samples, {violations} violations, n=2 max |residual|/scale {:.2e}, eigenbasis oracle agreement {:.1e}, {secs:.1} s",
        n2.max_abs_residual, worst
    );
    (verdict(pass, detail), Some(report))
}

fn criterion_2(report: Option<&InequalityReport>) -> Verdict {
    let Some(report) = report else {
        return verdict(false, "no inequality report");
    };
    let two: u64 = report.dims.iter().map(|d| d.two_sided_violations).sum();
    let gap: u64 = report.dims.iter().map(|d| d.gap_violations).sum();
    let witness = report.witness;

    let mut rng = stream_rng(SEED, 2);
    let mut worst: f64 = 0.0;
    for n in 3..=8 {
        let nm1 = (n - 1) as f64;
        let nf = n as f64;
        for _ in 0..2000 {
            let a = gaussian_sym_matrix(&mut rng, n);
            let e = gaussian_vector(&mut rng, n);
            let (e2, a2, ae2, tr, eae) = oracle_invariants(&a, &e);
            let lhs = ae2 - tr * eae - 0.5 * (a2 - tr * tr) * e2;
            let two_sided = 0.5 * (nf - 2.0) * (a2 * e2 - ae2) - lhs.abs();
            let sharp_bound = 2.0 * ae2 + (e2 * tr - eae).powi(2) / (nm1 * e2) - eae * eae / e2;
            let two_sided_bound = (nf * ae2 + e2 * tr * tr - 2.0 * tr * eae) / nm1;
            let g = sharpness_gap(&a, &e).unwrap();
            let scale = (e2 * (a2 + tr * tr)).max(1.0);
            worst = worst
                .max((two_sided_residual(&a, &e).unwrap() - two_sided).abs() / scale)
                .max((g.sharp - sharp_bound).abs() / scale)
                .max((g.two_sided - two_sided_bound).abs() / scale);
        }
    }
    let pass = two == 0 && gap == 0 && report.witness_found() && worst <= 1e-12;
    let detail = match witness {
        Some(w) => format!(
            "two-sided violations {two}, gap violations {gap} (tol {RESIDUAL_TOL:e}), best improvement {:.3} x scale at n={}, oracle agreement {worst:.1e}",
            w.improvement, w.n
        ),
        None => "no sample with n >= 3".to_string(),
    };
    verdict(pass, detail)
}

fn criterion_3() -> Verdict {
    // Lattice p = k/8, s = j/8: the sign of s - threshold is decided in
    // integers, (s + 1)(n - 1) + (p - 1) scaled by 8.
    let mut points = 0;
    let mut sign_errors = 0;
    let mut on_threshold = 0;
    for n in [2usize, 3, 4, 5, 8] {
        for k in [9i64, 10, 12, 16, 20] {
            for j in [-40i64, -24, -16, -12] {
                let (p, s) = (k as f64 / 8.0, j as f64 / 8.0);
                let exact = (j + 8) * (n as i64 - 1) + (k - 8);
                on_threshold += (exact == 0) as usize;
                let a = coefficient_triple(n, p, s, 0.0).unwrap().a;
                if (a > 0.0) != (exact > 0) {
                    sign_errors += 1;
                }
                points += 1;
            }
        }
    }
    let mut order_errors = 0;
    let mut strict_errors = 0;
    let mut oracle_errors = 0;
    let mut c_errors = 0;
    for n in 2..=8usize {
        let nf = n as f64;
        let c = coefficient_triple(n, 3.0, 0.0, 0.0).unwrap().c;
        c_errors += (c != 1.0 + 1.0 / (nf - 1.0)) as usize;
        for i in 1..=900 {
            let p = 1.0 + i as f64 / 100.0;
            let (ours, two) = (threshold_sharp(n, p), threshold_two_sided(n, p));
            let oracle = 2.0 - (p + nf / (nf - 1.0)).min(3.0 + (p - 1.0) / (nf - 1.0));
            oracle_errors += ((two - oracle).abs() > 1e-12) as usize;
            order_errors += (ours > two) as usize;
            if p < 2.0 && n >= 3 && ours >= two {
                strict_errors += 1;
            }
        }
    }
    let pass = points == 100 && sign_errors == 0 && order_errors == 0 && strict_errors == 0 && oracle_errors == 0 && c_errors == 0;
    verdict(
        pass,
        format!(
            "{points} lattice points ({on_threshold} on the threshold), {sign_errors} sign errors; 6300 (n, p) pairs: {order_errors} order, {strict_errors} strictness, {oracle_errors} closed-form errors; c mismatches {c_errors}"
        ),
    )
}

/// Dirichlet P1 Laplacian on the `/`-split triangulation, assembled triangle
/// by triangle from vertex coordinates and solved with dense LU.
fn p1_harmonic_oracle(grid: &Grid, boundary: &[f64]) -> Vec<f64> {
    let slot: Vec<Option<usize>> = {
        let mut next = 0;
        (0..grid.node_count())
            .map(|k| {
                grid.is_interior(k).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let m = slot.iter().flatten().count();
    let mut k_mat = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let corners = [grid.index(i, j), grid.index(i + 1, j), grid.index(i, j + 1), grid.index(i + 1, j + 1)];
            if !corners.iter().all(|&c| grid.is_active(c)) {
                continue;
            }
            for tri in [[corners[0], corners[1], corners[3]], [corners[0], corners[3], corners[2]]] {
                let x: Vec<[f64; 2]> = tri.iter().map(|&v| grid.point(v)).collect();
                let det = (x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (x[1][1] - x[0][1]);
                let area = 0.5 * det.abs();
                // gradient of the hat function at vertex a
                let grad = |a: usize| {
                    let (b, c) = (x[(a + 1) % 3], x[(a + 2) % 3]);
                    [(b[1] - c[1]) / det, (c[0] - b[0]) / det]
                };
                for a in 0..3 {
                    let Some(ra) = slot[tri[a]] else { continue };
                    for b in 0..3 {
                        let (ga, gb) = (grad(a), grad(b));
                        let kab = area * (ga[0] * gb[0] + ga[1] * gb[1]);
                        match slot[tri[b]] {
                            Some(cb) => k_mat[(ra, cb)] += kab,
                            None => rhs[ra] -= kab * boundary[tri[b]],
                        }
                    }
                }
            }
        }
    }
    let sol = k_mat.lu().solve(&rhs).expect("stiffness matrix is nonsingular");
    (0..grid.node_count()).map(|k| slot[k].map_or(boundary[k], |s| sol[s])).collect()
}

fn criterion_4(report: &SolveReport) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for p in [1.5, 3.0, 4.0] {
        match report.convergence.iter().find(|c| c.p == p) {
            Some(c) => {
                let decreasing = c.errors.windows(2).all(|w| w[1] < w[0]);
                pass &= decreasing && c.orders.iter().all(|&o| o >= 1.0);
                notes.push(format!("p={p} orders {:.2?}", c.orders));
            }
            None => {
                pass = false;
                notes.push(format!("p={p} missing"));
            }
        }
    }
    let monotone = report.runs.iter().all(|r| r.energy_monotone);
    let worst_increase = report.runs.iter().map(|r| r.max_energy_increase).fold(f64::NEG_INFINITY, f64::max);

    let problem = radial_problem(2.0, 32, suite::SUITE_EPS).unwrap();
    let cfg = SolverConfig::default();
    let sol = solve(&problem, &cfg).unwrap();
    let oracle = p1_harmonic_oracle(problem.grid(), problem.boundary().values());
    let diff = sol.u.values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let one_step = sol.outer_iters == 1;
    pass &= monotone && one_step && diff <= 1e-8;
    verdict(
        pass,
        format!(
            "{}; largest accepted energy increase {worst_increase:.1e}; p=2 vs dense P1 oracle {diff:.1e} in {} step",
            notes.join(", "),
            sol.outer_iters
        ),
    )
}

fn criterion_5(report: &SolveReport) -> Verdict {
    let worst = report
        .runs
        .iter()
        .map(|r| r.lb_max_abs_residual / r.h)
        .fold(0.0, f64::max);
    let min = report.runs.iter().map(|r| r.lb_min_residual / r.lb_tol).fold(f64::INFINITY, f64::min);
    let pass = !report.runs.is_empty() && report.runs.iter().all(|r| r.lb_ok);
    verdict(
        pass,
        format!(
            "{} solved fields, tol(h) = {:.3} h ({}x oracle maximum); worst |residual| {worst:.3} h, smallest residual/tol {min:.3}",
            report.runs.len(),
            report.lb_constant,
            report.lb_safety
        ),
    )
}

fn criterion_6(report: &EstimatesReport, secs: f64) -> Verdict {
    let claimed: Vec<_> = report.rows.iter().filter(|r| !r.diagnostic).collect();
    let not_finite = claimed.iter().filter(|r| !r.empirical_c.is_some_and(f64::is_finite)).count();
    let st = stability_rows(report.rows.clone(), 0.2);
    let checked: Vec<_> = st.iter().filter(|r| r.finest_pair && !r.diagnostic).collect();
    let worst = checked.iter().filter_map(|r| r.relative_change).fold(0.0, f64::max);
    let unstable = checked.iter().filter(|r| r.stable != Some(true)).count();
    let expected = 5 * suite::SUITE_PS.iter().map(|&p| suite::suite_s_values(p).len()).sum::<usize>();
    let pass = report.solve_errors.is_empty() && not_finite == 0 && unstable == 0 && checked.len() == expected && secs < 600.0;
    verdict(
        pass,
        format!(
            "{} (estimate, p, s) constants at h and h/2: {not_finite} not finite, {unstable} unstable, largest change {:.1}%, {secs:.1} s",
            checked.len(),
            100.0 * worst
        ),
    )
}

/// Constant plus a random smooth oscillation of amplitude `amp`.
fn random_field(grid: &Arc<Grid>, rng: &mut plaplab::sampling::StreamRng, amp: f64) -> VectorField {
    let c = gaussian_vector(rng, 2);
    let k = gaussian_vector(rng, 8);
    VectorField::from_fn(grid.clone(), |x| {
        let w1 = (6.0 * k.0[0] * x[0] + 6.0 * k.0[1] * x[1] + k.0[2]).sin();
        let w2 = (6.0 * k.0[3] * x[0] - 6.0 * k.0[4] * x[1] + k.0[5]).cos();
        [c.0[0] + amp * (w1 + k.0[6] * w2), c.0[1] + amp * (k.0[7] * w1 - w2)]
    })
    .unwrap()
}

fn criterion_7(report: &EstimatesReport) -> Verdict {
    let grid = Arc::new(Grid::unit_square(96).unwrap());
    let mut rng = stream_rng(SEED, 7);
    let (mut held, mut worst, mut bad) = (0, 0.0f64, 0);
    for _ in 0..400 {
        let amp = log_uniform(&mut rng, 1e-2, 10.0);
        let v = random_field(&grid, &mut rng, amp);
        let m = [1.0, 2.0][held % 2];
        let big_m = m + 1.0 + 3.0 * log_uniform(&mut rng, 1e-3, 1.0);
        let kappa = m + (big_m - m) * log_uniform(&mut rng, 1e-3, 1.0);
        let r = 0.4 / big_m;
        let rep = change_of_scale_check(&v, [0.5, 0.5], r, m, big_m, kappa).unwrap();
        if let Some(ratio) = rep.ratio {
            held += 1;
            worst = worst.max(ratio);
            bad += (ratio > 9.0 + 1e-12) as usize;
        }
    }
    let suite_bad = report.change_of_scale.iter().filter(|r| !r.ok).count();
    let suite_held = report.change_of_scale.iter().filter(|r| r.hypothesis_holds == Some(true)).count();

    let vs_ok = report.vs.iter().all(|v| v.ok);
    let identity = report.vs.iter().find(|v| v.p == 2.0 && v.s == 0.0);
    let identity_ok = identity.is_some_and(|v| v.c1_hat == Some(1.0) && v.c2_hat == Some(1.0));

    let sweeps_ok = !report.sweeps.is_empty() && report.sweeps.iter().all(|s| s.first_success.is_some_and(|m| m <= 64.0));
    let worst_m = report.sweeps.iter().filter_map(|s| s.first_success).fold(0.0, f64::max);

    let pass = held >= 50 && bad == 0 && suite_bad == 0 && suite_held > 0 && vs_ok && identity_ok && sweeps_ok;
    verdict(
        pass,
        format!(
            "change of scale: {held} sampled + {suite_held} suite inputs with the hypothesis, max ratio {worst:.3}, {} above 9; V_s comparability {} pairs ok={vs_ok}, (2,0) -> (1,1) {identity_ok}; sigma 0.25 reached by M <= {worst_m} in {} sweeps",
            bad + suite_bad,
            report.vs.len(),
            report.sweeps.len()
        ),
    )
}

fn same_reports(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(a).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut compared = 0;
    for path in names {
        let name = path.file_name().unwrap();
        if name == "manifest.json" {
            continue;
        }
        let (x, y) = (std::fs::read(&path).map_err(|e| e.to_string())?, std::fs::read(b.join(name)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        compared += 1;
    }
    Ok(compared)
}

fn criterion_8(dir: &Path) -> Verdict {
    let roundtrip = suite::vs_roundtrip_error(SEED, 100_000).unwrap();
    let seed = SEED.to_string();
    let mut compared = 0;
    let mut problems = Vec::new();
    let runs: [&[&str]; 2] = [&["verify-inequalities", "--samples", "20000"], &["solve", "--p", "1.5,3", "--grid", "32"]];
    for (i, args) in runs.iter().enumerate() {
        let outs: Vec<PathBuf> = (0..2).map(|r| dir.join(format!("c8_{i}_{r}"))).collect();
        for (r, out) in outs.iter().enumerate() {
            let jobs = (r + 1).to_string();
            let mut full: Vec<&str> = args.to_vec();
            full.extend(["--seed", &seed, "--jobs", &jobs, "--out", out.to_str().unwrap()]);
            if !plaplab(&full).status.success() {
                problems.push(format!("{} exited nonzero", args[0]));
            }
        }
        match same_reports(&outs[0], &outs[1]) {
            Ok(n) => compared += n,
            Err(e) => problems.push(e),
        }
    }
    let pass = roundtrip <= 1e-12 && problems.is_empty() && compared >= 4;
    verdict(
        pass,
        format!(
            "V_s round trip max relative error {roundtrip:.2e} over 10^5 samples; {compared} report files byte-identical across repeated runs{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();
    let mut results = Vec::new();

    let (v1, ineq) = criterion_1(dir);
    results.push(("1 inequality suite", v1));
    results.push(("2 implication suite", criterion_2(ineq.as_ref())));
    results.push(("3 threshold algebra", criterion_3()));

    let solve_cfg = SolveConfig::resolve(&ExperimentConfig {
        seed: Some(SEED),
        snapshots: Some(false),
        ..Default::default()
    })
    .unwrap();
    let (solve_report, _) = plaplab_cli::solve::execute(&solve_cfg, &dir.join("solve")).unwrap();
    let solve_report = solve_report.expect("radial suite report");
    results.push(("4 solver correctness", criterion_4(&solve_report)));
    results.push(("5 pointwise Hessian bound", criterion_5(&solve_report)));

    let est_cfg = EstimatesConfig::resolve(&ExperimentConfig {
        seed: Some(SEED),
        grids: Some(vec![64, 128]),
        ..Default::default()
    })
    .unwrap();
    let t = Instant::now();
    let (est_report, _) = plaplab_cli::estimates::execute(&est_cfg, &dir.join("estimates")).unwrap();
    let secs = t.elapsed().as_secs_f64();
    results.push(("6 integral estimates", criterion_6(&est_report, secs)));
    results.push(("7 blow-up machinery", criterion_7(&est_report)));
    results.push(("8 round trip and determinism", criterion_8(dir)));

    let mut failed = 0;
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += (!v.pass) as usize;
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
