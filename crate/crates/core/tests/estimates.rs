use std::sync::Arc;

use plaplab::estimates::{build_cutoff, caccioppoli_basic, integral_average, oscillation_ratio, Ball, FieldBundle};
use plaplab::exact::ExactSolution;
use plaplab::field::ScalarField;
use plaplab::Grid;

#[test]
fn ball_averages_converge_to_the_exact_mean() {
    // mean of |x|^2 over B_R(c) is |c|^2 + R^2 / 2
    let (c, r) = ([0.45, 0.52], 0.2);
    let exact = c[0] * c[0] + c[1] * c[1] + 0.5 * r * r;
    let avg = |cells| {
        let g = Arc::new(Grid::unit_square(cells).unwrap());
        let f = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        integral_average(&f, Ball::new(c, r).unwrap()).unwrap()
    };
    let (a, b) = (avg(64), avg(128));
    assert!((a - b).abs() / b < 0.05);
    assert!((b - exact).abs() / exact < 0.01, "{b} vs {exact}");
}

fn sample_field(cells: usize) -> FieldBundle {
    let g = Arc::new(Grid::centered_annulus(cells, 0.3, 1.0).unwrap());
    let u = ScalarField::from_fn(g, |x| x[0].powi(3) + 2.0 * x[0] * x[1] + x[1].sin()).unwrap();
    FieldBundle::from_scalar(u, 3.0, 1e-10).unwrap()
}

#[test]
fn oscillation_ratio_ignores_constants_and_quarter_turns() {
    let f = sample_field(64);
    let ball = Ball::new([0.65, 0.0], 0.1).unwrap();
    let base = oscillation_ratio(&f, 0.0, ball, None).unwrap().empirical_c.unwrap();

    let shifted = FieldBundle::from_scalar(f.u.map(|v| v + 17.5).unwrap(), 3.0, 1e-10).unwrap();
    let c = oscillation_ratio(&shifted, 0.0, ball, None).unwrap().empirical_c.unwrap();
    assert!((c - base).abs() <= 1e-9 * base);

    let rotated = FieldBundle::from_scalar(f.u.rotated_quarter_turn().unwrap(), 3.0, 1e-10).unwrap();
    let turned = Ball::new([0.0, 0.65], 0.1).unwrap();
    let c = oscillation_ratio(&rotated, 0.0, turned, None).unwrap().empirical_c.unwrap();
    assert!((c - base).abs() <= 1e-9 * base, "{c} vs {base}");
}

#[test]
fn caccioppoli_constant_is_stable_on_exact_solutions() {
    let sol = ExactSolution::radial(vec![0.0, 0.0], 4.0);
    let ball = Ball::new([0.0, -0.6], 0.12).unwrap();
    let c = |cells| {
        let g = Arc::new(Grid::centered_annulus(cells, 0.3, 1.0).unwrap());
        let f = FieldBundle::from_exact(g.clone(), &sol, 4.0, 1e-10).unwrap();
        caccioppoli_basic(&f, &build_cutoff(&g, ball).unwrap(), None).unwrap().empirical_c.unwrap()
    };
    let (a, b) = (c(64), c(128));
    assert!((a - b).abs() / b < 0.05, "{a} vs {b}");
}
