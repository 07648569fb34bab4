use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsvcal_core::calibrator::{evaluate, gradient};
use lsvcal_core::forward::{prices_backward, prices_from_density, reference_sigma2, solve_fokker_planck};
use lsvcal_core::heston::heston_call_price;
use lsvcal_core::hjb::{dual_objective, solve_hjb};
use lsvcal_core::{calibrate, CalibrationProblem, CalibrationSettings, CostParams, DomainSpec, HestonParams, OptionQuote, SpotState};

fn heston_row() -> HestonParams {
    HestonParams::new(2.0, 0.09, 0.1, -0.6, 0.05).unwrap()
}

fn lsv_row() -> HestonParams {
    HestonParams::new(0.5, 0.04, 0.16, -0.4, 0.05).unwrap()
}

fn spot() -> SpotState {
    SpotState::from_price(100.0, 0.04).unwrap()
}

fn domain(n_z: usize, n_v: usize, n_steps: usize) -> DomainSpec {
    DomainSpec {
        n_z,
        n_v,
        n_steps,
        ..DomainSpec::default()
    }
}

fn analytic_quotes(strikes: &[f64], maturities: &[f64]) -> Vec<OptionQuote> {
    let hp = heston_row();
    let mut q = Vec::new();
    for &t in maturities {
        for &k in strikes {
            q.push(OptionQuote::call(k, t, heston_call_price(&hp, &spot(), k, t).unwrap()));
        }
    }
    q
}

fn small_problem(reference: HestonParams) -> CalibrationProblem {
    CalibrationProblem::new(
        reference,
        spot(),
        analytic_quotes(&[90.0, 100.0, 110.0], &[0.2, 0.6, 1.0]),
        &domain(31, 21, 50),
        CostParams::new(4.0, 1.0).unwrap(),
        1e-5,
    )
    .unwrap()
}

fn central_difference(p: &CalibrationProblem, lambda: &[f64], i: usize, h: f64) -> f64 {
    let mut a = lambda.to_vec();
    let mut b = lambda.to_vec();
    a[i] += h;
    b[i] -= h;
    (dual_objective(p, &a).unwrap() - dual_objective(p, &b).unwrap()) / (2.0 * h)
}

#[test]
fn gradient_matches_finite_differences() {
    let p = small_problem(lsv_row());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random: Vec<f64> = (0..p.quotes.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
    for lambda in [vec![0.0; p.quotes.len()], random] {
        let g = gradient(&p, &lambda).unwrap();
        for i in 0..g.len() {
            if g[i].abs() <= 1e-6 {
                continue;
            }
            let fd = central_difference(&p, &lambda, i, 1e-5);
            assert!((fd - g[i]).abs() <= 1e-3 * g[i].abs(), "coordinate {i}: gradient {} vs difference {fd}", g[i]);
        }
    }
}

#[test]
fn objective_is_concave_along_lines() {
    let p = small_problem(lsv_row());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let a: Vec<f64> = (0..p.quotes.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..p.quotes.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (ja, jb, jm) = (
            dual_objective(&p, &a).unwrap(),
            dual_objective(&p, &b).unwrap(),
            dual_objective(&p, &mid).unwrap(),
        );
        assert!(jm >= 0.5 * (ja + jb) - 1e-12, "J(mid)={jm} below chord {}", 0.5 * (ja + jb));
    }
}

#[test]
fn small_multipliers_are_first_order() {
    let p = small_problem(lsv_row());
    let g0 = gradient(&p, &vec![0.0; p.quotes.len()]).unwrap();
    let dir: Vec<f64> = (0..p.quotes.len()).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let slope: f64 = dir.iter().zip(&g0).map(|(d, g)| d * g).sum();
    let mut last = f64::INFINITY;
    for eps in [1e-2, 1e-3, 1e-4] {
        let l: Vec<f64> = dir.iter().map(|d| eps * d).collect();
        let rem = (dual_objective(&p, &l).unwrap() - eps * slope).abs() / eps;
        assert!(rem < last * 0.2 || rem < 1e-9, "remainder {rem} at eps {eps}");
        last = rem;
    }
}

#[test]
fn forward_density_is_a_martingale_measure() {
    let p = small_problem(lsv_row());
    let e = evaluate(&p, &vec![0.0; p.quotes.len()]).unwrap();
    let path = solve_fokker_planck(&p, &e.hjb.sigma2).unwrap();
    assert!(path.max_mass_error() < 1e-12);
    for k in [10, 25, 50] {
        let t = p.tgrid.time(k);
        let s = path.expectation(k, |z| (-p.heston.r * t).exp() * z.exp());
        assert!((s / 100.0 - 1.0).abs() <= 2e-3, "discounted spot {s} at t={t}");
    }
}

#[test]
fn forward_prices_satisfy_put_call_parity() {
    let p = small_problem(lsv_row());
    let path = solve_fokker_planck(&p, &reference_sigma2(&p)).unwrap();
    for (k, t) in [(90.0, 0.2), (100.0, 0.6), (115.0, 1.0)] {
        let v = prices_from_density(&path, &[OptionQuote::call(k, t, 0.0), OptionQuote::put(k, t, 0.0)]).unwrap();
        let forward = path.expectation(p.tgrid.step_of(t).unwrap(), |z| (-p.heston.r * t).exp() * z.exp());
        let parity = forward - k * (-p.heston.r * t).exp();
        assert!((v[0] - v[1] - parity).abs() < 1e-10);
    }
}

/// Reference prices converge under time refinement.
#[test]
fn time_refinement_converges() {
    let quotes = vec![OptionQuote::call(95.0, 0.5, 0.0), OptionQuote::call(110.0, 1.0, 0.0)];
    let price = |n: usize| {
        let p = CalibrationProblem::new(heston_row(), spot(), quotes.clone(), &domain(41, 31, n), CostParams::new(4.0, 1.0).unwrap(), 1e-4)
            .unwrap();
        prices_backward(&p, &reference_sigma2(&p), &quotes).unwrap()
    };
    let (a, b, c) = (price(20), price(40), price(80));
    for q in 0..quotes.len() {
        let (d1, d2) = ((a[q] - b[q]).abs(), (b[q] - c[q]).abs());
        assert!(d2 < 0.7 * d1, "quote {q}: successive differences {d1} then {d2}");
    }
}

#[test]
fn identical_models_with_grid_consistent_data_need_no_correction() {
    let mut p = small_problem(heston_row());
    let prices = prices_backward(&p, &reference_sigma2(&p), &p.quotes).unwrap();
    for (q, c) in p.quotes.iter_mut().zip(prices) {
        q.price = c;
    }
    let res = calibrate(&p, &CalibrationSettings::default()).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 0);
    assert!(res.lambda_star.0.iter().all(|&l| l == 0.0));
    let hjb = solve_hjb(&p, &res.lambda_star.0).unwrap();
    assert!(hjb.phi0.iter().all(|&x| x.abs() <= 1e-12));
}

#[test]
fn example_two_shape_calibrates() {
    let p = small_problem(lsv_row());
    let res = calibrate(&p, &CalibrationSettings::default()).unwrap();
    assert!(res.converged, "gradient {} after {} iterations", res.grad_norm, res.iterations);
    for r in &res.repricing {
        assert!(r.price_error() <= p.epsilon);
        assert!(r.iv_error().unwrap() < 1e-4);
    }
    let ascent = res.trace.windows(2).filter(|w| w[1].kind == lsvcal_core::calibrator::StepKind::LineSearch);
    for w in ascent {
        assert!(w[1].objective >= w[0].objective - 1e-12);
    }
    assert!(res.eta.data.iter().all(|e| e.abs() <= 1.0));
}
