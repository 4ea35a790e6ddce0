use meshvmc::blackscholes::{
    analytic_call, invert_transform, mc_price, price_grid, reduction_coeffs, to_heat,
};
use meshvmc::{euler_run, OptionKind, OptionSpec};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn base() -> OptionSpec {
    OptionSpec::call(1.25, 0.03, 0.3, 1.0).unwrap()
}

/// Relative vector error of the Euler price grid at `t = 0` against the
/// closed form.
fn euler_price_error(spec: &OptionSpec, n: usize) -> f64 {
    let coeffs = reduction_coeffs(spec).unwrap();
    let heat = to_heat(spec, &coeffs, n).unwrap();
    let dx = heat.mesh.dx();
    let steps = (spec.expiry / (0.5 * dx * dx)).ceil() as usize;
    let dt = spec.expiry / steps as f64;
    let run = euler_run(&heat.u0, &heat.op, &heat.mesh, &heat.source, dt, steps, steps, 0.0).unwrap();
    let u = &run.snapshots.last().unwrap().1;
    let v = invert_transform(u, &coeffs, spec, &heat.mesh, spec.expiry).unwrap();
    let s = price_grid(spec, &heat.mesh).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (x, si) in v.values().iter().zip(&s) {
        let exact = analytic_call(spec.strike, spec.r, spec.sigma[0], spec.expiry, si[0]);
        num += (x - exact).powi(2);
        den += exact * exact;
    }
    (num / den).sqrt()
}

#[test]
fn euler_on_heat_grid_prices_the_call() {
    let fine = euler_price_error(&base(), 12);
    assert!(fine <= 0.005, "n=12 error {fine}");
    // By n = 8 the grid error is below the domain-truncation floor, so
    // refinement is checked where it still dominates.
    let (coarse, mid) = (euler_price_error(&base(), 4), euler_price_error(&base(), 8));
    assert!(mid < coarse / 4.0, "refinement did not help: {coarse} -> {mid}");
    assert!(fine <= 1.5 * mid, "refinement made things worse: {mid} -> {fine}");
}

#[test]
fn monte_carlo_agrees_with_closed_form() {
    let spec = base();
    let (price, se) = mc_price(&spec, &[1.25], 1_000_000, 3).unwrap();
    let exact = analytic_call(1.25, 0.03, 0.3, 1.0, 1.25);
    assert!((price - exact).abs() <= 3.0 * se, "{price} +- {se} vs {exact}");
}

#[test]
fn discounted_terminal_price_is_a_martingale() {
    // A basket call struck at a negligible strike pays the basket value.
    let strike = 1e-9;
    let spec = OptionSpec::new(
        OptionKind::BasketCall,
        strike,
        0.03,
        vec![0.3, 0.2],
        vec![vec![1.0, 0.4], vec![0.4, 1.0]],
        vec![0.5, 0.5],
        1.0,
    )
    .unwrap();
    let s0 = [1.1, 0.8];
    let (price, se) = mc_price(&spec, &s0, 400_000, 8).unwrap();
    let forward = 0.5 * (s0[0] + s0[1]) - strike * (-0.03f64).exp();
    assert!((price - forward).abs() <= 3.0 * se, "{price} +- {se} vs {forward}");
}

#[test]
fn put_call_parity() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (k, r, sigma, tau) = (1.25f64, 0.03f64, 0.3f64, 1.0f64);
    for s in [0.6f64, 0.9, 1.25, 1.7, 2.4] {
        let vol = sigma * f64::sqrt(tau);
        let d_plus = ((s / k).ln() + (r + sigma * sigma / 2.0) * tau) / vol;
        let d_minus = d_plus - vol;
        let put = k * (-r * tau).exp() * normal.cdf(-d_minus) - s * normal.cdf(-d_plus);
        let call = analytic_call(k, r, sigma, tau, s);
        assert!((call - put - (s - k * (-r * tau).exp())).abs() <= 1e-10, "s={s}");
    }
}

#[test]
fn call_price_monotone_in_spot_and_strike() {
    let spots: Vec<f64> = (1..60).map(|i| 0.5 + 0.03 * i as f64).collect();
    for w in spots.windows(2) {
        assert!(analytic_call(1.25, 0.03, 0.3, 1.0, w[1]) > analytic_call(1.25, 0.03, 0.3, 1.0, w[0]));
        assert!(analytic_call(w[1], 0.03, 0.3, 1.0, 1.25) < analytic_call(w[0], 0.03, 0.3, 1.0, 1.25));
    }
}

#[test]
fn basket_call_is_convex_in_strike() {
    for d in [2usize, 3] {
        let rho: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.1 }).collect())
            .collect();
        let spec = OptionSpec::new(
            OptionKind::BasketCall,
            1.0,
            0.03,
            vec![0.3; d],
            rho,
            vec![1.0 / d as f64; d],
            1.0,
        )
        .unwrap();
        let s0 = vec![1.25; d];
        let curve: Vec<(f64, f64)> = (0..6)
            .map(|i| mc_price(&spec.with_strike(1.0 + 0.1 * i as f64).unwrap(), &s0, 200_000, 17).unwrap())
            .collect();
        for w in curve.windows(3) {
            let second = w[0].0 - 2.0 * w[1].0 + w[2].0;
            let se = w.iter().map(|p| p.1).fold(0.0, f64::max);
            assert!(second >= -2.0 * se, "d={d}: second difference {second}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_d_coefficients_match_classical_substitution(sigma in 0.05f64..1.0, r in 0.0f64..0.2) {
        let spec = OptionSpec::call(1.0, r, sigma, 1.0).unwrap();
        let c = reduction_coeffs(&spec).unwrap();
        let k = 2.0 * r / (sigma * sigma);
        prop_assert!((c.a[0] + (k - 1.0) / 2.0).abs() <= 1e-12 * (1.0 + k));
        prop_assert!((c.b + (k + 1.0).powi(2) * sigma * sigma / 8.0).abs() <= 1e-12 * (1.0 + k * k));
    }
}
