//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own line; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use netlearn::asymptotics::{benchmark_variance, homogeneous_limit, naive_limit};
use netlearn::behavior::{
    pareto_compare, perturb_toward_signal, planner_optimize, solve_naive, ParetoRelation, PlannerOptions,
};
use netlearn::econometrics::{add_measurement_noise, identify};
use netlearn::kernel::{solve_equilibrium, steady_state, CovMatrix, SolveOptions};
use netlearn::montecarlo::{default_burn_in, empirical_cov_with_stderr, simulate_paths};
use netlearn::network::{gen_circle, gen_complete, gen_erdos_renyi, Environment, Network, SignalProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

type Outcome = Result<String, String>;

fn env(rho: f64) -> Environment {
    Environment::new(rho, 1).unwrap()
}

fn two_types(n: usize, a: f64, b: f64) -> SignalProfile {
    SignalProfile::new((0..n).map(|i| if i < n / 2 { a } else { b }).collect()).unwrap()
}

fn equilibrium(net: &Network, sig: &SignalProfile, rho: f64) -> netlearn::kernel::EquilibriumResult {
    let eq = solve_equilibrium(net, sig, &env(rho), &SolveOptions::default()).unwrap();
    assert!(eq.converged, "equilibrium residual {}", eq.residual);
    eq
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn circle_benchmark() -> Outcome {
    let n = 100;
    let net = gen_circle(n).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (sigma2, eq_target, planner_target) in [(10.0, 0.192, 0.234), (1.0, 0.570, 0.586)] {
        let sig = SignalProfile::uniform(n, sigma2).unwrap();
        let eq = equilibrium(&net, &sig, 0.9);
        let opts = PlannerOptions {
            restarts: 1,
            ..PlannerOptions::default()
        };
        let planner = planner_optimize(&net, &sig, &env(0.9), &vec![0; n], &opts).unwrap();
        let w_eq = eq.weights.own_signal(0);
        let w_pl = planner.spec.own(0);
        ok &= (w_eq - eq_target).abs() <= 0.002 && (w_pl - planner_target).abs() <= 0.002;
        parts.push(format!("sigma2={sigma2}: equilibrium w_s={w_eq:.4}, planner w_s={w_pl:.4}"));
    }
    ensure(ok, parts.join("; "))
}

fn type_a_variance(n: usize) -> f64 {
    let net = gen_complete(n, true).unwrap();
    equilibrium(&net, &two_types(n, 2.0, 3.0), 0.9).cov.variance(0)
}

fn precision_gain() -> Outcome {
    let gain = 100.0 * (type_a_variance(200) / type_a_variance(600) - 1.0);
    ensure((gain - 5.2).abs() <= 1.0, format!("precision gain {gain:.3} points"))
}

/// Largest relative gaps of diagonal and off-diagonal entries from the limit.
fn limit_gaps(n: usize) -> (f64, f64) {
    let lim = homogeneous_limit(1.0, 0.9).unwrap();
    let net = gen_complete(n, true).unwrap();
    let eq = equilibrium(&net, &SignalProfile::uniform(n, 1.0).unwrap(), 0.9);
    let mut diag = 0.0f64;
    let mut off = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = eq.cov.get(i, 0, j, 0);
            if i == j {
                diag = diag.max((v - lim.v_inf).abs() / lim.v_inf);
            } else {
                off = off.max((v - lim.cov_inf).abs() / lim.cov_inf);
            }
        }
    }
    (diag, off)
}

fn homogeneous_limit_check() -> Outcome {
    let (d500, o500) = limit_gaps(500);
    let (d100, o100) = limit_gaps(100);
    ensure(
        d500 < 0.02 && o500 < 0.02 && d500 < d100 && o500 < o100,
        format!("n=500 gaps diag {d500:.4}, off {o500:.4}; n=100 gaps diag {d100:.4}, off {o100:.4}"),
    )
}

fn naive_limits() -> Outcome {
    let n = 400;
    let net = gen_complete(n, true).unwrap();
    let sig = SignalProfile::uniform(n, 3.0).unwrap();
    let lim = naive_limit(3.0, 3.0, 0.9).unwrap();
    let naive = solve_naive(&net, &sig, &env(0.9), &SolveOptions::default()).unwrap();
    let bayes = equilibrium(&net, &sig, 0.9);
    let worst = (0..n)
        .map(|i| (naive.cov.variance(i) - lim.v_a).abs() / lim.v_a)
        .fold(0.0, f64::max);
    let above = (0..n).all(|i| naive.cov.variance(i) > bayes.cov.variance(i));
    ensure(
        worst < 0.02 && above,
        format!(
            "naive V_ii={:.5}, limit {:.5}, gap {worst:.4}; Bayesian V_ii={:.5}",
            naive.cov.variance(0),
            lim.v_a,
            bayes.cov.variance(0)
        ),
    )
}

fn small_network() -> (Network, SignalProfile) {
    let net = gen_erdos_renyi(5, 0.5, 1).unwrap();
    let sig = SignalProfile::new(vec![1.0, 2.0, 3.0, 1.5, 2.5]).unwrap();
    (net, sig)
}

fn monte_carlo_equivalence() -> Outcome {
    let (net, sig) = small_network();
    let eq = equilibrium(&net, &sig, 0.8);
    let panel = simulate_paths(&eq.weights, &net, &sig, &env(0.8), 2_000_000, default_burn_in(0.8), 11).unwrap();
    let emp = empirical_cov_with_stderr(&panel, &env(0.8)).unwrap();
    let mut worst = 0.0f64;
    for a in 0..5 {
        for b in 0..5 {
            let truth = eq.cov.get(a, 0, b, 0);
            let allowed = (0.02 * truth.abs()).max(5.0 * emp.stderr[(a, b)]);
            worst = worst.max((emp.cov.get(a, 0, b, 0) - truth).abs() / allowed);
        }
    }
    ensure(worst <= 1.0, format!("largest gap is {worst:.3} of its allowance"))
}

fn pareto_improvement() -> Outcome {
    let n = 20;
    let net = gen_circle(n).unwrap();
    let sig = SignalProfile::uniform(n, 10.0).unwrap();
    let e = env(0.9);
    let eq = equilibrium(&net, &sig, 0.9);
    let planner = planner_optimize(&net, &sig, &e, &vec![0; n], &PlannerOptions::default()).unwrap();
    let planner_weights = planner.spec.to_profile(&net).unwrap();
    let ss = steady_state(&planner_weights, &net, &sig, &e, &SolveOptions::with_tol(1e-12)).unwrap();
    let planner_verdict = pareto_compare(&ss.cov, &eq.cov).unwrap();
    let strictly_below = (0..n).all(|i| ss.cov.variance(i) < eq.cov.variance(i));

    let mut found = None;
    for k in 1..=10 {
        let eps = 0.01 * k as f64;
        let w = perturb_toward_signal(&eq.weights, 0, eps).unwrap();
        let perturbed = steady_state(&w, &net, &sig, &e, &SolveOptions::with_tol(1e-13)).unwrap();
        if pareto_compare(&perturbed.cov, &eq.cov).unwrap().relation == ParetoRelation::FirstDominates {
            found = Some(eps);
            break;
        }
    }
    ensure(
        strictly_below && found.is_some(),
        format!(
            "planner steady state vs equilibrium: {}; perturbation eps {}",
            planner_verdict.relation.as_str(),
            found.map_or("none".into(), |e| format!("{e:.2} first_dominates"))
        ),
    )
}

/// Smallest integer signal variance whose limit variance exceeds one.
fn noisy_enough_sigma2() -> f64 {
    (1..=100)
        .map(f64::from)
        .find(|&s| homogeneous_limit(s, 0.9).unwrap().v_inf > 1.0)
        .expect("limit variance never exceeds one")
}

fn uninformed_agent_helps() -> Outcome {
    let n = 200;
    let sigma2 = noisy_enough_sigma2();
    let net = gen_complete(n, true).unwrap();
    let sig = SignalProfile::uniform(n, sigma2).unwrap();
    let base = equilibrium(&net, &sig, 0.9);
    let raised = equilibrium(&net, &sig.with_value(0, 1e6).unwrap(), 0.9);
    let verdict = pareto_compare(&raised.cov, &base.cov).unwrap();
    let gain = verdict.margins.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        verdict.relation == ParetoRelation::FirstDominates,
        format!(
            "sigma2={sigma2} (v_inf={:.4}): {}, smallest gain {gain:.3e}",
            homogeneous_limit(sigma2, 0.9).unwrap().v_inf,
            verdict.relation.as_str()
        ),
    )
}

fn max_ratio(cov: &CovMatrix, sig: &SignalProfile) -> f64 {
    (0..sig.len())
        .map(|i| cov.variance(i) / benchmark_variance(sig.get(i)))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn diversity() -> Outcome {
    let ratio = |n: usize| {
        let net = gen_complete(n, true).unwrap();
        let sig = two_types(n, 2.0, 4.0);
        max_ratio(&equilibrium(&net, &sig, 0.9).cov, &sig)
    };
    let (r200, r600) = (ratio(200), ratio(600));
    let net = gen_complete(600, true).unwrap();
    let homogeneous = SignalProfile::uniform(600, 2.0).unwrap();
    let h600 = max_ratio(&equilibrium(&net, &homogeneous, 0.9).cov, &homogeneous);
    ensure(
        r600 < h600 && r600 < r200,
        format!("max ratio n=200 {r200:.5}, n=600 {r600:.5}; homogeneous n=600 {h600:.5}"),
    )
}

fn identification() -> Outcome {
    let (net, _) = small_network();
    // homogeneous signals keep every true weight well above its sampling error
    let sig = SignalProfile::uniform(5, 3.0).unwrap();
    let e = env(0.8);
    let eq = equilibrium(&net, &sig, 0.8);
    let clean = simulate_paths(&eq.weights, &net, &sig, &e, 100_000, default_burn_in(0.8), 31).unwrap();
    let panel = add_measurement_noise(&clean, 0.01, 32).unwrap();
    let id = identify(&panel, &e, &gen_complete(5, false).unwrap()).unwrap();
    let mut weight_gap = 0.0f64;
    let mut sigma_gap = 0.0f64;
    let mut invalid = 0;
    for i in 0..5 {
        let own = eq.weights.own_signal(i);
        weight_gap = weight_gap.max((id.weights_hat.own_signal(i) - own).abs() / own.abs());
        for s in eq.weights.social(i) {
            let got = id.weights_hat.weight_on(i, s.node, s.lag);
            weight_gap = weight_gap.max((got - s.weight).abs() / s.weight.abs());
        }
        let est = id.sigma2_hat.as_ref().unwrap()[i];
        if !est.valid {
            invalid += 1;
        }
        sigma_gap = sigma_gap.max((est.value - sig.get(i)).abs() / sig.get(i));
    }
    let false_links = id.links_hat.iter().filter(|&&(i, j)| !net.has_edge(i, j)).count();
    let missed = (0..5)
        .flat_map(|i| net.neighbors(i).iter().map(move |&j| (i, j)))
        .filter(|&(i, j)| !id.is_link(i, j))
        .count();
    ensure(
        weight_gap < 0.05 && sigma_gap < 0.10 && invalid == 0 && false_links == 0,
        format!(
            "weight gap {weight_gap:.4}, sigma2 gap {sigma_gap:.4}, false links {false_links}, missed links {missed}"
        ),
    )
}

fn invariant_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 200;
    for case in 0..cases {
        let kind = rng.random_range(0..4u8);
        let n = rng.random_range(1..=30usize);
        let p = rng.random_range(0.05..0.6);
        let rho = rng.random_range(-0.95..0.95);
        let m = rng.random_range(1..=3usize);
        let seed = rng.random::<u64>();
        let run = catch_unwind(AssertUnwindSafe(|| common::kernel_invariants(kind, n, p, rho, m, seed)));
        if run.is_err() {
            return Err(format!(
                "case {case} failed: kind {kind}, n {n}, p {p:.3}, rho {rho:.3}, m {m}, seed {seed}"
            ));
        }
    }
    let n = 50;
    let eq = equilibrium(&gen_complete(n, true).unwrap(), &two_types(n, 2.0, 8.0), 0.9);
    let min = eq.weights.min_social_weight().unwrap();
    ensure(
        min < 0.0,
        format!("{cases} random instances hold; most negative social weight {min:.4}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("circle equilibrium and planner weights", circle_benchmark),
        ("precision gain from 200 to 600 agents", precision_gain),
        ("homogeneous large-network limit", homogeneous_limit_check),
        ("naive learning limit", naive_limits),
        ("Monte Carlo matches analytic covariance", monte_carlo_equivalence),
        ("Pareto improvement on the circle", pareto_improvement),
        ("uninformed agent improves everyone", uninformed_agent_helps),
        ("signal diversity improves aggregation", diversity),
        ("identification from a noisy panel", identification),
        ("invariant suite", invariant_suite),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} ({secs:.1}s)", k + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} ({secs:.1}s)", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
