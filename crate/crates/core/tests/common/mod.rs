use netlearn::asymptotics::benchmark_variance;
use netlearn::behavior::naive_weights;
use netlearn::kernel::{autarky_cov, phi_step, solve_equilibrium, steady_state, CovMatrix, SolveOptions, WeightProfile};
use netlearn::network::{gen_circle, gen_complete, gen_erdos_renyi, Environment, Network, SignalProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random topology: undirected ER, circle, complete with self-observation,
/// or a directed graph with independent links.
pub fn random_network(kind: u8, n: usize, p: f64, seed: u64) -> Network {
    match kind {
        0 => gen_erdos_renyi(n, p, seed).unwrap(),
        1 if n >= 3 => gen_circle(n).unwrap(),
        2 => gen_complete(n, true).unwrap(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nb = (0..n)
                .map(|i| (0..n).filter(|&j| j != i && rng.random::<f64>() < p).collect())
                .collect();
            Network::new(nb, false).unwrap()
        }
    }
}

pub fn random_signals(n: usize, seed: u64) -> SignalProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    SignalProfile::new((0..n).map(|_| rng.random_range(0.2..10.0)).collect()).unwrap()
}

pub fn check_cov(v: &CovMatrix) {
    let scale = v.matrix().amax().max(1.0);
    assert!(v.max_asymmetry() <= 1e-9 * scale, "asymmetry {}", v.max_asymmetry());
    assert!(v.min_eigenvalue() >= -1e-9 * scale, "min eigenvalue {}", v.min_eigenvalue());
    assert!(v.cauchy_schwarz_excess() <= 1e-9 * scale);
}

pub fn check_weights(w: &WeightProfile, net: &Network) {
    for i in 0..w.n() {
        assert!((w.total(i) - 1.0).abs() <= 1e-10, "agent {i} sums to {}", w.total(i));
        if net.degree(i) == 0 {
            assert_eq!(w.own_signal(i), 1.0);
        }
    }
}

/// Every Bayesian iterate stays a valid covariance with normalized weights;
/// the fixed point is a steady state of its own weights and respects the
/// single-memory variance bounds; naive weights never anti-imitate.
pub fn kernel_invariants(kind: u8, n: usize, p: f64, rho: f64, m: usize, seed: u64) {
    let net = random_network(kind, n, p, seed);
    let sig = random_signals(n, seed);
    let env = Environment::new(rho, m).unwrap();

    let mut v = autarky_cov(&sig, &env);
    check_cov(&v);
    for _ in 0..30 {
        let (next, w) = phi_step(&v, &net, &sig, &env).unwrap();
        check_weights(&w, &net);
        check_cov(&next);
        v = next;
    }

    let opts = SolveOptions::with_tol(1e-12);
    let eq = solve_equilibrium(&net, &sig, &env, &opts).unwrap();
    assert!(eq.converged, "residual {}", eq.residual);
    check_weights(&eq.weights, &net);
    let ss = steady_state(&eq.weights, &net, &sig, &env, &opts).unwrap();
    assert!(ss.cov.sup_distance(&eq.cov) < 1e-8, "gap {}", ss.cov.sup_distance(&eq.cov));
    if m == 1 {
        for i in 0..n {
            let vi = eq.cov.variance(i);
            let s = sig.get(i);
            assert!(vi >= benchmark_variance(s) - 1e-9 && vi <= s + 1e-9, "V_{i}{i}={vi} outside bounds for sigma2={s}");
        }
        let naive = naive_weights(&net, &sig, &env).unwrap();
        check_weights(&naive, &net);
        if let Some(min) = naive.min_social_weight() {
            assert!(min > 0.0);
        }
    }
}

