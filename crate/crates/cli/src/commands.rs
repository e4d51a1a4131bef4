use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use netlearn::behavior::{planner_optimize, solve_naive, PlannerOptions};
use netlearn::econometrics::{add_measurement_noise, identify};
use netlearn::fmt_num;
use netlearn::kernel::{
    fixed_weight_step, solve_equilibrium, steady_state, CovMatrix, SolveOptions, WeightProfile,
};
use netlearn::montecarlo::{default_burn_in, empirical_cov_with_stderr, simulate_paths, PanelData};
use netlearn::network::{gen_complete, load_edge_list};
use rayon::prelude::*;

use crate::config::{
    assign_signals, build_instance, Candidate, CliError, CliResult, GroupRule, Instance, Loaded, Regime,
};
use crate::report::{key_value_csv, mean, percentile, result_csv, sorted, text_field, write};

/// Whether every solve converged; outputs are written either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    Unconverged,
}

pub struct Outcome {
    pub cov: CovMatrix,
    pub weights: WeightProfile,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn solve_options(loaded: &Loaded) -> SolveOptions {
    let run = &loaded.config.run;
    SolveOptions {
        tol: run.tol,
        max_iter: run.max_iter,
        init: None,
        damping: run.damping,
    }
}

fn fixed_weights(loaded: &Loaded, inst: &Instance) -> CliResult<WeightProfile> {
    let regime = &loaded.config.regime;
    let m = inst.env.memory();
    if let Some(path) = &regime.weights {
        let p = loaded.resolve(path);
        let text = fs::read_to_string(&p)
            .map_err(|e| CliError::Config(format!("regime.weights: cannot read {}: {e}", p.display())))?;
        let w = WeightProfile::from_csv(&text, inst.net.n()).map_err(|e| CliError::from_module("regime.weights", e))?;
        w.check_support(&inst.net, m)
            .map_err(|e| CliError::from_module("regime.weights", e))?;
        return Ok(w);
    }
    match regime.own_signal {
        Some(own) => Ok(WeightProfile::symmetric(&inst.net, m, own)),
        None => Err(CliError::Config(
            "regime: steady_state needs `weights` or `own_signal`".into(),
        )),
    }
}

fn grouping(loaded: &Loaded, inst: &Instance) -> CliResult<Vec<usize>> {
    Ok(match loaded.config.regime.groups {
        GroupRule::Single => vec![0; inst.net.n()],
        GroupRule::SignalType => inst.signal_type.clone(),
        GroupRule::NetworkType => inst
            .net
            .node_class()
            .ok_or_else(|| CliError::Config("regime.groups: network_type needs an sbm network".into()))?
            .iter()
            .map(|&(k, _)| k)
            .collect(),
    })
}

pub fn solve(loaded: &Loaded, inst: &Instance, regime: Regime) -> CliResult<Outcome> {
    let opts = solve_options(loaded);
    let (net, sig, env) = (&inst.net, &inst.sig, &inst.env);
    let module = |e| CliError::from_module(regime.name(), e);
    match regime {
        Regime::Bayesian => {
            let r = solve_equilibrium(net, sig, env, &opts).map_err(module)?;
            Ok(Outcome {
                cov: r.cov,
                weights: r.weights,
                iterations: r.iterations,
                residual: r.residual,
                converged: r.converged,
            })
        }
        Regime::Naive => {
            let r = solve_naive(net, sig, env, &opts).map_err(module)?;
            Ok(Outcome {
                cov: r.cov,
                weights: r.weights,
                iterations: r.iterations,
                residual: r.residual,
                converged: r.converged,
            })
        }
        Regime::SteadyState => {
            let weights = fixed_weights(loaded, inst)?;
            let r = steady_state(&weights, net, sig, env, &opts).map_err(module)?;
            Ok(Outcome {
                cov: r.cov,
                weights,
                iterations: r.iterations,
                residual: r.residual,
                converged: true,
            })
        }
        Regime::Planner => {
            let cfg = &loaded.config.regime;
            let popts = PlannerOptions {
                restarts: cfg.restarts,
                tol: cfg.planner_tol,
                seed: loaded.config.run.seed,
                solve: SolveOptions {
                    tol: loaded.config.run.tol.min(1e-12),
                    max_iter: loaded.config.run.max_iter,
                    ..SolveOptions::default()
                },
                ..PlannerOptions::default()
            };
            let groups = grouping(loaded, inst)?;
            let r = planner_optimize(net, sig, env, &groups, &popts).map_err(module)?;
            let weights = r.spec.to_profile(net).map_err(module)?;
            let next = fixed_weight_step(&r.cov, &weights, sig, env).map_err(module)?;
            Ok(Outcome {
                residual: next.sup_distance(&r.cov),
                cov: r.cov,
                weights,
                iterations: r.evaluations,
                converged: true,
            })
        }
    }
}

pub struct Ctx {
    pub loaded: Loaded,
    pub out: PathBuf,
}

fn write_node_labels(out: &Path, inst: &Instance) -> CliResult<()> {
    if let Some(labels) = inst.net.labels() {
        let mut text = String::from("node,label\n");
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(text, "{i},{l}");
        }
        write(out, "nodes.csv", &text)?;
    }
    Ok(())
}

/// `equilibrium`, `naive`, `steady-state` and `planner`.
pub fn run(ctx: &Ctx, regime: Regime) -> CliResult<Status> {
    let start = Instant::now();
    let inst = build_instance(&ctx.loaded)?;
    let o = solve(&ctx.loaded, &inst, regime)?;
    write(&ctx.out, "result.csv", &result_csv(&inst.sig, &o.weights, &o.cov))?;
    write(&ctx.out, "weights.csv", &o.weights.to_csv())?;
    write_node_labels(&ctx.out, &inst)?;
    write(
        &ctx.out,
        "meta.csv",
        &key_value_csv(&[
            ("regime", regime.name().into()),
            ("n", inst.net.n().to_string()),
            ("iterations", o.iterations.to_string()),
            ("residual", fmt_num(o.residual)),
            ("converged", o.converged.to_string()),
            ("wall_time_s", fmt_num(start.elapsed().as_secs_f64())),
        ]),
    )?;
    if !o.converged {
        warn!("{} did not converge: residual {}", regime.name(), fmt_num(o.residual));
        return Ok(Status::Unconverged);
    }
    Ok(Status::Done)
}

fn simulate_panel(ctx: &Ctx, inst: &Instance, weights: &WeightProfile) -> CliResult<PanelData> {
    let run = &ctx.loaded.config.run;
    let burn_in = run.burn_in.unwrap_or_else(|| default_burn_in(inst.env.rho()));
    let panel = simulate_paths(weights, &inst.net, &inst.sig, &inst.env, run.periods, burn_in, run.seed)
        .map_err(|e| CliError::from_module("simulate", e))?;
    add_measurement_noise(&panel, run.noise_var, run.seed.wrapping_add(1))
        .map_err(|e| CliError::from_module("run.noise_var", e))
}

pub fn simulate(ctx: &Ctx) -> CliResult<Status> {
    let start = Instant::now();
    let inst = build_instance(&ctx.loaded)?;
    let regime = ctx.loaded.config.regime.kind;
    let o = solve(&ctx.loaded, &inst, regime)?;
    let panel = simulate_panel(ctx, &inst, &o.weights)?;
    let emp = empirical_cov_with_stderr(&panel, &inst.env).map_err(|e| CliError::from_module("simulate", e))?;
    let mut cmp = String::from("node,V_ii,V_ii_empirical,stderr\n");
    for i in 0..inst.net.n() {
        let _ = writeln!(
            cmp,
            "{i},{},{},{}",
            fmt_num(o.cov.variance(i)),
            fmt_num(emp.cov.variance(i)),
            fmt_num(emp.stderr[(i, i)])
        );
    }
    write(&ctx.out, "panel.csv", &panel.to_csv())?;
    write(&ctx.out, "weights.csv", &o.weights.to_csv())?;
    write(&ctx.out, "empirical.csv", &cmp)?;
    write_node_labels(&ctx.out, &inst)?;
    write(
        &ctx.out,
        "meta.csv",
        &key_value_csv(&[
            ("regime", regime.name().into()),
            ("n", inst.net.n().to_string()),
            ("periods", panel.periods().to_string()),
            ("burn_in", panel.burn_in.to_string()),
            ("seed", panel.seed.to_string()),
            ("noise_var", fmt_num(panel.measurement_noise_var)),
            ("wall_time_s", fmt_num(start.elapsed().as_secs_f64())),
        ]),
    )?;
    Ok(if o.converged { Status::Done } else { Status::Unconverged })
}

pub fn identify_cmd(ctx: &Ctx) -> CliResult<Status> {
    let start = Instant::now();
    let inst = build_instance(&ctx.loaded)?;
    let cfg = ctx.loaded.config.identify.clone().unwrap_or_default();
    let panel = match &cfg.panel {
        Some(path) => {
            let p = ctx.loaded.resolve(path);
            let text = fs::read_to_string(&p)
                .map_err(|e| CliError::Config(format!("identify.panel: cannot read {}: {e}", p.display())))?;
            PanelData::from_csv(&text).map_err(|e| CliError::from_module("identify.panel", e))?
        }
        None => {
            let o = solve(&ctx.loaded, &inst, ctx.loaded.config.regime.kind)?;
            write(&ctx.out, "weights_true.csv", &o.weights.to_csv())?;
            simulate_panel(ctx, &inst, &o.weights)?
        }
    };
    let candidate = match cfg.candidate {
        Candidate::Network => inst.net.clone(),
        Candidate::Complete => gen_complete(panel.n(), false).map_err(|e| CliError::from_module("identify", e))?,
    };
    let id = identify(&panel, &inst.env, &candidate).map_err(|e| CliError::from_module("identify", e))?;
    write(&ctx.out, "identification.csv", &id.report_csv())?;
    write(
        &ctx.out,
        "meta.csv",
        &key_value_csv(&[
            ("n", panel.n().to_string()),
            ("periods", panel.periods().to_string()),
            ("links", id.links_hat.len().to_string()),
            (
                "mean_sigma2_hat",
                id.mean_valid_sigma2().map_or("NaN".into(), fmt_num),
            ),
            ("wall_time_s", fmt_num(start.elapsed().as_secs_f64())),
        ]),
    )?;
    Ok(Status::Done)
}

/// Summary of one solved instance by signal type.
struct Summary {
    n: usize,
    mean_v: f64,
    /// Per type: `(sigma2, mean, p25, p50, p75)`.
    types: Vec<(f64, f64, f64, f64, f64)>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

fn summarize(inst: &Instance, o: &Outcome) -> Summary {
    let v = o.cov.variances();
    let k = inst.signal_type.iter().max().map_or(0, |&t| t + 1);
    let types = (0..k)
        .map(|t| {
            let members: Vec<usize> = (0..v.len()).filter(|&i| inst.signal_type[i] == t).collect();
            let vs = sorted(members.iter().map(|&i| v[i]).collect());
            let s2 = members.first().map_or(f64::NAN, |&i| inst.sig.get(i));
            (s2, mean(&vs), percentile(&vs, 25.0), percentile(&vs, 50.0), percentile(&vs, 75.0))
        })
        .collect();
    Summary {
        n: v.len(),
        mean_v: mean(&v),
        types,
        iterations: o.iterations,
        residual: o.residual,
        converged: o.converged,
    }
}

pub fn sweep(ctx: &Ctx) -> CliResult<Status> {
    let cfg = ctx
        .loaded
        .config
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    // validate the axis before spending time on the grid
    if let Some(&v) = cfg.values.first() {
        ctx.loaded.with_value(&cfg.axis, v)?;
    }
    let regime = ctx.loaded.config.regime.kind;
    let rows: Vec<(f64, Result<Summary, String>)> = cfg
        .values
        .par_iter()
        .map(|&x| {
            let point = ctx
                .loaded
                .with_value(&cfg.axis, x)
                .and_then(|l| {
                    let inst = build_instance(&l)?;
                    let o = solve(&l, &inst, regime)?;
                    Ok(summarize(&inst, &o))
                })
                .map_err(|e| e.to_string());
            (x, point)
        })
        .collect();
    let k = rows
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|s| s.types.len()))
        .max()
        .unwrap_or(0);
    let mut out = format!("{},n,mean_V", text_field(&cfg.axis));
    for t in 0..k {
        let _ = write!(out, ",type{t}_sigma2,type{t}_mean_V,type{t}_p25_V,type{t}_p50_V,type{t}_p75_V");
    }
    out.push_str(",iterations,residual,converged,message\n");
    let nan = fmt_num(f64::NAN);
    let mut status = Status::Done;
    for (x, row) in &rows {
        let _ = write!(out, "{}", fmt_num(*x));
        match row {
            Ok(s) => {
                let _ = write!(out, ",{},{}", s.n, fmt_num(s.mean_v));
                for t in 0..k {
                    match s.types.get(t) {
                        Some(&(a, b, c, d, e)) => {
                            for y in [a, b, c, d, e] {
                                let _ = write!(out, ",{}", fmt_num(y));
                            }
                        }
                        None => out.push_str(&format!(",{nan}").repeat(5)),
                    }
                }
                let _ = writeln!(out, ",{},{},{},", s.iterations, fmt_num(s.residual), s.converged);
                if !s.converged {
                    status = Status::Unconverged;
                }
            }
            Err(msg) => {
                warn!("sweep point {}: {msg}", fmt_num(*x));
                out.push_str(&format!(",{nan}").repeat(2 + 5 * k + 2));
                let _ = writeln!(out, ",false,{}", text_field(msg));
            }
        }
    }
    write(&ctx.out, "sweep.csv", &out)?;
    Ok(status)
}

pub fn villages(ctx: &Ctx) -> CliResult<Status> {
    let loaded = &ctx.loaded;
    let cfg = loaded
        .config
        .villages
        .clone()
        .ok_or_else(|| CliError::Config("missing [villages] section".into()))?;
    let signals = loaded
        .config
        .signals
        .clone()
        .ok_or_else(|| CliError::Config("missing [signals] section".into()))?;
    let env = loaded.environment()?;
    let dir = loaded.resolve(&cfg.dir);
    let entries = fs::read_dir(&dir)
        .map_err(|e| CliError::Config(format!("villages.dir: cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().is_some_and(|f| f.to_string_lossy().starts_with('.')))
        .collect();
    files.sort();

    let rows: Vec<String> = files
        .par_iter()
        .map(|path| {
            let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            let stem = path.file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            let row = (|| -> CliResult<String> {
                let net = load_edge_list(path, cfg.undirected, cfg.allow_self_loops)
                    .map_err(|e| CliError::from_module("villages", e))?;
                let (sig, signal_type) = assign_signals(loaded, &signals, &net, Some(&stem))?;
                let mut line = format!("{},{}", net.n(), fmt_num(net.mean_degree()));
                let inst = Instance {
                    net,
                    sig,
                    env,
                    signal_type,
                };
                for &regime in &cfg.regimes {
                    let o = solve(loaded, &inst, regime)?;
                    let v = sorted(
                        (0..inst.net.n())
                            .filter(|&i| cfg.focus_sigma2.is_none_or(|s| inst.sig.get(i) == s))
                            .map(|i| o.cov.variance(i))
                            .collect(),
                    );
                    for p in [25.0, 50.0, 75.0] {
                        let _ = write!(line, ",{}", fmt_num(percentile(&v, p)));
                    }
                }
                Ok(line)
            })();
            match row {
                Ok(line) => format!("{},{line},\n", text_field(&name)),
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    let blanks = ",NaN".repeat(2 + 3 * cfg.regimes.len());
                    format!("{}{blanks},{}\n", text_field(&name), text_field(&e.to_string()))
                }
            }
        })
        .collect();

    let mut out = String::from("network,n,mean_degree");
    for r in &cfg.regimes {
        let _ = write!(out, ",{0}_p25_V,{0}_p50_V,{0}_p75_V", r.name());
    }
    out.push_str(",message\n");
    for r in rows {
        out.push_str(&r);
    }
    write(&ctx.out, "villages.csv", &out)?;
    Ok(Status::Done)
}
