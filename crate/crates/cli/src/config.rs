//! Experiment configuration files and the problem instances built from them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use netlearn::network::{
    apportion, gen_circle, gen_complete, gen_erdos_renyi, gen_sbm, load_edge_list, load_signal_file, BlockSpec,
    Environment, Network, SignalProfile,
};
use serde::Deserialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration; exit status 1.
    Config(String),
    /// A solver or estimator failed; exit status 2.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    /// Module error, classified by kind and prefixed with the config key it
    /// came from.
    pub fn from_module(context: &str, e: netlearn::Error) -> Self {
        use netlearn::Error as E;
        let msg = if context.is_empty() {
            e.to_string()
        } else {
            format!("{context}: {e}")
        };
        match e {
            E::IllConditioned { .. }
            | E::Divergence { .. }
            | E::NonContractive(_)
            | E::RankDeficient { .. }
            | E::DegenerateSignalWeight { .. } => CliError::Numerical(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub environment: EnvironmentCfg,
    pub network: Option<NetworkCfg>,
    pub signals: Option<SignalsCfg>,
    #[serde(default)]
    pub regime: RegimeCfg,
    #[serde(default)]
    pub run: RunCfg,
    pub identify: Option<IdentifyCfg>,
    pub sweep: Option<SweepCfg>,
    pub villages: Option<VillagesCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentCfg {
    pub rho: f64,
    #[serde(default = "one")]
    pub m: usize,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkCfg {
    Complete {
        n: usize,
        #[serde(default)]
        include_self: bool,
    },
    Circle {
        n: usize,
    },
    ErdosRenyi {
        n: usize,
        p: f64,
        seed: Option<u64>,
    },
    Sbm {
        n: usize,
        shares: Vec<f64>,
        link_probs: Vec<Vec<f64>>,
        signal_shares: Vec<Vec<f64>>,
        signal_variances: Vec<f64>,
        seed: Option<u64>,
    },
    EdgeList {
        path: PathBuf,
        #[serde(default = "yes")]
        undirected: bool,
        #[serde(default)]
        allow_self_loops: bool,
    },
}

/// Exactly one assignment rule must be given.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsCfg {
    pub uniform: Option<f64>,
    pub values: Option<Vec<f64>>,
    /// File of `node_id,sigma2` lines.
    pub path: Option<PathBuf>,
    /// Signal types by share, assigned to contiguous node ranges.
    pub shares: Option<Vec<f64>>,
    pub variances: Option<Vec<f64>>,
    /// `villages` only: `<dir>/<network file stem>.csv` per network.
    pub attribute_dir: Option<PathBuf>,
    /// Variance for nodes absent from a signal file.
    pub default: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Bayesian,
    Naive,
    Planner,
    SteadyState,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Bayesian => "bayesian",
            Regime::Naive => "naive",
            Regime::Planner => "planner",
            Regime::SteadyState => "steady_state",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    Single,
    #[default]
    SignalType,
    NetworkType,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeCfg {
    #[serde(default)]
    pub kind: Regime,
    /// Steady state: weight file in the `weights.csv` format.
    pub weights: Option<PathBuf>,
    /// Steady state: own-signal weight with the rest split evenly over
    /// lag-1 neighbors.
    pub own_signal: Option<f64>,
    #[serde(default)]
    pub groups: GroupRule,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_planner_tol")]
    pub planner_tol: f64,
}

fn default_restarts() -> usize {
    4
}

fn default_planner_tol() -> f64 {
    1e-10
}

impl Default for RegimeCfg {
    fn default() -> Self {
        Self {
            kind: Regime::default(),
            weights: None,
            own_signal: None,
            groups: GroupRule::default(),
            restarts: default_restarts(),
            planner_tol: default_planner_tol(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCfg {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_periods")]
    pub periods: usize,
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub noise_var: f64,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    10_000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_periods() -> usize {
    100_000
}

impl Default for RunCfg {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            damping: 0.0,
            seed: 0,
            out: default_out(),
            threads: 0,
            periods: default_periods(),
            burn_in: None,
            noise_var: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    /// Regress on every other agent.
    #[default]
    Complete,
    /// Regress on the configured network's neighborhoods.
    Network,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyCfg {
    /// Panel CSV; simulated from the configured model when absent.
    pub panel: Option<PathBuf>,
    #[serde(default)]
    pub candidate: Candidate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    /// Dotted key of a numeric config value, e.g. `signals.variances.1`.
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VillagesCfg {
    pub dir: PathBuf,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default = "yes")]
    pub undirected: bool,
    #[serde(default)]
    pub allow_self_loops: bool,
    /// Percentiles over nodes with this signal variance only.
    pub focus_sigma2: Option<f64>,
}

fn default_regimes() -> Vec<Regime> {
    vec![Regime::Bayesian]
}

/// A parsed config plus the raw table it came from and the directory that
/// relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub table: toml::Table,
    pub base: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_table(table, base)
    }

    pub fn from_table(table: toml::Table, base: PathBuf) -> CliResult<Self> {
        // round-trip through text so errors name the offending key
        let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
        let config: Config = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { config, table, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Copy of this config with the numeric value at `key` replaced.
    pub fn with_value(&self, key: &str, value: f64) -> CliResult<Self> {
        let mut table = self.table.clone();
        set_number(&mut table, key, value)?;
        Self::from_table(table, self.base.clone())
    }

    pub fn environment(&self) -> CliResult<Environment> {
        let e = &self.config.environment;
        Environment::new(e.rho, e.m).map_err(|err| CliError::from_module("environment", err))
    }
}

fn set_number(table: &mut toml::Table, key: &str, value: f64) -> CliResult<()> {
    let missing = || CliError::Config(format!("sweep.axis: `{key}` is not a numeric value in the config"));
    let mut parts = key.split('.');
    let first = parts.next().ok_or_else(missing)?;
    let mut slot = table.get_mut(first).ok_or_else(missing)?;
    for part in parts {
        slot = match slot {
            toml::Value::Table(t) => t.get_mut(part).ok_or_else(missing)?,
            toml::Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| missing())?;
                a.get_mut(idx).ok_or_else(missing)?
            }
            _ => return Err(missing()),
        };
    }
    *slot = match slot {
        toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => {
            return Err(CliError::Config(format!("sweep.values: `{key}` takes integers, got {value}")))
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(missing()),
    };
    Ok(())
}

/// Network, signals and environment of one run. `signal_type[i]` labels
/// nodes for per-type summaries and planner groups.
#[derive(Debug, Clone)]
pub struct Instance {
    pub net: Network,
    pub sig: SignalProfile,
    pub env: Environment,
    pub signal_type: Vec<usize>,
}

pub fn build_instance(loaded: &Loaded) -> CliResult<Instance> {
    let env = loaded.environment()?;
    let cfg = loaded
        .config
        .network
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [network] section".into()))?;
    let seed = |s: &Option<u64>| s.unwrap_or(loaded.config.run.seed);
    let net_err = |e| CliError::from_module("network", e);
    let (net, generated) = match cfg {
        NetworkCfg::Complete { n, include_self } => (gen_complete(*n, *include_self).map_err(net_err)?, None),
        NetworkCfg::Circle { n } => (gen_circle(*n).map_err(net_err)?, None),
        NetworkCfg::ErdosRenyi { n, p, seed: s } => (gen_erdos_renyi(*n, *p, seed(s)).map_err(net_err)?, None),
        NetworkCfg::Sbm {
            n,
            shares,
            link_probs,
            signal_shares,
            signal_variances,
            seed: s,
        } => {
            let spec = BlockSpec {
                shares: shares.clone(),
                link_probs: link_probs.clone(),
                signal_shares: signal_shares.clone(),
                signal_type_variances: signal_variances.clone(),
            };
            let (net, sig) = gen_sbm(&spec, *n, seed(s)).map_err(net_err)?;
            let types = net.node_class().map(|c| c.iter().map(|&(_, tau)| tau).collect());
            (net, Some((sig, types.unwrap_or_default())))
        }
        NetworkCfg::EdgeList {
            path,
            undirected,
            allow_self_loops,
        } => {
            let p = loaded.resolve(path);
            if !p.exists() {
                return Err(CliError::Config(format!("network.path: {} does not exist", p.display())));
            }
            (load_edge_list(&p, *undirected, *allow_self_loops).map_err(net_err)?, None)
        }
    };
    let (sig, signal_type) = match (&loaded.config.signals, generated) {
        (Some(s), _) => assign_signals(loaded, s, &net, None)?,
        (None, Some(g)) => g,
        (None, None) => return Err(CliError::Config("missing [signals] section".into())),
    };
    Ok(Instance {
        net,
        sig,
        env,
        signal_type,
    })
}

/// Types by rank among the distinct variances.
fn rank_types(sigma2: &[f64]) -> Vec<usize> {
    let mut distinct: Vec<f64> = sigma2.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    sigma2
        .iter()
        .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).unwrap_or(0))
        .collect()
}

/// `stem` names the network file when signals come from `attribute_dir`.
pub fn assign_signals(
    loaded: &Loaded,
    cfg: &SignalsCfg,
    net: &Network,
    stem: Option<&str>,
) -> CliResult<(SignalProfile, Vec<usize>)> {
    let n = net.n();
    let rules = [
        cfg.uniform.is_some(),
        cfg.values.is_some(),
        cfg.path.is_some(),
        cfg.shares.is_some() || cfg.variances.is_some(),
        cfg.attribute_dir.is_some(),
    ];
    if rules.iter().filter(|&&r| r).count() != 1 {
        return Err(CliError::Config(
            "signals: give exactly one of uniform, values, path, shares+variances, attribute_dir".into(),
        ));
    }
    fn err(key: &'static str) -> impl Fn(netlearn::Error) -> CliError {
        move |e| CliError::from_module(key, e)
    }
    if let Some(v) = cfg.uniform {
        let sig = SignalProfile::uniform(n, v).map_err(err("signals.uniform"))?;
        return Ok((sig, vec![0; n]));
    }
    if let Some(values) = &cfg.values {
        if values.len() != n {
            return Err(CliError::Config(format!(
                "signals.values: expected {n} entries, got {}",
                values.len()
            )));
        }
        let sig = SignalProfile::new(values.clone()).map_err(err("signals.values"))?;
        let types = rank_types(sig.as_slice());
        return Ok((sig, types));
    }
    if let Some(path) = &cfg.path {
        let p = loaded.resolve(path);
        if !p.exists() {
            return Err(CliError::Config(format!("signals.path: {} does not exist", p.display())));
        }
        let sig = load_signal_file(&p, net, cfg.default).map_err(err("signals.path"))?;
        let types = rank_types(sig.as_slice());
        return Ok((sig, types));
    }
    if let Some(dir) = &cfg.attribute_dir {
        let stem = stem.ok_or_else(|| {
            CliError::Config("signals.attribute_dir: only valid for the villages command".into())
        })?;
        let p = loaded.resolve(dir).join(format!("{stem}.csv"));
        let sig = if p.exists() {
            load_signal_file(&p, net, cfg.default).map_err(err("signals.attribute_dir"))?
        } else {
            let d = cfg.default.ok_or_else(|| {
                CliError::Config(format!("signals.attribute_dir: {} missing and no default", p.display()))
            })?;
            SignalProfile::uniform(n, d).map_err(err("signals.default"))?
        };
        let types = rank_types(sig.as_slice());
        return Ok((sig, types));
    }
    let (Some(shares), Some(variances)) = (&cfg.shares, &cfg.variances) else {
        return Err(CliError::Config("signals: shares and variances go together".into()));
    };
    if shares.len() != variances.len() || shares.is_empty() || shares.iter().any(|s| !(*s >= 0.0)) {
        return Err(CliError::Config(
            "signals.shares: need one nonnegative share per variance".into(),
        ));
    }
    let counts = apportion(shares, n);
    let mut sigma2 = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    for (k, &c) in counts.iter().enumerate() {
        sigma2.extend(std::iter::repeat(variances[k]).take(c));
        types.extend(std::iter::repeat(k).take(c));
    }
    let sig = SignalProfile::new(sigma2).map_err(err("signals.variances"))?;
    Ok((sig, types))
}
