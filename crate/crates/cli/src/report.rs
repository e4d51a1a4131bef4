use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use netlearn::asymptotics::benchmark_variance;
use netlearn::fmt_num;
use netlearn::kernel::{CovMatrix, WeightProfile};
use netlearn::network::SignalProfile;

use crate::config::{CliError, CliResult};

/// Nearest-rank percentile of sorted data; NaN when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Quotes a free-text CSV field when needed.
pub fn text_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

pub fn result_csv(sig: &SignalProfile, weights: &WeightProfile, cov: &CovMatrix) -> String {
    let mut out = String::from("node,sigma2,w_s,V_ii,aggregation_ratio\n");
    for i in 0..sig.len() {
        let v = cov.variance(i);
        let _ = writeln!(
            out,
            "{i},{},{},{},{}",
            fmt_num(sig.get(i)),
            fmt_num(weights.own_signal(i)),
            fmt_num(v),
            fmt_num(v / benchmark_variance(sig.get(i)))
        );
    }
    out
}

pub fn key_value_csv(rows: &[(&str, String)]) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{}", text_field(v));
    }
    out
}

pub fn write(dir: &Path, name: &str, content: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("run.out: cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}
