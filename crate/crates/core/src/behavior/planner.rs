use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{steady_state, CovMatrix, SocialWeight, SolveOptions, WeightProfile};
use crate::network::{Environment, Network, SignalProfile};

/// Weights that depend only on group membership. Agent `i` in group `g`
/// puts `own[g]` on its signal and `social[g][h * memory + lag - 1]` on the
/// lag-`lag` actions of its neighbors in group `h`, split evenly across them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeightSpec {
    grouping: Vec<usize>,
    groups: usize,
    memory: usize,
    own: Vec<f64>,
    social: Vec<Vec<f64>>,
}

impl GroupWeightSpec {
    pub fn new(grouping: Vec<usize>, memory: usize, own: Vec<f64>, social: Vec<Vec<f64>>) -> Result<Self> {
        let groups = check_grouping(&grouping)?;
        if memory == 0 || own.len() != groups || social.len() != groups {
            return Err(Error::DimensionMismatch(format!(
                "{groups} groups need {groups} own weights and social rows"
            )));
        }
        if social.iter().any(|row| row.len() != groups * memory) {
            return Err(Error::DimensionMismatch(format!(
                "social rows need {} entries",
                groups * memory
            )));
        }
        Ok(Self {
            grouping,
            groups,
            memory,
            own,
            social,
        })
    }

    pub fn grouping(&self) -> &[usize] {
        &self.grouping
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn own(&self, g: usize) -> f64 {
        self.own[g]
    }

    pub fn social(&self, g: usize, observed: usize, lag: usize) -> f64 {
        self.social[g][observed * self.memory + lag - 1]
    }

    /// Expands to one weight per agent and observation. An agent missing some
    /// of its group's observation slots has its remaining weights rescaled to
    /// sum to one.
    pub fn to_profile(&self, net: &Network) -> Result<WeightProfile> {
        if net.n() != self.grouping.len() {
            return Err(Error::DimensionMismatch(format!(
                "grouping of {} nodes on a {}-node network",
                self.grouping.len(),
                net.n()
            )));
        }
        let (k, m) = (self.groups, self.memory);
        let mut social = Vec::with_capacity(net.n());
        let mut own = Vec::with_capacity(net.n());
        for i in 0..net.n() {
            let g = self.grouping[i];
            let nb = net.neighbors(i);
            if nb.is_empty() {
                social.push(Vec::new());
                own.push(1.0);
                continue;
            }
            let mut counts = vec![0usize; k];
            for &j in nb {
                counts[self.grouping[j]] += 1;
            }
            let present: f64 = (0..k)
                .filter(|&h| counts[h] > 0)
                .flat_map(|h| (0..m).map(move |l| h * m + l))
                .map(|slot| self.social[g][slot])
                .sum();
            let total = self.own[g] + present;
            if !(total.abs() > 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "group weights of agent {i} sum to zero on its neighborhood"
                )));
            }
            let counts = &counts;
            let row = (1..=m)
                .flat_map(|lag| {
                    nb.iter().map(move |&j| {
                        let h = self.grouping[j];
                        SocialWeight {
                            node: j,
                            lag,
                            weight: self.social[g][h * m + lag - 1] / counts[h] as f64 / total,
                        }
                    })
                })
                .collect();
            social.push(row);
            own.push(self.own[g] / total);
        }
        Ok(WeightProfile::from_parts_unchecked(social, own))
    }
}

fn check_grouping(grouping: &[usize]) -> Result<usize> {
    let groups = grouping.iter().max().map_or(0, |&g| g + 1);
    let mut seen = vec![false; groups];
    for &g in grouping {
        seen[g] = true;
    }
    if grouping.is_empty() || seen.iter().any(|s| !s) {
        return Err(Error::InvalidParameter(
            "group ids must be 0..k with every group nonempty".into(),
        ));
    }
    Ok(groups)
}

#[derive(Debug, Clone)]
pub struct PlannerOptions {
    /// Search interval for own-signal weights.
    pub own_box: (f64, f64),
    /// Search interval for free social weights.
    pub social_box: (f64, f64),
    /// Random starts in addition to the even-split start.
    pub restarts: usize,
    /// Stop when a full coordinate sweep improves the objective by less.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Options for each steady-state evaluation.
    pub solve: SolveOptions,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            own_box: (0.0, 1.0),
            social_box: (-3.0, 3.0),
            restarts: 4,
            tol: 1e-10,
            max_sweeps: 200,
            seed: 0,
            solve: SolveOptions::with_tol(1e-12),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerResult {
    pub spec: GroupWeightSpec,
    pub cov: CovMatrix,
    /// Mean lag-0 variance at the optimum.
    pub objective: f64,
    pub evaluations: usize,
}

/// Free coordinates: per group the own weight and all observed slots but the
/// last, which absorbs the remainder so the group's weights sum to one.
struct Layout {
    grouping: Vec<usize>,
    groups: usize,
    memory: usize,
    /// Slots each group observes, `h * memory + lag - 1`.
    slots: Vec<Vec<usize>>,
}

impl Layout {
    fn new(net: &Network, grouping: &[usize], memory: usize) -> Result<Self> {
        let groups = check_grouping(grouping)?;
        let mut observed = vec![vec![false; groups]; groups];
        for i in 0..net.n() {
            for &j in net.neighbors(i) {
                observed[grouping[i]][grouping[j]] = true;
            }
        }
        let slots = observed
            .iter()
            .map(|row| {
                (0..groups)
                    .filter(|&h| row[h])
                    .flat_map(|h| (0..memory).map(move |l| h * memory + l))
                    .collect()
            })
            .collect();
        Ok(Self {
            grouping: grouping.to_vec(),
            groups,
            memory,
            slots,
        })
    }

    /// `(group, Some(slot))` for a social coordinate, `(group, None)` for own.
    fn coordinates(&self) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::new();
        for g in 0..self.groups {
            if let Some((_, free)) = self.slots[g].split_last() {
                out.push((g, None));
                out.extend(free.iter().map(|&s| (g, Some(s))));
            }
        }
        out
    }

    fn spec(&self, x: &[f64]) -> GroupWeightSpec {
        let width = self.groups * self.memory;
        let mut own = vec![1.0; self.groups];
        let mut social = vec![vec![0.0; width]; self.groups];
        for (&(g, slot), &value) in self.coordinates().iter().zip(x) {
            match slot {
                None => own[g] = value,
                Some(s) => social[g][s] = value,
            }
        }
        for g in 0..self.groups {
            if let Some(&last) = self.slots[g].last() {
                social[g][last] = 1.0 - own[g] - social[g].iter().sum::<f64>();
            }
        }
        GroupWeightSpec {
            grouping: self.grouping.clone(),
            groups: self.groups,
            memory: self.memory,
            own,
            social,
        }
    }

    /// Own weight `own`, the rest split evenly over the lag-1 slots.
    fn even_start(&self, own: impl Fn(usize) -> f64) -> Vec<f64> {
        let coords = self.coordinates();
        let mut x = Vec::with_capacity(coords.len());
        for &(g, slot) in &coords {
            let lag1: Vec<usize> = self.slots[g].iter().copied().filter(|s| s % self.memory == 0).collect();
            let share = (1.0 - own(g)) / lag1.len() as f64;
            x.push(match slot {
                None => own(g),
                Some(s) if s % self.memory == 0 => share,
                Some(_) => 0.0,
            });
        }
        x
    }
}

struct Objective<'a> {
    layout: &'a Layout,
    net: &'a Network,
    sig: &'a SignalProfile,
    env: &'a Environment,
    solve: &'a SolveOptions,
}

impl Objective<'_> {
    fn eval(&self, x: &[f64]) -> (f64, Option<CovMatrix>) {
        let spec = self.layout.spec(x);
        let Ok(w) = spec.to_profile(self.net) else {
            return (f64::INFINITY, None);
        };
        match steady_state(&w, self.net, self.sig, self.env, self.solve) {
            Ok(ss) => {
                let v = ss.cov.variances();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                if mean.is_finite() {
                    (mean, Some(ss.cov))
                } else {
                    (f64::INFINITY, None)
                }
            }
            Err(_) => (f64::INFINITY, None),
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;
/// Bracket width at which a golden-section search stops.
const LINE_TOL: f64 = 1e-9;

/// Golden-section minimization of `f` over `[lo, hi]`; returns the best
/// point seen, the value there and the evaluation count.
fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64, usize) {
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    let mut evals = 2;
    let mut best = if fa <= fb { (a, fa) } else { (b, fb) };
    while hi - lo > LINE_TOL {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
            if fa < best.1 {
                best = (a, fa);
            }
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
            if fb < best.1 {
                best = (b, fb);
            }
        }
        evals += 1;
    }
    (best.0, best.1, evals)
}

fn descend(obj: &Objective, boxes: &[(f64, f64)], mut x: Vec<f64>, opts: &PlannerOptions) -> (Vec<f64>, f64, usize) {
    let (mut fx, _) = obj.eval(&x);
    let mut evals = 1;
    for _ in 0..opts.max_sweeps {
        let before = fx;
        for k in 0..x.len() {
            let mut trial = x.clone();
            let (t, ft, e) = golden_section(
                |v| {
                    trial[k] = v;
                    obj.eval(&trial).0
                },
                boxes[k].0,
                boxes[k].1,
            );
            evals += e;
            if ft < fx {
                x[k] = t;
                fx = ft;
            }
        }
        if !(before - fx >= opts.tol) {
            break;
        }
    }
    (x, fx, evals)
}

/// Minimizes the mean steady-state variance over group-symmetric weights by
/// coordinate descent with golden-section line searches. Candidates whose
/// steady state does not exist score `+inf`.
pub fn planner_optimize(
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
    grouping: &[usize],
    opts: &PlannerOptions,
) -> Result<PlannerResult> {
    if grouping.len() != net.n() || sig.len() != net.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} nodes, {} group ids, {} signal variances",
            net.n(),
            grouping.len(),
            sig.len()
        )));
    }
    let (olo, ohi) = opts.own_box;
    let (slo, shi) = opts.social_box;
    if !(olo < ohi && slo < shi) {
        return Err(Error::InvalidParameter("empty planner search box".into()));
    }
    let layout = Layout::new(net, grouping, env.memory())?;
    let coords = layout.coordinates();
    let boxes: Vec<(f64, f64)> = coords
        .iter()
        .map(|&(_, slot)| if slot.is_none() { opts.own_box } else { opts.social_box })
        .collect();
    let obj = Objective {
        layout: &layout,
        net,
        sig,
        env,
        solve: &opts.solve,
    };

    let starts: Vec<Vec<f64>> = (0..=opts.restarts)
        .map(|r| {
            if r == 0 {
                return layout.even_start(|_| 0.5f64.clamp(olo, ohi));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            let own: Vec<f64> = (0..layout.groups).map(|_| rng.random_range(olo..ohi)).collect();
            layout.even_start(|g| own[g])
        })
        .collect();
    let runs: Vec<(Vec<f64>, f64, usize)> = starts
        .into_par_iter()
        .map(|x0| descend(&obj, &boxes, x0, opts))
        .collect();
    let evaluations = runs.iter().map(|r| r.2).sum();
    // lowest index wins ties
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .expect("at least one start");
    let (objective, cov) = obj.eval(&best.0);
    let cov = cov.ok_or_else(|| {
        Error::NonContractive("no group weights in the search box have a steady state".into())
    })?;
    Ok(PlannerResult {
        spec: layout.spec(&best.0),
        cov,
        objective,
        evaluations,
    })
}
