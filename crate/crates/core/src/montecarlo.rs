//! Replicated experiments: the strategy comparison, parameter sweeps and
//! the statistical checks of the model against brute-force oracles.
//!
//! Replication `i` always draws from `path_rng(seed, i)`, and statistics are
//! accumulated with exactly rounded sums, so results do not depend on thread
//! count or on how the replication range is split.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{martingale_value, project_unit, Phase, PhaseState, Strategy};
use crate::error::{Error, Result};
use crate::model::{derive_params, prob_an, LawSpec, MarketInputs, ModelParams, XiLaw};
use crate::simulator::{
    evolve_wealth, path_rng, simulate_path_with, ConditionedStepper, Measure, PhaseTracker,
    SimConfig, XiSampler,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Exactly rounded floating-point sum (Shewchuk's partials). The result does
/// not depend on the order in which values are added or sums merged.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded value of the sum.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Running first and second moments with an order-independent merge.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    n: u64,
    sum: ExactSum,
    sum_sq: ExactSum,
}

impl Accumulator {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum.add(v);
        self.sum_sq.add(v * v);
    }

    pub fn merge(mut self, other: &Accumulator) -> Self {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
        self
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn summary(&self, quantity: &str) -> McSummary {
        let n = self.n as f64;
        let sum = self.sum.value();
        let mean = sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq.value() - sum * sum / n) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        McSummary {
            quantity: quantity.to_string(),
            mean,
            std_err: std_dev / n.sqrt(),
            std_dev,
            n: self.n,
        }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::default();
        iter.into_iter().for_each(|v| acc.push(v));
        acc
    }
}

/// Mean, spread and size of a Monte Carlo sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub quantity: String,
    pub mean: f64,
    /// Standard deviation of the mean.
    pub std_err: f64,
    pub std_dev: f64,
    pub n: u64,
}

impl McSummary {
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_err
    }
}

/// Everything needed to replicate the strategy comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub inputs: MarketInputs,
    pub law: LawSpec,
    pub sim: SimConfig,
    pub n_paths: u64,
    pub w0: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidExperiment(format!(
                "n_paths = {} must be >= 2",
                self.n_paths
            )));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::InvalidExperiment(format!(
                "w0 = {} must be > 0",
                self.w0
            )));
        }
        let prepared = self.prepare()?;
        self.sim.validate(&prepared.params)
    }

    /// Resolves parameters, the physical law and the `Q`-sampler.
    pub fn prepare(&self) -> Result<Prepared> {
        let params = derive_params(self.inputs)?;
        let law = self.law.resolve(params.p)?;
        let sampler = XiSampler::new(&law, params.p, Measure::Q)?;
        Ok(Prepared {
            params,
            law,
            sampler,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub params: ModelParams,
    pub law: XiLaw,
    pub sampler: XiSampler,
}

/// Terminal values of one replication, both strategies on the same path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub xi: usize,
    pub w_star: f64,
    pub w_classic: f64,
}

/// Replication `index`: draw `xi` under `Q`, simulate the conditioned path
/// and run both projected strategies on it.
pub fn compare_one(cfg: &ExperimentConfig, prep: &Prepared, index: u64) -> Result<PathOutcome> {
    let mut rng = path_rng(cfg.sim.seed, index);
    let xi = prep.sampler.sample(&mut rng);
    let path = simulate_path_with(&prep.params, xi, &cfg.sim, &mut rng)?;
    let star = Strategy::Mixture(prep.law.clone());
    let w_star =
        evolve_wealth(&path, |s| star.raw(s, &prep.params), &prep.params, cfg.w0)?.terminal();
    let w_classic = evolve_wealth(
        &path,
        |s| Strategy::Classic.raw(s, &prep.params),
        &prep.params,
        cfg.w0,
    )?
    .terminal();
    Ok(PathOutcome {
        xi,
        w_star,
        w_classic,
    })
}

pub const ADVANTAGE: &str = "W_star_T - W_c_T";

/// Accumulates `W*_T - W^c_T` over the replications in `range`.
pub fn run_compare_range(cfg: &ExperimentConfig, range: Range<u64>) -> Result<Accumulator> {
    let prep = cfg.prepare()?;
    cfg.sim.validate(&prep.params)?;
    range
        .into_par_iter()
        .map(|i| compare_one(cfg, &prep, i).map(|o| o.w_star - o.w_classic))
        .try_fold(Accumulator::default, |mut acc, v| {
            acc.push(v?);
            Ok(acc)
        })
        .try_reduce(Accumulator::default, |a, b| Ok(a.merge(&b)))
}

/// Mean advantage `W*_T - W^c_T` of the optimal strategy over the classic
/// one (positive when the optimal strategy earns more).
pub fn run_compare(cfg: &ExperimentConfig) -> Result<McSummary> {
    cfg.validate()?;
    Ok(run_compare_range(cfg, 0..cfg.n_paths)?.summary(ADVANTAGE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Mu0,
    Alpha,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Mu0 => "mu0",
            SweepParam::Alpha => "alpha",
        }
    }

    pub fn apply(self, inputs: MarketInputs, value: f64) -> MarketInputs {
        match self {
            SweepParam::Mu0 => MarketInputs {
                mu0: value,
                ..inputs
            },
            SweepParam::Alpha => MarketInputs {
                s0_minus: inputs.s0 * (-inputs.sigma * value).exp(),
                ..inputs
            },
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mu0" => Ok(SweepParam::Mu0),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(format!(
                "unknown sweep parameter '{other}' (expected mu0 or alpha)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub summary: McSummary,
    pub p: f64,
    pub mu: f64,
}

/// One comparison per value of `param`, everything else fixed. The derived
/// quantities (`mu`, `p`, physical weights) are recomputed for each value.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidExperiment(
            "sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|&v| {
            let run = ExperimentConfig {
                inputs: param.apply(cfg.inputs, v),
                ..cfg.clone()
            };
            let params = derive_params(run.inputs)?;
            let summary = run_compare(&run)?;
            Ok(SweepRow {
                param_value: v,
                summary,
                p: params.p,
                mu: params.mu,
            })
        })
        .collect()
}

/// Frequency check of `P(A_n) = p^n` for one `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnRow {
    pub n: usize,
    pub frequency: f64,
    pub expected: f64,
    pub std_err: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnReport {
    pub paths: u64,
    /// Paths still below `epsilon` at the horizon.
    pub censored: u64,
    pub rows: Vec<PnRow>,
}

impl PnReport {
    pub fn pass(&self) -> bool {
        self.censored == 0 && self.rows.iter().all(|r| r.pass)
    }
}

fn drifted_step<R: Rng + ?Sized>(x: f64, mu_dt: f64, sqrt_dt: f64, rng: &mut R) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    x + mu_dt + sqrt_dt * g
}

/// Downcrossings completed by an unconditioned path before it first reaches
/// `epsilon`; `None` if it is still below at `sim.horizon`.
pub fn downcrossings_before_breakout<R: Rng + ?Sized>(
    params: &ModelParams,
    sim: &SimConfig,
    rng: &mut R,
) -> Option<usize> {
    let mut tracker = PhaseTracker::new(params);
    let (mu_dt, sqrt_dt) = (params.mu * sim.dt, sim.dt.sqrt());
    let mut x = 0.0;
    for _ in 0..sim.steps() {
        x = drifted_step(x, mu_dt, sqrt_dt, rng);
        let st = tracker.observe(x);
        if st.phase == Phase::Free {
            return Some(st.i0);
        }
    }
    None
}

/// Brute-force check of `P(A_n) = p^n` on `n_paths` unconditioned paths, each
/// run until breakout (at most `sim.horizon`). Passes at 3 binomial standard
/// errors for every `n <= n_max`.
pub fn validate_pn(
    params: &ModelParams,
    sim: &SimConfig,
    n_paths: u64,
    n_max: usize,
) -> Result<PnReport> {
    if n_max < 1 {
        return Err(Error::InvalidExperiment("n_max must be >= 1".into()));
    }
    sim.validate(params)?;
    let counts: Vec<Option<usize>> = (0..n_paths)
        .into_par_iter()
        .map(|i| downcrossings_before_breakout(params, sim, &mut path_rng(sim.seed, i)))
        .collect();
    let censored = counts.iter().filter(|c| c.is_none()).count() as u64;
    let rows = (0..=n_max)
        .map(|n| {
            let hits = counts.iter().filter(|c| c.is_some_and(|k| k >= n)).count();
            let frequency = hits as f64 / n_paths as f64;
            let expected = prob_an(params.p, n);
            let std_err = (expected * (1.0 - expected) / n_paths as f64).sqrt();
            let z = if std_err > 0.0 {
                (frequency - expected) / std_err
            } else {
                0.0
            };
            let pass = if std_err > 0.0 {
                z.abs() < 3.0
            } else {
                frequency == expected
            };
            PnRow {
                n,
                frequency,
                expected,
                std_err,
                z,
                pass,
            }
        })
        .collect();
    Ok(PnReport {
        paths: n_paths,
        censored,
        rows,
    })
}

/// Mean and variance of a sample of durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    /// Standard error of `var`, from the fourth central moment.
    pub var_se: f64,
}

impl SampleMoments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let var_se = ((m4 - var * var) / n).max(0.0).sqrt();
        Self {
            n: xs.len(),
            mean,
            var,
            var_se,
        }
    }
}

/// Two-sample Kolmogorov-Smirnov statistic (max distance between the
/// empirical CDFs).
pub fn ecdf_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HTransformReport {
    pub conditioned: SampleMoments,
    pub oracle: SampleMoments,
    pub mean_z: f64,
    pub var_z: f64,
    pub ecdf_distance: f64,
    pub proposals: u64,
    pub acceptance_rate: f64,
    pub acceptance_z: f64,
    /// Conditioned samples that had not reached `-alpha` by `sim.horizon`.
    pub censored: usize,
}

impl HTransformReport {
    pub fn pass(&self) -> bool {
        self.censored == 0
            && self.mean_z.abs() < 3.0
            && self.var_z.abs() < 3.0
            && self.ecdf_distance < 0.03
            && self.acceptance_z.abs() < 3.0
    }
}

/// Duration of the first forced downcrossing of the conditioned process,
/// capped at `sim.horizon`.
pub fn conditioned_first_downcrossing<R: Rng + ?Sized>(
    params: &ModelParams,
    sim: &SimConfig,
    flip_drift: bool,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let mut stepper = ConditionedStepper::new(params, 1, sim);
    if flip_drift {
        stepper = stepper.with_flipped_drift();
    }
    let steps = sim.steps();
    for k in 1..=steps {
        stepper.step(rng)?;
        if stepper.state().i0 >= 1 {
            return Ok((k as f64 * sim.dt, true));
        }
    }
    Ok((steps as f64 * sim.dt, false))
}

/// Unconditioned path from `0`: `Some(duration)` if it reaches `-alpha`
/// before `epsilon`, `None` otherwise.
pub fn unconditioned_first_downcrossing<R: Rng + ?Sized>(
    params: &ModelParams,
    sim: &SimConfig,
    rng: &mut R,
) -> Option<f64> {
    let (mu_dt, sqrt_dt) = (params.mu * sim.dt, sim.dt.sqrt());
    let mut x = 0.0;
    let mut k = 0u64;
    loop {
        k += 1;
        x = drifted_step(x, mu_dt, sqrt_dt, rng);
        if x >= params.epsilon {
            return None;
        }
        if x <= -params.alpha {
            return Some(k as f64 * sim.dt);
        }
    }
}

const ORACLE_STREAM: u64 = 1 << 62;

/// Compares first-downcrossing durations of the conditioned simulator with
/// those of unconditioned paths accepted when they reach `-alpha` before
/// `epsilon`.
pub fn validate_htransform(
    params: &ModelParams,
    sim: &SimConfig,
    n_samples: usize,
) -> Result<HTransformReport> {
    htransform_check(params, sim, n_samples, false)
}

/// [`validate_htransform`] with a selectable sign flip of the conditioned
/// drift, for negative controls.
pub fn htransform_check(
    params: &ModelParams,
    sim: &SimConfig,
    n_samples: usize,
    flip_drift: bool,
) -> Result<HTransformReport> {
    if n_samples < 1000 {
        return Err(Error::InvalidExperiment(format!(
            "n_samples = {n_samples} must be >= 1000"
        )));
    }
    sim.validate(params)?;
    let cond: Vec<(f64, bool)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            conditioned_first_downcrossing(params, sim, flip_drift, &mut path_rng(sim.seed, i))
        })
        .collect::<Result<_>>()?;
    let censored = cond.iter().filter(|c| !c.1).count();
    let cond: Vec<f64> = cond.into_iter().map(|c| c.0).collect();

    let mut accepted = Vec::with_capacity(n_samples);
    let mut proposals = 0u64;
    let chunk = 16_384u64;
    while accepted.len() < n_samples {
        let batch: Vec<Option<f64>> = (proposals..proposals + chunk)
            .into_par_iter()
            .map(|j| {
                unconditioned_first_downcrossing(
                    params,
                    sim,
                    &mut path_rng(sim.seed, ORACLE_STREAM + j),
                )
            })
            .collect();
        for b in batch {
            proposals += 1;
            if let Some(d) = b {
                accepted.push(d);
                if accepted.len() == n_samples {
                    break;
                }
            }
        }
        let rate = accepted.len() as f64 / proposals as f64;
        if proposals >= 100_000 && rate < 1e-4 {
            return Err(Error::OracleInfeasible(rate));
        }
    }
    let acceptance_rate = n_samples as f64 / proposals as f64;
    let acceptance_se = (params.p * (1.0 - params.p) / proposals as f64).sqrt();

    let c = SampleMoments::of(&cond);
    let o = SampleMoments::of(&accepted);
    Ok(HTransformReport {
        conditioned: c,
        oracle: o,
        mean_z: (c.mean - o.mean) / (c.var / c.n as f64 + o.var / o.n as f64).sqrt(),
        var_z: (c.var - o.var) / (c.var_se.powi(2) + o.var_se.powi(2)).sqrt(),
        ecdf_distance: ecdf_distance(&cond, &accepted),
        proposals,
        acceptance_rate,
        acceptance_z: (acceptance_rate - params.p) / acceptance_se,
        censored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub t: f64,
    pub mean: f64,
    pub std_err: f64,
    pub expected: f64,
    pub z: f64,
    pub pass: bool,
}

/// Empirical mean of `M_t^n` over unconditioned paths at each of `times`;
/// each should equal `p^n` within 3 standard errors.
pub fn validate_martingale(
    params: &ModelParams,
    sim: &SimConfig,
    n: usize,
    times: &[f64],
    n_paths: u64,
) -> Result<Vec<MartingaleRow>> {
    sim.validate(params)?;
    let marks: Vec<usize> = times
        .iter()
        .map(|t| (t / sim.dt).round() as usize)
        .collect();
    let last = marks.iter().copied().max().unwrap_or(0);
    let (mu_dt, sqrt_dt) = (params.mu * sim.dt, sim.dt.sqrt());
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(sim.seed, i);
            let mut tracker = PhaseTracker::new(params);
            let mut x = 0.0;
            let mut out = vec![0.0; marks.len()];
            for k in 0..=last {
                if k > 0 {
                    x = drifted_step(x, mu_dt, sqrt_dt, &mut rng);
                    tracker.observe(x);
                }
                for (slot, &m) in marks.iter().enumerate() {
                    if m == k {
                        out[slot] = martingale_value(n, &tracker.state(), params)?;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let expected = prob_an(params.p, n);
    Ok(times
        .iter()
        .enumerate()
        .map(|(slot, &t)| {
            let s = per_path
                .iter()
                .map(|v| v[slot])
                .collect::<Accumulator>()
                .summary("M_t^n");
            let z = if s.std_err > 0.0 {
                s.z_score(expected)
            } else {
                0.0
            };
            MartingaleRow {
                t,
                mean: s.mean,
                std_err: s.std_err,
                expected,
                z,
                pass: z.abs() < 3.0,
            }
        })
        .collect())
}

/// Mean terminal log-wealth of one strategy arm, and its margin against the
/// optimal arm (`log W*_T - log W_arm_T`, same paths).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityArm {
    pub name: String,
    pub log_wealth: McSummary,
    pub margin: McSummary,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub optimal: McSummary,
    pub challengers: Vec<OptimalityArm>,
}

impl OptimalityReport {
    pub fn pass(&self) -> bool {
        self.challengers.iter().all(|c| c.pass)
    }
}

/// Compares the mean terminal log-wealth of the projected optimal strategy
/// with the projected `pi* + delta`, `pi* - delta` and the classic strategy,
/// all on the same paths. A challenger is beaten when the mean margin is at
/// least two standard errors.
pub fn validate_optimality(cfg: &ExperimentConfig, delta: f64) -> Result<OptimalityReport> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidExperiment(format!(
            "delta = {delta} must be >= 0"
        )));
    }
    cfg.validate()?;
    let prep = cfg.prepare()?;
    let params = prep.params;
    let star = Strategy::Mixture(prep.law.clone());
    let per_path: Vec<[f64; 4]> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.sim.seed, i);
            let xi = prep.sampler.sample(&mut rng);
            let path = simulate_path_with(&params, xi, &cfg.sim, &mut rng)?;
            let shifted = |d: f64| {
                let star = &star;
                move |s: &PhaseState| star.projected(s, &params).map(|v| project_unit(v + d))
            };
            let log_w = |ws: crate::simulator::WealthSeries| ws.terminal().ln();
            Ok([
                log_w(evolve_wealth(
                    &path,
                    |s| star.raw(s, &params),
                    &params,
                    cfg.w0,
                )?),
                log_w(evolve_wealth(&path, shifted(delta), &params, cfg.w0)?),
                log_w(evolve_wealth(&path, shifted(-delta), &params, cfg.w0)?),
                log_w(evolve_wealth(
                    &path,
                    |s| Strategy::Classic.raw(s, &params),
                    &params,
                    cfg.w0,
                )?),
            ])
        })
        .collect::<Result<_>>()?;
    let optimal = per_path
        .iter()
        .map(|v| v[0])
        .collect::<Accumulator>()
        .summary("log W_T");
    let names = ["pi_star_plus_delta", "pi_star_minus_delta", "pi_classic"];
    let challengers = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let log_wealth = per_path
                .iter()
                .map(|v| v[k + 1])
                .collect::<Accumulator>()
                .summary("log W_T");
            let margin = per_path
                .iter()
                .map(|v| v[0] - v[k + 1])
                .collect::<Accumulator>()
                .summary("margin");
            let pass = margin.mean >= 2.0 * margin.std_err;
            OptimalityArm {
                name: name.to_string(),
                log_wealth,
                margin,
                pass,
            }
        })
        .collect();
    Ok(OptimalityReport {
        optimal,
        challengers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn baseline_cfg(n_paths: u64) -> ExperimentConfig {
        ExperimentConfig {
            inputs: MarketInputs::from_log_levels(0.1, 0.15, 0.02, 1.0, 1.0, 0.3),
            law: LawSpec::FiniteQ {
                beta: vec![0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 0.1],
            },
            sim: SimConfig {
                seed: 2024,
                ..SimConfig::default()
            },
            n_paths,
            w0: 1.0,
        }
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let vals: Vec<f64> = (0..1000)
            .map(|i| ((i * 7919) % 1013) as f64 * 1e-3 - 0.4 + 1e10 * ((i % 3) as f64 - 1.0))
            .collect();
        let mut fwd = ExactSum::default();
        vals.iter().for_each(|v| fwd.add(*v));
        let mut rev = ExactSum::default();
        vals.iter().rev().for_each(|v| rev.add(*v));
        assert_eq!(fwd.value(), rev.value());
        let mut a = ExactSum::default();
        let mut b = ExactSum::default();
        vals[..400].iter().for_each(|v| a.add(*v));
        vals[400..].iter().for_each(|v| b.add(*v));
        b.merge(&a);
        assert_eq!(b.value(), fwd.value());
        let mut c = ExactSum::default();
        for v in [1e100, 1.0, -1e100] {
            c.add(v);
        }
        assert_eq!(c.value(), 1.0);
    }

    #[test]
    fn summary_statistics() {
        let s = [1.0, 2.0, 3.0, 4.0]
            .into_iter()
            .collect::<Accumulator>()
            .summary("x");
        assert_eq!(s.mean, 2.5);
        assert_abs_diff_eq!(s.std_dev, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.std_err, s.std_dev / 2.0, epsilon = 1e-15);
        assert_eq!(s.n, 4);
    }

    #[test]
    fn ecdf_distance_cases() {
        assert_eq!(ecdf_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ecdf_distance(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_abs_diff_eq!(
            ecdf_distance(&[1.0, 3.0], &[2.0, 4.0]),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn too_few_paths_rejected() {
        assert!(matches!(
            run_compare(&baseline_cfg(1)),
            Err(Error::InvalidExperiment(_))
        ));
    }

    #[test]
    fn no_forced_downcrossing_means_no_difference() {
        let cfg = ExperimentConfig {
            law: LawSpec::Fixed { n: 0 },
            ..baseline_cfg(50)
        };
        let s = run_compare(&cfg).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.std_dev, 0.0);
    }

    #[test]
    fn split_runs_merge_exactly() {
        let cfg = baseline_cfg(40);
        let full = run_compare(&cfg).unwrap();
        let a = run_compare_range(&cfg, 0..17).unwrap();
        let b = run_compare_range(&cfg, 17..40).unwrap();
        assert_eq!(b.merge(&a).summary(ADVANTAGE), full);
    }

    #[test]
    fn single_value_sweep_is_compare() {
        let cfg = baseline_cfg(20);
        let rows = run_sweep(&cfg, SweepParam::Alpha, &[1.0]).unwrap();
        assert_eq!(rows.len(), 1);
        let direct = run_compare(&cfg).unwrap();
        assert_abs_diff_eq!(rows[0].summary.mean, direct.mean, epsilon = 1e-12);
        assert!(run_sweep(&cfg, SweepParam::Mu0, &[]).is_err());
    }

    #[test]
    fn sweep_recomputes_p() {
        let cfg = baseline_cfg(4);
        let rows = run_sweep(&cfg, SweepParam::Alpha, &[0.5, 1.2]).unwrap();
        let mu = rows[0].mu;
        assert_ne!(rows[0].p, rows[1].p);
        assert_abs_diff_eq!(
            rows[0].p,
            crate::model::crossing_prob_p(mu, 0.5, 0.3).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            rows[1].p,
            crate::model::crossing_prob_p(mu, 1.2, 0.3).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pn_at_zero_is_exact() {
        let prm = baseline_cfg(2).prepare().unwrap().params;
        let sim = SimConfig {
            dt: 1e-2,
            horizon: 200.0,
            seed: 1,
            ..SimConfig::default()
        };
        let rep = validate_pn(&prm, &sim, 2000, 1).unwrap();
        assert_eq!(rep.rows[0].frequency, 1.0);
        assert!(rep.rows[0].pass);
        assert!(validate_pn(&prm, &sim, 10, 0).is_err());
    }

    #[test]
    fn zero_delta_gives_identical_arms() {
        let rep = validate_optimality(&baseline_cfg(20), 0.0).unwrap();
        for arm in &rep.challengers[..2] {
            assert_eq!(arm.margin.mean, 0.0);
            assert_eq!(arm.margin.std_err, 0.0);
        }
    }

    #[test]
    fn std_err_shrinks_with_replications() {
        let small = run_compare(&baseline_cfg(100)).unwrap();
        let large = run_compare(&baseline_cfg(1600)).unwrap();
        let ratio = small.std_err / large.std_err;
        assert!((2.5..6.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn flipped_drift_fails_the_law_check() {
        let prm = baseline_cfg(2).prepare().unwrap().params;
        let sim = SimConfig {
            dt: 1e-3,
            horizon: 5.0,
            seed: 3,
            ..SimConfig::default()
        };
        let rep = htransform_check(&prm, &sim, 1000, true).unwrap();
        assert!(!rep.pass());
        assert!(htransform_check(&prm, &sim, 10, false).is_err());
    }
}
