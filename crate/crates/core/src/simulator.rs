//! Discretized paths of the conditioned log-price and wealth integration.
//!
//! During a forced downcrossing the log-price follows
//! `dX = dB - mu coth(mu (eps - X)) dt`; otherwise it is a Brownian motion
//! with drift `mu`. Paths use an Euler-Maruyama scheme on a fixed grid and
//! level crossings are detected at grid points.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{downcrossing_drift, project_unit, Phase, PhaseState};
use crate::error::{Error, Result};
use crate::model::{law_under_q, ModelParams, XiLaw};

/// Per-path random generator.
pub type PathRng = ChaCha8Rng;

/// Generator for replication `path_index` of the run seeded by `seed`.
///
/// Each replication owns its own ChaCha stream, so results do not depend on
/// the order in which replications are executed.
pub fn path_rng(seed: u64, path_index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Distance below `epsilon` that a forced path may not cross. `None`
    /// means `1e-4 * epsilon`.
    pub guard: Option<f64>,
    pub max_reject: u32,
    pub seed: u64,
    pub path_index: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            guard: None,
            max_reject: 100,
            seed: 0,
            path_index: 0,
        }
    }
}

impl SimConfig {
    pub fn guard_for(&self, params: &ModelParams) -> f64 {
        self.guard.unwrap_or(1e-4 * params.epsilon)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSimConfig(format!(
                "dt = {} must be > 0",
                self.dt
            )));
        }
        if !(self.horizon > self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidSimConfig(format!(
                "horizon = {} must exceed dt = {}",
                self.horizon, self.dt
            )));
        }
        let guard = self.guard_for(params);
        if !(guard > 0.0 && guard < params.epsilon) {
            return Err(Error::InvalidSimConfig(format!(
                "guard = {guard} must lie in (0, epsilon)"
            )));
        }
        Ok(())
    }
}

/// Which law `xi` is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Physical measure: weights `alpha_n`.
    P,
    /// Conditioned measure: weights `beta_n`.
    Q,
}

/// Precomputed sampler for `xi`.
#[derive(Debug, Clone)]
pub enum XiSampler {
    Constant(usize),
    Geometric {
        offset: usize,
        dist: Geometric,
    },
    Table(WeightedIndex<f64>),
    /// Head table, and beyond it a geometric tail entered with probability `tail`.
    HeadTail {
        head: WeightedIndex<f64>,
        head_len: usize,
        tail: f64,
        dist: Geometric,
    },
}

impl XiSampler {
    pub fn new(law: &XiLaw, p: f64, measure: Measure) -> Result<Self> {
        law.validate()?;
        let table = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied()).map_err(|e| Error::InvalidLaw(e.to_string()))
        };
        let geometric =
            |q: f64| Geometric::new(1.0 - q).map_err(|e| Error::InvalidLaw(e.to_string()));
        if let XiLaw::Fixed(n) = law {
            return Ok(Self::Constant(*n));
        }
        match measure {
            Measure::Q => {
                let beta = law_under_q(law, p)?;
                if beta.len() == 1 {
                    return Ok(Self::Constant(0));
                }
                Ok(Self::Table(table(&beta)?))
            }
            Measure::P => match law {
                XiLaw::Fixed(_) => unreachable!(),
                XiLaw::Geometric { q } if *q == 0.0 => Ok(Self::Constant(0)),
                XiLaw::Geometric { q } => Ok(Self::Geometric {
                    offset: 0,
                    dist: geometric(*q)?,
                }),
                XiLaw::FiniteSupport { weights } => Ok(Self::Table(table(weights)?)),
                XiLaw::GeometricTail { head } => {
                    let q = law.tail_ratio().unwrap_or(0.0);
                    let mass: f64 = head.iter().sum();
                    Ok(Self::HeadTail {
                        head: table(head)?,
                        head_len: head.len(),
                        tail: 1.0 - mass,
                        dist: geometric(q)?,
                    })
                }
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Self::Constant(n) => *n,
            Self::Geometric { offset, dist } => offset + dist.sample(rng) as usize,
            Self::Table(w) => w.sample(rng),
            Self::HeadTail {
                head,
                head_len,
                tail,
                dist,
            } => {
                if rng.random::<f64>() < *tail {
                    head_len + dist.sample(rng) as usize
                } else {
                    head.sample(rng)
                }
            }
        }
    }
}

/// Draws the required downcrossing count under `measure`.
pub fn sample_xi<R: Rng + ?Sized>(
    law: &XiLaw,
    params: &ModelParams,
    measure: Measure,
    rng: &mut R,
) -> Result<usize> {
    Ok(XiSampler::new(law, params.p, measure)?.sample(rng))
}

/// Tracks the stopping-time cycle of an observed path: downcrossings from `0`
/// to `-alpha`, returns to `0`, and the first passage above `epsilon`.
#[derive(Debug, Clone, Copy)]
pub struct PhaseTracker {
    state: PhaseState,
    alpha: f64,
    epsilon: f64,
}

impl PhaseTracker {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            state: PhaseState::initial(),
            alpha: params.alpha,
            epsilon: params.epsilon,
        }
    }

    pub fn with_required(mut self, n: Option<usize>) -> Self {
        self.state.n_forced = n;
        self
    }

    pub fn state(&self) -> PhaseState {
        self.state
    }

    /// Feeds the next grid value and returns the updated state.
    pub fn observe(&mut self, x: f64) -> PhaseState {
        let s = &mut self.state;
        s.x = x;
        match s.phase {
            Phase::Free => {}
            _ if x >= self.epsilon => s.phase = Phase::Free,
            Phase::Down if x <= -self.alpha => {
                s.phase = Phase::Up;
                s.i0 += 1;
            }
            Phase::Up if x >= 0.0 => s.phase = Phase::Down,
            _ => {}
        }
        *s
    }
}

/// One Euler step with an optional ceiling. Proposals at or above the
/// ceiling are redrawn up to `max_reject` times, after which the path is
/// pushed half a standard deviation down instead.
#[inline]
fn euler_step<R: Rng + ?Sized>(
    x: f64,
    drift: f64,
    dt: f64,
    sqrt_dt: f64,
    ceiling: Option<f64>,
    max_reject: u32,
    rng: &mut R,
) -> (f64, u32) {
    let mut rejected = 0;
    loop {
        let g: f64 = StandardNormal.sample(rng);
        let next = x + drift * dt + sqrt_dt * g;
        match ceiling {
            Some(c) if next >= c => {
                rejected += 1;
                if rejected > max_reject {
                    return (x - 0.5 * sqrt_dt, rejected);
                }
            }
            _ => return (next, rejected),
        }
    }
}

/// Single-step driver for the conditioned process with `n_forced` required
/// downcrossings. Used both to record full paths and by the streaming oracles.
#[derive(Debug, Clone)]
pub struct ConditionedStepper {
    params: ModelParams,
    tracker: PhaseTracker,
    n_forced: usize,
    dt: f64,
    sqrt_dt: f64,
    ceiling: f64,
    max_reject: u32,
    drift_sign: f64,
    pub rejections: u64,
}

impl ConditionedStepper {
    pub fn new(params: &ModelParams, n_forced: usize, cfg: &SimConfig) -> Self {
        Self {
            params: *params,
            tracker: PhaseTracker::new(params).with_required(Some(n_forced)),
            n_forced,
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            ceiling: params.epsilon - cfg.guard_for(params),
            max_reject: cfg.max_reject,
            drift_sign: 1.0,
            rejections: 0,
        }
    }

    /// Flips the sign of the conditioned drift. Only useful as a negative
    /// control for the law checks.
    pub fn with_flipped_drift(mut self) -> Self {
        self.drift_sign = -1.0;
        self
    }

    pub fn state(&self) -> PhaseState {
        self.tracker.state()
    }

    /// Phase of the dynamics: `Free` once the required count is met.
    pub fn regime(&self) -> Phase {
        let s = self.tracker.state();
        if s.i0 >= self.n_forced {
            Phase::Free
        } else {
            s.phase
        }
    }

    /// Advances one step; returns the new level.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let x = self.tracker.state().x;
        let (drift, ceiling) = match self.regime() {
            Phase::Down => (
                self.drift_sign * downcrossing_drift(x, &self.params),
                Some(self.ceiling),
            ),
            Phase::Up => (self.params.mu, Some(self.ceiling)),
            Phase::Free => (self.params.mu, None),
        };
        let (next, rejected) = euler_step(
            x,
            drift,
            self.dt,
            self.sqrt_dt,
            ceiling,
            self.max_reject,
            rng,
        );
        self.rejections += rejected as u64;
        if !next.is_finite() {
            return Err(Error::NonFinite("path level"));
        }
        self.tracker.observe(next);
        Ok(next)
    }
}

/// A discretized trajectory of the log-price.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// Observed state at each grid point. Strategies only see this.
    pub states: Vec<PhaseState>,
    /// Phase of the dynamics at each grid point (`Free` after the forced
    /// downcrossings are done).
    pub regime: Vec<Phase>,
    /// `dB = dX - mu dt` for each step.
    pub db: Vec<f64>,
    pub xi_realized: usize,
    pub t_eps: Option<f64>,
    pub rejections: u64,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.db.len()
    }

    /// Price path `Z = S0 exp(sigma X)`.
    pub fn prices(&self, params: &ModelParams) -> Vec<f64> {
        let i = &params.inputs;
        self.x.iter().map(|x| i.s0 * (i.sigma * x).exp()).collect()
    }

    /// Number of forced downcrossing segments in the dynamics.
    pub fn forced_segments(&self) -> usize {
        let mut count = 0;
        let mut prev = None;
        for &ph in &self.regime {
            if ph == Phase::Down && prev != Some(Phase::Down) {
                count += 1;
            }
            prev = Some(ph);
        }
        count
    }
}

/// Simulates the conditioned path with `n_forced` required downcrossings,
/// using the generator for `(cfg.seed, cfg.path_index)`.
pub fn simulate_path(params: &ModelParams, n_forced: usize, cfg: &SimConfig) -> Result<PathRecord> {
    let mut rng = path_rng(cfg.seed, cfg.path_index);
    simulate_path_with(params, n_forced, cfg, &mut rng)
}

pub fn simulate_path_with<R: Rng + ?Sized>(
    params: &ModelParams,
    n_forced: usize,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathRecord> {
    cfg.validate(params)?;
    let steps = cfg.steps();
    let mut stepper = ConditionedStepper::new(params, n_forced, cfg);
    let mut rec = PathRecord::with_capacity(cfg.dt, steps, n_forced);
    rec.push(0.0, stepper.state(), stepper.regime());
    let mu_dt = params.mu * cfg.dt;
    for k in 1..=steps {
        let prev = *rec.x.last().unwrap_or(&0.0);
        let next = stepper.step(rng)?;
        rec.db.push(next - prev - mu_dt);
        let st = stepper.state();
        if st.phase == Phase::Free && rec.t_eps.is_none() && next >= params.epsilon {
            rec.t_eps = Some(k as f64 * cfg.dt);
        }
        rec.push(k as f64 * cfg.dt, st, stepper.regime());
    }
    rec.rejections = stepper.rejections;
    Ok(rec)
}

impl PathRecord {
    fn with_capacity(dt: f64, steps: usize, xi: usize) -> Self {
        Self {
            dt,
            times: Vec::with_capacity(steps + 1),
            x: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            regime: Vec::with_capacity(steps + 1),
            db: Vec::with_capacity(steps),
            xi_realized: xi,
            t_eps: None,
            rejections: 0,
        }
    }

    fn push(&mut self, t: f64, st: PhaseState, regime: Phase) {
        self.times.push(t);
        self.x.push(st.x);
        self.states.push(st);
        self.regime.push(regime);
    }
}

/// Unconditioned Brownian motion with drift `mu` on the same grid, with the
/// same crossing bookkeeping. `xi_realized` is 0; the completed downcrossing
/// count is in the states.
pub fn simulate_unconditioned(params: &ModelParams, cfg: &SimConfig) -> Result<PathRecord> {
    let mut rng = path_rng(cfg.seed, cfg.path_index);
    simulate_unconditioned_with(params, cfg, &mut rng)
}

pub fn simulate_unconditioned_with<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathRecord> {
    cfg.validate(params)?;
    let steps = cfg.steps();
    let sqrt_dt = cfg.dt.sqrt();
    let mut tracker = PhaseTracker::new(params);
    let mut rec = PathRecord::with_capacity(cfg.dt, steps, 0);
    rec.push(0.0, tracker.state(), tracker.state().phase);
    let mut x = 0.0;
    for k in 1..=steps {
        let g: f64 = StandardNormal.sample(rng);
        let next = x + params.mu * cfg.dt + sqrt_dt * g;
        if !next.is_finite() {
            return Err(Error::NonFinite("path level"));
        }
        rec.db.push(sqrt_dt * g);
        let st = tracker.observe(next);
        if st.phase == Phase::Free && rec.t_eps.is_none() {
            rec.t_eps = Some(k as f64 * cfg.dt);
        }
        rec.push(k as f64 * cfg.dt, st, st.phase);
        x = next;
    }
    Ok(rec)
}

/// Wealth trajectory and the fraction held on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthSeries {
    pub w: Vec<f64>,
    pub pi_used: Vec<f64>,
}

impl WealthSeries {
    pub fn terminal(&self) -> f64 {
        *self.w.last().unwrap_or(&f64::NAN)
    }
}

/// Integrates `dW/W = pi sigma dB + (r + pi (mu0 - r)) dt` along `path`,
/// holding `project_unit(strategy(state_k))` over step `k`. The log-wealth
/// update is exact for a constant fraction over the step and reuses the
/// path's own increments `db`.
pub fn evolve_wealth<F>(
    path: &PathRecord,
    strategy: F,
    params: &ModelParams,
    w0: f64,
) -> Result<WealthSeries>
where
    F: FnMut(&PhaseState) -> Result<f64>,
{
    integrate_wealth(path, strategy, params, w0, true)
}

/// Same as [`evolve_wealth`] without the `[0, 1]` projection.
pub fn evolve_wealth_unprojected<F>(
    path: &PathRecord,
    strategy: F,
    params: &ModelParams,
    w0: f64,
) -> Result<WealthSeries>
where
    F: FnMut(&PhaseState) -> Result<f64>,
{
    integrate_wealth(path, strategy, params, w0, false)
}

fn integrate_wealth<F>(
    path: &PathRecord,
    mut strategy: F,
    params: &ModelParams,
    w0: f64,
    project: bool,
) -> Result<WealthSeries>
where
    F: FnMut(&PhaseState) -> Result<f64>,
{
    let steps = path.db.len();
    if path.states.len() != steps + 1 || path.x.len() != steps + 1 {
        return Err(Error::GridMismatch {
            path: path.states.len().saturating_sub(1),
            expected: steps,
        });
    }
    if !(w0 > 0.0 && w0.is_finite()) {
        return Err(Error::InvalidExperiment(format!(
            "initial wealth {w0} must be > 0"
        )));
    }
    let i = &params.inputs;
    let dt = path.dt;
    let mut w = Vec::with_capacity(steps + 1);
    let mut pi_used = Vec::with_capacity(steps);
    let mut log_w = w0.ln();
    w.push(w0);
    for (k, db) in path.db.iter().enumerate() {
        let raw = strategy(&path.states[k])?;
        let pi = if project { project_unit(raw) } else { raw };
        log_w +=
            (i.r + pi * (i.mu0 - i.r) - 0.5 * pi * pi * i.sigma * i.sigma) * dt + pi * i.sigma * db;
        let next = log_w.exp();
        if !(next.is_finite() && next > 0.0) {
            return Err(Error::NonFinite("wealth"));
        }
        w.push(next);
        pi_used.push(pi);
    }
    Ok(WealthSeries { w, pi_used })
}
