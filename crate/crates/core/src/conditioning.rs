//! Conditional probability martingale `M_t^n = P(A_n | F_t)`, the drift that
//! conditioning on `A_n` adds during a downcrossing, and the log-utility
//! strategies built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{prob_an, ModelParams, XiLaw};

/// Position of the path in the downcrossing cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Inside `[sigma_{2 i0}, sigma_{2 i0 + 1})`: heading from `0` to `-alpha`.
    Down,
    /// Inside `[sigma_{2 i0 - 1}, sigma_{2 i0})`: returning from `-alpha` to `0`.
    Up,
    /// No downcrossing can be forced any more: either the required count is
    /// met (simulator dynamics) or the path has reached `epsilon`.
    Free,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Down => "down",
            Phase::Up => "up",
            Phase::Free => "free",
        }
    }
}

/// Observable state of a path at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    /// Number of completed downcrossings.
    pub i0: usize,
    pub phase: Phase,
    /// Current log-scale level.
    pub x: f64,
    /// Required count, when it is known to the observer.
    pub n_forced: Option<usize>,
}

impl PhaseState {
    /// State at time zero: at level `0`, starting the first downcrossing.
    pub fn initial() -> Self {
        Self {
            i0: 0,
            phase: Phase::Down,
            x: 0.0,
            n_forced: None,
        }
    }

    pub fn new(i0: usize, phase: Phase, x: f64) -> Self {
        Self {
            i0,
            phase,
            x,
            n_forced: None,
        }
    }
}

fn check_below_breakout(x: f64, params: &ModelParams) -> Result<()> {
    if x >= params.epsilon || x.is_nan() {
        return Err(Error::AtBreakout {
            x,
            epsilon: params.epsilon,
        });
    }
    Ok(())
}

/// `M_t^n` evaluated at `state`.
///
/// Returns `1` once `n` downcrossings are complete and `0` if the path broke
/// out before that. Otherwise `p^(n-1-i0) h(x)` in a downcrossing and
/// `p^(n-i0)` in an upcrossing, with `h(x)` the probability of reaching
/// `-alpha` before `epsilon` from `x`.
pub fn martingale_value(n: usize, state: &PhaseState, params: &ModelParams) -> Result<f64> {
    if state.i0 >= n {
        return Ok(1.0);
    }
    match state.phase {
        Phase::Free => Ok(0.0),
        Phase::Down => {
            check_below_breakout(state.x, params)?;
            Ok(prob_an(params.p, n - 1 - state.i0) * params.down_exit_prob(state.x))
        }
        Phase::Up => {
            check_below_breakout(state.x, params)?;
            Ok(prob_an(params.p, n - state.i0))
        }
    }
}

/// Drift added to the Brownian motion by conditioning, while a forced
/// downcrossing is in progress: `2 mu S(x) / (S(eps) - S(x))`.
///
/// Negative for `mu > 0`; together with `mu` it gives the conditioned drift
/// `-mu coth(mu (eps - x))` of the log-price.
pub fn conditioned_drift(x: f64, params: &ModelParams) -> Result<f64> {
    check_below_breakout(x, params)?;
    let s = params.scale(x);
    Ok(2.0 * params.mu * s / (params.scale(params.epsilon) - s))
}

/// Log-scale drift during a forced downcrossing, `-mu coth(mu (eps - x))`.
pub fn downcrossing_drift(x: f64, params: &ModelParams) -> f64 {
    let z = params.mu * (params.epsilon - x);
    -params.mu / z.tanh()
}

/// Merton fraction `(mu0 - r) / sigma^2`.
pub fn classic_strategy(params: &ModelParams) -> f64 {
    params.classic_fraction()
}

/// Optimal fraction when exactly `n` downcrossings are required.
pub fn optimal_strategy_fixed(n: usize, state: &PhaseState, params: &ModelParams) -> Result<f64> {
    let classic = classic_strategy(params);
    if state.phase != Phase::Down || state.i0 >= n {
        return Ok(classic);
    }
    Ok(classic + conditioned_drift(state.x, params)? / params.inputs.sigma)
}

/// `sum_n alpha_n M_t^n`, split out into the part carried by scenarios that
/// are currently inside a forced downcrossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureWeight {
    pub value: f64,
    pub down_mass: f64,
}

pub fn mixture_weight(
    law: &XiLaw,
    state: &PhaseState,
    params: &ModelParams,
) -> Result<MixtureWeight> {
    let done = law.cumulative(state.i0);
    let p = params.p;
    match state.phase {
        Phase::Free => Ok(MixtureWeight {
            value: done,
            down_mass: 0.0,
        }),
        Phase::Up => {
            check_below_breakout(state.x, params)?;
            Ok(MixtureWeight {
                value: done + p * law.pending_sum(state.i0, p),
                down_mass: 0.0,
            })
        }
        Phase::Down => {
            check_below_breakout(state.x, params)?;
            let down_mass = params.down_exit_prob(state.x) * law.pending_sum(state.i0, p);
            Ok(MixtureWeight {
                value: done + down_mass,
                down_mass,
            })
        }
    }
}

/// Optimal fraction when the required count is random with law `law`.
pub fn optimal_strategy_random(
    law: &XiLaw,
    state: &PhaseState,
    params: &ModelParams,
) -> Result<f64> {
    let classic = classic_strategy(params);
    let w = mixture_weight(law, state, params)?;
    if w.down_mass == 0.0 {
        return Ok(classic);
    }
    let drift = conditioned_drift(state.x, params)?;
    Ok(classic + drift / params.inputs.sigma * (w.down_mass / w.value))
}

/// Projection on `[0, 1]` (no shorting, no leverage).
#[inline]
pub fn project_unit(pi: f64) -> f64 {
    pi.clamp(0.0, 1.0)
}

/// The strategies compared by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Classic,
    FixedCount(usize),
    Mixture(XiLaw),
}

impl Strategy {
    /// Unconstrained fraction at `state`.
    pub fn raw(&self, state: &PhaseState, params: &ModelParams) -> Result<f64> {
        match self {
            Strategy::Classic => Ok(classic_strategy(params)),
            Strategy::FixedCount(n) => optimal_strategy_fixed(*n, state, params),
            Strategy::Mixture(law) => optimal_strategy_random(law, state, params),
        }
    }

    /// Fraction actually held, projected on `[0, 1]`.
    pub fn projected(&self, state: &PhaseState, params: &ModelParams) -> Result<f64> {
        self.raw(state, params).map(project_unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_params, law_from_q, MarketInputs};
    use approx::assert_abs_diff_eq;

    fn baseline() -> ModelParams {
        derive_params(MarketInputs::from_log_levels(
            0.1, 0.15, 0.02, 1.0, 1.0, 0.3,
        ))
        .unwrap()
    }

    fn paper_law() -> XiLaw {
        let p = baseline().p;
        XiLaw::finite(law_from_q(&[0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 0.1], p).unwrap()).unwrap()
    }

    fn state_grid(prm: &ModelParams) -> Vec<PhaseState> {
        let mut out = Vec::new();
        for i0 in 0..10 {
            for k in 0..=40 {
                let x = -prm.alpha + (prm.epsilon - 1e-3 + prm.alpha) * k as f64 / 40.0;
                out.push(PhaseState::new(i0, Phase::Down, x));
                if x <= 0.0 {
                    out.push(PhaseState::new(i0, Phase::Up, x));
                }
            }
            out.push(PhaseState::new(i0, Phase::Free, 0.5));
        }
        out
    }

    #[test]
    fn martingale_examples() {
        let prm = baseline();
        let any = PhaseState::new(0, Phase::Up, -0.4);
        assert_eq!(martingale_value(0, &any, &prm).unwrap(), 1.0);
        let start = PhaseState::initial();
        assert_abs_diff_eq!(
            martingale_value(1, &start, &prm).unwrap(),
            prm.p,
            epsilon = 1e-15
        );
        let bottom = PhaseState::new(0, Phase::Down, -prm.alpha);
        assert_abs_diff_eq!(
            martingale_value(1, &bottom, &prm).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let broke = PhaseState::new(1, Phase::Free, 0.31);
        assert_eq!(martingale_value(2, &broke, &prm).unwrap(), 0.0);
        assert_eq!(martingale_value(1, &broke, &prm).unwrap(), 1.0);
        let above = PhaseState::new(0, Phase::Down, 0.3);
        assert!(matches!(
            martingale_value(1, &above, &prm),
            Err(Error::AtBreakout { .. })
        ));
    }

    #[test]
    fn martingale_continuous_at_phase_boundaries() {
        let prm = baseline();
        for n in 1..8 {
            for i0 in 0..n {
                // reaching -alpha: Down(i0) -> Up(i0 + 1)
                let before =
                    martingale_value(n, &PhaseState::new(i0, Phase::Down, -prm.alpha), &prm)
                        .unwrap();
                let after =
                    martingale_value(n, &PhaseState::new(i0 + 1, Phase::Up, -prm.alpha), &prm)
                        .unwrap();
                assert_abs_diff_eq!(before, after, epsilon = 1e-12);
                // returning to 0: Up(i0) -> Down(i0)
                if i0 > 0 {
                    let up =
                        martingale_value(n, &PhaseState::new(i0, Phase::Up, 0.0), &prm).unwrap();
                    let down =
                        martingale_value(n, &PhaseState::new(i0, Phase::Down, 0.0), &prm).unwrap();
                    assert_abs_diff_eq!(up, down, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn drift_examples() {
        let prm = baseline();
        // 2 mu / (S(eps) - 1) with S(eps) = 0.701173
        assert_abs_diff_eq!(
            conditioned_drift(0.0, &prm).unwrap(),
            -3.959_934,
            epsilon = 1e-3
        );
        assert_abs_diff_eq!(downcrossing_drift(-200.0, &prm), -prm.mu, epsilon = 1e-12);
        assert!(conditioned_drift(0.3, &prm).is_err());
        assert!(conditioned_drift(0.4, &prm).is_err());
    }

    #[test]
    fn drift_identity_on_grid() {
        let prm = baseline();
        let lo = -5.0 * prm.alpha;
        let hi = prm.epsilon - 1e-3;
        for k in 0..=2000 {
            let x = lo + (hi - lo) * k as f64 / 2000.0;
            let lhs = prm.mu + conditioned_drift(x, &prm).unwrap();
            let z = prm.mu * (prm.epsilon - x);
            let rhs = -prm.mu * z.cosh() / z.sinh();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
            assert_abs_diff_eq!(downcrossing_drift(x, &prm), rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn classic_examples() {
        let prm = baseline();
        assert_abs_diff_eq!(classic_strategy(&prm), 3.5556, epsilon = 1e-3);
        let flat =
            derive_params(MarketInputs::from_log_levels(0.1, 0.15, 0.1, 1.0, 1.0, 0.3)).unwrap();
        assert_eq!(classic_strategy(&flat), 0.0);
        let wide =
            derive_params(MarketInputs::from_log_levels(0.2, 0.3, 0.02, 1.0, 1.0, 0.3)).unwrap();
        let narrow = derive_params(MarketInputs::from_log_levels(
            0.2, 0.15, 0.02, 1.0, 1.0, 0.3,
        ))
        .unwrap();
        assert_abs_diff_eq!(
            classic_strategy(&narrow),
            4.0 * classic_strategy(&wide),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fixed_strategy_examples() {
        let prm = baseline();
        let classic = classic_strategy(&prm);
        let up = PhaseState::new(1, Phase::Up, -0.5);
        assert_eq!(optimal_strategy_fixed(3, &up, &prm).unwrap(), classic);
        let down = PhaseState::initial();
        let pi = optimal_strategy_fixed(3, &down, &prm).unwrap();
        // 3.5556 + (-3.9599) / 0.15
        assert_abs_diff_eq!(pi, -22.844, epsilon = 1e-2);
        assert_eq!(project_unit(pi), 0.0);
        assert_eq!(optimal_strategy_fixed(0, &down, &prm).unwrap(), classic);
        assert_eq!(
            optimal_strategy_fixed(1, &PhaseState::new(1, Phase::Down, 0.1), &prm).unwrap(),
            classic
        );
    }

    #[test]
    fn projection() {
        assert_eq!(project_unit(-22.84), 0.0);
        assert_eq!(project_unit(3.5556), 1.0);
        assert_eq!(project_unit(0.5), 0.5);
    }

    #[test]
    fn geometric_up_phase_closed_form() {
        let prm = baseline();
        let p = prm.p;
        for &q in &[0.0, 0.3, 0.5, 0.9] {
            let law = XiLaw::geometric(q).unwrap();
            for i0 in 0..6 {
                let st = PhaseState::new(i0, Phase::Up, -0.5);
                let w = mixture_weight(&law, &st, &prm).unwrap();
                let closed = 1.0 - q.powi(i0 as i32 + 1)
                    + (1.0 - q) * p * q.powi(i0 as i32 + 1) / (1.0 - p * q);
                assert_abs_diff_eq!(w.value, closed, epsilon = 1e-12);
                assert_eq!(w.down_mass, 0.0);
            }
        }
    }

    #[test]
    fn mixture_matches_direct_martingale_sums() {
        let prm = baseline();
        let laws = vec![
            XiLaw::Fixed(3),
            XiLaw::geometric(0.5).unwrap(),
            XiLaw::geometric(0.95).unwrap(),
            paper_law(),
            XiLaw::geometric_tail(vec![0.05, 0.1, 0.2, 0.2, 0.1]).unwrap(),
        ];
        for law in &laws {
            for st in state_grid(&prm) {
                let w = mixture_weight(law, &st, &prm).unwrap();
                let mut value = 0.0;
                let mut down = 0.0;
                for n in 0..3000 {
                    let a = law.weight(n);
                    if a == 0.0 {
                        continue;
                    }
                    let m = martingale_value(n, &st, &prm).unwrap();
                    value += a * m;
                    if st.phase == Phase::Down && n > st.i0 {
                        down += a * m;
                    }
                }
                assert_abs_diff_eq!(w.value, value, epsilon = 1e-10);
                assert_abs_diff_eq!(w.down_mass, down, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn finite_support_beyond_n_is_classic() {
        let prm = baseline();
        let law = paper_law();
        let st = PhaseState::new(7, Phase::Down, -0.2);
        let w = mixture_weight(&law, &st, &prm).unwrap();
        assert_abs_diff_eq!(w.value, 1.0, epsilon = 1e-12);
        assert_eq!(w.down_mass, 0.0);
        assert_eq!(
            optimal_strategy_random(&law, &st, &prm).unwrap(),
            classic_strategy(&prm)
        );
    }

    #[test]
    fn random_law_strategy_structure() {
        let prm = baseline();
        let classic = classic_strategy(&prm);
        let law = paper_law();
        for st in state_grid(&prm) {
            let pi = optimal_strategy_random(&law, &st, &prm).unwrap();
            let w = mixture_weight(&law, &st, &prm).unwrap();
            if st.phase == Phase::Down && w.down_mass > 0.0 {
                assert!(pi < classic);
            } else {
                assert_eq!(pi, classic);
            }
        }
    }

    #[test]
    fn fixed_law_matches_fixed_strategy() {
        let prm = baseline();
        for n in 0..6 {
            for st in state_grid(&prm) {
                let a = optimal_strategy_random(&XiLaw::Fixed(n), &st, &prm).unwrap();
                let b = optimal_strategy_fixed(n, &st, &prm).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn geometric_strategy_closed_form() {
        let prm = baseline();
        let (q, p) = (0.5, prm.p);
        let law = XiLaw::geometric(q).unwrap();
        let s_eps = prm.scale(prm.epsilon);
        let s_a = prm.scale(-prm.alpha);
        for i0 in 0..5 {
            for k in 0..20 {
                let x = -prm.alpha + 1.2 * k as f64 / 20.0;
                let st = PhaseState::new(i0, Phase::Down, x);
                let s = prm.scale(x);
                let tail = (1.0 - q) * q.powi(i0 as i32 + 1) / (1.0 - p * q);
                let num = 2.0 * prm.mu * s / (s_eps - s_a) * tail;
                let den = prm.inputs.sigma
                    * (1.0 - q.powi(i0 as i32 + 1) + (s_eps - s) / (s_eps - s_a) * tail);
                let closed = classic_strategy(&prm) + num / den;
                assert_abs_diff_eq!(
                    optimal_strategy_random(&law, &st, &prm).unwrap(),
                    closed,
                    epsilon = 1e-10
                );
            }
        }
        // frozen value at i0 = 0, x = 0
        let pi = optimal_strategy_random(&law, &PhaseState::initial(), &prm).unwrap();
        assert_abs_diff_eq!(pi, 2.017_200_749, epsilon = 1e-8);
    }

    #[test]
    fn strategy_enum_dispatch() {
        let prm = baseline();
        let st = PhaseState::initial();
        assert_eq!(Strategy::Classic.projected(&st, &prm).unwrap(), 1.0);
        assert_eq!(Strategy::FixedCount(2).projected(&st, &prm).unwrap(), 0.0);
        assert_eq!(
            Strategy::Mixture(paper_law()).projected(&st, &prm).unwrap(),
            0.0
        );
    }
}
