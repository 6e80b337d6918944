//! Market parameters, the scale function of the drifted Brownian motion,
//! downcrossing probabilities and the law of the required downcrossing count.
//!
//! Everything is expressed in the log-scale coordinate `x = ln(S/S0) / sigma`,
//! in which the price is a Brownian motion with drift `mu`, the resistance
//! band is `[0, epsilon]` and the support sits at `-alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of user-supplied weights.
pub const MASS_TOL: f64 = 1e-12;
/// Weights within this distance of unit mass are renormalized instead of rejected.
pub const RENORMALIZE_TOL: f64 = 1e-9;
/// Truncation level for the conditioned law of infinite-support counts.
pub const Q_TAIL_CUTOFF: f64 = 1e-12;

/// Raw market description: the asset drift and volatility, the riskless rate
/// and the three price levels `0 < s0_minus < s0 < s0_plus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketInputs {
    pub mu0: f64,
    pub sigma: f64,
    pub r: f64,
    pub s0: f64,
    pub s0_minus: f64,
    pub s0_plus: f64,
}

impl MarketInputs {
    /// Builds inputs from the log-scale depth `alpha` and breakout height
    /// `epsilon` instead of price levels.
    pub fn from_log_levels(
        mu0: f64,
        sigma: f64,
        r: f64,
        s0: f64,
        alpha: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            mu0,
            sigma,
            r,
            s0,
            s0_minus: s0 * (-sigma * alpha).exp(),
            s0_plus: s0 * (sigma * epsilon).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.mu0,
            self.sigma,
            self.r,
            self.s0,
            self.s0_minus,
            self.s0_plus,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInputs("all inputs must be finite".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidInputs(format!(
                "sigma = {} must be > 0",
                self.sigma
            )));
        }
        if !(0.0 < self.s0_minus && self.s0_minus < self.s0 && self.s0 < self.s0_plus) {
            return Err(Error::InvalidInputs(format!(
                "levels must satisfy 0 < s0_minus < s0 < s0_plus, got {} / {} / {}",
                self.s0_minus, self.s0, self.s0_plus
            )));
        }
        Ok(())
    }
}

/// Market inputs together with the derived log-scale quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub inputs: MarketInputs,
    /// Reduced drift `(mu0 - sigma^2/2) / sigma`.
    pub mu: f64,
    /// Depth of a downcrossing, `-ln(s0_minus/s0) / sigma`.
    pub alpha: f64,
    /// Height of the breakout level, `ln(s0_plus/s0) / sigma`.
    pub epsilon: f64,
    /// Probability of completing one more downcrossing before breakout.
    pub p: f64,
}

/// Validates the inputs and derives `mu`, `alpha`, `epsilon` and `p`.
///
/// Only the regime `mu > 0` is supported: there the return from `-alpha` to
/// `0` is certain and the upcrossing factor of the martingale does not depend
/// on the current position.
pub fn derive_params(inputs: MarketInputs) -> Result<ModelParams> {
    inputs.validate()?;
    let sigma = inputs.sigma;
    let mu = (inputs.mu0 - 0.5 * sigma * sigma) / sigma;
    let alpha = -(inputs.s0_minus / inputs.s0).ln() / sigma;
    let epsilon = (inputs.s0_plus / inputs.s0).ln() / sigma;
    if !(mu > 0.0) {
        return Err(Error::DriftRegime { mu });
    }
    let p = crossing_prob_p(mu, alpha, epsilon)?;
    Ok(ModelParams {
        inputs,
        mu,
        alpha,
        epsilon,
        p,
    })
}

/// Scale function `S(x) = exp(-2 mu x)` of the Brownian motion with drift `mu`.
#[inline]
pub fn scale_fn(x: f64, mu: f64) -> f64 {
    (-2.0 * mu * x).exp()
}

/// `(S(eps) - S(0)) / (S(eps) - S(-alpha))`: probability, starting from `0`,
/// of reaching `-alpha` before `epsilon`. For `mu > 0` the return to `0` is
/// certain, so this is also the per-downcrossing success probability.
pub fn crossing_prob_p(mu: f64, alpha: f64, epsilon: f64) -> Result<f64> {
    if !(alpha > 0.0 && epsilon > 0.0) {
        return Err(Error::DegenerateGeometry { alpha, epsilon });
    }
    if !(mu > 0.0) {
        return Err(Error::DriftRegime { mu });
    }
    let s_eps = scale_fn(epsilon, mu);
    Ok((s_eps - 1.0) / (s_eps - scale_fn(-alpha, mu)))
}

/// `P(A_n) = p^n`.
#[inline]
pub fn prob_an(p: f64, n: usize) -> f64 {
    p.powi(n as i32)
}

impl ModelParams {
    #[inline]
    pub fn scale(&self, x: f64) -> f64 {
        scale_fn(x, self.mu)
    }

    /// Probability, from level `x`, of reaching `-alpha` before `epsilon`:
    /// `(S(eps) - S(x)) / (S(eps) - S(-alpha))`.
    #[inline]
    pub fn down_exit_prob(&self, x: f64) -> f64 {
        let s_eps = self.scale(self.epsilon);
        (s_eps - self.scale(x)) / (s_eps - self.scale(-self.alpha))
    }

    /// Merton fraction `(mu0 - r) / sigma^2`.
    #[inline]
    pub fn classic_fraction(&self) -> f64 {
        let i = &self.inputs;
        (i.mu0 - i.r) / (i.sigma * i.sigma)
    }
}

/// Law of the required number of downcrossings `xi` under the physical measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum XiLaw {
    /// Point mass at `n`.
    Fixed(usize),
    /// `P(xi = n) = q^n (1 - q)`, `q` in `[0, 1)`.
    Geometric { q: f64 },
    /// Explicit weights on `0..=N`.
    FiniteSupport { weights: Vec<f64> },
    /// Explicit head weights on `0..=N` with mass `S < 1`, followed by the
    /// geometric tail `q^n (1 - q)` with `q = (1 - S)^(1/(N+1))`.
    GeometricTail { head: Vec<f64> },
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidLaw("empty support".into()));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidLaw(format!(
            "weight {bad} is not a nonnegative number"
        )));
    }
    Ok(())
}

/// Checks that `w` is a probability vector, renormalizing round-off up to
/// [`RENORMALIZE_TOL`].
pub fn normalize_weights(mut w: Vec<f64>) -> Result<Vec<f64>> {
    check_weights(&w)?;
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > RENORMALIZE_TOL {
        return Err(Error::InvalidLaw(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    if (total - 1.0).abs() > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    Ok(w)
}

impl XiLaw {
    pub fn geometric(q: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidLaw(format!(
                "geometric q = {q} must lie in [0, 1)"
            )));
        }
        Ok(Self::Geometric { q })
    }

    pub fn finite(weights: Vec<f64>) -> Result<Self> {
        Ok(Self::FiniteSupport {
            weights: normalize_weights(weights)?,
        })
    }

    pub fn geometric_tail(head: Vec<f64>) -> Result<Self> {
        check_weights(&head)?;
        let s: f64 = head.iter().sum();
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidLaw(format!(
                "head mass {s} must lie in (0, 1)"
            )));
        }
        Ok(Self::GeometricTail { head })
    }

    /// Re-checks the invariants of a law built without the constructors.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Fixed(_) => Ok(()),
            Self::Geometric { q } => Self::geometric(*q).map(|_| ()),
            Self::FiniteSupport { weights } => {
                check_weights(weights)?;
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidLaw(format!(
                        "weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            Self::GeometricTail { head } => Self::geometric_tail(head.clone()).map(|_| ()),
        }
    }

    /// Ratio of the geometric tail, when the law has one.
    pub fn tail_ratio(&self) -> Option<f64> {
        match self {
            Self::Geometric { q } => Some(*q),
            Self::GeometricTail { head } => {
                let s: f64 = head.iter().sum();
                Some((1.0 - s).powf(1.0 / head.len() as f64))
            }
            _ => None,
        }
    }

    /// Largest `n` with positive weight, `None` for unbounded support.
    pub fn support_max(&self) -> Option<usize> {
        match self {
            Self::Fixed(n) => Some(*n),
            Self::FiniteSupport { weights } => Some(weights.len() - 1),
            Self::Geometric { q } if *q == 0.0 => Some(0),
            _ => None,
        }
    }

    /// `P(xi = n)`.
    pub fn weight(&self, n: usize) -> f64 {
        match self {
            Self::Fixed(m) => (n == *m) as u8 as f64,
            Self::Geometric { q } => q.powi(n as i32) * (1.0 - q),
            Self::FiniteSupport { weights } => weights.get(n).copied().unwrap_or(0.0),
            Self::GeometricTail { head } => match head.get(n) {
                Some(w) => *w,
                None => {
                    let q = self.tail_ratio().unwrap_or(0.0);
                    q.powi(n as i32) * (1.0 - q)
                }
            },
        }
    }

    /// `P(xi <= n)`.
    pub fn cumulative(&self, n: usize) -> f64 {
        match self {
            Self::Fixed(m) => (n >= *m) as u8 as f64,
            Self::Geometric { q } => 1.0 - q.powi(n as i32 + 1),
            Self::FiniteSupport { weights } => weights.iter().take(n + 1).sum(),
            Self::GeometricTail { head } => {
                if n < head.len() {
                    head[..=n].iter().sum()
                } else {
                    let q = self.tail_ratio().unwrap_or(0.0);
                    1.0 - q.powi(n as i32 + 1)
                }
            }
        }
    }

    /// `sum_{n > i0} P(xi = n) p^(n - 1 - i0)`, the weight carried by the
    /// scenarios still requiring downcrossings once `i0` are complete.
    /// Closed forms are used for the geometric tails.
    pub fn pending_sum(&self, i0: usize, p: f64) -> f64 {
        match self {
            Self::Fixed(n) => {
                if *n > i0 {
                    p.powi((n - 1 - i0) as i32)
                } else {
                    0.0
                }
            }
            Self::Geometric { q } => (1.0 - q) * q.powi(i0 as i32 + 1) / (1.0 - p * q),
            Self::FiniteSupport { weights } => finite_pending(weights, i0, p),
            Self::GeometricTail { head } => {
                let q = self.tail_ratio().unwrap_or(0.0);
                let big_n = head.len() - 1;
                let m = big_n.max(i0);
                let tail =
                    (1.0 - q) * q.powi(m as i32 + 1) * p.powi(big_n.saturating_sub(i0) as i32)
                        / (1.0 - p * q);
                finite_pending(head, i0, p) + tail
            }
        }
    }

    /// `P(A_xi) = sum_n P(xi = n) p^n`.
    pub fn prob_axi(&self, p: f64) -> f64 {
        match self {
            Self::Fixed(n) => prob_an(p, *n),
            Self::Geometric { q } => (1.0 - q) / (1.0 - p * q),
            Self::FiniteSupport { weights } => weights
                .iter()
                .enumerate()
                .map(|(n, w)| w * prob_an(p, n))
                .sum(),
            Self::GeometricTail { head } => {
                let q = self.tail_ratio().unwrap_or(0.0);
                let big_n = head.len() as i32;
                let head_sum: f64 = head
                    .iter()
                    .enumerate()
                    .map(|(n, w)| w * prob_an(p, n))
                    .sum();
                head_sum + (p * q).powi(big_n) * (1.0 - q) / (1.0 - p * q)
            }
        }
    }

    /// `Q(xi = 0) = P(xi = 0) / P(A_xi)`: chance, under the conditioned
    /// measure, that no downcrossing is forced at all.
    pub fn q_prob_zero(&self, p: f64) -> f64 {
        self.weight(0) / self.prob_axi(p)
    }
}

fn finite_pending(weights: &[f64], i0: usize, p: f64) -> f64 {
    weights
        .iter()
        .enumerate()
        .skip(i0 + 1)
        .map(|(n, w)| w * p.powi((n - 1 - i0) as i32))
        .sum()
}

/// Law of `xi` under the conditioned measure `Q = P(. | A_xi)`:
/// `beta_n = alpha_n p^n / sum_i alpha_i p^i`.
///
/// Unbounded laws are truncated at the first `n` whose remaining `Q`-mass is
/// below [`Q_TAIL_CUTOFF`] and renormalized.
pub fn law_under_q(law: &XiLaw, p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidLaw(format!("p = {p} must lie in (0, 1]")));
    }
    if let XiLaw::FiniteSupport { weights } = law {
        if weights.is_empty() {
            return Err(Error::InvalidLaw("empty support".into()));
        }
    }
    let total = law.prob_axi(p);
    if !(total > 0.0) {
        return Err(Error::InvalidLaw(
            "law puts no mass on achievable counts".into(),
        ));
    }
    let mut beta = Vec::new();
    match law.support_max() {
        Some(n_max) => {
            for n in 0..=n_max {
                beta.push(law.weight(n) * prob_an(p, n) / total);
            }
        }
        None => {
            let mut n = 0usize;
            loop {
                beta.push(law.weight(n) * prob_an(p, n) / total);
                // remaining mass sum_{k>n} alpha_k p^k = p^(n+1) * pending_sum(n)
                let rest = prob_an(p, n + 1) * law.pending_sum(n, p) / total;
                if rest < Q_TAIL_CUTOFF || n > 100_000 {
                    break;
                }
                n += 1;
            }
            let kept: f64 = beta.iter().sum();
            beta.iter_mut().for_each(|b| *b /= kept);
        }
    }
    Ok(beta)
}

/// Inverse of [`law_under_q`] on a finite support:
/// `alpha_n = beta_n / (p^n sum_i beta_i / p^i)`.
pub fn law_from_q(beta: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidLaw(format!("p = {p} must lie in (0, 1]")));
    }
    let beta = normalize_weights(beta.to_vec())?;
    let scaled: Vec<f64> = beta
        .iter()
        .enumerate()
        .map(|(n, b)| b / prob_an(p, n))
        .collect();
    let total: f64 = scaled.iter().sum();
    Ok(scaled.into_iter().map(|v| v / total).collect())
}

/// How a law of `xi` is specified by the user. Finite laws are usually
/// calibrated under the conditioned measure (`beta`), so the physical
/// weights depend on `p` and are resolved per parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Fixed {
        n: usize,
    },
    Geometric {
        q: f64,
    },
    /// Finite support given by its conditioned weights `beta`.
    FiniteQ {
        beta: Vec<f64>,
    },
    /// Finite support given by its physical weights.
    FiniteP {
        weights: Vec<f64>,
    },
    GeometricTail {
        head: Vec<f64>,
    },
}

impl LawSpec {
    /// Physical law for crossing probability `p`.
    pub fn resolve(&self, p: f64) -> Result<XiLaw> {
        match self {
            LawSpec::Fixed { n } => Ok(XiLaw::Fixed(*n)),
            LawSpec::Geometric { q } => XiLaw::geometric(*q),
            LawSpec::FiniteQ { beta } => XiLaw::finite(law_from_q(beta, p)?),
            LawSpec::FiniteP { weights } => XiLaw::finite(weights.clone()),
            LawSpec::GeometricTail { head } => XiLaw::geometric_tail(head.clone()),
        }
    }
}
