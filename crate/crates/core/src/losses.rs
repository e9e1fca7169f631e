//! Strictly proper composite losses for density-ratio estimation.
//!
//! Each [`LossFamily`] bundles the pointwise loss `l(y, v)` with its first
//! three derivatives in `v`, the link `Psi: (0,1) -> R`, the ratio map
//! `g(v) = Psi^{-1}(v) / (1 - Psi^{-1}(v))`, and the pointwise generator `phi`
//! of the Bregman functional `F(h) = \int phi(h(x)) dQ(x)`.
//!
//! The generators are the ones induced by the conditional Bayes risk
//! `G(u) = u l(1, Psi(u)) + (1 - u) l(-1, Psi(u))` through
//! `phi(h) = -(1 + h) G(h / (1 + h))`, up to affine terms (which leave the
//! divergence unchanged). With this choice
//! `B_F(beta, g(f)) / 2 = R(f) - R(f*)` holds pointwise for all four families.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::{compensated_sum, trapezoid};

/// SQ scores are clamped to `[-1, 1 - SQ_POLE_MARGIN]` before the ratio map.
pub const SQ_POLE_MARGIN: f64 = 1e-6;

/// Lower clamp for ratio values fed to singular generators.
pub const RATIO_FLOOR: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Total number of SQ score clamps performed by [`ratio_from_score`] in this
/// process.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// Binary label: `Pos` marks numerator (P) draws, `Neg` denominator (Q) draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn from_sign(y: i32) -> Result<Self> {
        match y {
            1 => Ok(Label::Pos),
            -1 => Ok(Label::Neg),
            other => Err(invalid(format!("label must be +1 or -1, got {other}"))),
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Kulsif,
    Lr,
    Exp,
    Sq,
}

impl LossFamily {
    pub const ALL: [LossFamily; 4] = [
        LossFamily::Kulsif,
        LossFamily::Lr,
        LossFamily::Exp,
        LossFamily::Sq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Kulsif => "kulsif",
            LossFamily::Lr => "lr",
            LossFamily::Exp => "exp",
            LossFamily::Sq => "sq",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kulsif" => Ok(LossFamily::Kulsif),
            "lr" => Ok(LossFamily::Lr),
            "exp" => Ok(LossFamily::Exp),
            "sq" => Ok(LossFamily::Sq),
            other => Err(invalid(format!("unknown loss family '{other}'"))),
        }
    }

    /// `l(y, v)`.
    pub fn loss(self, y: Label, v: f64) -> f64 {
        match (self, y) {
            (LossFamily::Kulsif, Label::Pos) => -v,
            (LossFamily::Kulsif, Label::Neg) => 0.5 * v * v,
            (LossFamily::Lr, Label::Pos) => softplus(-v),
            (LossFamily::Lr, Label::Neg) => softplus(v),
            (LossFamily::Exp, Label::Pos) => (-v).exp(),
            (LossFamily::Exp, Label::Neg) => v.exp(),
            (LossFamily::Sq, Label::Pos) => (1.0 - v) * (1.0 - v),
            (LossFamily::Sq, Label::Neg) => (1.0 + v) * (1.0 + v),
        }
    }

    /// `d/dv l(y, v)`.
    pub fn d1(self, y: Label, v: f64) -> f64 {
        match (self, y) {
            (LossFamily::Kulsif, Label::Pos) => -1.0,
            (LossFamily::Kulsif, Label::Neg) => v,
            (LossFamily::Lr, Label::Pos) => -sigmoid(-v),
            (LossFamily::Lr, Label::Neg) => sigmoid(v),
            (LossFamily::Exp, Label::Pos) => -(-v).exp(),
            (LossFamily::Exp, Label::Neg) => v.exp(),
            (LossFamily::Sq, Label::Pos) => -2.0 * (1.0 - v),
            (LossFamily::Sq, Label::Neg) => 2.0 * (1.0 + v),
        }
    }

    /// `d^2/dv^2 l(y, v)`.
    pub fn d2(self, y: Label, v: f64) -> f64 {
        match (self, y) {
            (LossFamily::Kulsif, Label::Pos) => 0.0,
            (LossFamily::Kulsif, Label::Neg) => 1.0,
            (LossFamily::Lr, _) => {
                let s = sigmoid(v);
                s * sigmoid(-v)
            }
            (LossFamily::Exp, Label::Pos) => (-v).exp(),
            (LossFamily::Exp, Label::Neg) => v.exp(),
            (LossFamily::Sq, _) => 2.0,
        }
    }

    /// `d^3/dv^3 l(y, v)`.
    pub fn d3(self, y: Label, v: f64) -> f64 {
        match (self, y) {
            (LossFamily::Kulsif, _) => 0.0,
            (LossFamily::Lr, _) => {
                let s = sigmoid(v);
                let c = sigmoid(-v);
                s * c * (c - s)
            }
            (LossFamily::Exp, Label::Pos) => -(-v).exp(),
            (LossFamily::Exp, Label::Neg) => v.exp(),
            (LossFamily::Sq, _) => 0.0,
        }
    }

    /// Link `Psi(u)` for a class probability `u` in `(0, 1)`.
    pub fn link(self, u: f64) -> f64 {
        match self {
            LossFamily::Kulsif => u / (1.0 - u),
            LossFamily::Lr => (u / (1.0 - u)).ln(),
            LossFamily::Exp => 0.5 * (u / (1.0 - u)).ln(),
            LossFamily::Sq => 2.0 * u - 1.0,
        }
    }

    /// Inverse link `Psi^{-1}(v)`. Lands in `(0, 1)` on the family's valid
    /// score range (KuLSIF: `v >= 0`, SQ: `-1 < v < 1`).
    pub fn inv_link(self, v: f64) -> f64 {
        match self {
            LossFamily::Kulsif => v / (1.0 + v),
            LossFamily::Lr => sigmoid(v),
            LossFamily::Exp => sigmoid(2.0 * v),
            LossFamily::Sq => 0.5 * (1.0 + v),
        }
    }

    /// Ratio map `g(v)` without any clamping.
    pub fn ratio_map(self, v: f64) -> f64 {
        match self {
            LossFamily::Kulsif => v,
            LossFamily::Lr => v.exp(),
            LossFamily::Exp => (2.0 * v).exp(),
            LossFamily::Sq => (1.0 + v) / (1.0 - v),
        }
    }

    /// Generator `phi(h)` with `F(h) = \int phi(h) dQ`.
    pub fn generator(self, h: f64) -> f64 {
        match self {
            LossFamily::Kulsif => 0.5 * (h - 1.0) * (h - 1.0),
            LossFamily::Lr => xlogx(h) - xlogx(1.0 + h),
            LossFamily::Exp => -2.0 * h.sqrt(),
            LossFamily::Sq => 4.0 / (1.0 + h),
        }
    }

    /// `phi'(h)`.
    pub fn generator_deriv(self, h: f64) -> f64 {
        match self {
            LossFamily::Kulsif => h - 1.0,
            LossFamily::Lr => (h / (1.0 + h)).ln(),
            LossFamily::Exp => -1.0 / h.sqrt(),
            LossFamily::Sq => -4.0 / ((1.0 + h) * (1.0 + h)),
        }
    }

    /// Conditional Bayes risk `G(u) = u l(1, Psi(u)) + (1 - u) l(-1, Psi(u))`.
    pub fn bayes_risk(self, u: f64) -> f64 {
        let v = self.link(u);
        u * self.loss(Label::Pos, v) + (1.0 - u) * self.loss(Label::Neg, v)
    }

    fn needs_positive_ratio(self) -> bool {
        matches!(self, LossFamily::Lr | LossFamily::Exp)
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^v)` without overflow.
#[inline]
pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-v).exp().ln_1p()
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Ratio estimate `g(v)` together with a flag telling whether the score was
/// clamped. SQ scores are clamped into `[-1, 1 - SQ_POLE_MARGIN]`; KuLSIF
/// estimates are cut at zero since a density ratio is nonnegative.
pub fn ratio_from_score_checked(family: LossFamily, v: f64) -> (f64, bool) {
    match family {
        LossFamily::Sq => {
            let hi = 1.0 - SQ_POLE_MARGIN;
            let clamped = v.clamp(-1.0, hi);
            (family.ratio_map(clamped), clamped != v)
        }
        LossFamily::Kulsif => (v.max(0.0), false),
        _ => (family.ratio_map(v), false),
    }
}

/// Estimated density-ratio value for a score; clamp events are counted.
pub fn ratio_from_score(family: LossFamily, v: f64) -> f64 {
    let (r, clamped) = ratio_from_score_checked(family, v);
    if clamped {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
    }
    r
}

pub fn loss_eval(family: LossFamily, y: Label, v: f64) -> f64 {
    family.loss(y, v)
}

fn prepare_ratio(family: LossFamily, h: f64, what: &str) -> Result<f64> {
    if !h.is_finite() {
        return Err(invalid(format!("{what} is not finite: {h}")));
    }
    if h < 0.0 {
        return Err(invalid(format!("{what} is negative: {h}")));
    }
    if family.needs_positive_ratio() && h < RATIO_FLOOR {
        return Ok(RATIO_FLOOR);
    }
    Ok(h)
}

/// Pointwise Bregman integrand `phi(b) - phi(bh) - phi'(bh) (b - bh)`.
pub fn bregman_pointwise(family: LossFamily, beta: f64, beta_hat: f64) -> Result<f64> {
    let b = prepare_ratio(family, beta, "true ratio")?;
    let bh = prepare_ratio(family, beta_hat, "estimated ratio")?;
    Ok(family.generator(b) - family.generator(bh) - family.generator_deriv(bh) * (b - bh))
}

/// `B_F(beta, beta_hat)` on a one-dimensional domain by trapezoid quadrature
/// of the pointwise integrand weighted by the denominator density.
pub fn bregman_error<B, H, Q>(
    family: LossFamily,
    beta_true: B,
    beta_hat: H,
    q_density: Q,
    grid: &[f64],
) -> Result<f64>
where
    B: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    if grid.len() < 2 {
        return Err(invalid("quadrature grid needs at least two nodes"));
    }
    let mut ys = Vec::with_capacity(grid.len());
    for &x in grid {
        ys.push(bregman_pointwise(family, beta_true(x), beta_hat(x))? * q_density(x));
    }
    Ok(trapezoid(grid, &ys))
}

/// Monte Carlo `B_F(beta, beta_hat)` over draws from the denominator `Q`.
pub fn bregman_error_sampled(family: LossFamily, beta_true: &[f64], beta_hat: &[f64]) -> Result<f64> {
    if beta_true.len() != beta_hat.len() || beta_true.is_empty() {
        return Err(invalid("ratio vectors must be nonempty and of equal length"));
    }
    let mut terms = Vec::with_capacity(beta_true.len());
    for (&b, &bh) in beta_true.iter().zip(beta_hat) {
        terms.push(bregman_pointwise(family, b, bh)?);
    }
    Ok(compensated_sum(terms) / beta_true.len() as f64)
}

/// Pooled empirical risk: `(sum_p l(+1, s) + sum_q l(-1, s)) / (m + n)`.
pub fn empirical_risk(family: LossFamily, scores_p: &[f64], scores_q: &[f64]) -> Result<f64> {
    let total = scores_p.len() + scores_q.len();
    if total == 0 {
        return Err(invalid("empirical risk of an empty sample"));
    }
    let terms = scores_p
        .iter()
        .map(|&s| family.loss(Label::Pos, s))
        .chain(scores_q.iter().map(|&s| family.loss(Label::Neg, s)));
    Ok(compensated_sum(terms) / total as f64)
}
