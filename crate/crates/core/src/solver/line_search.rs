//! Strong-Wolfe line search (bracketing phase followed by zoom with cubic
//! interpolation).

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    pub max_step: f64,
}

impl Default for WolfeParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.4,
            max_evals: 60,
            max_step: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub step: f64,
    pub value: f64,
    pub slope: f64,
    pub evals: usize,
    /// `false` when only sufficient decrease (not curvature) could be met.
    pub strong_wolfe: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineSearchFailure {
    /// Every trial point produced a non-finite value or slope.
    NonFinite,
    /// No trial point decreased the objective.
    NoDecrease,
    /// Search direction is not a descent direction.
    NotDescent,
}

#[derive(Clone, Copy)]
struct Trial {
    step: f64,
    value: f64,
    slope: f64,
}

fn finite(t: &Trial) -> bool {
    t.value.is_finite() && t.slope.is_finite()
}

/// Minimizer of the cubic interpolating two trials, safeguarded into the
/// interior of the bracket.
fn interpolate(lo: Trial, hi: Trial) -> f64 {
    let (a, b) = (lo.step, hi.step);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (a + b);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = disc.sqrt().copysign(b - a);
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 || !denom.is_finite() {
        return mid;
    }
    let x = b - (b - a) * (hi.slope + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if x.is_finite() && x > left + margin && x < right - margin {
        x
    } else {
        mid
    }
}

/// Searches `phi(step)` (returning value and derivative) for a step meeting the
/// strong Wolfe conditions, starting from `initial_step`.
pub fn strong_wolfe<F>(
    mut phi: F,
    value0: f64,
    slope0: f64,
    initial_step: f64,
    params: &WolfeParams,
) -> Result<StepResult, LineSearchFailure>
where
    F: FnMut(f64) -> (f64, f64),
{
    if !(slope0 < 0.0) {
        return Err(LineSearchFailure::NotDescent);
    }
    let origin = Trial {
        step: 0.0,
        value: value0,
        slope: slope0,
    };
    let mut evals = 0usize;
    let mut eval = |step: f64, evals: &mut usize| {
        *evals += 1;
        let (value, slope) = phi(step);
        Trial { step, value, slope }
    };
    let armijo = |t: &Trial| t.value <= value0 + params.c1 * t.step * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -params.c2 * slope0;
    let mut best_armijo: Option<Trial> = None;
    let note = |t: &Trial, best: &mut Option<Trial>| {
        if finite(t) && t.value <= value0 + params.c1 * t.step * slope0 {
            if best.map_or(true, |b| t.value < b.value) {
                *best = Some(*t);
            }
        }
    };

    let mut prev = origin;
    let mut step = if initial_step.is_finite() && initial_step > 0.0 {
        initial_step.min(params.max_step)
    } else {
        1.0
    };
    let mut saw_finite = false;
    let (mut lo, mut hi);
    loop {
        let cur = eval(step, &mut evals);
        note(&cur, &mut best_armijo);
        if !finite(&cur) {
            // Overflow: shrink towards the last finite point.
            if evals >= params.max_evals {
                return fallback(best_armijo, evals, saw_finite);
            }
            step = prev.step + 0.5 * (step - prev.step);
            continue;
        }
        saw_finite = true;
        if !armijo(&cur) || (evals > 1 && cur.value >= prev.value) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(StepResult {
                step: cur.step,
                value: cur.value,
                slope: cur.slope,
                evals,
                strong_wolfe: true,
            });
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals >= params.max_evals || step >= params.max_step {
            return fallback(best_armijo, evals, saw_finite);
        }
        prev = cur;
        step = (2.0 * step).min(params.max_step);
    }

    // Zoom: `lo` satisfies sufficient decrease and has the lower value.
    while evals < params.max_evals {
        let mut step = interpolate(lo, hi);
        if (hi.step - lo.step).abs() < 1e-16 * lo.step.abs().max(1e-300) {
            break;
        }
        let mut cur = eval(step, &mut evals);
        while !finite(&cur) && evals < params.max_evals {
            step = lo.step + 0.5 * (step - lo.step);
            cur = eval(step, &mut evals);
        }
        note(&cur, &mut best_armijo);
        if !finite(&cur) {
            break;
        }
        saw_finite = true;
        if !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(StepResult {
                    step: cur.step,
                    value: cur.value,
                    slope: cur.slope,
                    evals,
                    strong_wolfe: true,
                });
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    fallback(best_armijo, evals, saw_finite)
}

fn fallback(
    best: Option<Trial>,
    evals: usize,
    saw_finite: bool,
) -> Result<StepResult, LineSearchFailure> {
    match best {
        Some(t) if t.step > 0.0 && t.value.is_finite() => Ok(StepResult {
            step: t.step,
            value: t.value,
            slope: t.slope,
            evals,
            strong_wolfe: false,
        }),
        _ if !saw_finite => Err(LineSearchFailure::NonFinite),
        _ => Err(LineSearchFailure::NoDecrease),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_wolfe(r: &StepResult, v0: f64, s0: f64, p: &WolfeParams) {
        assert!(r.value <= v0 + p.c1 * r.step * s0);
        assert!(r.slope.abs() <= -p.c2 * s0 + 1e-15);
    }

    #[test]
    fn quadratic_exact_initial_step() {
        // phi(t) = (t - 2)^2
        let p = WolfeParams::default();
        let r = strong_wolfe(|t| ((t - 2.0).powi(2), 2.0 * (t - 2.0)), 4.0, -4.0, 2.0, &p).unwrap();
        assert_eq!(r.step, 2.0);
        assert_eq!(r.evals, 1);
        check_wolfe(&r, 4.0, -4.0, &p);
    }

    #[test]
    fn expands_then_zooms() {
        let p = WolfeParams::default();
        let f = |t: f64| ((t - 7.3).powi(4) + t, 4.0 * (t - 7.3).powi(3) + 1.0);
        let (v0, s0) = f(0.0);
        let r = strong_wolfe(f, v0, s0, 1e-3, &p).unwrap();
        assert!(r.strong_wolfe);
        check_wolfe(&r, v0, s0, &p);
    }

    #[test]
    fn recovers_from_overflow() {
        let p = WolfeParams::default();
        let f = |t: f64| {
            let v = (50.0 * (t - 1.0)).exp() - t;
            (v, 50.0 * (50.0 * (t - 1.0)).exp() - 1.0)
        };
        let (v0, s0) = f(0.0);
        let r = strong_wolfe(f, v0, s0, 1e6, &p).unwrap();
        assert!(r.value < v0);
    }

    #[test]
    fn rejects_ascent_direction() {
        let p = WolfeParams::default();
        assert_eq!(
            strong_wolfe(|t| (t, 1.0), 0.0, 1.0, 1.0, &p),
            Err(LineSearchFailure::NotDescent)
        );
    }

    #[test]
    fn reports_non_finite() {
        let p = WolfeParams::default();
        assert_eq!(
            strong_wolfe(|_| (f64::NAN, f64::NAN), 0.0, -1.0, 1.0, &p),
            Err(LineSearchFailure::NonFinite)
        );
    }
}
