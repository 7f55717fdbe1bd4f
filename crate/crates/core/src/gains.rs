//! Comparison-function algebra and small-gain certificate checks.
//!
//! [`GainExpr`] is a closed symbolic representation of class-K gain
//! functions: positive-slope linear maps, power laws, and their
//! compositions, maxima and sums. Linear and power-law gains are
//! class-K-infinity with exact closed-form inverses; everything else is
//! evaluated recursively. [`KLBound`] is the geometric KL family
//! `beta(s, k) = c * s * r^k` used by the empirical convergence
//! verifiers.
//!
//! A loop-gain check `g1 ∘ g2 (s) < s` over a sampled grid is a true
//! certificate only when every gain involved has a global linear slope
//! (then the check collapses to an exact product comparison); otherwise
//! the grid result is reported as supported evidence via
//! [`SmallGainReport::exact`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbolic class-K gain function.
///
/// The JSON form is `{"linear": c}`, `{"power": [c, p]}`,
/// `{"compose": [inner, outer]}`, `{"max": [g1, g2]}`,
/// `{"sum": [g1, g2]}`, `"id"` and `{"id_plus": lam}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainExpr {
    /// `s -> c * s` with `c > 0`.
    Linear(f64),
    /// `s -> c * s^p` with `c > 0`, `p > 0`.
    #[serde(rename = "power")]
    PowerLaw(f64, f64),
    /// `s -> outer(inner(s))`.
    Compose(Box<GainExpr>, Box<GainExpr>),
    /// Pointwise maximum.
    Max(Box<GainExpr>, Box<GainExpr>),
    /// Pointwise sum.
    Sum(Box<GainExpr>, Box<GainExpr>),
    /// `s -> s`.
    #[serde(rename = "id")]
    Identity,
    /// `s -> s + lam(s)`, i.e. `(id + lam)`.
    #[serde(rename = "id_plus")]
    IdentityPlus(Box<GainExpr>),
}

impl GainExpr {
    pub fn linear(c: f64) -> Self {
        GainExpr::Linear(c)
    }

    pub fn power(c: f64, p: f64) -> Self {
        GainExpr::PowerLaw(c, p)
    }

    /// `outer(inner(s))`.
    pub fn compose(inner: GainExpr, outer: GainExpr) -> Self {
        GainExpr::Compose(Box::new(inner), Box::new(outer))
    }

    pub fn max_of(g1: GainExpr, g2: GainExpr) -> Self {
        GainExpr::Max(Box::new(g1), Box::new(g2))
    }

    pub fn sum_of(g1: GainExpr, g2: GainExpr) -> Self {
        GainExpr::Sum(Box::new(g1), Box::new(g2))
    }

    pub fn id_plus(lam: GainExpr) -> Self {
        GainExpr::IdentityPlus(Box::new(lam))
    }

    /// Checks the coefficient invariants of every node. Deserialized
    /// expressions should be validated before use.
    pub fn validate(&self) -> Result<()> {
        match self {
            GainExpr::Linear(c) => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::InvalidGain(format!("linear slope must be positive, got {c}")));
                }
            }
            GainExpr::PowerLaw(c, p) => {
                if !(c.is_finite() && *c > 0.0 && p.is_finite() && *p > 0.0) {
                    return Err(Error::InvalidGain(format!(
                        "power law needs c > 0 and p > 0, got c = {c}, p = {p}"
                    )));
                }
            }
            GainExpr::Compose(a, b) | GainExpr::Max(a, b) | GainExpr::Sum(a, b) => {
                a.validate()?;
                b.validate()?;
            }
            GainExpr::Identity => {}
            GainExpr::IdentityPlus(lam) => lam.validate()?,
        }
        Ok(())
    }

    fn eval_unchecked(&self, s: f64) -> f64 {
        match self {
            GainExpr::Linear(c) => c * s,
            GainExpr::PowerLaw(c, p) => c * s.powf(*p),
            GainExpr::Compose(inner, outer) => outer.eval_unchecked(inner.eval_unchecked(s)),
            GainExpr::Max(a, b) => a.eval_unchecked(s).max(b.eval_unchecked(s)),
            GainExpr::Sum(a, b) => a.eval_unchecked(s) + b.eval_unchecked(s),
            GainExpr::Identity => s,
            GainExpr::IdentityPlus(lam) => s + lam.eval_unchecked(s),
        }
    }

    /// The global linear slope, when the whole expression is a linear
    /// class-K function. Power laws report a slope only for p = 1.
    /// Certificate checks are exact exactly when this returns `Some`.
    pub fn linear_slope(&self) -> Option<f64> {
        match self {
            GainExpr::Linear(c) => Some(*c),
            GainExpr::PowerLaw(c, p) => (*p == 1.0).then_some(*c),
            GainExpr::Compose(inner, outer) => Some(inner.linear_slope()? * outer.linear_slope()?),
            GainExpr::Max(a, b) => Some(a.linear_slope()?.max(b.linear_slope()?)),
            GainExpr::Sum(a, b) => Some(a.linear_slope()? + b.linear_slope()?),
            GainExpr::Identity => Some(1.0),
            GainExpr::IdentityPlus(lam) => Some(1.0 + lam.linear_slope()?),
        }
    }
}

/// Evaluates `g(s)` for `s >= 0`; negative arguments are rejected.
pub fn eval_gain(g: &GainExpr, s: f64) -> Result<f64> {
    if s < 0.0 || !s.is_finite() {
        return Err(Error::NegativeGainArgument(s));
    }
    Ok(g.eval_unchecked(s))
}

/// Exact inverse for the closed-form invertible family
/// (`Linear`, `PowerLaw`, `Identity`).
pub fn invert_gain(g: &GainExpr) -> Result<GainExpr> {
    match g {
        GainExpr::Linear(c) => Ok(GainExpr::Linear(1.0 / c)),
        GainExpr::PowerLaw(c, p) => Ok(GainExpr::PowerLaw(c.powf(-1.0 / p), 1.0 / p)),
        GainExpr::Identity => Ok(GainExpr::Identity),
        other => Err(Error::NonInvertibleGain(format!(
            "{other:?}: only Linear, PowerLaw and Identity invert in closed form; \
             Max/Sum/Compose are excluded rather than inverted numerically"
        ))),
    }
}

/// Default evaluation grid: 64 logarithmically spaced points spanning
/// `[1e-6, 1e6]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-6, 1e6, 64)
}

/// `n` logarithmically spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Outcome of a loop-gain certificate check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallGainReport {
    pub holds: bool,
    /// Worst ratio of the composed gain to the identity: `max g(s)/s`.
    /// For all-linear inputs this is the exact product of slopes.
    pub margin: f64,
    /// True when the check collapsed to exact slope arithmetic.
    pub exact: bool,
}

fn loop_margin(expr: &GainExpr, grid: &[f64]) -> Result<SmallGainReport> {
    if grid.is_empty() || grid.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter(
            "small-gain grid must be nonempty with strictly positive entries".into(),
        ));
    }
    if let Some(slope) = expr.linear_slope() {
        return Ok(SmallGainReport { holds: slope < 1.0, margin: slope, exact: true });
    }
    let mut margin = 0.0f64;
    for &s in grid {
        margin = margin.max(eval_gain(expr, s)? / s);
    }
    Ok(SmallGainReport { holds: margin < 1.0, margin, exact: false })
}

/// Checks the small-gain condition `g1 ∘ g2 (s) < s` on `grid`.
///
/// For two linear gains the check is exact (`c1 * c2 < 1`) and the grid
/// is ignored.
pub fn small_gain_holds(g1: &GainExpr, g2: &GainExpr, grid: &[f64]) -> Result<SmallGainReport> {
    g1.validate()?;
    g2.validate()?;
    // g1 applied to the output of g2.
    let expr = GainExpr::compose(g2.clone(), g1.clone());
    loop_margin(&expr, grid)
}

/// Checks the strengthened condition
/// `(id + lam1) ∘ g1 ∘ (id + lam2) ∘ g2 (s) < s` on `grid`
/// (exact when every input has a global linear slope).
pub fn strengthened_small_gain_holds(
    g1: &GainExpr,
    g2: &GainExpr,
    lam1: &GainExpr,
    lam2: &GainExpr,
    grid: &[f64],
) -> Result<SmallGainReport> {
    for g in [g1, g2, lam1, lam2] {
        g.validate()?;
    }
    let expr = GainExpr::compose(
        GainExpr::compose(
            GainExpr::compose(g2.clone(), GainExpr::id_plus(lam2.clone())),
            g1.clone(),
        ),
        GainExpr::id_plus(lam1.clone()),
    );
    loop_margin(&expr, grid)
}

/// Converts a sum bound into a max bound:
/// returns `max { a + lam(a), b + lam^{-1}(b) } >= a + b`.
pub fn sum_to_max_bound(a: f64, b: f64, lam: &GainExpr) -> Result<f64> {
    if a < 0.0 || b < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sum_to_max_bound needs nonnegative terms, got a = {a}, b = {b}"
        )));
    }
    lam.validate()?;
    let lam_inv = invert_gain(lam)?;
    let left = a + eval_gain(lam, a)?;
    let right = b + eval_gain(&lam_inv, b)?;
    Ok(left.max(right))
}

/// Geometric KL bound `beta(s, k) = c * s * r^k`.
///
/// This family is class-K in `s` and strictly decreasing to zero in `k`
/// whenever `r < 1`; `r >= 1` marks a non-converging fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KLBound {
    /// Amplitude coefficient (nonnegative).
    pub c: f64,
    /// Geometric decay rate; converging iff `r < 1`.
    pub r: f64,
}

impl KLBound {
    pub fn eval(&self, s: f64, k: u32) -> f64 {
        self.c * s * self.r.powi(k as i32)
    }

    pub fn is_converging(&self) -> bool {
        self.r < 1.0
    }
}

/// Sample floor below which entries are treated as converged noise and
/// excluded from the log-linear fit.
const FIT_FLOOR_REL: f64 = 1e-13;
const FIT_FLOOR_ABS: f64 = 1e-290;

/// Fits a [`KLBound`] to difference-norm sequences.
///
/// The rate `r` comes from a pooled log-linear least-squares fit with a
/// shared slope and one intercept per sequence; `c` is then the
/// smallest coefficient making `c * d(0) * r^k` dominate every sample.
/// Each sequence is truncated at the first entry below a small floor
/// relative to its start so the flat numerical-noise tail cannot bias
/// the slope. Sequences that are zero everywhere yield `c = 0, r = 0`.
pub fn fit_kl_bound(diff_sequences: &[Vec<f64>]) -> KLBound {
    // (sequence index, step, ln value) samples that survive the floor.
    let mut samples: Vec<(usize, f64, f64)> = Vec::new();
    let mut any_positive = false;
    for (i, seq) in diff_sequences.iter().enumerate() {
        let s0 = seq.first().copied().unwrap_or(0.0);
        if s0 <= 0.0 {
            continue;
        }
        any_positive = true;
        let floor = (s0 * FIT_FLOOR_REL).max(FIT_FLOOR_ABS);
        for (k, &d) in seq.iter().enumerate() {
            if d < floor {
                break;
            }
            samples.push((i, k as f64, d.ln()));
        }
    }
    if !any_positive {
        return KLBound { c: 0.0, r: 0.0 };
    }

    // Shared slope with per-sequence intercepts: center each sequence's
    // samples and regress the pooled residuals.
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..diff_sequences.len() {
        let group: Vec<&(usize, f64, f64)> = samples.iter().filter(|t| t.0 == i).collect();
        if group.len() < 2 {
            continue;
        }
        let n = group.len() as f64;
        let kbar = group.iter().map(|t| t.1).sum::<f64>() / n;
        let ybar = group.iter().map(|t| t.2).sum::<f64>() / n;
        for t in &group {
            sxx += (t.1 - kbar) * (t.1 - kbar);
            sxy += (t.1 - kbar) * (t.2 - ybar);
        }
    }
    let r = if sxx > 0.0 {
        (sxy / sxx).exp()
    } else {
        // Only single-sample sequences survived the floor: the data
        // collapsed within one step.
        0.0
    };

    let mut c = 0.0f64;
    for seq in diff_sequences {
        let s0 = seq.first().copied().unwrap_or(0.0);
        if s0 <= 0.0 {
            continue;
        }
        let mut rk = 1.0;
        for &d in seq {
            if rk > 0.0 {
                c = c.max(d / (s0 * rk));
            }
            rk *= r;
        }
    }
    KLBound { c, r }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        assert_eq!(eval_gain(&GainExpr::linear(0.5), 2.0).unwrap(), 1.0);
        let trees = [
            GainExpr::linear(0.7),
            GainExpr::power(2.0, 0.5),
            GainExpr::compose(GainExpr::linear(2.0), GainExpr::power(1.0, 2.0)),
            GainExpr::max_of(GainExpr::linear(3.0), GainExpr::Identity),
            GainExpr::sum_of(GainExpr::linear(3.0), GainExpr::power(1.0, 3.0)),
            GainExpr::id_plus(GainExpr::linear(0.1)),
        ];
        for g in &trees {
            assert_eq!(eval_gain(g, 0.0).unwrap(), 0.0, "class-K anchor for {g:?}");
        }
        let comp = GainExpr::compose(GainExpr::linear(2.0), GainExpr::linear(3.0));
        assert_eq!(eval_gain(&comp, 1.0).unwrap(), 6.0);
        assert!(eval_gain(&GainExpr::Identity, -1.0).is_err());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(invert_gain(&GainExpr::linear(2.0)).unwrap(), GainExpr::linear(0.5));
        assert_eq!(invert_gain(&GainExpr::power(1.0, 2.0)).unwrap(), GainExpr::power(1.0, 0.5));
        assert_eq!(invert_gain(&GainExpr::Identity).unwrap(), GainExpr::Identity);
        assert!(invert_gain(&GainExpr::max_of(GainExpr::Identity, GainExpr::Identity)).is_err());
    }

    #[test]
    fn small_gain_examples() {
        let grid = default_grid();
        let r = small_gain_holds(&GainExpr::linear(0.5), &GainExpr::linear(1.5), &grid).unwrap();
        assert!(r.holds && r.exact);
        assert!((r.margin - 0.75).abs() < 1e-15);

        let r = small_gain_holds(&GainExpr::linear(0.8), &GainExpr::linear(1.5), &grid).unwrap();
        assert!(!r.holds);
        assert!((r.margin - 1.2).abs() < 1e-15);

        let r = small_gain_holds(&GainExpr::linear(0.9), &GainExpr::Identity, &grid).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn strengthened_small_gain_reference_constants() {
        let grid = default_grid();
        let g1 = GainExpr::linear(0.3);
        let g2 = GainExpr::linear(3.3);
        let lam = GainExpr::linear(0.003);
        let r = strengthened_small_gain_holds(&g1, &g2, &lam, &lam, &grid).unwrap();
        assert!(r.holds && r.exact);
        assert!((r.margin - 0.99 * 1.003 * 1.003).abs() < 1e-12);

        let lam = GainExpr::linear(0.01);
        let r = strengthened_small_gain_holds(&g1, &g2, &lam, &lam, &grid).unwrap();
        assert!(!r.holds);
        assert!((r.margin - 0.99 * 1.01 * 1.01).abs() < 1e-12);

        let g = GainExpr::linear(0.1);
        let lam = GainExpr::linear(1.0);
        let r = strengthened_small_gain_holds(&g, &g, &lam, &lam, &grid).unwrap();
        assert!(r.holds);
        assert!((r.margin - 0.04).abs() < 1e-15);
    }

    #[test]
    fn sum_to_max_examples() {
        let lam = GainExpr::linear(1.0);
        assert_eq!(sum_to_max_bound(1.0, 4.0, &lam).unwrap(), 8.0);
        assert_eq!(sum_to_max_bound(0.0, 0.0, &lam).unwrap(), 0.0);
        let lam2 = GainExpr::linear(2.0);
        assert_eq!(sum_to_max_bound(3.0, 1.0, &lam2).unwrap(), 9.0);
        assert!(sum_to_max_bound(1.0, 1.0, &GainExpr::sum_of(GainExpr::Identity, GainExpr::Identity)).is_err());
    }

    #[test]
    fn fit_kl_exact_geometric() {
        let b = fit_kl_bound(&[vec![1.0, 0.5, 0.25, 0.125]]);
        assert!((b.r - 0.5).abs() < 1e-9, "r = {}", b.r);
        assert!((b.c - 1.0).abs() < 1e-9, "c = {}", b.c);
        assert!(b.is_converging());
    }

    #[test]
    fn fit_kl_constant_sequence_not_converging() {
        let b = fit_kl_bound(&[vec![1.0, 1.0, 1.0]]);
        assert!((b.r - 1.0).abs() < 1e-12);
        assert!(!b.is_converging());
    }

    #[test]
    fn fit_kl_all_zero() {
        let b = fit_kl_bound(&[vec![0.0, 0.0, 0.0]]);
        assert_eq!(b.c, 0.0);
        assert_eq!(b.r, 0.0);
    }

    #[test]
    fn fit_kl_dominates_samples() {
        // c is chosen so the bound sits above every sample.
        let seqs = vec![vec![2.0, 1.4, 0.9, 0.7, 0.33], vec![1.0, 0.8, 0.35, 0.3]];
        let b = fit_kl_bound(&seqs);
        for seq in &seqs {
            let s0 = seq[0];
            for (k, &d) in seq.iter().enumerate() {
                assert!(b.eval(s0, k as u32) >= d - 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip_matches_wire_format() {
        let g = GainExpr::max_of(
            GainExpr::compose(GainExpr::linear(2.0), GainExpr::power(1.0, 0.5)),
            GainExpr::id_plus(GainExpr::linear(0.003)),
        );
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(
            s,
            r#"{"max":[{"compose":[{"linear":2.0},{"power":[1.0,0.5]}]},{"id_plus":{"linear":0.003}}]}"#
        );
        let back: GainExpr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert_eq!(serde_json::to_string(&GainExpr::Identity).unwrap(), r#""id""#);
    }
}
