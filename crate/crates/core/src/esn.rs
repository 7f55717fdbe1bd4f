//! State-feedback interconnected echo-state networks.
//!
//! Each subsystem evolves `x(k+1) = tanh(A x + A_fb v + B w)` with the
//! cross wiring `v1 = x2, v2 = x1` and a shared scalar drive `w`.
//! Because tanh is 1-Lipschitz, `sigma_max(A) < 1` makes each reservoir
//! a contraction with input gain `sigma_max(A_fb) / (1 - sigma_max(A))`
//! toward the loop partner, and the interconnection is certified by
//!
//! ```text
//! sigma_max(A_fb1)/(1 - sigma_max(A1)) *
//! sigma_max(A_fb2)/(1 - sigma_max(A2)) < 1/(1+lambda)^2
//! ```
//!
//! Reservoir matrices are sampled entrywise from U[-1, 1] and rescaled
//! by a scalar to hit their target largest singular value exactly
//! (singular values are degree-1 homogeneous); the drive vector `B` is
//! left as sampled.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sigma_max;
use crate::systems::{FeedbackPair, LoopMode, SystemDef};

/// One tanh reservoir: `x(k+1) = tanh(A x + A_fb v + B w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnSubsystem {
    pub a: DMatrix<f64>,
    pub a_fb: DMatrix<f64>,
    pub b: DVector<f64>,
    sigma_a: f64,
    sigma_fb: f64,
}

impl EsnSubsystem {
    pub fn new(a: DMatrix<f64>, a_fb: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { context: "ESN A", expected: n, actual: a.ncols() });
        }
        if a_fb.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "ESN A_fb rows",
                expected: n,
                actual: a_fb.nrows(),
            });
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch { context: "ESN B", expected: n, actual: b.len() });
        }
        let sigma_a = sigma_max(&a);
        if sigma_a >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "reservoir needs sigma_max(A) < 1 for convergence, got {sigma_a}"
            )));
        }
        let sigma_fb = sigma_max(&a_fb);
        Ok(EsnSubsystem { a, a_fb, b, sigma_a, sigma_fb })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Cached largest singular value of the reservoir matrix.
    pub fn sigma_a(&self) -> f64 {
        self.sigma_a
    }

    /// Cached largest singular value of the feedback-input matrix.
    pub fn sigma_fb(&self) -> f64 {
        self.sigma_fb
    }

    /// Contraction gain from the loop input: `sigma_fb / (1 - sigma_a)`.
    pub fn loop_gain(&self) -> f64 {
        self.sigma_fb / (1.0 - self.sigma_a)
    }

    pub fn step(&self, x: &DVector<f64>, v: &DVector<f64>, w: f64) -> DVector<f64> {
        (&self.a * x + &self.a_fb * v + &self.b * w).map(f64::tanh)
    }
}

/// Two cross-wired reservoirs (`v1 = x2, v2 = x1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EsnPair {
    pub sub1: EsnSubsystem,
    pub sub2: EsnSubsystem,
}

impl EsnPair {
    pub fn new(sub1: EsnSubsystem, sub2: EsnSubsystem) -> Result<Self> {
        if sub1.a_fb.ncols() != sub2.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "ESN wiring v1 = x2",
                expected: sub2.state_dim(),
                actual: sub1.a_fb.ncols(),
            });
        }
        if sub2.a_fb.ncols() != sub1.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "ESN wiring v2 = x1",
                expected: sub1.state_dim(),
                actual: sub2.a_fb.ncols(),
            });
        }
        Ok(EsnPair { sub1, sub2 })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(EsnPairRecord::from(self)).expect("ESN pair serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let rec: EsnPairRecord = serde_json::from_value(value.clone())?;
        rec.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct EsnSubsystemRecord {
    n: usize,
    loop_dim: usize,
    /// Row-major entries.
    a: Vec<f64>,
    a_fb: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EsnPairRecord {
    sub1: EsnSubsystemRecord,
    sub2: EsnSubsystemRecord,
}

impl From<&EsnPair> for EsnPairRecord {
    fn from(pair: &EsnPair) -> Self {
        let enc = |s: &EsnSubsystem| EsnSubsystemRecord {
            n: s.state_dim(),
            loop_dim: s.a_fb.ncols(),
            a: s.a.transpose().as_slice().to_vec(),
            a_fb: s.a_fb.transpose().as_slice().to_vec(),
            b: s.b.as_slice().to_vec(),
        };
        EsnPairRecord { sub1: enc(&pair.sub1), sub2: enc(&pair.sub2) }
    }
}

impl TryFrom<EsnPairRecord> for EsnPair {
    type Error = Error;

    fn try_from(rec: EsnPairRecord) -> Result<Self> {
        let dec = |r: &EsnSubsystemRecord| -> Result<EsnSubsystem> {
            EsnSubsystem::new(
                DMatrix::from_row_slice(r.n, r.n, &r.a),
                DMatrix::from_row_slice(r.n, r.loop_dim, &r.a_fb),
                DVector::from_column_slice(&r.b),
            )
        };
        EsnPair::new(dec(&rec.sub1)?, dec(&rec.sub2)?)
    }
}

/// Rescales a matrix by a scalar so its largest singular value equals
/// `target` exactly (up to one floating-point division).
pub fn rescale_to_sigma(m: &DMatrix<f64>, target: f64) -> DMatrix<f64> {
    m * (target / sigma_max(m))
}

fn sample_matrix(rng: &mut dyn RngCore, rows: usize, cols: usize) -> DMatrix<f64> {
    // A zero draw has probability zero but would break rescaling.
    loop {
        let m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..=1.0));
        if m.amax() > 0.0 {
            return m;
        }
    }
}

/// Samples a reservoir pair with entries from U[-1, 1]: `A1`, `A2` are
/// rescaled to `sigma_a`, `A_fb2` to `sigma_fb2`, and `A_fb1` is left
/// raw for [`scale_feedback_for_small_gain`]. Deterministic per seed.
pub fn generate_esn(n1: usize, n2: usize, sigma_a: f64, sigma_fb2: f64, rng_seed: u64) -> Result<EsnPair> {
    if !(sigma_a > 0.0 && sigma_a < 1.0) {
        return Err(Error::InvalidParameter(format!("sigma_a must lie in (0,1), got {sigma_a}")));
    }
    if !(sigma_fb2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_fb2 must be positive, got {sigma_fb2}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let a1 = rescale_to_sigma(&sample_matrix(&mut rng, n1, n1), sigma_a);
    let a2 = rescale_to_sigma(&sample_matrix(&mut rng, n2, n2), sigma_a);
    let a_fb1 = sample_matrix(&mut rng, n1, n2);
    let a_fb2 = rescale_to_sigma(&sample_matrix(&mut rng, n2, n1), sigma_fb2);
    let b1 = DVector::from_fn(n1, |_, _| rng.gen_range(-1.0..=1.0));
    let b2 = DVector::from_fn(n2, |_, _| rng.gen_range(-1.0..=1.0));
    EsnPair::new(EsnSubsystem::new(a1, a_fb1, b1)?, EsnSubsystem::new(a2, a_fb2, b2)?)
}

/// Both sides of the interconnection certificate and its verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsnMargin {
    /// Product of the two loop gains.
    pub lhs: f64,
    /// `1/(1+lambda)^2`.
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates the small-gain certificate
/// `loop_gain(sub1) * loop_gain(sub2) < 1/(1+lambda)^2`.
pub fn esn_small_gain_margin(pair: &EsnPair, lam: f64) -> EsnMargin {
    let lhs = pair.sub1.loop_gain() * pair.sub2.loop_gain();
    let rhs = 1.0 / ((1.0 + lam) * (1.0 + lam));
    EsnMargin { lhs, rhs, holds: lhs < rhs }
}

/// Rescales `A_fb1` so the certificate holds with slack:
/// afterwards `lhs = rhs * (1 - safety_margin)`.
pub fn scale_feedback_for_small_gain(pair: &EsnPair, lam: f64, safety_margin: f64) -> Result<EsnPair> {
    if !(0.0..1.0).contains(&safety_margin) {
        return Err(Error::InvalidParameter(format!(
            "safety margin must lie in [0,1), got {safety_margin}"
        )));
    }
    let rhs = 1.0 / ((1.0 + lam) * (1.0 + lam));
    let target_lhs = rhs * (1.0 - safety_margin);
    let target_sigma_fb1 = target_lhs * (1.0 - pair.sub1.sigma_a()) / pair.sub2.loop_gain();
    let a_fb1 = rescale_to_sigma(&pair.sub1.a_fb, target_sigma_fb1);
    let sub1 = EsnSubsystem::new(pair.sub1.a.clone(), a_fb1, pair.sub1.b.clone())?;
    EsnPair::new(sub1, pair.sub2.clone())
}

/// Wraps the pair as a [`FeedbackPair`] with outputs equal to states
/// (strict-causal loop) and the shared scalar drive as external input.
/// Random initial states are sampled from U(-1, 1)^n, the reservoir's
/// invariant box.
pub fn build_esn_closed_loop(pair: &EsnPair) -> FeedbackPair {
    let mk = |sub: EsnSubsystem, loop_dim: usize| {
        let n = sub.state_dim();
        SystemDef::new(
            n,
            loop_dim,
            1,
            move |_k, x, v, u| sub.step(x, v, u[0]),
            |_k, x, _u| x.clone(),
        )
    };
    let s1 = mk(pair.sub1.clone(), pair.sub2.state_dim());
    let s2 = mk(pair.sub2.clone(), pair.sub1.state_dim());
    FeedbackPair::new(s1, s2, LoopMode::StrictCausal)
        .expect("ESN pair dimensions were validated at construction")
}
