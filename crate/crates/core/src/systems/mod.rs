//! Discrete-time state machines, output-feedback interconnection and
//! empirical convergence verification.
//!
//! A [`SystemDef`] is a pair of maps `x(k+1) = f(k, x, v, u)` and
//! `y = h(k, x, v, u)` where `v` is the loop input and `u` the external
//! input. Two systems wired `v1 = y2, v2 = y1` form a [`FeedbackPair`].
//! When neither output reads `v` (no direct feedthrough) the per-step
//! output equations are trivially well-posed; with feedthrough the pair
//! can be stepped in Picard mode, which solves the output algebraic
//! equations by fixed-point iteration.
//!
//! Reference solutions defined on all of Z are unobservable in finite
//! computation; [`estimate_reference_output`] approximates them by
//! washing out the initial condition over a finite prefix, and
//! [`verify_convergence`] fits a geometric KL bound to pairwise output
//! differences.

pub mod signal;

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::{fit_kl_bound, KLBound};
use crate::parallel;

type StateMap = Arc<dyn Fn(i64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type InitSampler = Arc<dyn Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync>;

/// One discrete-time subsystem of an interconnection.
#[derive(Clone)]
pub struct SystemDef {
    pub state_dim: usize,
    /// Dimension of the loop input `v`.
    pub loop_input_dim: usize,
    /// Dimension of the external input `u`.
    pub external_input_dim: usize,
    /// Whether the output map reads `v`. When false the output must be
    /// independent of `v` (strict causality in the loop variable) and
    /// callers may pass zeros for it.
    pub direct_feedthrough: bool,
    update: StateMap,
    output: StateMap,
    init_sampler: InitSampler,
}

impl std::fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemDef")
            .field("state_dim", &self.state_dim)
            .field("loop_input_dim", &self.loop_input_dim)
            .field("external_input_dim", &self.external_input_dim)
            .field("direct_feedthrough", &self.direct_feedthrough)
            .finish()
    }
}

impl SystemDef {
    /// A system whose output does not read the loop input.
    pub fn new<F, H>(
        state_dim: usize,
        loop_input_dim: usize,
        external_input_dim: usize,
        update: F,
        output: H,
    ) -> Self
    where
        F: Fn(i64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(i64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        SystemDef {
            state_dim,
            loop_input_dim,
            external_input_dim,
            direct_feedthrough: false,
            update: Arc::new(update),
            output: Arc::new(move |k, x, _v, u| output(k, x, u)),
            init_sampler: Arc::new(move |rng: &mut dyn RngCore| {
                DVector::from_fn(state_dim, |_, _| rng.gen_range(-1.0..1.0))
            }),
        }
    }

    /// A system whose output reads the loop input (direct feedthrough).
    pub fn with_feedthrough<F, H>(
        state_dim: usize,
        loop_input_dim: usize,
        external_input_dim: usize,
        update: F,
        output: H,
    ) -> Self
    where
        F: Fn(i64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(i64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        SystemDef {
            state_dim,
            loop_input_dim,
            external_input_dim,
            direct_feedthrough: true,
            update: Arc::new(update),
            output: Arc::new(output),
            init_sampler: Arc::new(move |rng: &mut dyn RngCore| {
                DVector::from_fn(state_dim, |_, _| rng.gen_range(-1.0..1.0))
            }),
        }
    }

    /// Replaces the distribution used when trials need random initial
    /// states. Systems whose states live on a manifold (e.g. flattened
    /// density operators) must install a sampler that respects it.
    pub fn with_init_sampler<S>(mut self, sampler: S) -> Self
    where
        S: Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync + 'static,
    {
        self.init_sampler = Arc::new(sampler);
        self
    }

    pub fn sample_init(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        (self.init_sampler)(rng)
    }

    pub fn output_at(&self, k: i64, x: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.output)(k, x, v, u)
    }

    pub fn update_at(&self, k: i64, x: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.update)(k, x, v, u)
    }
}

/// How the per-step output algebraic equations of a pair are solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoopMode {
    /// No algebraic loop: outputs are computed from states alone and
    /// fed across within the same step.
    StrictCausal,
    /// Jacobi fixed-point iteration on the two output equations.
    Picard { max_iters: usize, tol: f64 },
}

impl Default for LoopMode {
    fn default() -> Self {
        LoopMode::StrictCausal
    }
}

/// Default Picard settings for feedthrough interconnections.
pub const PICARD_DEFAULT: LoopMode = LoopMode::Picard { max_iters: 100, tol: 1e-12 };

/// Output-feedback interconnection of two systems (`v1 = y2, v2 = y1`).
#[derive(Debug, Clone)]
pub struct FeedbackPair {
    pub sys1: SystemDef,
    pub sys2: SystemDef,
    pub mode: LoopMode,
}

impl FeedbackPair {
    pub fn new(sys1: SystemDef, sys2: SystemDef, mode: LoopMode) -> Result<Self> {
        let y2_dim = sys2_output_dim(&sys2);
        if sys1.loop_input_dim != y2_dim {
            return Err(Error::DimensionMismatch {
                context: "feedback wiring v1 = y2",
                expected: sys1.loop_input_dim,
                actual: y2_dim,
            });
        }
        let y1_dim = sys2_output_dim(&sys1);
        if sys2.loop_input_dim != y1_dim {
            return Err(Error::DimensionMismatch {
                context: "feedback wiring v2 = y1",
                expected: sys2.loop_input_dim,
                actual: y1_dim,
            });
        }
        if matches!(mode, LoopMode::StrictCausal) && sys1.direct_feedthrough && sys2.direct_feedthrough {
            return Err(Error::InvalidParameter(
                "strict-causal mode needs at least one feedthrough-free output; use Picard".into(),
            ));
        }
        Ok(FeedbackPair { sys1, sys2, mode })
    }

    pub fn joint_state_dim(&self) -> usize {
        self.sys1.state_dim + self.sys2.state_dim
    }

    /// Samples a joint initial state from the two subsystem samplers.
    pub fn sample_init(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let x1 = self.sys1.sample_init(rng);
        let x2 = self.sys2.sample_init(rng);
        concat(&x1, &x2)
    }
}

// Output dims are probed once at wiring time by evaluating the map at
// the origin; the maps are total by assumption.
fn sys2_output_dim(sys: &SystemDef) -> usize {
    let x = DVector::zeros(sys.state_dim);
    let v = DVector::zeros(sys.loop_input_dim);
    let u = DVector::zeros(sys.external_input_dim);
    sys.output_at(0, &x, &v, &u).len()
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Time-indexed state/output/input records of one rollout. All three
/// arrays share the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: i64,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The segment starting `offset` steps in.
    pub fn tail(&self, offset: usize) -> Trajectory {
        Trajectory {
            t0: self.t0 + offset as i64,
            states: self.states[offset..].to_vec(),
            outputs: self.outputs[offset..].to_vec(),
            inputs: self.inputs[offset..].to_vec(),
        }
    }

    /// Writes `k, x.., y.., u..` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        let dims = [
            ("x", self.states.first().map_or(0, |v| v.len())),
            ("y", self.outputs.first().map_or(0, |v| v.len())),
            ("u", self.inputs.first().map_or(0, |v| v.len())),
        ];
        for (name, d) in dims {
            for i in 0..d {
                header.push(format!("{name}{i}"));
            }
        }
        wtr.write_record(&header)?;
        for (i, ((x, y), u)) in self.states.iter().zip(&self.outputs).zip(&self.inputs).enumerate() {
            let mut row = vec![(self.t0 + i as i64).to_string()];
            row.extend(x.iter().chain(y.iter()).chain(u.iter()).map(|v| format!("{v:.17e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = |vs: &[DVector<f64>]| -> Vec<Vec<f64>> { vs.iter().map(|v| v.iter().copied().collect()).collect() };
        serde_json::json!({
            "t0": self.t0,
            "states": rows(&self.states),
            "outputs": rows(&self.outputs),
            "inputs": rows(&self.inputs),
        })
    }
}

/// Rolls a single system forward under given loop and external input
/// sequences.
pub fn simulate(
    sys: &SystemDef,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
    x0: &DVector<f64>,
    t0: i64,
    horizon: usize,
) -> Result<Trajectory> {
    if u.len() < horizon || v.len() < horizon {
        return Err(Error::InvalidParameter(format!(
            "input sequences shorter than horizon {horizon} (u: {}, v: {})",
            u.len(),
            v.len()
        )));
    }
    if x0.len() != sys.state_dim {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: sys.state_dim,
            actual: x0.len(),
        });
    }
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(horizon);
    let mut outputs = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let k = t0 + i as i64;
        let y = sys.output_at(k, &x, &v[i], &u[i]);
        if !all_finite(&x) || !all_finite(&y) {
            return Err(Error::NonFiniteState { step: k });
        }
        states.push(x.clone());
        outputs.push(y);
        x = sys.update_at(k, &x, &v[i], &u[i]);
    }
    Ok(Trajectory { t0, states, outputs, inputs: u[..horizon].to_vec() })
}

/// Solves the per-step output equations of a pair.
fn closed_loop_outputs(
    pair: &FeedbackPair,
    k: i64,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    match pair.mode {
        LoopMode::StrictCausal => {
            // Evaluate the feedthrough-free side first and feed it
            // across; feedthrough-free outputs ignore v entirely, so
            // when neither side reads v the order is immaterial.
            if pair.sys2.direct_feedthrough {
                let v1_zero: DVector<f64> = DVector::zeros(pair.sys1.loop_input_dim);
                let y1 = pair.sys1.output_at(k, x1, &v1_zero, u1);
                let y2 = pair.sys2.output_at(k, x2, &y1, u2);
                Ok((y1, y2))
            } else {
                let v2_zero: DVector<f64> = DVector::zeros(pair.sys2.loop_input_dim);
                let y2 = pair.sys2.output_at(k, x2, &v2_zero, u2);
                let y1 = pair.sys1.output_at(k, x1, &y2, u1);
                Ok((y1, y2))
            }
        }
        LoopMode::Picard { max_iters, tol } => {
            let mut y1 = pair.sys1.output_at(k, x1, &DVector::zeros(pair.sys1.loop_input_dim), u1);
            let mut y2 = pair.sys2.output_at(k, x2, &DVector::zeros(pair.sys2.loop_input_dim), u2);
            let mut residual = f64::INFINITY;
            for _ in 0..max_iters {
                let y1_next = pair.sys1.output_at(k, x1, &y2, u1);
                let y2_next = pair.sys2.output_at(k, x2, &y1, u2);
                residual = (&y1_next - &y1).norm().max((&y2_next - &y2).norm());
                y1 = y1_next;
                y2 = y2_next;
                if residual <= tol {
                    return Ok((y1, y2));
                }
            }
            Err(Error::PicardDiverged { iters: max_iters, residual })
        }
    }
}

/// Rolls the interconnection forward. The trajectory carries the joint
/// state `(x1, x2)`, joint output `(y1, y2)` and joint input `(u1, u2)`.
pub fn simulate_closed_loop(
    pair: &FeedbackPair,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
    x0: &DVector<f64>,
    t0: i64,
    horizon: usize,
) -> Result<Trajectory> {
    if u1.len() < horizon || u2.len() < horizon {
        return Err(Error::InvalidParameter(format!(
            "input sequences shorter than horizon {horizon} (u1: {}, u2: {})",
            u1.len(),
            u2.len()
        )));
    }
    let (n1, n2) = (pair.sys1.state_dim, pair.sys2.state_dim);
    if x0.len() != n1 + n2 {
        return Err(Error::DimensionMismatch {
            context: "joint initial state",
            expected: n1 + n2,
            actual: x0.len(),
        });
    }
    let mut x1 = DVector::from(x0.rows(0, n1).into_owned());
    let mut x2 = DVector::from(x0.rows(n1, n2).into_owned());
    let mut states = Vec::with_capacity(horizon);
    let mut outputs = Vec::with_capacity(horizon);
    let mut inputs = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let k = t0 + i as i64;
        let (y1, y2) = closed_loop_outputs(pair, k, &x1, &x2, &u1[i], &u2[i])?;
        let joint_x = concat(&x1, &x2);
        let joint_y = concat(&y1, &y2);
        if !all_finite(&joint_x) || !all_finite(&joint_y) {
            return Err(Error::NonFiniteState { step: k });
        }
        states.push(joint_x);
        outputs.push(joint_y);
        inputs.push(concat(&u1[i], &u2[i]));
        let x1_next = pair.sys1.update_at(k, &x1, &y2, &u1[i]);
        let x2_next = pair.sys2.update_at(k, &x2, &y1, &u2[i]);
        x1 = x1_next;
        x2 = x2_next;
    }
    Ok(Trajectory { t0, states, outputs, inputs })
}

/// Washout-based estimate of the reference output.
#[derive(Debug, Clone)]
pub struct ReferenceEstimate {
    /// Post-washout segment of the first trial.
    pub trajectory: Trajectory,
    /// Worst pairwise post-washout output disagreement across trials.
    pub max_deviation: f64,
    pub n_trials: usize,
}

/// Simulates `n_trials` random initial conditions under identical
/// inputs and requires their post-washout outputs to agree within
/// `tol`; the post-washout segment of the first trial is returned as
/// the reference-output estimate.
pub fn estimate_reference_output(
    pair: &FeedbackPair,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
    washout: usize,
    tol: f64,
    n_trials: usize,
    rng_seed: u64,
) -> Result<ReferenceEstimate> {
    let horizon = u1.len().min(u2.len());
    if washout >= horizon {
        return Err(Error::InvalidParameter(format!(
            "washout {washout} must be shorter than the horizon {horizon}"
        )));
    }
    if n_trials < 2 {
        return Err(Error::InvalidParameter("need at least 2 trials to compare".into()));
    }
    let inits: Vec<DVector<f64>> = (0..n_trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(t as u64));
            pair.sample_init(&mut rng)
        })
        .collect();
    let trials = parallel::map_slice(&inits, |x0| simulate_closed_loop(pair, u1, u2, x0, 0, horizon));
    let trials: Vec<Trajectory> = trials.into_iter().collect::<Result<_>>()?;

    let mut max_deviation = 0.0f64;
    for i in 0..trials.len() {
        for j in (i + 1)..trials.len() {
            for k in washout..horizon {
                let d = (&trials[i].outputs[k] - &trials[j].outputs[k]).norm();
                max_deviation = max_deviation.max(d);
            }
        }
    }
    if max_deviation > tol {
        return Err(Error::ConvergenceNotObserved { max_deviation, tol });
    }
    Ok(ReferenceEstimate {
        trajectory: trials[0].tail(washout),
        max_deviation,
        n_trials,
    })
}

/// Result of an empirical convergence check.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// One output-difference-norm sequence per initial-condition pair.
    pub diff_sequences: Vec<Vec<f64>>,
    pub bound: KLBound,
    pub converging: bool,
    pub final_max_diff: f64,
}

/// Simulates every initial condition under identical inputs, fits a
/// geometric KL bound to the pairwise output differences and reports
/// `converging` iff the fitted rate is below one and the final
/// differences are below `tol`.
pub fn verify_convergence(
    pair: &FeedbackPair,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
    inits: &[DVector<f64>],
    horizon: usize,
    tol: f64,
) -> Result<ConvergenceReport> {
    if inits.len() < 2 {
        return Err(Error::InvalidParameter("need at least 2 initial conditions".into()));
    }
    let trials = parallel::map_slice(inits, |x0| simulate_closed_loop(pair, u1, u2, x0, 0, horizon));
    let trials: Vec<Trajectory> = trials.into_iter().collect::<Result<_>>()?;

    let mut diff_sequences = Vec::new();
    for i in 0..trials.len() {
        for j in (i + 1)..trials.len() {
            let seq: Vec<f64> = (0..horizon)
                .map(|k| (&trials[i].outputs[k] - &trials[j].outputs[k]).norm())
                .collect();
            diff_sequences.push(seq);
        }
    }
    let bound = fit_kl_bound(&diff_sequences);
    let final_max_diff = diff_sequences
        .iter()
        .filter_map(|s| s.last().copied())
        .fold(0.0f64, f64::max);
    let converging = bound.r < 1.0 && final_max_diff < tol;
    Ok(ConvergenceReport { diff_sequences, bound, converging, final_max_diff })
}

/// Sup over post-washout steps of the closed-loop output difference
/// under matched initial conditions and perturbed inputs.
#[allow(clippy::too_many_arguments)]
pub fn empirical_io_gain(
    pair: &FeedbackPair,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
    u1_bar: &[DVector<f64>],
    u2_bar: &[DVector<f64>],
    x0: &DVector<f64>,
    washout: usize,
    horizon: usize,
) -> Result<f64> {
    let nominal = simulate_closed_loop(pair, u1, u2, x0, 0, horizon)?;
    let perturbed = simulate_closed_loop(pair, u1_bar, u2_bar, x0, 0, horizon)?;
    Ok((washout..horizon)
        .map(|k| (&nominal.outputs[k] - &perturbed.outputs[k]).norm())
        .fold(0.0f64, f64::max))
}

/// Lifts a scalar sequence into 1-dimensional input vectors.
pub fn scalar_inputs(w: &[f64]) -> Vec<DVector<f64>> {
    w.iter().map(|&x| DVector::from_element(1, x)).collect()
}

/// Zero input sequence of the given dimension.
pub fn zero_inputs(dim: usize, len: usize) -> Vec<DVector<f64>> {
    (0..len).map(|_| DVector::zeros(dim)).collect()
}
