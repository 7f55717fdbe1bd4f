//! Interconnected quantum reservoir computers simulated as density
//! operators.
//!
//! Each subsystem holds an `n`-qubit state `rho` (a `2^n x 2^n`
//! Hermitian, PSD, unit-trace matrix) evolving under a convex mixture
//! of unitary conjugations plus a reset toward a fixed state `phi`:
//!
//! ```text
//! rho' = eps_w [g(w) U_w1 rho U_w1' + (1-g(w)) U_w2 rho U_w2']
//!      + eps_v [g(v) U_v1 rho U_v1' + (1-g(v)) U_v2 rho U_v2']
//!      + eps_phi phi,        eps_w + eps_v + eps_phi = 1,
//! ```
//!
//! where `g` is the logistic function (Lipschitz constant 1/4). The
//! interconnection signal is the unweighted readout
//! `y_j = sum_i Tr(Z_i rho_j)` with `v1 = y2, v2 = y1`; the trainable
//! readout applies weights to the same `Tr(Z_i rho_j)` features.
//!
//! Such mixtures are CPTP and contract the Schatten 1-norm, which gives
//! the closed-form small-gain certificate of
//! [`qrc_small_gain_margin`]. The induced channel-difference norm
//! `|T_{S,1} - T_{S,2}|_{1-1}` is never computed exactly; all
//! certificates use its universal upper bound 2.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eigenvalues, sigma_max_hermitian};
use crate::systems::{FeedbackPair, LoopMode, SystemDef};

pub use crate::linalg::{schatten1, schatten1_hermitian};

/// Largest qubit count supported by the dense simulation (dim 64).
pub const MAX_QUBITS: usize = 6;

/// Hermitian defect / trace / PSD tolerances of a valid state.
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// Logistic input squashing `g(x) = 1 / (1 + exp(-x))`.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Global Lipschitz constant of [`logistic`].
pub const LOGISTIC_LIPSCHITZ: f64 = 0.25;

/// Hermitian PSD unit-trace matrix of size `2^n x 2^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates and wraps a matrix.
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        let dm = DensityMatrix { m };
        dm.validate()?;
        Ok(dm)
    }

    /// Wraps without validation; for hot paths whose invariants are
    /// checked elsewhere.
    pub fn from_matrix_unchecked(m: DMatrix<Complex64>) -> Self {
        DensityMatrix { m }
    }

    /// `|0...0><0...0|`: one in the (1,1) entry, zero elsewhere.
    pub fn basis_state(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        let mut m = DMatrix::zeros(d, d);
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        DensityMatrix { m }
    }

    /// `I / 2^n`.
    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        DensityMatrix { m: DMatrix::from_diagonal_element(d, d, Complex64::new(1.0 / d as f64, 0.0)) }
    }

    /// Ginibre-distributed random state: `G G† / Tr(G G†)` with
    /// standard-normal complex entries.
    pub fn random(n_qubits: usize, rng: &mut dyn RngCore) -> Self {
        let d = 1 << n_qubits;
        let g = DMatrix::from_fn(d, d, |_, _| {
            Complex64::new(
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            )
        });
        let mut m = &g * g.adjoint();
        let tr: f64 = m.diagonal().iter().map(|c| c.re).sum();
        m /= Complex64::new(tr, 0.0);
        DensityMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.m).min()
    }

    /// Checks Hermiticity, unit trace and positive semidefiniteness up
    /// to the module tolerances.
    pub fn validate(&self) -> Result<()> {
        let defect = hermitian_defect(&self.m);
        if defect > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("Hermitian defect {defect:.3e}")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr} differs from 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidDensityMatrix(format!("min eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }

    /// JSON dump as `{re: [[...]], im: [[...]]}` row-major.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..self.m.nrows())
                .map(|i| self.m.row(i).iter().map(f).collect())
                .collect()
        };
        serde_json::json!({ "re": rows(|c| c.re), "im": rows(|c| c.im) })
    }
}

/// `I ⊗ ... ⊗ P ⊗ ... ⊗ I` with the single-qubit Pauli in slot `i`
/// (1-based).
pub fn pauli_on(kind: Pauli, qubit_index: usize, n_qubits: usize) -> Result<DMatrix<Complex64>> {
    if qubit_index == 0 || qubit_index > n_qubits {
        return Err(Error::QubitIndexOutOfRange { index: qubit_index, n_qubits });
    }
    let p = kind.matrix();
    let eye = DMatrix::<Complex64>::identity(2, 2);
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for slot in 1..=n_qubits {
        out = out.kronecker(if slot == qubit_index { &p } else { &eye });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> DMatrix<Complex64> {
        let (zero, one) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
        match self {
            Pauli::X => DMatrix::from_row_slice(2, 2, &[zero, one, one, zero]),
            Pauli::Z => DMatrix::from_row_slice(2, 2, &[one, zero, zero, -one]),
        }
    }
}

/// `⊗_i Z_i`: Pauli-Z on every qubit.
pub fn all_z_product(n_qubits: usize) -> DMatrix<Complex64> {
    let z = Pauli::Z.matrix();
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for _ in 0..n_qubits {
        out = out.kronecker(&z);
    }
    out
}

/// `⊗_i exp(-i theta_i X_i)` built from
/// `exp(-i theta X) = cos(theta) I - i sin(theta) X`.
pub fn x_rotation_product(thetas: &[f64]) -> DMatrix<Complex64> {
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for &t in thetas {
        let c = Complex64::new(t.cos(), 0.0);
        let ms = Complex64::new(0.0, -t.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, ms, ms, c]);
        out = out.kronecker(&rot);
    }
    out
}

/// The four single-subsystem unitaries: `U_w1` and `U_v2` are the
/// all-Z product; `U_w2` and `U_v1` are products of per-qubit X
/// rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct QrcUnitaries {
    pub u_w1: DMatrix<Complex64>,
    pub u_w2: DMatrix<Complex64>,
    pub u_v1: DMatrix<Complex64>,
    pub u_v2: DMatrix<Complex64>,
}

impl QrcUnitaries {
    /// Builds from explicit rotation angles (one per qubit for each of
    /// the two rotated unitaries).
    pub fn from_angles(n_qubits: usize, thetas_w2: &[f64], thetas_v1: &[f64]) -> Result<Self> {
        for (name, t) in [("w2", thetas_w2), ("v1", thetas_v1)] {
            if t.len() != n_qubits {
                return Err(Error::InvalidParameter(format!(
                    "need {n_qubits} angles for U_{name}, got {}",
                    t.len()
                )));
            }
        }
        Ok(QrcUnitaries {
            u_w1: all_z_product(n_qubits),
            u_w2: x_rotation_product(thetas_w2),
            u_v1: x_rotation_product(thetas_v1),
            u_v2: all_z_product(n_qubits),
        })
    }
}

/// Draws the rotation angles from U[-pi, pi] (independently per qubit
/// and unitary) and builds the four unitaries.
pub fn build_unitaries(n_qubits: usize, rng_seed: u64) -> QrcUnitaries {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI)).collect()
    };
    let thetas_w2 = draw(n_qubits);
    let thetas_v1 = draw(n_qubits);
    QrcUnitaries::from_angles(n_qubits, &thetas_w2, &thetas_v1)
        .expect("angle counts match by construction")
}

fn unitary_defect(u: &DMatrix<Complex64>) -> f64 {
    let d = u.nrows();
    let mut g = u.adjoint() * u;
    for i in 0..d {
        g[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    g.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// One quantum reservoir subsystem.
#[derive(Debug, Clone)]
pub struct QrcSubsystem {
    pub n_qubits: usize,
    pub eps_w: f64,
    pub eps_v: f64,
    pub eps_phi: f64,
    pub phi: DensityMatrix,
    pub unitaries: QrcUnitaries,
    /// Diagonal sign pattern of each `Z_i` observable.
    z_signs: Vec<Vec<f64>>,
}

impl QrcSubsystem {
    pub fn new(
        n_qubits: usize,
        eps_w: f64,
        eps_v: f64,
        eps_phi: f64,
        phi: DensityMatrix,
        unitaries: QrcUnitaries,
    ) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::InvalidParameter(format!(
                "n_qubits must lie in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        let d = 1 << n_qubits;
        if !(eps_w > 0.0 && eps_v > 0.0 && eps_phi > 0.0) {
            return Err(Error::InvalidParameter(
                "all three mixture coefficients must be strictly positive".into(),
            ));
        }
        if eps_w + eps_v + eps_phi != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "mixture coefficients must sum to exactly 1.0 as stored, got {}",
                eps_w + eps_v + eps_phi
            )));
        }
        if phi.dim() != d {
            return Err(Error::DimensionMismatch { context: "QRC phi", expected: d, actual: phi.dim() });
        }
        phi.validate()?;
        for (name, u) in [
            ("U_w1", &unitaries.u_w1),
            ("U_w2", &unitaries.u_w2),
            ("U_v1", &unitaries.u_v1),
            ("U_v2", &unitaries.u_v2),
        ] {
            if u.nrows() != d || u.ncols() != d {
                return Err(Error::DimensionMismatch { context: "QRC unitary", expected: d, actual: u.nrows() });
            }
            let defect = unitary_defect(u);
            if defect > 1e-10 {
                return Err(Error::InvalidParameter(format!("{name} is not unitary (defect {defect:.3e})")));
            }
        }
        let z_signs = (1..=n_qubits)
            .map(|i| {
                // Bit i (1-based from the left tensor slot) flips the
                // sign with period 2^(n-i).
                let period = 1usize << (n_qubits - i);
                (0..d).map(|r| if (r / period) % 2 == 0 { 1.0 } else { -1.0 }).collect()
            })
            .collect();
        Ok(QrcSubsystem { n_qubits, eps_w, eps_v, eps_phi, phi, unitaries, z_signs })
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// One reservoir update without the per-call invariant checks of
    /// [`qrc_step`]; used inside simulation loops where the embedding
    /// keeps Hermiticity structurally.
    pub fn step_unchecked(&self, rho: &DMatrix<Complex64>, w: f64, v: f64) -> DMatrix<Complex64> {
        let conj = |u: &DMatrix<Complex64>| u * rho * u.adjoint();
        let gw = logistic(w);
        let gv = logistic(v);
        let t_w = conj(&self.unitaries.u_w1) * Complex64::new(gw, 0.0)
            + conj(&self.unitaries.u_w2) * Complex64::new(1.0 - gw, 0.0);
        let t_v = conj(&self.unitaries.u_v1) * Complex64::new(gv, 0.0)
            + conj(&self.unitaries.u_v2) * Complex64::new(1.0 - gv, 0.0);
        t_w * Complex64::new(self.eps_w, 0.0)
            + t_v * Complex64::new(self.eps_v, 0.0)
            + self.phi.matrix() * Complex64::new(self.eps_phi, 0.0)
    }

    /// `Tr(Z_i rho)` for each qubit; rejects imaginary residue above
    /// 1e-9.
    pub fn features(&self, rho: &DMatrix<Complex64>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_qubits);
        for signs in &self.z_signs {
            let mut re = 0.0;
            let mut im = 0.0;
            for (r, s) in signs.iter().enumerate() {
                re += s * rho[(r, r)].re;
                im += s * rho[(r, r)].im;
            }
            if im.abs() > 1e-9 {
                return Err(Error::ImaginaryResidue(im.abs()));
            }
            out.push(re);
        }
        Ok(out)
    }
}

/// Applies one reservoir update and checks the resulting state's
/// Hermiticity and trace (numerical drift guards).
pub fn qrc_step(sub: &QrcSubsystem, rho: &DensityMatrix, w: f64, v: f64) -> Result<DensityMatrix> {
    if rho.dim() != sub.dim() {
        return Err(Error::DimensionMismatch { context: "QRC state", expected: sub.dim(), actual: rho.dim() });
    }
    let next = sub.step_unchecked(rho.matrix(), w, v);
    let defect = hermitian_defect(&next);
    if defect > HERMITIAN_TOL {
        return Err(Error::InvalidDensityMatrix(format!("step drifted off Hermitian by {defect:.3e}")));
    }
    let out = DensityMatrix::from_matrix_unchecked(next);
    let tr = out.trace();
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::InvalidDensityMatrix(format!("step drifted to trace {tr}")));
    }
    Ok(out)
}

/// Feature vector of a pair state: `Tr(Z_i rho_1)` then `Tr(Z_i rho_2)`,
/// each entry real in [-1, 1].
pub fn readout_features(
    pair: &QrcPair,
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
) -> Result<Vec<f64>> {
    let mut f = pair.sub1.features(rho1.matrix())?;
    f.extend(pair.sub2.features(rho2.matrix())?);
    Ok(f)
}

/// The interconnection signal `y_j = sum_i Tr(Z_i rho_j)`; bounded by
/// the qubit count in absolute value.
pub fn qrc_subsystem_output(sub: &QrcSubsystem, rho: &DensityMatrix) -> Result<f64> {
    Ok(sub.features(rho.matrix())?.iter().sum())
}

/// Two interconnected quantum reservoirs (`v1 = y2, v2 = y1`).
#[derive(Debug, Clone)]
pub struct QrcPair {
    pub sub1: QrcSubsystem,
    pub sub2: QrcSubsystem,
}

impl QrcPair {
    pub fn new(sub1: QrcSubsystem, sub2: QrcSubsystem) -> Self {
        QrcPair { sub1, sub2 }
    }
}

/// Both sides of the interconnection certificate
/// `4 eps_v1 eps_v2 L_g^2 n1 n2 / (eps_phi1 eps_phi2) < 1/(1+lambda)^2`
/// (the factor 4 is the product of the two channel-difference bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QrcMargin {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn qrc_small_gain_margin(pair: &QrcPair, lam: f64) -> QrcMargin {
    let lg = LOGISTIC_LIPSCHITZ;
    let (n1, n2) = (pair.sub1.n_qubits as f64, pair.sub2.n_qubits as f64);
    let lhs = 4.0 * pair.sub1.eps_v * pair.sub2.eps_v * lg * lg * n1 * n2
        / (pair.sub1.eps_phi * pair.sub2.eps_phi);
    let rhs = 1.0 / ((1.0 + lam) * (1.0 + lam));
    QrcMargin { lhs, rhs, holds: lhs < rhs }
}

/// Returns `(|Tr(A B)|, sigma_max(A) * |B|_1)` for Hermitian `A`, `B`;
/// the first never exceeds the second.
pub fn trace_bound_check(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Result<(f64, f64)> {
    for m in [a, b] {
        let defect = hermitian_defect(m);
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
    }
    let tr_ab = (a * b).diagonal().iter().sum::<Complex64>().norm();
    Ok((tr_ab, sigma_max_hermitian(a) * schatten1_hermitian(b)))
}

/// Flattens a Hermitian matrix into its independent real parameters:
/// the real diagonal, then for each upper-triangular entry (row-major)
/// its real and imaginary parts. The embedding is invertible and
/// norm-equivalent; Schatten norms are always taken on reconstituted
/// matrices.
pub fn flatten_hermitian(m: &DMatrix<Complex64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(d * d);
    let mut idx = 0;
    for i in 0..d {
        out[idx] = m[(i, i)].re;
        idx += 1;
    }
    for i in 0..d {
        for j in (i + 1)..d {
            out[idx] = m[(i, j)].re;
            out[idx + 1] = m[(i, j)].im;
            idx += 2;
        }
    }
    out
}

/// Inverse of [`flatten_hermitian`]; the result is exactly Hermitian.
pub fn unflatten_hermitian(v: &DVector<f64>, dim: usize) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut idx = 0;
    for i in 0..dim {
        m[(i, i)] = Complex64::new(v[idx], 0.0);
        idx += 1;
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let c = Complex64::new(v[idx], v[idx + 1]);
            m[(i, j)] = c;
            m[(j, i)] = c.conj();
            idx += 2;
        }
    }
    m
}

/// Wraps the pair as a [`FeedbackPair`]: the joint state is the
/// flattened `(rho1, rho2)`, the outputs are the scalar subsystem
/// readouts (strict-causal loop) and the shared scalar input `w`
/// drives both. Random initial states are Ginibre-distributed valid
/// density matrices.
pub fn build_qrc_closed_loop(pair: &QrcPair) -> FeedbackPair {
    let mk = |sub: QrcSubsystem| {
        let d = sub.dim();
        let n_params = d * d;
        let sub_out = sub.clone();
        let n_qubits = sub.n_qubits;
        SystemDef::new(
            n_params,
            1,
            1,
            move |_k, x, v, u| {
                let rho = unflatten_hermitian(x, d);
                flatten_hermitian(&sub.step_unchecked(&rho, u[0], v[0]))
            },
            move |_k, x, _u| {
                let rho = unflatten_hermitian(x, d);
                let y: f64 = sub_out
                    .features(&rho)
                    .expect("flattened states are exactly Hermitian, so features are real")
                    .iter()
                    .sum();
                DVector::from_element(1, y)
            },
        )
        .with_init_sampler(move |rng| {
            flatten_hermitian(DensityMatrix::random(n_qubits, rng).matrix())
        })
    };
    FeedbackPair::new(mk(pair.sub1.clone()), mk(pair.sub2.clone()), LoopMode::StrictCausal)
        .expect("scalar loop wiring is always consistent")
}

/// Convenience constructor: basis-state reset and seeded random
/// rotation angles.
pub fn generate_qrc_subsystem(
    n_qubits: usize,
    eps_w: f64,
    eps_v: f64,
    eps_phi: f64,
    rng_seed: u64,
) -> Result<QrcSubsystem> {
    QrcSubsystem::new(
        n_qubits,
        eps_w,
        eps_v,
        eps_phi,
        DensityMatrix::basis_state(n_qubits),
        build_unitaries(n_qubits, rng_seed),
    )
}

/// The mixture coefficients used by the shipped experiments.
pub const BENCHMARK_EPS_1: (f64, f64, f64) = (0.25, 0.1, 0.65);
pub const BENCHMARK_EPS_2: (f64, f64, f64) = (0.1, 0.45, 0.45);

/// Builds a pair with the benchmark coefficients, basis-state resets
/// and seeded angles.
pub fn generate_qrc_pair(n1: usize, n2: usize, rng_seed: u64) -> Result<QrcPair> {
    let (w1, v1, p1) = BENCHMARK_EPS_1;
    let (w2, v2, p2) = BENCHMARK_EPS_2;
    Ok(QrcPair::new(
        generate_qrc_subsystem(n1, w1, v1, p1, rng_seed)?,
        generate_qrc_subsystem(n2, w2, v2, p2, rng_seed.wrapping_add(1))?,
    ))
}
