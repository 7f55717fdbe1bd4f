//! Black-box identification protocol shared by the two reservoir
//! models: generate input/output data from a target system, wash out
//! the reservoir's initial condition, fit the linear readout by least
//! squares, select the model size/seed with the minimum final
//! prediction error (FPE) on held-out sequences, and score the winner
//! on evaluation data.
//!
//! `FPE = (1/(L - L_w)) * sum |y - yhat|^2 * (L - L_w + p)/(L - L_w - p)`
//! where `p` counts the readout parameters (features plus bias).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esn::{esn_small_gain_margin, generate_esn, scale_feedback_for_small_gain, EsnPair};
use crate::parallel;
use crate::qrc::{generate_qrc_pair, qrc_small_gain_margin, QrcPair};
use crate::systems::signal::InputSignal;

/// Which split a sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Select,
    Eval,
}

/// One input/output record of the target system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub role: Role,
    /// Seed of the generating signal (deterministic signals still
    /// record the seed they were issued).
    pub seed: u64,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

/// Dataset layout: sequence length, washout prefix and split sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Sequence length L.
    pub length: usize,
    /// Washout length L_w (discarded prefix).
    pub washout: usize,
    pub n_train: usize,
    pub n_select: usize,
    /// Signal spec for train/select inputs, e.g. `"uniform(-2,2)"`.
    pub train_input: String,
    /// One signal spec per evaluation sequence.
    pub eval_inputs: Vec<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            length: 1500,
            washout: 500,
            n_train: 8,
            n_select: 2,
            train_input: "uniform(-2,2)".into(),
            eval_inputs: vec!["uniform(-2,2)".into(), "sinusoid(1,0.04)+sinusoid(1,0.1)".into()],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.washout >= self.length {
            return Err(Error::InvalidConfig(format!(
                "washout {} must be below the sequence length {}",
                self.washout, self.length
            )));
        }
        if self.n_train == 0 || self.n_select == 0 || self.eval_inputs.is_empty() {
            return Err(Error::InvalidConfig("need train, select and eval sequences".into()));
        }
        InputSignal::parse(&self.train_input)?;
        for spec in &self.eval_inputs {
            InputSignal::parse(spec)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub sequences: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &SequenceRecord> {
        self.sequences.iter().filter(move |s| s.role == role)
    }

    fn counts(&self) -> (usize, usize, usize) {
        let count = |r| self.by_role(r).count();
        (count(Role::Train), count(Role::Select), count(Role::Eval))
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (tr, se, ev) = self.counts();
        if tr != self.config.n_train || se != self.config.n_select || ev != self.config.eval_inputs.len() {
            return Err(Error::InvalidConfig(format!(
                "role counts ({tr}, {se}, {ev}) disagree with the config ({}, {}, {})",
                self.config.n_train,
                self.config.n_select,
                self.config.eval_inputs.len()
            )));
        }
        if let Some(bad) = self
            .sequences
            .iter()
            .find(|s| s.input.len() != self.config.length || s.output.len() != self.config.length)
        {
            return Err(Error::InvalidConfig(format!(
                "sequence with role {:?} has length {} instead of {}",
                bad.role,
                bad.input.len(),
                self.config.length
            )));
        }
        Ok(())
    }

    /// Writes `manifest.json` plus one `seq_<role>_<idx>.csv`
    /// (columns `k,w,y`) per sequence into `dir`.
    pub fn write_bundle(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut counters = std::collections::HashMap::new();
        for seq in &self.sequences {
            let tag = match seq.role {
                Role::Train => "train",
                Role::Select => "select",
                Role::Eval => "eval",
            };
            let idx = counters.entry(tag).or_insert(0usize);
            let name = format!("seq_{tag}_{idx:02}.csv");
            *idx += 1;
            let mut wtr = csv::Writer::from_path(dir.join(&name))?;
            wtr.write_record(["k", "w", "y"])?;
            for (i, (w, y)) in seq.input.iter().zip(&seq.output).enumerate() {
                wtr.write_record(&[(i + 1).to_string(), format!("{w:.17e}"), format!("{y:.17e}")])?;
            }
            wtr.flush()?;
            files.push(serde_json::json!({ "file": name, "role": seq.role, "seed": seq.seed }));
        }
        let manifest = serde_json::json!({ "config": self.config, "sequences": files });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn derive_seed(base: u64, tag: u64) -> u64 {
    base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates the dataset by driving `target` (the black-box system
/// mapping an input sequence to its output sequence) with seeded
/// signals: train/select sequences use `train_input`, evaluation
/// sequences the configured `eval_inputs`. Deterministic per seed.
pub fn generate_dataset<F>(target: F, config: &DatasetConfig, rng_seed: u64) -> Result<Dataset>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    config.validate()?;
    let train_signal = InputSignal::parse(&config.train_input)?;
    let mut sequences = Vec::new();
    let mut record = |role: Role, signal: &InputSignal, seed: u64| -> Result<()> {
        let input = signal.generate(config.length, 1, seed);
        let output = target(&input)?;
        if output.len() != config.length {
            return Err(Error::InvalidParameter(format!(
                "target returned {} outputs for {} inputs",
                output.len(),
                config.length
            )));
        }
        sequences.push(SequenceRecord { role, seed, input, output });
        Ok(())
    };
    for l in 0..config.n_train {
        record(Role::Train, &train_signal, derive_seed(rng_seed, l as u64))?;
    }
    for l in 0..config.n_select {
        record(Role::Select, &train_signal, derive_seed(rng_seed, 1000 + l as u64))?;
    }
    for (l, spec) in config.eval_inputs.iter().enumerate() {
        let signal = InputSignal::parse(spec)?;
        record(Role::Eval, &signal, derive_seed(rng_seed, 2000 + l as u64))?;
    }
    let dataset = Dataset { config: config.clone(), sequences };
    dataset.validate()?;
    Ok(dataset)
}

/// Identity card of a candidate model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: String,
    pub size: usize,
    pub seed: u64,
    /// Number of readout parameters (features plus bias).
    pub p: usize,
}

/// A reservoir whose washed-out features feed the linear readout.
pub trait ReservoirModel: Send + Sync {
    /// Number of reservoir features (excluding the bias column).
    fn feature_count(&self) -> usize;

    /// Feature matrix with one row per step `k = washout+1 ..= len`,
    /// columns the reservoir features plus a trailing constant-1 bias
    /// column. The reservoir is reset to its fixed initial state.
    fn collect_features(&self, w: &[f64], washout: usize) -> Result<DMatrix<f64>>;

    fn descriptor(&self) -> ModelDescriptor;
}

/// Trained linear readout `yhat = W' features + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Set when the design matrix was rank deficient and the
    /// minimum-norm solution was returned.
    pub rank_deficient: bool,
}

impl ReadoutModel {
    /// Applies the readout to a feature matrix (bias column included).
    pub fn predict(&self, features: &DMatrix<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.weights.len() + 1);
        for (i, w) in self.weights.iter().enumerate() {
            beta[i] = *w;
        }
        beta[self.weights.len()] = self.bias;
        features * beta
    }
}

/// Least-squares fit of the readout via SVD. `ridge = 0` is ordinary
/// least squares (minimum-norm under rank deficiency, with a warning);
/// positive `ridge` applies Tikhonov filtering `s/(s^2 + ridge)`.
pub fn train_readout(features: &DMatrix<f64>, targets: &DVector<f64>, ridge: f64) -> Result<ReadoutModel> {
    let (rows, cols) = features.shape();
    if rows < cols {
        return Err(Error::InvalidParameter(format!(
            "need at least as many stacked rows as readout parameters ({rows} < {cols})"
        )));
    }
    if targets.len() != rows {
        return Err(Error::DimensionMismatch {
            context: "readout targets",
            expected: rows,
            actual: targets.len(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {ridge}")));
    }

    let svd = features.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma_top = svd.singular_values.max();
    let rank_tol = f64::EPSILON * sigma_top * rows.max(cols) as f64;

    let mut rank_deficient = false;
    let uty = u.transpose() * targets;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let filter = if ridge > 0.0 {
            s / (s * s + ridge)
        } else if s > rank_tol {
            1.0 / s
        } else {
            rank_deficient = true;
            0.0
        };
        scaled[i] = uty[i] * filter;
    }
    if rank_deficient {
        log::warn!("rank-deficient readout design; returning the minimum-norm solution");
    }
    let beta = v_t.transpose() * scaled;

    Ok(ReadoutModel {
        weights: beta.iter().take(cols - 1).copied().collect(),
        bias: beta[cols - 1],
        rank_deficient,
    })
}

/// Akaike's final prediction error for one sequence:
/// `(S / (L - L_w)) * (L - L_w + p) / (L - L_w - p)` where `S` is the
/// post-washout residual sum of squares.
pub fn compute_fpe(residual_sq_sum: f64, length: usize, washout: usize, p: usize) -> Result<f64> {
    let eff = length.saturating_sub(washout);
    if eff <= p {
        return Err(Error::InvalidParameter(format!("FPE needs L - L_w > p, got {eff} <= {p}")));
    }
    let eff = eff as f64;
    let p = p as f64;
    Ok(residual_sq_sum / eff * (eff + p) / (eff - p))
}

/// Scores of one candidate model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub descriptor: ModelDescriptor,
    /// One FPE per selection sequence.
    pub fpe_per_sequence: Vec<f64>,
    pub fpe_total: f64,
    /// One MSE per evaluation sequence (filled for the selected model).
    pub mse_per_eval_sequence: Vec<f64>,
    pub rank_deficient: bool,
}

/// Trains a model on the dataset's training split and scores its FPE
/// on the selection split.
pub fn fit_and_score<M: ReservoirModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    ridge: f64,
) -> Result<(ReadoutModel, ModelReport)> {
    let cfg = &dataset.config;
    let rows_per_seq = cfg.length - cfg.washout;
    let p = model.feature_count() + 1;

    let mut stacked = DMatrix::zeros(rows_per_seq * cfg.n_train, p);
    let mut targets = DVector::zeros(rows_per_seq * cfg.n_train);
    for (i, seq) in dataset.by_role(Role::Train).enumerate() {
        let f = model.collect_features(&seq.input, cfg.washout)?;
        stacked.view_mut((i * rows_per_seq, 0), (rows_per_seq, p)).copy_from(&f);
        for (r, y) in seq.output[cfg.washout..].iter().enumerate() {
            targets[i * rows_per_seq + r] = *y;
        }
    }
    let readout = train_readout(&stacked, &targets, ridge)?;

    let mut fpe_per_sequence = Vec::new();
    for seq in dataset.by_role(Role::Select) {
        let f = model.collect_features(&seq.input, cfg.washout)?;
        let yhat = readout.predict(&f);
        let s: f64 = seq.output[cfg.washout..]
            .iter()
            .zip(yhat.iter())
            .map(|(y, yh)| (y - yh) * (y - yh))
            .sum();
        fpe_per_sequence.push(compute_fpe(s, cfg.length, cfg.washout, p)?);
    }
    let fpe_total = fpe_per_sequence.iter().sum();
    let report = ModelReport {
        descriptor: model.descriptor(),
        fpe_per_sequence,
        fpe_total,
        mse_per_eval_sequence: Vec::new(),
        rank_deficient: readout.rank_deficient,
    };
    Ok((readout, report))
}

/// Mean squared error on each evaluation sequence.
pub fn evaluate_mse<M: ReservoirModel + ?Sized>(
    model: &M,
    readout: &ReadoutModel,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    let cfg = &dataset.config;
    let mut out = Vec::new();
    for seq in dataset.by_role(Role::Eval) {
        let f = model.collect_features(&seq.input, cfg.washout)?;
        let yhat = readout.predict(&f);
        let n = (cfg.length - cfg.washout) as f64;
        let mse: f64 = seq.output[cfg.washout..]
            .iter()
            .zip(yhat.iter())
            .map(|(y, yh)| (y - yh) * (y - yh))
            .sum::<f64>()
            / n;
        out.push(mse);
    }
    Ok(out)
}

/// Index of the winning report: minimum `fpe_total`, ties broken by
/// smaller `p`, then smaller seed. The ordering is total, so the
/// result is independent of enumeration order.
pub fn select_from_reports(reports: &[ModelReport]) -> Option<usize> {
    (0..reports.len()).min_by(|&a, &b| {
        let ra = &reports[a];
        let rb = &reports[b];
        ra.fpe_total
            .total_cmp(&rb.fpe_total)
            .then(ra.descriptor.p.cmp(&rb.descriptor.p))
            .then(ra.descriptor.seed.cmp(&rb.descriptor.seed))
    })
}

/// Outcome of a model-selection sweep.
pub struct SelectionOutcome<M> {
    pub model: M,
    pub readout: ReadoutModel,
    /// The winner's report with evaluation MSEs filled in.
    pub report: ModelReport,
    /// Every candidate's report, in enumeration order.
    pub all_reports: Vec<ModelReport>,
}

/// Trains `n_per_size` candidates per size (generated by
/// `generator(size, seed)` with seeds derived from `base_seed`),
/// scores them in parallel and returns the FPE minimizer with its
/// evaluation MSEs.
pub fn model_selection<M, G>(
    generator: G,
    sizes: &[usize],
    n_per_size: usize,
    base_seed: u64,
    dataset: &Dataset,
    ridge: f64,
) -> Result<SelectionOutcome<M>>
where
    M: ReservoirModel,
    G: Fn(usize, u64) -> Result<M> + Sync,
{
    dataset.validate()?;
    if sizes.is_empty() || n_per_size == 0 {
        return Err(Error::InvalidParameter("need at least one candidate".into()));
    }
    let specs: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|&size| {
            (0..n_per_size).map(move |i| (size, derive_seed(base_seed, (size * 10_000 + i) as u64)))
        })
        .collect();

    let scored = parallel::map_slice(&specs, |&(size, seed)| -> Result<(M, ReadoutModel, ModelReport)> {
        let model = generator(size, seed)?;
        let (readout, report) = fit_and_score(&model, dataset, ridge)?;
        Ok((model, readout, report))
    });
    let mut scored: Vec<(M, ReadoutModel, ModelReport)> = scored.into_iter().collect::<Result<_>>()?;

    let all_reports: Vec<ModelReport> = scored.iter().map(|(_, _, r)| r.clone()).collect();
    let best = select_from_reports(&all_reports).expect("candidate list is nonempty");
    let (model, readout, mut report) = scored.swap_remove(best);
    report.mse_per_eval_sequence = evaluate_mse(&model, &readout, dataset)?;
    Ok(SelectionOutcome { model, readout, report, all_reports })
}

/// Generation parameters for certified ESN candidates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EsnCandidateConfig {
    pub sigma_a: f64,
    pub sigma_fb2: f64,
    pub lambda: f64,
    pub safety_margin: f64,
}

impl Default for EsnCandidateConfig {
    fn default() -> Self {
        EsnCandidateConfig { sigma_a: 0.5, sigma_fb2: 1.65, lambda: 0.003, safety_margin: 0.01 }
    }
}

/// Interconnected-ESN candidate with the state features `(x1, x2)`.
pub struct EsnModel {
    pub pair: EsnPair,
    descriptor: ModelDescriptor,
}

impl EsnModel {
    /// Generates a pair and rescales the feedback norm so the
    /// small-gain certificate holds; never admits an uncertified
    /// candidate.
    pub fn certified(size: usize, rng_seed: u64, cfg: &EsnCandidateConfig) -> Result<EsnModel> {
        let pair = generate_esn(size, size, cfg.sigma_a, cfg.sigma_fb2, rng_seed)?;
        let pair = scale_feedback_for_small_gain(&pair, cfg.lambda, cfg.safety_margin)?;
        let margin = esn_small_gain_margin(&pair, cfg.lambda);
        if !margin.holds {
            return Err(Error::InvalidParameter(format!(
                "ESN candidate failed its certificate after rescaling (lhs {} vs rhs {})",
                margin.lhs, margin.rhs
            )));
        }
        Ok(EsnModel {
            pair,
            descriptor: ModelDescriptor { kind: "esn".into(), size, seed: rng_seed, p: 2 * size + 1 },
        })
    }
}

impl ReservoirModel for EsnModel {
    fn feature_count(&self) -> usize {
        self.pair.sub1.state_dim() + self.pair.sub2.state_dim()
    }

    fn collect_features(&self, w: &[f64], washout: usize) -> Result<DMatrix<f64>> {
        let (n1, n2) = (self.pair.sub1.state_dim(), self.pair.sub2.state_dim());
        let rows = w.len().saturating_sub(washout);
        let mut out = DMatrix::zeros(rows, n1 + n2 + 1);
        let mut x1 = DVector::zeros(n1);
        let mut x2 = DVector::zeros(n2);
        for (k, &wk) in w.iter().enumerate() {
            if k >= washout {
                let r = k - washout;
                for i in 0..n1 {
                    out[(r, i)] = x1[i];
                }
                for i in 0..n2 {
                    out[(r, n1 + i)] = x2[i];
                }
                out[(r, n1 + n2)] = 1.0;
            }
            let x1_next = self.pair.sub1.step(&x1, &x2, wk);
            let x2_next = self.pair.sub2.step(&x2, &x1, wk);
            x1 = x1_next;
            x2 = x2_next;
        }
        Ok(out)
    }

    fn descriptor(&self) -> ModelDescriptor {
        self.descriptor.clone()
    }
}

/// Interconnected-QRC candidate with the `Tr(Z_i rho_j)` features.
pub struct QrcModel {
    pub pair: QrcPair,
    lambda: f64,
    descriptor: ModelDescriptor,
}

impl QrcModel {
    /// Builds a pair with the benchmark mixture coefficients and
    /// seeded rotation angles; rejects any size for which the
    /// certificate fails (the margin depends only on the fixed
    /// coefficients and the qubit counts, so no redraw can fix it).
    pub fn certified(size: usize, rng_seed: u64, lambda: f64) -> Result<QrcModel> {
        let pair = generate_qrc_pair(size, size, rng_seed)?;
        let margin = qrc_small_gain_margin(&pair, lambda);
        if !margin.holds {
            return Err(Error::InvalidParameter(format!(
                "QRC certificate fails at {size} qubits (lhs {} vs rhs {}); reduce lambda or the size",
                margin.lhs, margin.rhs
            )));
        }
        Ok(QrcModel {
            pair,
            lambda,
            descriptor: ModelDescriptor { kind: "qrc".into(), size, seed: rng_seed, p: 2 * size + 1 },
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl ReservoirModel for QrcModel {
    fn feature_count(&self) -> usize {
        self.pair.sub1.n_qubits + self.pair.sub2.n_qubits
    }

    fn collect_features(&self, w: &[f64], washout: usize) -> Result<DMatrix<f64>> {
        let (n1, n2) = (self.pair.sub1.n_qubits, self.pair.sub2.n_qubits);
        let rows = w.len().saturating_sub(washout);
        let mut out = DMatrix::zeros(rows, n1 + n2 + 1);
        let mut rho1 = self.pair.sub1.phi.matrix().clone();
        let mut rho2 = self.pair.sub2.phi.matrix().clone();
        for (k, &wk) in w.iter().enumerate() {
            let f1 = self.pair.sub1.features(&rho1)?;
            let f2 = self.pair.sub2.features(&rho2)?;
            if k >= washout {
                let r = k - washout;
                for (i, v) in f1.iter().chain(f2.iter()).enumerate() {
                    out[(r, i)] = *v;
                }
                out[(r, n1 + n2)] = 1.0;
            }
            let y1: f64 = f1.iter().sum();
            let y2: f64 = f2.iter().sum();
            let rho1_next = self.pair.sub1.step_unchecked(&rho1, wk, y2);
            let rho2_next = self.pair.sub2.step_unchecked(&rho2, wk, y1);
            rho1 = rho1_next;
            rho2 = rho2_next;
        }
        Ok(out)
    }

    fn descriptor(&self) -> ModelDescriptor {
        self.descriptor.clone()
    }
}
