//! From-scratch soft-margin SVM with RBF kernel.
//!
//! Binary machines solve the usual dual
//!
//! ```text
//! min ½ αᵀQα − eᵀα   s.t.  yᵀα = 0,  0 ≤ α ≤ C,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! with sequential minimal optimization: the working pair is the maximal
//! KKT-violating pair, the two-variable subproblem is solved analytically,
//! and the gradient is maintained incrementally. Multiclass is one-vs-one
//! with majority voting over the k·(k−1)/2 machines in canonical pair order
//! (1,2), (1,3), …, (7,8).
//!
//! Models serialize to a versioned JSON document; floating-point fields use
//! the shortest representation that parses back to the identical bits, so a
//! saved and reloaded model predicts bit-identically.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::signal::StateDataset;

/// Dual coefficients at or below this are pruned from the stored machine.
const PRUNE_TOL: f64 = 1e-8;

/// Per-feature standard deviations are floored here so constant features
/// pass through centered only.
const STD_FLOOR: f64 = 1e-9;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training rows must contain both labels")]
    DegenerateLabels,
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { got: usize, need: usize },
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("kernel/penalty parameters must be positive: gamma={gamma}, c={c}")]
    BadParams { gamma: f64, c: f64 },
    #[error("label {0} must be -1 or +1")]
    BadBinaryLabel(f64),
    #[error("unsupported model version {0}")]
    ModelVersion(u32),
    #[error("model has {got} machines, expected {expected} for {classes} classes")]
    MachineCount {
        got: usize,
        expected: usize,
        classes: usize,
    },
    #[error("machine references label {0} absent from the class list")]
    UnknownLabel(u8),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-feature affine map to zero mean and unit variance (population
/// convention), with a floored standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStandardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, SvmError> {
        if rows.len() < 2 {
            return Err(SvmError::TooFewRows {
                got: rows.len(),
                need: 2,
            });
        }
        let dim = rows[0].len();
        for r in rows {
            if r.len() != dim {
                return Err(SvmError::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for d in 0..dim {
                mean[d] += r[d];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for d in 0..dim {
                var[d] += (r[d] - mean[d]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok((0..x.len())
            .map(|d| (x[d] - self.mean[d]) / self.std[d])
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>, SvmError> {
        if z.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok((0..z.len())
            .map(|d| z[d] * self.std[d] + self.mean[d])
            .collect())
    }
}

/// RBF kernel width and soft-margin penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
    pub c: f64,
}

impl KernelParams {
    pub fn new(gamma: f64, c: f64) -> Result<Self, SvmError> {
        if !(gamma > 0.0 && c > 0.0) {
            return Err(SvmError::BadParams { gamma, c });
        }
        Ok(Self { gamma, c })
    }
}

/// Training knobs. `gamma: None` defaults to 1/n_features at fit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub gamma: Option<f64>,
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            c: 1.0,
            tol: 1e-3,
            max_passes: 200,
        }
    }
}

/// K(xi, xj) = exp(−γ‖xi − xj‖²), in (0, 1].
pub fn rbf_kernel(xi: &[f64], xj: &[f64], gamma: f64) -> Result<f64, SvmError> {
    if xi.len() != xj.len() {
        return Err(SvmError::DimensionMismatch {
            expected: xi.len(),
            got: xj.len(),
        });
    }
    Ok(rbf(xi, xj, gamma))
}

#[inline]
fn rbf(xi: &[f64], xj: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (a, b) in xi.iter().zip(xj) {
        let d = a - b;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

/// One trained binary machine in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    /// Class pair (neg, pos): the decision value is positive on the `pos` side.
    pub neg: u8,
    pub pos: u8,
    pub support_vectors: Vec<Vec<f64>>,
    /// α_i·y_i per retained support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
}

impl BinarySvm {
    /// Signed margin for a standardized input.
    pub fn decision(&self, x_std: &[f64], gamma: f64) -> f64 {
        let mut acc = self.bias;
        for (sv, coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            acc += coef * rbf(sv, x_std, gamma);
        }
        acc
    }
}

/// Solver diagnostics exposed for verification against independent oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    /// Full dual variables in row order (before pruning).
    pub alpha: Vec<f64>,
    /// Maximization objective W(α) = Σα − ½αᵀQα at the returned point.
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Trains one soft-margin machine with SMO.
///
/// `y` entries must be ±1 and both labels must occur. `labels` records the
/// (neg, pos) class pair carried by the machine.
pub fn train_binary(
    x: &[Vec<f64>],
    y: &[f64],
    params: &KernelParams,
    tol: f64,
    max_passes: usize,
    labels: (u8, u8),
) -> Result<BinarySvm, SvmError> {
    train_binary_with_stats(x, y, params, tol, max_passes, labels).map(|(m, _)| m)
}

/// As [`train_binary`], additionally returning the raw solver state.
pub fn train_binary_with_stats(
    x: &[Vec<f64>],
    y: &[f64],
    params: &KernelParams,
    tol: f64,
    max_passes: usize,
    labels: (u8, u8),
) -> Result<(BinarySvm, TrainStats), SvmError> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(SvmError::TooFewRows { got: n, need: 2 });
    }
    let dim = x[0].len();
    for r in x {
        if r.len() != dim {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
    }
    for &label in y {
        if label != 1.0 && label != -1.0 {
            return Err(SvmError::BadBinaryLabel(label));
        }
    }
    if !y.iter().any(|&l| l > 0.0) || !y.iter().any(|&l| l < 0.0) {
        return Err(SvmError::DegenerateLabels);
    }
    KernelParams::new(params.gamma, params.c)?;

    let solver = Smo::new(x, y, params.gamma, params.c, tol, max_passes);
    let (alpha, bias, iterations, objective) = solver.solve();

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..n {
        if alpha[i] > PRUNE_TOL {
            support_vectors.push(x[i].clone());
            dual_coefs.push(alpha[i] * y[i]);
        }
    }
    let machine = BinarySvm {
        neg: labels.0,
        pos: labels.1,
        support_vectors,
        dual_coefs,
        bias,
    };
    let stats = TrainStats {
        alpha,
        dual_objective: objective,
        iterations,
    };
    Ok((machine, stats))
}

/// SMO state over the dense kernel matrix Q_ij = y_i y_j K_ij.
struct Smo<'a> {
    q: Vec<f64>,
    n: usize,
    y: &'a [f64],
    c: f64,
    tol: f64,
    max_passes: usize,
    alpha: Vec<f64>,
    /// Gradient of the minimization objective: G = Qα − e.
    grad: Vec<f64>,
}

impl<'a> Smo<'a> {
    fn new(x: &[Vec<f64>], y: &'a [f64], gamma: f64, c: f64, tol: f64, max_passes: usize) -> Self {
        let n = x.len();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = y[i] * y[j] * rbf(&x[i], &x[j], gamma);
                q[i * n + j] = v;
                q[j * n + i] = v;
            }
        }
        Smo {
            q,
            n,
            y,
            c,
            tol,
            max_passes,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
        }
    }

    #[inline]
    fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    fn in_up(&self, i: usize) -> bool {
        (self.y[i] > 0.0 && self.alpha[i] < self.c) || (self.y[i] < 0.0 && self.alpha[i] > 0.0)
    }

    fn in_low(&self, i: usize) -> bool {
        (self.y[i] > 0.0 && self.alpha[i] > 0.0) || (self.y[i] < 0.0 && self.alpha[i] < self.c)
    }

    /// Maximal violating pair: argmax −y·G over I_up and argmin over I_low.
    fn select_pair(&self) -> Option<(usize, usize, f64)> {
        let mut m = f64::NEG_INFINITY;
        let mut i_up = None;
        let mut big_m = f64::INFINITY;
        let mut j_low = None;
        for i in 0..self.n {
            let v = -self.y[i] * self.grad[i];
            if self.in_up(i) && v > m {
                m = v;
                i_up = Some(i);
            }
            if self.in_low(i) && v < big_m {
                big_m = v;
                j_low = Some(i);
            }
        }
        match (i_up, j_low) {
            (Some(i), Some(j)) => Some((i, j, m - big_m)),
            _ => None,
        }
    }

    /// Analytic solution of the two-variable subproblem, libsvm clipping.
    fn update_pair(&mut self, i: usize, j: usize) -> f64 {
        let c = self.c;
        let old_i = self.alpha[i];
        let old_j = self.alpha[j];
        if self.y[i] != self.y[j] {
            let mut quad = self.q(i, i) + self.q(j, j) + 2.0 * self.q(i, j);
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            self.alpha[i] += delta;
            self.alpha[j] += delta;
            if diff > 0.0 {
                if self.alpha[j] < 0.0 {
                    self.alpha[j] = 0.0;
                    self.alpha[i] = diff;
                }
            } else if self.alpha[i] < 0.0 {
                self.alpha[i] = 0.0;
                self.alpha[j] = -diff;
            }
            if diff > 0.0 {
                if self.alpha[i] > c {
                    self.alpha[i] = c;
                    self.alpha[j] = c - diff;
                }
            } else if self.alpha[j] > c {
                self.alpha[j] = c;
                self.alpha[i] = c + diff;
            }
        } else {
            let mut quad = self.q(i, i) + self.q(j, j) - 2.0 * self.q(i, j);
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            self.alpha[i] -= delta;
            self.alpha[j] += delta;
            if sum > c {
                if self.alpha[i] > c {
                    self.alpha[i] = c;
                    self.alpha[j] = sum - c;
                }
            } else if self.alpha[j] < 0.0 {
                self.alpha[j] = 0.0;
                self.alpha[i] = sum;
            }
            if sum > c {
                if self.alpha[j] > c {
                    self.alpha[j] = c;
                    self.alpha[i] = sum - c;
                }
            } else if self.alpha[i] < 0.0 {
                self.alpha[i] = 0.0;
                self.alpha[j] = sum;
            }
        }
        let di = self.alpha[i] - old_i;
        let dj = self.alpha[j] - old_j;
        for k in 0..self.n {
            self.grad[k] += self.q(k, i) * di + self.q(k, j) * dj;
        }
        di.abs() + dj.abs()
    }

    /// Bias from the average of free support vectors, midpoint fallback.
    fn bias(&self) -> f64 {
        let mut sum_free = 0.0;
        let mut n_free = 0usize;
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        for i in 0..self.n {
            let yg = self.y[i] * self.grad[i];
            if self.alpha[i] >= self.c - PRUNE_TOL {
                if self.y[i] > 0.0 {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.alpha[i] <= PRUNE_TOL {
                if self.y[i] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum_free += yg;
                n_free += 1;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }

    fn objective(&self) -> f64 {
        // W(α) = Σα − ½αᵀQα; with G = Qα − e this is (Σα − αᵀG)/2.
        let sum: f64 = self.alpha.iter().sum();
        let ag: f64 = self.alpha.iter().zip(&self.grad).map(|(a, g)| a * g).sum();
        (sum - ag) / 2.0
    }

    fn solve(mut self) -> (Vec<f64>, f64, usize, f64) {
        let max_iter = (100 * self.n).max(10_000);
        let mut stalled = 0usize;
        let mut iterations = 0usize;
        while iterations < max_iter {
            let (i, j, violation) = match self.select_pair() {
                Some(t) => t,
                None => break,
            };
            if violation <= self.tol {
                break;
            }
            iterations += 1;
            let moved = self.update_pair(i, j);
            if moved < 1e-12 {
                stalled += 1;
                if stalled >= self.max_passes {
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        let bias = self.bias();
        let objective = self.objective();
        (self.alpha, bias, iterations, objective)
    }
}

/// KKT residual per training point for a solved dual.
///
/// For each point, with margin m_i = y_i·f(x_i):
/// free vectors must sit on the margin (|m_i − 1|), zero-α points must not
/// violate it from below (max(0, 1 − m_i)), bounded ones not from above
/// (max(0, m_i − 1)).
pub fn kkt_residuals(
    x: &[Vec<f64>],
    y: &[f64],
    alpha: &[f64],
    bias: f64,
    params: &KernelParams,
) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut f = bias;
            for j in 0..n {
                if alpha[j] > 0.0 {
                    f += alpha[j] * y[j] * rbf(&x[j], &x[i], params.gamma);
                }
            }
            let margin = y[i] * f;
            if alpha[i] <= PRUNE_TOL {
                (1.0 - margin).max(0.0)
            } else if alpha[i] >= params.c - PRUNE_TOL {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            }
        })
        .collect()
}

/// Winning class of a multiclass prediction with its vote margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub label: u8,
    /// Pairwise machines voting for the winner.
    pub votes: u32,
    /// Summed |decision value| over the winner's machines.
    pub magnitude: f64,
}

/// Trained multiclass classifier: standardizer, kernel parameters, and one
/// binary machine per unordered class pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSvm {
    machines: Vec<BinarySvm>,
    classes: Vec<u8>,
    standardizer: FeatureStandardizer,
    params: KernelParams,
}

impl MulticlassSvm {
    pub fn machines(&self) -> &[BinarySvm] {
        &self.machines
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn standardizer(&self) -> &FeatureStandardizer {
        &self.standardizer
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// Canonical (neg, pos) pair order for `classes`.
    pub fn pair_order(classes: &[u8]) -> Vec<(u8, u8)> {
        let mut pairs = Vec::new();
        for i in 0..classes.len() {
            for j in i + 1..classes.len() {
                pairs.push((classes[i], classes[j]));
            }
        }
        pairs
    }

    /// Majority vote over all machines; ties break by the larger summed
    /// |decision value| over the tied classes' machines, then by the lowest
    /// class label.
    pub fn predict(&self, x: &[f64]) -> Result<u8, SvmError> {
        Ok(self.predict_with_margin(x)?.label)
    }

    /// As [`predict`](Self::predict), also reporting the winner's vote count
    /// and its machines' summed |decision value|.
    pub fn predict_with_margin(&self, x: &[f64]) -> Result<Vote, SvmError> {
        let z = self.standardizer.transform(x)?;
        Ok(self.predict_std(&z))
    }

    fn predict_std(&self, z: &[f64]) -> Vote {
        let k = self.classes.len();
        let mut votes = vec![0u32; k];
        let mut magnitude = vec![0.0f64; k];
        for m in &self.machines {
            let d = m.decision(z, self.params.gamma);
            let neg = self.class_index(m.neg);
            let pos = self.class_index(m.pos);
            if d > 0.0 {
                votes[pos] += 1;
            } else {
                votes[neg] += 1;
            }
            magnitude[neg] += d.abs();
            magnitude[pos] += d.abs();
        }
        let top = *votes.iter().max().expect("non-empty classes");
        let mut winner = None;
        for i in 0..k {
            if votes[i] != top {
                continue;
            }
            winner = match winner {
                None => Some(i),
                Some(w) => {
                    if magnitude[i] > magnitude[w] {
                        Some(i)
                    } else {
                        Some(w) // equal magnitude keeps the lower class label
                    }
                }
            };
        }
        let w = winner.expect("at least one class");
        Vote {
            label: self.classes[w],
            votes: votes[w],
            magnitude: magnitude[w],
        }
    }

    fn class_index(&self, label: u8) -> usize {
        self.classes
            .iter()
            .position(|&c| c == label)
            .expect("label validated at construction")
    }

    /// All pairwise signed margins in canonical pair order.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        let z = self.standardizer.transform(x)?;
        Ok(self
            .machines
            .iter()
            .map(|m| m.decision(&z, self.params.gamma))
            .collect())
    }

    /// Fraction helper: predicted labels for a batch of raw feature rows.
    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>, SvmError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Trains the one-vs-one ensemble on a labeled dataset.
///
/// The standardizer is fit on every training row; γ defaults to
/// 1/n_features when unset. Pairwise machines train independently (in
/// parallel under the `parallel` feature) and are stored in canonical order.
pub fn train_multiclass(
    dataset: &StateDataset,
    config: &TrainConfig,
) -> Result<MulticlassSvm, SvmError> {
    let classes = dataset.classes();
    if classes.len() < 2 {
        return Err(SvmError::TooFewClasses(classes.len()));
    }
    let rows: Vec<Vec<f64>> = dataset
        .samples()
        .iter()
        .map(|s| s.features.to_vec())
        .collect();
    let labels: Vec<u8> = dataset.samples().iter().map(|s| s.state).collect();
    let n_features = rows.first().map(|r| r.len()).unwrap_or(0);
    let standardizer = FeatureStandardizer::fit(&rows)?;
    let std_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| standardizer.transform(r))
        .collect::<Result<_, _>>()?;

    let gamma = config.gamma.unwrap_or(1.0 / n_features as f64);
    let params = KernelParams::new(gamma, config.c)?;

    let pairs = MulticlassSvm::pair_order(&classes);
    let machines: Vec<Result<BinarySvm, SvmError>> = exec::map_slice(&pairs, |&(a, b)| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (row, &label) in std_rows.iter().zip(&labels) {
            if label == a {
                x.push(row.clone());
                y.push(-1.0);
            } else if label == b {
                x.push(row.clone());
                y.push(1.0);
            }
        }
        train_binary(&x, &y, &params, config.tol, config.max_passes, (a, b))
    });
    let machines = machines.into_iter().collect::<Result<Vec<_>, _>>()?;

    Ok(MulticlassSvm {
        machines,
        classes,
        standardizer,
        params,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    classes: Vec<u8>,
    gamma: f64,
    c: f64,
    standardizer: FeatureStandardizer,
    machines: Vec<BinarySvm>,
}

impl MulticlassSvm {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            classes: self.classes.clone(),
            gamma: self.params.gamma,
            c: self.params.c,
            standardizer: self.standardizer.clone(),
            machines: self.machines.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization")
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), SvmError> {
        writer.write_all(self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, SvmError> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.version != MODEL_VERSION {
            return Err(SvmError::ModelVersion(file.version));
        }
        let k = file.classes.len();
        let expected = k * (k - 1) / 2;
        if file.machines.len() != expected {
            return Err(SvmError::MachineCount {
                got: file.machines.len(),
                expected,
                classes: k,
            });
        }
        for m in &file.machines {
            for label in [m.neg, m.pos] {
                if !file.classes.contains(&label) {
                    return Err(SvmError::UnknownLabel(label));
                }
            }
        }
        let params = KernelParams::new(file.gamma, file.c)?;
        Ok(MulticlassSvm {
            machines: file.machines,
            classes: file.classes,
            standardizer: file.standardizer,
            params,
        })
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, SvmError> {
        let mut buf = String::new();
        reader.read_to_string(&mut buf)?;
        Self::from_json(&buf)
    }
}
