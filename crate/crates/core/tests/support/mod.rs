//! Shared test oracles: an independent projected-gradient solver for the SVM
//! dual and seeded random problem generation.
//!
//! The oracle maximizes W(α) = Σα − ½αᵀQα over {0 ≤ α ≤ C, yᵀα = 0} by plain
//! gradient ascent with an exact Euclidean projection onto the feasible set
//! (bisection on the equality multiplier). It shares no code with the SMO
//! path it checks.

use proprio_core::svm::rbf_kernel;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub struct QpProblem {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub gamma: f64,
    pub c: f64,
}

impl QpProblem {
    pub fn kernel_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.x.len();
        let mut q = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                q[i][j] = self.y[i]
                    * self.y[j]
                    * rbf_kernel(&self.x[i], &self.x[j], self.gamma).unwrap();
            }
        }
        q
    }

    /// W(α) = Σα − ½αᵀQα.
    pub fn dual_objective(&self, alpha: &[f64]) -> f64 {
        let q = self.kernel_matrix();
        let n = alpha.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += alpha[i] * alpha[j] * q[i][j];
            }
        }
        alpha.iter().sum::<f64>() - 0.5 * quad
    }

    /// Decision value from a dual point, bias from free vectors (midpoint of
    /// the KKT interval when none are free).
    pub fn decision_fn(&self, alpha: &[f64]) -> impl Fn(&[f64]) -> f64 + '_ {
        let bias = self.bias(alpha);
        let alpha = alpha.to_vec();
        move |probe: &[f64]| {
            let mut acc = bias;
            for ((xi, &yi), &ai) in self.x.iter().zip(&self.y).zip(&alpha) {
                if ai > 1e-12 {
                    acc += ai * yi * rbf_kernel(xi, probe, self.gamma).unwrap();
                }
            }
            acc
        }
    }

    fn bias(&self, alpha: &[f64]) -> f64 {
        let n = alpha.len();
        let raw = |i: usize| -> f64 {
            let mut acc = 0.0;
            for j in 0..n {
                if alpha[j] > 1e-12 {
                    acc += alpha[j]
                        * self.y[j]
                        * rbf_kernel(&self.x[j], &self.x[i], self.gamma).unwrap();
                }
            }
            acc
        };
        let mut sum = 0.0;
        let mut free = 0usize;
        for i in 0..n {
            if alpha[i] > 1e-7 && alpha[i] < self.c - 1e-7 {
                sum += self.y[i] - raw(i);
                free += 1;
            }
        }
        if free > 0 {
            return sum / free as f64;
        }
        // Midpoint of the feasible bias interval.
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..n {
            let b = self.y[i] - raw(i);
            let upper = alpha[i] >= self.c - 1e-7;
            if (self.y[i] > 0.0) == upper {
                lo = lo.max(b);
            } else {
                hi = hi.min(b);
            }
        }
        (lo + hi) / 2.0
    }
}

/// Two jittered clusters with both labels present, n in [10, max_n].
pub fn random_problem(seed: u64, max_n: usize, c: f64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10 + (rng.next_u64() as usize) % (max_n - 10 + 1);
    let spread = 0.5 + uniform(&mut rng);
    let gap = 1.0 + 2.0 * uniform(&mut rng);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < 2 {
            // Guarantee both classes.
            if i == 0 {
                1.0
            } else {
                -1.0
            }
        } else if uniform(&mut rng) < 0.5 {
            1.0
        } else {
            -1.0
        };
        let cx = label * gap / 2.0;
        x.push(vec![
            cx + spread * (uniform(&mut rng) - 0.5),
            spread * (uniform(&mut rng) - 0.5) * 2.0,
        ]);
        y.push(label);
    }
    QpProblem {
        x,
        y,
        gamma: 0.5,
        c,
    }
}

/// Exact Euclidean projection of `v` onto {0 ≤ α ≤ C} ∩ {yᵀα = 0}:
/// α(λ) = clamp(v − λ·y, 0, C) with λ found by bisection.
pub fn project_feasible(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let apply = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c))
            .collect()
    };
    let balance = |alpha: &[f64]| -> f64 { alpha.iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let bound = v.iter().fold(0.0f64, |m, vi| m.max(vi.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        // balance is non-increasing in lambda.
        if balance(&apply(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    apply((lo + hi) / 2.0)
}

/// Projected-gradient ascent on the dual, run to (tight) convergence.
pub fn pg_solve(problem: &QpProblem, max_iters: usize) -> Vec<f64> {
    let q = problem.kernel_matrix();
    let n = problem.y.len();
    // Gershgorin bound on the largest eigenvalue of Q.
    let lip = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;
    let mut alpha = vec![0.0; n];
    for _ in 0..max_iters {
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let qdot: f64 = (0..n).map(|j| q[i][j] * alpha[j]).sum();
            v.push(alpha[i] + step * (1.0 - qdot));
        }
        let next = project_feasible(&v, &problem.y, problem.c);
        let moved = alpha
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        alpha = next;
        if moved < 1e-13 {
            break;
        }
    }
    alpha
}
