//! Asynchronous Bayesian optimization over the latent design space.
//!
//! A Matern-5/2 Gaussian process with per-axis length scales models fitness
//! as a function of the latent point. Proposals maximize expected
//! improvement, multiplied by a hard local penalizer around points that are
//! still being evaluated so parallel workers spread out instead of piling
//! onto one optimum. All state lives in one serialized authority:
//! propose and report are atomic transactions, so with one worker the
//! asynchronous loop is bit-identical to sequential optimization.
//!
//! Everything is f64: model math feeds a log file that records raw f64
//! values for bit-exact replay.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::io::{self, BufRead, Write};
use std::sync::Mutex;
use std::time::Instant;

use crate::genome::{decode_verdict, DecodeVerdict, Vae};
use crate::geometry::ModuleGeometry;
use crate::morphology::GenomeSeq;
use crate::poseopt::{optimize_pose, PoseOptConfig};
use crate::simcore::{SimConfig, Simulator, Terrain};

// ---------------------------------------------------------------------------
// Gaussian process.

/// Kernel and noise hyperparameters for the Matern-5/2 ARD kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyper {
    /// Unit-scale prior used before data exists or when data is degenerate.
    pub fn prior(dim: usize) -> Self {
        Self { length_scales: vec![1.0; dim], signal_variance: 1.0, noise_variance: 1.0e-6 }
    }
}

fn scaled_sq_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((&x, &y), &l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum()
}

fn matern52(r2: f64, signal: f64) -> f64 {
    let s5r = (5.0 * r2).sqrt();
    signal * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
}

/// Kernel matrix with `noise` on the diagonal. The kernel is symmetric, so
/// only the lower triangle is evaluated and the upper is mirrored.
fn kernel_matrix(x: &[Vec<f64>], hyper: &GpHyper, noise: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = matern52(
            scaled_sq_dist(&x[i], &x[i], &hyper.length_scales),
            hyper.signal_variance,
        ) + noise;
        for j in 0..i {
            let v = matern52(
                scaled_sq_dist(&x[i], &x[j], &hyper.length_scales),
                hyper.signal_variance,
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gaussian-process posterior conditioned on completed evaluations.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyper,
    /// Hyperparameters fell back to the prior because the data carried no
    /// signal (all fitness values equal).
    pub degenerate: bool,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
}

/// Conditioning failures.
#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with inflated noise")]
    NotPositiveDefinite,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("point dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

impl GpModel {
    /// Prior model with an empty conditioning set: mean zero, variance equal
    /// to the signal variance everywhere.
    pub fn prior(hyper: GpHyper) -> Self {
        Self {
            hyper,
            degenerate: false,
            x: Vec::new(),
            y_mean: 0.0,
            l: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
        }
    }

    /// Conditions on observations with fixed hyperparameters. Noise is
    /// inflated by factors of ten, a few times at most, if the Cholesky
    /// factorization fails.
    pub fn condition(x: Vec<Vec<f64>>, y: &[f64], hyper: GpHyper) -> Result<Self, GpError> {
        assert_eq!(x.len(), y.len(), "point/value count mismatch");
        let n = x.len();
        let y_mean = if n == 0 { 0.0 } else { y.iter().sum::<f64>() / n as f64 };
        if n == 0 {
            return Ok(Self::prior(hyper));
        }
        let yc = DVector::from_iterator(n, y.iter().map(|&v| v - y_mean));
        let mut noise = hyper.noise_variance.max(1.0e-10);
        for _ in 0..6 {
            let k = kernel_matrix(&x, &hyper, noise);
            if let Some(chol) = Cholesky::new(k) {
                let alpha = chol.solve(&yc);
                let mut hyper = hyper;
                hyper.noise_variance = noise;
                return Ok(Self {
                    hyper,
                    degenerate: false,
                    x,
                    y_mean,
                    l: chol.unpack(),
                    alpha,
                });
            }
            noise *= 10.0;
        }
        Err(GpError::NotPositiveDefinite)
    }

    pub fn dim(&self) -> usize {
        self.hyper.length_scales.len()
    }

    pub fn n_observations(&self) -> usize {
        self.x.len()
    }

    /// Posterior mean and variance of the latent function at a point.
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        assert_eq!(z.len(), self.dim(), "query dimension mismatch");
        if self.x.is_empty() {
            return (self.y_mean, self.hyper.signal_variance);
        }
        let kstar = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| {
                matern52(
                    scaled_sq_dist(xi, z, &self.hyper.length_scales),
                    self.hyper.signal_variance,
                )
            }),
        );
        let mean = self.y_mean + kstar.dot(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(&kstar)
            .expect("cholesky factor has positive diagonal");
        let var = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        (mean, var)
    }
}

/// Log marginal likelihood of observations under the kernel, or None when
/// the kernel matrix is not positive definite.
fn log_marginal(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper) -> Option<f64> {
    let n = x.len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|&v| v - y_mean));
    let k = kernel_matrix(x, hyper, hyper.noise_variance);
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(&yc);
    let ldet: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    Some(-0.5 * yc.dot(&alpha) - ldet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Maximum-marginal-likelihood hyperparameters via multi-start Nelder-Mead
/// in log space. Deterministic for a fixed seed. All-equal fitness values
/// carry no signal: the prior is returned with the degenerate flag set.
pub fn fit_hypers(
    x: &[Vec<f64>],
    y: &[f64],
    seed: u64,
    starts: usize,
    iters: usize,
) -> (GpHyper, bool) {
    assert!(x.len() >= 2, "need at least two observations");
    let dim = x[0].len();
    let var_y = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64
    };
    if var_y < 1.0e-12 {
        return (GpHyper::prior(dim), true);
    }

    // theta = [ln l_1..d, ln signal, ln noise], box-bounded by penalty.
    let lo = [-4.6, -13.8, -20.7]; // ln 1e-2, ln 1e-6, ln 1e-9
    let hi = [4.6, 6.9, 0.0]; // ln 1e2, ln 1e3, ln 1
    let unpack = |theta: &[f64]| GpHyper {
        length_scales: theta[..dim].iter().map(|&t| t.exp()).collect(),
        signal_variance: theta[dim].exp(),
        noise_variance: theta[dim + 1].exp(),
    };
    let objective = |theta: &[f64]| {
        for (i, &t) in theta.iter().enumerate() {
            let k = if i < dim { 0 } else { i - dim + 1 };
            if t < lo[k] || t > hi[k] {
                return 1.0e10;
            }
        }
        match log_marginal(x, y, &unpack(theta)) {
            Some(lml) => -lml,
            None => 1.0e10,
        }
    };

    let mut best_theta = vec![0.0; dim + 2];
    best_theta[dim] = var_y.max(1.0e-6).ln();
    best_theta[dim + 1] = (1.0e-4 * var_y).max(1.0e-9).ln();
    let mut best_f = objective(&best_theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..starts {
        let start = if s == 0 {
            best_theta.clone()
        } else {
            let mut t = vec![0.0; dim + 2];
            for (i, ti) in t.iter_mut().enumerate() {
                *ti = if i < dim {
                    rng.gen_range(-2.3..1.1) // l in [0.1, 3]
                } else if i == dim {
                    rng.gen_range(-2.0..4.0)
                } else {
                    rng.gen_range(-12.0..-2.0)
                };
            }
            t
        };
        let (theta, f) = nelder_mead(&objective, &start, 0.4, iters);
        if f < best_f {
            best_f = f;
            best_theta = theta;
        }
    }
    (unpack(&best_theta), false)
}

/// Fits hyperparameters and conditions in one step.
pub fn fit_gp(x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<GpModel, GpError> {
    if x.len() < 2 {
        return Err(GpError::TooFewObservations { needed: 2, got: x.len() });
    }
    let (hyper, degenerate) = fit_hypers(x, y, seed, 4, 200);
    let mut model = GpModel::condition(x.to_vec(), y, hyper)?;
    model.degenerate = degenerate;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Acquisition.

/// Closed-form expected improvement for maximization.
pub fn ei_value(mean: f64, std: f64, best: f64) -> f64 {
    if std < 1.0e-12 {
        return (mean - best).max(0.0);
    }
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let u = (mean - best) / std;
    ((mean - best) * gauss.cdf(u) + std * gauss.pdf(u)).max(0.0)
}

/// Expected improvement of the posterior at `z` over `best`.
pub fn expected_improvement(model: &GpModel, z: &[f64], best: f64) -> f64 {
    let (mean, var) = model.predict(z);
    ei_value(mean, var.max(0.0).sqrt(), best)
}

/// Largest observed slope between any two observations; the exclusion radius
/// below scales inversely with it.
pub fn lipschitz_estimate(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let mut l: f64 = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let d = dist(&x[i], &x[j]);
            if d > 1.0e-9 {
                l = l.max((y[i] - y[j]).abs() / d);
            }
        }
    }
    l.max(1.0e-3)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exclusion radius of one in-flight point: how far its eventual result
/// could plausibly move the optimum, given the slope estimate.
pub fn penalizer_radius(model: &GpModel, pending: &[f64], best: f64, lipschitz: f64, gamma: f64, min_radius: f64) -> f64 {
    let (mean, var) = model.predict(pending);
    ((best - mean + gamma * var.max(0.0).sqrt()) / lipschitz).max(min_radius)
}

/// Expected improvement damped to zero near in-flight evaluations: each
/// pending point multiplies in min(1, distance / radius).
pub fn penalized_acquisition(
    model: &GpModel,
    z: &[f64],
    pending: &[Vec<f64>],
    best: f64,
    lipschitz: f64,
    gamma: f64,
    min_radius: f64,
) -> f64 {
    let mut value = expected_improvement(model, z, best);
    for p in pending {
        let r = penalizer_radius(model, p, best, lipschitz, gamma, min_radius);
        value *= (dist(z, p) / r).min(1.0);
    }
    value
}

/// Nelder-Mead simplex minimization; returns the best point and value.
fn nelder_mead(
    objective: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), objective(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        let f = objective(&p);
        simplex.push((p, f));
    }
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite objective"));
        if (simplex[n].1 - simplex[0].1).abs() < 1.0e-10 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(p, _)| p[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> =
            centroid.iter().zip(&worst.0).map(|(&c, &w)| c + (c - w)).collect();
        let f_r = objective(&reflect);
        if f_r < simplex[0].1 {
            let expand: Vec<f64> =
                centroid.iter().zip(&reflect).map(|(&c, &r)| c + 2.0 * (r - c)).collect();
            let f_e = objective(&expand);
            simplex[n] = if f_e < f_r { (expand, f_e) } else { (reflect, f_r) };
        } else if f_r < simplex[n - 1].1 {
            simplex[n] = (reflect, f_r);
        } else {
            let (toward, f_toward) =
                if f_r < worst.1 { (&reflect, f_r) } else { (&worst.0, worst.1) };
            let contract: Vec<f64> =
                centroid.iter().zip(toward).map(|(&c, &t)| c + 0.5 * (t - c)).collect();
            let f_c = objective(&contract);
            if f_c < f_toward {
                simplex[n] = (contract, f_c);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> =
                        best.iter().zip(&entry.0).map(|(&b, &p)| b + 0.5 * (p - b)).collect();
                    entry.1 = objective(&shrunk);
                    entry.0 = shrunk;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite objective"));
    let (p, f) = simplex.swap_remove(0);
    (p, f)
}

// ---------------------------------------------------------------------------
// Optimizer state.

/// Search configuration. Everything that shapes a run lives here so the run
/// log can embed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub budget: usize,
    pub dim: usize,
    /// Symmetric search box [-half_width, half_width] per axis.
    pub box_half_width: f64,
    /// Fitness assigned to invalid decodes before any valid observation.
    pub initial_floor: f64,
    /// The floor tracks min(observed) - 1 until this many evaluations; then
    /// it freezes so late invalids cannot drag the surrogate further down.
    pub floor_freeze_after: usize,
    /// Proposals drawn uniformly before the surrogate takes over.
    pub init_random: usize,
    /// Refit kernel hyperparameters every this many completed evaluations.
    pub refit_every: usize,
    pub acquisition_starts: usize,
    pub nm_iters: usize,
    pub nm_step: f64,
    /// Optimism weight in the exclusion radius.
    pub gamma: f64,
    pub min_radius: f64,
    /// Suppress the acquisition near in-flight proposals. Off, concurrent
    /// workers may pile onto the same optimum; the ablation baseline.
    #[serde(default = "default_penalize")]
    pub penalize: bool,
    /// Seconds after which an unreported proposal is abandoned and its
    /// budget slot released.
    pub pending_timeout: f64,
    pub seed: u64,
}

fn default_penalize() -> bool {
    true
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            dim: 8,
            box_half_width: 3.0,
            initial_floor: -1.0e3,
            floor_freeze_after: 10,
            init_random: 5,
            refit_every: 10,
            acquisition_starts: 6,
            nm_iters: 120,
            nm_step: 0.5,
            gamma: 1.0,
            min_radius: 0.05,
            penalize: true,
            pending_timeout: 3600.0,
            seed: 0,
        }
    }
}

/// Outcome of the completed evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStatus {
    Pending,
    Done,
    Invalid,
}

/// One evaluation: proposal, result, and provenance for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Proposal counter; doubles as the per-proposal rng stream.
    pub id: u64,
    pub z: Vec<f64>,
    pub fitness: f64,
    pub status: EvalStatus,
    /// Decoded design, when the evaluator produced one.
    pub genome: Option<GenomeSeq>,
    pub proposed_at: f64,
    pub completed_at: f64,
    pub evaluator: String,
    pub seed: u64,
}

/// What an evaluator hands back.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutcome {
    Valid { fitness: f64, genome: Option<GenomeSeq> },
    /// Decode failure, build failure, or evaluator crash.
    Invalid,
}

/// Fitness oracle for latent points. `seed` is unique per proposal.
pub trait Evaluator: Sync {
    fn id(&self) -> &str;
    fn evaluate(&self, z: &[f64], seed: u64) -> EvalOutcome;
}

#[derive(Debug, Clone, PartialEq)]
struct PendingEval {
    id: u64,
    z: Vec<f64>,
    proposed_at: f64,
}

/// A claimed budget slot: evaluate `z`, then report under the same id.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: u64,
    pub z: Vec<f64>,
    pub seed: u64,
}

/// Serialized authority over one optimization run. All mutation goes through
/// `propose`, `report`, and `expire_pending`; each holds the invariants:
/// pending and done are disjoint, and done + pending never exceeds budget.
#[derive(Debug)]
pub struct BoState {
    pub config: BoConfig,
    done: Vec<EvalRecord>,
    pending: Vec<PendingEval>,
    proposals_issued: u64,
    fits_done: u64,
    cached_hyper: Option<GpHyper>,
    fit_size: usize,
    floor: f64,
    best_valid: Option<f64>,
}

impl BoState {
    pub fn new(config: BoConfig) -> Self {
        let floor = config.initial_floor;
        Self {
            config,
            done: Vec::new(),
            pending: Vec::new(),
            proposals_issued: 0,
            fits_done: 0,
            cached_hyper: None,
            fit_size: 0,
            floor,
            best_valid: None,
        }
    }

    pub fn history(&self) -> &[EvalRecord] {
        &self.done
    }

    pub fn n_pending(&self) -> usize {
        self.pending.len()
    }

    /// Budget slots consumed: completed plus in flight.
    pub fn issued(&self) -> usize {
        self.done.len() + self.pending.len()
    }

    pub fn best(&self) -> Option<&EvalRecord> {
        self.done
            .iter()
            .max_by(|a, b| a.fitness.partial_cmp(&b.fitness).expect("finite fitness"))
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    fn rng_for(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    fn random_in_box(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let w = self.config.box_half_width;
        (0..self.config.dim).map(|_| rng.gen_range(-w..w)).collect()
    }

    fn clamp_to_box(&self, z: &mut [f64]) {
        let w = self.config.box_half_width;
        for v in z {
            *v = v.clamp(-w, w);
        }
    }

    /// Claims a budget slot and picks the next point: uniform during warmup,
    /// penalized-acquisition argmax once the surrogate has data.
    ///
    /// Panics if the budget is exhausted; callers check `issued()` first
    /// under the same lock.
    pub fn propose(&mut self, now: f64) -> Proposal {
        assert!(self.issued() < self.config.budget, "budget exhausted");
        let id = self.proposals_issued;
        self.proposals_issued += 1;
        let mut rng = self.rng_for(id);

        let z = if self.done.len() < self.config.init_random.max(2) {
            self.random_in_box(&mut rng)
        } else {
            self.acquisition_argmax(&mut rng)
        };
        self.pending.push(PendingEval { id, z: z.clone(), proposed_at: now });
        Proposal { id, z, seed: id }
    }

    fn acquisition_argmax(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let x: Vec<Vec<f64>> = self.done.iter().map(|r| r.z.clone()).collect();
        let y: Vec<f64> = self.done.iter().map(|r| r.fitness).collect();
        if self.cached_hyper.is_none() || self.done.len() >= self.fit_size + self.config.refit_every
        {
            // Hyper fits draw from a stream far above any proposal id.
            let (hyper, _) = fit_hypers(&x, &y, self.config.seed ^ (1 << 63) ^ self.fits_done, 4, 200);
            self.fits_done += 1;
            self.cached_hyper = Some(hyper);
            self.fit_size = self.done.len();
        }
        let hyper = self.cached_hyper.clone().expect("just fitted");
        let model = match GpModel::condition(x.clone(), &y, hyper) {
            Ok(m) => m,
            // Pathological geometry: fall back to exploration.
            Err(_) => return self.random_in_box(rng),
        };
        let best = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lipschitz = lipschitz_estimate(&x, &y);
        let pending: Vec<Vec<f64>> = if self.config.penalize {
            self.pending.iter().map(|p| p.z.clone()).collect()
        } else {
            Vec::new()
        };
        let cfg = &self.config;
        let objective = |z: &[f64]| {
            let mut zc = z.to_vec();
            let w = cfg.box_half_width;
            for v in &mut zc {
                *v = v.clamp(-w, w);
            }
            -penalized_acquisition(&model, &zc, &pending, best, lipschitz, cfg.gamma, cfg.min_radius)
        };

        let best_done = self
            .done
            .iter()
            .max_by(|a, b| a.fitness.partial_cmp(&b.fitness).expect("finite fitness"))
            .expect("nonempty")
            .z
            .clone();
        let mut champion = best_done.clone();
        let mut champion_f = f64::INFINITY;
        for s in 0..cfg.acquisition_starts {
            let start = if s == 0 { best_done.clone() } else { self.random_in_box(rng) };
            let (mut p, f) = nelder_mead(&objective, &start, cfg.nm_step, cfg.nm_iters);
            self.clamp_to_box(&mut p);
            if f < champion_f {
                champion_f = f;
                champion = p;
            }
        }
        champion
    }

    /// Files the result for an in-flight proposal. Unknown ids (already
    /// expired) are dropped and None is returned.
    pub fn report(&mut self, id: u64, outcome: EvalOutcome, now: f64) -> Option<&EvalRecord> {
        let idx = self.pending.iter().position(|p| p.id == id)?;
        let pending = self.pending.swap_remove(idx);
        let (fitness, status, genome) = match outcome {
            EvalOutcome::Valid { fitness, genome } if fitness.is_finite() => {
                (fitness, EvalStatus::Done, genome)
            }
            _ => (self.floor, EvalStatus::Invalid, None),
        };
        if status == EvalStatus::Done {
            let best = self.best_valid.map_or(fitness, |b| b.min(fitness));
            self.best_valid = Some(best);
            if self.done.len() < self.config.floor_freeze_after {
                self.floor = best - 1.0;
            }
        }
        self.done.push(EvalRecord {
            id,
            z: pending.z,
            fitness,
            status,
            genome,
            proposed_at: pending.proposed_at,
            completed_at: now,
            evaluator: String::new(),
            seed: id,
        });
        self.done.last()
    }

    /// Releases proposals whose workers went silent; their budget slots
    /// become available again.
    pub fn expire_pending(&mut self, now: f64) -> usize {
        let timeout = self.config.pending_timeout;
        let before = self.pending.len();
        self.pending.retain(|p| now - p.proposed_at <= timeout);
        before - self.pending.len()
    }
}

// ---------------------------------------------------------------------------
// Run loop.

/// Completed run: full history in report order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRun {
    pub config: BoConfig,
    pub evaluator: String,
    pub history: Vec<EvalRecord>,
}

impl BoRun {
    pub fn best(&self) -> Option<&EvalRecord> {
        self.history
            .iter()
            .max_by(|a, b| a.fitness.partial_cmp(&b.fitness).expect("finite fitness"))
    }
}

/// Running maximum of fitness in report order.
pub fn best_so_far(history: &[EvalRecord]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    history
        .iter()
        .map(|r| {
            best = best.max(r.fitness);
            best
        })
        .collect()
}

/// Drives the propose/evaluate/report loop with `n_workers` threads until
/// the budget is spent. Evaluations run outside the state lock; with one
/// worker the schedule is exactly sequential.
pub fn bo_run(evaluator: &dyn Evaluator, config: BoConfig, n_workers: usize) -> BoRun {
    assert!(n_workers >= 1, "need at least one worker");
    let state = Mutex::new(BoState::new(config.clone()));
    let clock = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let proposal = {
                    let mut s = state.lock().expect("state lock");
                    let now = clock.elapsed().as_secs_f64();
                    s.expire_pending(now);
                    if s.issued() >= s.config.budget {
                        break;
                    }
                    s.propose(now)
                };
                let outcome = evaluator.evaluate(&proposal.z, proposal.seed);
                let mut s = state.lock().expect("state lock");
                s.report(proposal.id, outcome, clock.elapsed().as_secs_f64());
            });
        }
    });
    let state = state.into_inner().expect("workers joined");
    let mut history = state.done;
    for r in &mut history {
        r.evaluator = evaluator.id().to_string();
    }
    BoRun { config, evaluator: evaluator.id().to_string(), history }
}

/// Uniform random search over the same box; the baseline any surrogate
/// search has to beat.
pub fn random_search(evaluator: &dyn Evaluator, config: &BoConfig) -> BoRun {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.budget);
    let w = config.box_half_width;
    let mut floor = config.initial_floor;
    let mut best_valid: Option<f64> = None;
    for id in 0..config.budget as u64 {
        let z: Vec<f64> = (0..config.dim).map(|_| rng.gen_range(-w..w)).collect();
        let outcome = evaluator.evaluate(&z, id);
        let (fitness, status, genome) = match outcome {
            EvalOutcome::Valid { fitness, genome } if fitness.is_finite() => {
                (fitness, EvalStatus::Done, genome)
            }
            _ => (floor, EvalStatus::Invalid, None),
        };
        if status == EvalStatus::Done {
            let best = best_valid.map_or(fitness, |b: f64| b.min(fitness));
            best_valid = Some(best);
            if history.len() < config.floor_freeze_after {
                floor = best - 1.0;
            }
        }
        history.push(EvalRecord {
            id,
            z,
            fitness,
            status,
            genome,
            proposed_at: 0.0,
            completed_at: 0.0,
            evaluator: evaluator.id().to_string(),
            seed: id,
        });
    }
    BoRun { config: config.clone(), evaluator: evaluator.id().to_string(), history }
}

// ---------------------------------------------------------------------------
// Run log.

/// Writes a run as line-delimited JSON: a header carrying the resolved
/// config, then one record per line in report order.
pub fn write_log<W: Write>(run: &BoRun, w: &mut W) -> io::Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        config: &'a BoConfig,
        evaluator: &'a str,
    }
    serde_json::to_writer(&mut *w, &Header { config: &run.config, evaluator: &run.evaluator })?;
    writeln!(w)?;
    for r in &run.history {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a run log back; f64 fields survive the JSON roundtrip bit-exactly
/// because serde_json prints the shortest representation that reparses to
/// the same value.
pub fn read_log<R: BufRead>(r: &mut R) -> io::Result<BoRun> {
    #[derive(Deserialize)]
    struct Header {
        config: BoConfig,
        evaluator: String,
    }
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty run log"))??;
    let header: Header = serde_json::from_str(&head)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut history = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        history.push(
            serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(BoRun { config: header.config, evaluator: header.evaluator, history })
}

// ---------------------------------------------------------------------------
// Evaluators.

/// Analytic test objective: negative squared norm, maximum at the origin.
pub struct SyntheticQuadratic;

impl Evaluator for SyntheticQuadratic {
    fn id(&self) -> &str {
        "synthetic-quadratic"
    }

    fn evaluate(&self, z: &[f64], _seed: u64) -> EvalOutcome {
        EvalOutcome::Valid { fitness: -z.iter().map(|v| v * v).sum::<f64>(), genome: None }
    }
}

/// Default design evaluator: decode the latent point, reject unbuildable
/// designs, then score the best settled pose found by a short pose search.
pub struct DesignEvaluator {
    pub vae: Vae,
    pub geom: ModuleGeometry<f64>,
    pub sim: SimConfig<f64>,
    pub pose: PoseOptConfig<f64>,
}

impl DesignEvaluator {
    pub fn id_str() -> &'static str {
        "pose-probe-v1"
    }
}

impl Evaluator for DesignEvaluator {
    fn id(&self) -> &str {
        Self::id_str()
    }

    fn evaluate(&self, z: &[f64], seed: u64) -> EvalOutcome {
        if z.len() != self.vae.latent_dim() {
            return EvalOutcome::Invalid;
        }
        let seq = self.vae.decode_genome(z);
        let tree = match decode_verdict(&seq, &self.geom) {
            DecodeVerdict::Valid(tree) => tree,
            _ => return EvalOutcome::Invalid,
        };
        let sim = match Simulator::from_tree(&tree, &self.geom, self.sim.clone(), Terrain::Flat) {
            Ok(s) => s,
            Err(_) => return EvalOutcome::Invalid,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = optimize_pose(&sim, &tree, &self.pose, &mut rng);
        EvalOutcome::Valid { fitness: result.best.score, genome: Some(seq) }
    }
}
