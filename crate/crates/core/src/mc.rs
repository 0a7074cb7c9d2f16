//! Seeded Monte Carlo ensembles and their statistical verdicts.

use rayon::prelude::*;

use crate::control::{
    closed_loop_cosim_observe, CosimConfig, GaussianInitial, PidGains, ReferenceSignal, TruthModel,
};
use crate::error::{Error, Result};
use crate::fock::C64;
use crate::qkf::{predicted_rate, qkf_step, ModeParams, QkfState};
use crate::trajectory::{step, step_count, NoiseStream, QuadraturePhase, SlhCoefficients, TrajectoryState};

/// Environment variable holding the worker count.
pub const THREADS_VAR: &str = "QKF_THREADS";

/// Sigma multiplier of the terminal-mean test.
pub const MEAN_SIGMAS: f64 = 3.0;
/// Accepted band for quadratic variation over `T`.
pub const QV_BOUNDS: (f64, f64) = (0.95, 1.05);

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub t_final: f64,
    pub dt: f64,
    pub base_seed: u64,
    pub scenario: String,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, t_final: f64, dt: f64, base_seed: u64, scenario: impl Into<String>) -> Result<Self> {
        if n_traj == 0 {
            return Err(Error::Domain("an ensemble needs at least one trajectory".into()));
        }
        if !(dt > 0.0 && dt.is_finite() && t_final.is_finite() && dt <= t_final) {
            return Err(Error::Domain(format!("need 0 < dt <= T, got dt = {dt}, T = {t_final}")));
        }
        Ok(Self {
            n_traj,
            t_final,
            dt,
            base_seed,
            scenario: scenario.into(),
        })
    }
}

/// Worker count from `QKF_THREADS`, defaulting to the available parallelism.
pub fn worker_threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Domain(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `build` for every trajectory index on a pool of [`worker_threads`]
/// workers. Trajectory `i` receives the stream seeded with `base_seed ⊕ i`.
/// Results come back in index order; the lowest failing index is reported.
pub fn run_ensemble<R, F>(config: &EnsembleConfig, build: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize, NoiseStream) -> Result<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads()?)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    let results: Vec<Result<R>> = pool.install(|| {
        (0..config.n_traj)
            .into_par_iter()
            .map(|i| {
                NoiseStream::for_trajectory(config.base_seed, i, config.dt)
                    .and_then(|noise| build(i, noise))
                    .map_err(|e| e.in_trajectory(i))
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Per-trajectory series pairing a truth with the filter estimate.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EnsembleRecord {
    pub t: Vec<f64>,
    pub truth_a: Vec<C64>,
    /// Conditional excess `⟨a†a⟩ − |⟨a⟩|²` of the truth.
    pub truth_var: Vec<f64>,
    pub a_hat: Vec<C64>,
    pub v: Vec<f64>,
    pub w: Vec<C64>,
    pub y: Vec<f64>,
    pub i: Vec<f64>,
    /// Innovations at every step, when requested.
    pub innovations: Vec<f64>,
}

impl EnsembleRecord {
    /// `⟨(a − â)†(a − â)⟩` at sample `k`.
    pub fn mse(&self, k: usize) -> f64 {
        self.truth_var[k] + (self.truth_a[k] - self.a_hat[k]).norm_sqr()
    }

    fn push(&mut self, t: f64, truth_a: C64, truth_var: f64, f: &QkfState, y: f64, i: f64) {
        self.t.push(t);
        self.truth_a.push(truth_a);
        self.truth_var.push(truth_var);
        self.a_hat.push(f.a_hat);
        self.v.push(f.riccati.v);
        self.w.push(f.riccati.w);
        self.y.push(y);
        self.i.push(i);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordOptions {
    pub stride: usize,
    pub full_innovations: bool,
}

/// One co-simulated trajectory (Fock-space truth plus PID filter) as a record.
pub fn cosim_record(
    initial: &GaussianInitial,
    gains: &PidGains,
    reference: &ReferenceSignal,
    params: &ModeParams,
    config: &CosimConfig,
    full_innovations: bool,
    noise: &mut NoiseStream,
) -> Result<EnsembleRecord> {
    let stride = config.stride.max(1);
    let steps = step_count(config.t_final, noise.dt())?;
    let mut rec = EnsembleRecord::default();
    closed_loop_cosim_observe(initial, gains, reference, params, config, noise, |k, s| {
        if full_innovations {
            rec.innovations.push(s.i);
        }
        if k % stride == 0 || k == steps {
            let m = &s.truth;
            rec.push(s.t, m.a, m.n - m.a.norm_sqr(), &s.filter, s.y, s.i);
        }
    })?;
    Ok(rec)
}

/// Uncontrolled Fock-space truth with the homodyne phase `theta(t)`, filtered
/// by the quantum Kalman filter on the truth's record.
#[allow(clippy::too_many_arguments)]
pub fn open_loop_record(
    initial: &GaussianInitial,
    params: &ModeParams,
    theta: &QuadraturePhase,
    dim: usize,
    truth: TruthModel,
    t_final: f64,
    options: RecordOptions,
    noise: &mut NoiseStream,
) -> Result<EnsembleRecord> {
    let dt = noise.dt();
    let steps = step_count(t_final, dt)?;
    let stride = options.stride.max(1);
    let slh = SlhCoefficients::damped_mode(params.gamma, params.omega, dim)?;
    let mut state = initial.truth_state(dim, truth)?;
    let mut filt = QkfState::new(initial.alpha, initial.cov);
    let mut i = 0.0;
    let mut rec = EnsembleRecord::default();
    let push = |rec: &mut EnsembleRecord, state: &TrajectoryState, filt: &QkfState, i: f64, t: f64| {
        let m = state.moments();
        rec.push(t, m.a, m.n - m.a.norm_sqr(), filt, state.y, i);
    };
    push(&mut rec, &state, &filt, i, 0.0);
    if options.full_innovations {
        rec.innovations.push(0.0);
    }
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let t1 = t0 + dt;
        let th = theta.at(t0);
        let next = step(&state, &slh, th, noise.next_increment(), dt).map_err(|e| e.at_step(k))?;
        let dy = next.y - state.y;
        state = next;
        state.t = t1;
        let di = dy - predicted_rate(filt.a_hat, th, params.gamma) * dt;
        filt = qkf_step(&filt, di, C64::new(0.0, 0.0), theta, params, dt).map_err(|e| e.at_step(k))?;
        filt.riccati.t = t1;
        i += di;
        if options.full_innovations {
            rec.innovations.push(i);
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            push(&mut rec, &state, &filt, i, t1);
        }
    }
    Ok(rec)
}

/// Open-loop trajectory of the normally ordered P-function unraveling: a
/// coherent amplitude drawn from the Gaussian P-function of `initial`
/// decays deterministically and drives `dY = √γ (e^{iθ}β + e^{−iθ}β*) dt + dW`.
/// Needs `V ≥ |W|`.
pub fn pfunction_record(
    initial: &GaussianInitial,
    params: &ModeParams,
    theta: f64,
    t_final: f64,
    options: RecordOptions,
    noise: &mut NoiseStream,
) -> Result<EnsembleRecord> {
    let (v, w) = (initial.cov.v, initial.cov.w);
    if v < w.norm() {
        return Err(Error::Domain("P-function needs V >= |W|".into()));
    }
    let dt = noise.dt();
    let steps = step_count(t_final, dt)?;
    let stride = options.stride.max(1);
    let half = C64::from_polar(1.0, 0.5 * w.arg());
    let s1 = (0.5 * (v + w.norm())).sqrt();
    let s2 = (0.5 * (v - w.norm())).max(0.0).sqrt();
    let z1 = noise.next_standard();
    let z2 = noise.next_standard();
    let mut beta = initial.alpha + half * C64::new(s1 * z1, s2 * z2);

    let decay = params.decay();
    let prop = (-decay * dt).exp();
    // ∫₀^dt e^{−κs} ds
    let area = if decay.norm() * dt < 1e-8 {
        C64::new(dt, 0.0) - decay * (0.5 * dt * dt)
    } else {
        (C64::new(1.0, 0.0) - prop) / decay
    };
    let rot = C64::from_polar(1.0, theta);
    let phase = QuadraturePhase::Constant(theta);
    let sg = params.gamma.sqrt();

    let mut filt = QkfState::new(initial.alpha, initial.cov);
    let (mut y, mut i) = (0.0, 0.0);
    let mut rec = EnsembleRecord::default();
    rec.push(0.0, beta, 0.0, &filt, y, i);
    if options.full_innovations {
        rec.innovations.push(0.0);
    }
    for k in 0..steps {
        let t1 = (k + 1) as f64 * dt;
        let dy = 2.0 * sg * (rot * beta * area).re + noise.next_increment();
        let di = dy - predicted_rate(filt.a_hat, theta, params.gamma) * dt;
        filt = qkf_step(&filt, di, C64::new(0.0, 0.0), &phase, params, dt).map_err(|e| e.at_step(k))?;
        filt.riccati.t = t1;
        beta *= prop;
        y += dy;
        i += di;
        if options.full_innovations {
            rec.innovations.push(i);
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            rec.push(t1, beta, 0.0, &filt, y, i);
        }
    }
    Ok(rec)
}

fn check_grids(records: &[EnsembleRecord]) -> Result<&[f64]> {
    let first = records
        .first()
        .ok_or_else(|| Error::GridMismatch("no records".into()))?;
    for (k, r) in records.iter().enumerate() {
        if r.t != first.t {
            return Err(Error::GridMismatch(format!("record {k} is sampled on a different grid")));
        }
    }
    Ok(&first.t)
}

/// Index-ordered ensemble aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub t: Vec<f64>,
    pub mean_truth_a: Vec<C64>,
    /// Standard error of `mean_truth_a` (of the modulus of deviations).
    pub stderr_truth_a: Vec<f64>,
    pub mean_a_hat: Vec<C64>,
    pub mse: Vec<f64>,
    pub v: Vec<f64>,
    pub terminal_innovation_mean: f64,
}

pub fn summarize(records: &[EnsembleRecord]) -> Result<EnsembleSummary> {
    let t = check_grids(records)?.to_vec();
    let n = records.len() as f64;
    let m = t.len();
    let mut mean_truth_a = vec![C64::new(0.0, 0.0); m];
    let mut mean_a_hat = vec![C64::new(0.0, 0.0); m];
    let mut mse = vec![0.0; m];
    let mut terminal = 0.0;
    for r in records {
        for k in 0..m {
            mean_truth_a[k] += r.truth_a[k];
            mean_a_hat[k] += r.a_hat[k];
            mse[k] += r.mse(k);
        }
        terminal += r.i[m - 1];
    }
    for k in 0..m {
        mean_truth_a[k] /= n;
        mean_a_hat[k] /= n;
        mse[k] /= n;
    }
    let mut stderr_truth_a = vec![0.0; m];
    if records.len() > 1 {
        for r in records {
            for k in 0..m {
                stderr_truth_a[k] += (r.truth_a[k] - mean_truth_a[k]).norm_sqr();
            }
        }
        for s in stderr_truth_a.iter_mut() {
            *s = (*s / (n - 1.0) / n).sqrt();
        }
    }
    Ok(EnsembleSummary {
        t,
        mean_truth_a,
        stderr_truth_a,
        mean_a_hat,
        mse,
        v: records[0].v.clone(),
        terminal_innovation_mean: terminal / n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnovationsVerdict {
    pub n: usize,
    pub terminal_mean: f64,
    pub mean_threshold: f64,
    pub mean_pass: bool,
    /// Quadratic variation over `T` for each record.
    pub qv_ratios: Vec<f64>,
    pub qv_min: f64,
    pub qv_max: f64,
    pub qv_bounds: (f64, f64),
    pub qv_pass: bool,
}

impl InnovationsVerdict {
    pub fn pass(&self) -> bool {
        self.mean_pass && self.qv_pass
    }
}

/// Terminal-mean z-test and per-path quadratic variation of innovation
/// paths sampled uniformly on `[0, T]`.
pub fn innovations_test(paths: &[&[f64]], t_final: f64) -> InnovationsVerdict {
    let n = paths.len();
    let terminal_mean = if n == 0 {
        0.0
    } else {
        paths.iter().map(|p| p.last().copied().unwrap_or(0.0) - p[0]).sum::<f64>() / n as f64
    };
    let mean_threshold = MEAN_SIGMAS * (t_final / n.max(1) as f64).sqrt();
    let qv_ratios: Vec<f64> = paths
        .iter()
        .map(|p| p.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / t_final)
        .collect();
    let qv_min = qv_ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let qv_max = qv_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    InnovationsVerdict {
        n,
        terminal_mean,
        mean_threshold,
        mean_pass: n > 0 && terminal_mean.abs() <= mean_threshold,
        qv_ratios,
        qv_min,
        qv_max,
        qv_bounds: QV_BOUNDS,
        qv_pass: n > 0 && qv_min >= QV_BOUNDS.0 && qv_max <= QV_BOUNDS.1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MSEReport {
    pub t: Vec<f64>,
    pub mse: Vec<f64>,
    pub v: Vec<f64>,
    pub window: (f64, f64),
    pub max_rel_deviation: f64,
}

/// `|MSE − V| / V`, zero when both vanish.
pub fn relative_deviation(mse: f64, v: f64) -> f64 {
    if mse.abs() <= 1e-15 && v.abs() <= 1e-15 {
        0.0
    } else {
        (mse - v).abs() / v.abs()
    }
}

/// Ensemble MSE against the Riccati `V` carried by the records, with the
/// maximum relative deviation over `[0.1 T, T]`.
pub fn mse_vs_v(records: &[EnsembleRecord], t_final: f64) -> Result<MSEReport> {
    let summary = summarize(records)?;
    for r in records {
        if r.v.len() != summary.t.len() {
            return Err(Error::GridMismatch("Riccati series length differs from the grid".into()));
        }
    }
    let window = (0.1 * t_final, t_final);
    let max_rel_deviation = summary
        .t
        .iter()
        .zip(summary.mse.iter().zip(&summary.v))
        .filter(|(&t, _)| t >= window.0 - 1e-12 && t <= window.1 + 1e-12)
        .map(|(_, (&m, &v))| relative_deviation(m, v))
        .fold(0.0, f64::max);
    Ok(MSEReport {
        t: summary.t,
        mse: summary.mse,
        v: summary.v,
        window,
        max_rel_deviation,
    })
}
