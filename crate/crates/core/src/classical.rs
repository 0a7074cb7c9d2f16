//! Scalar classical filters: discrete Kalman, Kalman-Bucy and a grid solver
//! for the Zakai equation of a one-dimensional diffusion.
//!
//! Observation noise has unit intensity throughout. In discrete time the
//! model is `x_k = A x_{k-1} + B u_k + w_k`, `y_k = H x_k + v_k` with
//! `Var w = Q`, `Var v = 1`; in continuous time
//! `dX = (A X + B u) dt + √Q dW`, `dY = H X dt + dV`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::trajectory::{step_count, NoiseStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarLGModel {
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub q: f64,
}

impl ScalarLGModel {
    pub fn new(a: f64, b: f64, h: f64, q: f64) -> Result<Self> {
        if ![a, b, h, q].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("model coefficients must be finite".into()));
        }
        if q < 0.0 {
            return Err(Error::Domain(format!("process noise variance {q} must be >= 0")));
        }
        Ok(Self { a, b, h, q })
    }

    /// Discrete-time model obtained from the continuous one over a step `dt`,
    /// with the record increment rescaled to unit-variance observations
    /// `y_k = dY_k / √dt`.
    pub fn discretize(&self, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Self::new(1.0 + self.a * dt, self.b * dt, self.h * dt.sqrt(), self.q * dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteKalmanState {
    pub x_hat: f64,
    pub p: f64,
    pub k: usize,
}

impl DiscreteKalmanState {
    pub fn new(x_hat: f64, p: f64) -> Result<Self> {
        if !(p >= 0.0 && p.is_finite() && x_hat.is_finite()) {
            return Err(Error::Domain(format!("invalid filter state x = {x_hat}, P = {p}")));
        }
        Ok(Self { x_hat, p, k: 0 })
    }
}

/// One-step prediction `(x̃, P̃)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub x_tilde: f64,
    pub p_tilde: f64,
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// `x̂ = x̃ + H P̃ I`, `P = (1 − H² P̃) P̃`, without the innovation normalization.
    PaperLiteral,
    /// Gain `K = P̃ H / (H² P̃ + 1)`.
    #[default]
    Standard,
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step {dt} must be positive")));
    }
    Ok(())
}

pub fn kalman_predict(state: &DiscreteKalmanState, u: f64, model: &ScalarLGModel) -> Prediction {
    Prediction {
        x_tilde: model.a * state.x_hat + model.b * u,
        p_tilde: model.a * model.a * state.p + model.q,
        k: state.k + 1,
    }
}

pub fn kalman_update(
    pred: &Prediction,
    y: f64,
    model: &ScalarLGModel,
    mode: UpdateMode,
) -> Result<DiscreteKalmanState> {
    let h = model.h;
    let innovation = y - h * pred.x_tilde;
    let (x_hat, p) = match mode {
        UpdateMode::PaperLiteral => (
            pred.x_tilde + h * pred.p_tilde * innovation,
            (1.0 - h * h * pred.p_tilde) * pred.p_tilde,
        ),
        UpdateMode::Standard => {
            let gain = pred.p_tilde * h / (h * h * pred.p_tilde + 1.0);
            (
                pred.x_tilde + gain * innovation,
                (1.0 - gain * h) * pred.p_tilde,
            )
        }
    };
    if p < 0.0 {
        return Err(Error::Domain(format!(
            "literal update gives negative variance {p:.6e} (H^2 P~ = {:.6e} > 1)",
            h * h * pred.p_tilde
        )));
    }
    Ok(DiscreteKalmanState { x_hat, p, k: pred.k })
}

fn riccati_1d(model: &ScalarLGModel, p: f64) -> f64 {
    2.0 * model.a * p + model.q - model.h * model.h * p * p
}

/// Kalman-Bucy step: Euler for the estimate, RK4 for the variance.
pub fn kalman_bucy_step(
    state: &DiscreteKalmanState,
    dy: f64,
    u: f64,
    dt: f64,
    model: &ScalarLGModel,
) -> Result<DiscreteKalmanState> {
    check_dt(dt)?;
    let (x, p) = (state.x_hat, state.p);
    let x_new =
        x + (model.a * x + model.b * u) * dt + model.h * p * (dy - model.h * x * dt);
    let k1 = riccati_1d(model, p);
    let k2 = riccati_1d(model, p + 0.5 * dt * k1);
    let k3 = riccati_1d(model, p + 0.5 * dt * k2);
    let k4 = riccati_1d(model, p + dt * k3);
    let p_new = (p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
    if !(x_new.is_finite() && p_new.is_finite()) {
        return Err(Error::Divergence {
            t: (state.k + 1) as f64 * dt,
            detail: "Kalman-Bucy state not finite".into(),
        });
    }
    Ok(DiscreteKalmanState {
        x_hat: x_new,
        p: p_new,
        k: state.k + 1,
    })
}

/// Uniform grid of `n` points on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) || n < 3 {
            return Err(Error::Domain(format!(
                "grid [{lo}, {hi}] with {n} points is invalid"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Trapezoid rule for samples on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = values.len();
        let inner: f64 = values.iter().sum();
        self.dx() * (inner - 0.5 * (values[0] + values[n - 1]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::DimensionMismatch {
                expected: grid.n,
                found: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: UniformGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n).map(|i| f(grid.x(i))).collect();
        Self { grid, values }
    }

    pub fn gaussian(grid: UniformGrid, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::Domain(format!("variance {var} must be positive")));
        }
        Ok(Self::from_fn(grid, |x| (-(x - mean).powi(2) / (2.0 * var)).exp()))
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `dX = v(X) dt + σ(X) dW` observed through `dY = h(X) dt + dV`.
#[derive(Clone)]
pub struct DiffusionModel1D {
    pub drift: ScalarFn,
    pub sigma: ScalarFn,
    pub obs: ScalarFn,
}

impl fmt::Debug for DiffusionModel1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DiffusionModel1D { .. }")
    }
}

impl DiffusionModel1D {
    pub fn new(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        obs: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            obs: Arc::new(obs),
        }
    }

    /// The uncontrolled linear-Gaussian model as a diffusion.
    pub fn linear(model: &ScalarLGModel) -> Self {
        let (a, h, s) = (model.a, model.h, model.q.sqrt());
        Self::new(move |x| a * x, move |_| s, move |x| h * x)
    }
}

/// `ℒ* g = −(v g)′ + ½ (σ² g)″` in conservative flux form with zero-flux
/// walls; end nodes own half cells so the trapezoid mass is conserved exactly.
fn forward_generator(grid: &UniformGrid, v: &[f64], s2: &[f64], g: &[f64], out: &mut [f64]) {
    let n = grid.n;
    let dx = grid.dx();
    let mut left = 0.0;
    for i in 0..n {
        let right = if i + 1 < n {
            0.5 * (v[i] * g[i] + v[i + 1] * g[i + 1])
                - 0.5 * (s2[i + 1] * g[i + 1] - s2[i] * g[i]) / dx
        } else {
            0.0
        };
        let width = if i == 0 || i == n - 1 { 0.5 * dx } else { dx };
        out[i] = -(right - left) / width;
        left = right;
    }
}

/// One explicit step `ξ ← ξ + ℒ*ξ dt + h ξ dY`.
pub fn zakai_grid_step(
    density: &GridDensity,
    dy: f64,
    dt: f64,
    model: &DiffusionModel1D,
) -> Result<GridDensity> {
    check_dt(dt)?;
    let grid = density.grid;
    let xs = grid.points();
    let v: Vec<f64> = xs.iter().map(|&x| (model.drift)(x)).collect();
    let s2: Vec<f64> = xs.iter().map(|&x| (model.sigma)(x).powi(2)).collect();
    let cfl = s2.iter().cloned().fold(0.0, f64::max) * dt / grid.dx().powi(2);
    if cfl > 0.5 {
        return Err(Error::Stability(format!(
            "diffusion number max(sigma^2) dt / dx^2 = {cfl:.4} exceeds 0.5"
        )));
    }
    let mut lg = vec![0.0; grid.n];
    forward_generator(&grid, &v, &s2, &density.values, &mut lg);
    let values = density
        .values
        .iter()
        .zip(&lg)
        .zip(&xs)
        .map(|((g, l), &x)| g + l * dt + (model.obs)(x) * g * dy)
        .collect();
    Ok(GridDensity { grid, values })
}

/// Normalized density with its mean and variance (trapezoid rule).
pub fn ks_normalize(density: &GridDensity) -> Result<(GridDensity, f64, f64)> {
    let mass = density.mass();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegenerateDensity(format!("total mass {mass} is not positive")));
    }
    let grid = density.grid;
    let values: Vec<f64> = density.values.iter().map(|g| g / mass).collect();
    let xs = grid.points();
    let first: Vec<f64> = values.iter().zip(&xs).map(|(p, x)| p * x).collect();
    let mean = grid.integrate(&first);
    let second: Vec<f64> = values
        .iter()
        .zip(&xs)
        .map(|(p, x)| p * (x - mean).powi(2))
        .collect();
    let var = grid.integrate(&second);
    Ok((GridDensity { grid, values }, mean, var))
}

/// Settings for running the three filters on one simulated record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub model: ScalarLGModel,
    pub x0_mean: f64,
    pub p0: f64,
    pub grid: UniformGrid,
    pub t_final: f64,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainSample {
    pub t: f64,
    pub x: f64,
    pub kalman: (f64, f64),
    pub bucy: (f64, f64),
    pub zakai: (f64, f64),
}

/// Simulates `dX = A X dt + √Q dW`, `dY = H X dt + dV` by Euler-Maruyama and
/// filters the record with the discretized Kalman filter (on `dY/√dt`),
/// the Kalman-Bucy filter and the Zakai grid solver (renormalized each step).
pub fn filter_chain(config: &ChainConfig, noise: &mut NoiseStream) -> Result<Vec<ChainSample>> {
    let dt = noise.dt();
    let steps = step_count(config.t_final, dt)?;
    let stride = config.stride.max(1);
    let model = config.model;
    let disc = model.discretize(dt)?;
    let diffusion = DiffusionModel1D::linear(&model);
    let mut x = config.x0_mean + config.p0.sqrt() * noise.next_standard();
    let mut kalman = DiscreteKalmanState::new(config.x0_mean, config.p0)?;
    let mut bucy = kalman;
    let mut xi = GridDensity::gaussian(config.grid, config.x0_mean, config.p0)?;
    let (_, m0, v0) = ks_normalize(&xi)?;
    let sq = model.q.sqrt();
    let mut out = vec![ChainSample {
        t: 0.0,
        x,
        kalman: (kalman.x_hat, kalman.p),
        bucy: (bucy.x_hat, bucy.p),
        zakai: (m0, v0),
    }];
    for k in 0..steps {
        let dw = noise.next_increment();
        let dv = noise.next_increment();
        let dy = model.h * x * dt + dv;
        x += model.a * x * dt + sq * dw;
        let pred = kalman_predict(&kalman, 0.0, &disc);
        kalman = kalman_update(&pred, dy / dt.sqrt(), &disc, UpdateMode::Standard).map_err(|e| e.at_step(k))?;
        bucy = kalman_bucy_step(&bucy, dy, 0.0, dt, &model).map_err(|e| e.at_step(k))?;
        let stepped = zakai_grid_step(&xi, dy, dt, &diffusion).map_err(|e| e.at_step(k))?;
        let (normalized, mean, var) = ks_normalize(&stepped).map_err(|e| e.at_step(k))?;
        xi = normalized;
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.push(ChainSample {
                t: (k + 1) as f64 * dt,
                x,
                kalman: (kalman.x_hat, kalman.p),
                bucy: (bucy.x_hat, bucy.p),
                zakai: (mean, var),
            });
        }
    }
    Ok(out)
}
