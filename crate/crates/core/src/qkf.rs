//! Quantum Kalman filter for a damped cavity mode (`L = √γ a`, `H = ω a†a`)
//! under homodyne detection of the quadrature `θ(t)`.
//!
//! The filter state is the conditional mean `â` and the covariance pair
//! `(V, W)`. The pair obeys deterministic coupled Riccati equations and is
//! integrated with classical RK4. The mean drift is linear and is integrated
//! with RK4 as well; the innovations enter additively with the gain frozen at
//! the start of each step.

use crate::error::{Error, Result};
use crate::fock::{CovariancePair, C64};
use crate::trajectory::{check_dt, step_count, QuadraturePhase};

/// Which right-hand side to use for `dW/dt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RiccatiForm {
    /// `dW/dt = −(γ + 2iω) W − γ (e^{−iθ}V + e^{iθ}W)²`.
    #[default]
    Derived,
    /// `dW/dt = −(γ + 2iω) V − γ (e^{−iθ}V + e^{iθ}W)²`.
    AsPrinted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeParams {
    pub gamma: f64,
    pub omega: f64,
    pub riccati_form: RiccatiForm,
}

impl ModeParams {
    pub fn new(gamma: f64, omega: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("damping rate {gamma} must be >= 0")));
        }
        if !omega.is_finite() {
            return Err(Error::Domain(format!("detuning {omega} must be finite")));
        }
        Ok(Self {
            gamma,
            omega,
            riccati_form: RiccatiForm::Derived,
        })
    }

    pub fn with_form(mut self, form: RiccatiForm) -> Self {
        self.riccati_form = form;
        self
    }

    /// `γ/2 + iω`.
    pub fn decay(&self) -> C64 {
        C64::new(0.5 * self.gamma, self.omega)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiState {
    pub v: f64,
    pub w: C64,
    pub t: f64,
}

impl RiccatiState {
    pub fn new(v: f64, w: C64) -> Self {
        Self { v, w, t: 0.0 }
    }

    pub fn vacuum() -> Self {
        Self::new(0.0, C64::new(0.0, 0.0))
    }

    pub fn covariances(&self) -> CovariancePair {
        CovariancePair::new(self.v, self.w)
    }
}

impl From<CovariancePair> for RiccatiState {
    fn from(cov: CovariancePair) -> Self {
        Self::new(cov.v, cov.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QkfState {
    pub a_hat: C64,
    pub riccati: RiccatiState,
}

impl QkfState {
    pub fn new(a_hat: C64, cov: CovariancePair) -> Self {
        Self {
            a_hat,
            riccati: cov.into(),
        }
    }

    pub fn t(&self) -> f64 {
        self.riccati.t
    }
}

/// Right-hand side `(dV/dt, dW/dt)` of the Riccati pair.
pub fn riccati_rhs(v: f64, w: C64, theta: f64, params: &ModeParams) -> (f64, C64) {
    let g = params.gamma;
    let e2 = C64::from_polar(1.0, 2.0 * theta);
    let dv = -g * v - g * (v + e2 * w).norm_sqr();
    let s = C64::from_polar(v, -theta) + C64::from_polar(1.0, theta) * w;
    let rot = C64::new(g, 2.0 * params.omega);
    let linear = match params.riccati_form {
        RiccatiForm::Derived => rot * w,
        RiccatiForm::AsPrinted => rot * v,
    };
    (dv, -linear - g * s * s)
}

/// One RK4 step of the Riccati pair, with `θ` evaluated at the stage times.
pub fn riccati_step(
    state: &RiccatiState,
    theta: &QuadraturePhase,
    params: &ModeParams,
    dt: f64,
) -> Result<RiccatiState> {
    let t = state.t;
    let f = |v: f64, w: C64, s: f64| riccati_rhs(v, w, theta.at(s), params);
    let (v, w) = (state.v, state.w);
    let (k1v, k1w) = f(v, w, t);
    let (k2v, k2w) = f(v + 0.5 * dt * k1v, w + 0.5 * dt * k1w, t + 0.5 * dt);
    let (k3v, k3w) = f(v + 0.5 * dt * k2v, w + 0.5 * dt * k2w, t + 0.5 * dt);
    let (k4v, k4w) = f(v + dt * k3v, w + dt * k3w, t + dt);
    let mut v_new = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    let w_new = w + (k1w + (k2w + k3w) * 2.0 + k4w) * (dt / 6.0);
    if !(v_new.is_finite() && w_new.re.is_finite() && w_new.im.is_finite()) {
        return Err(Error::Divergence {
            t: t + dt,
            detail: "Riccati state not finite".into(),
        });
    }
    if v_new < -1e-12 {
        v_new = 0.0;
    }
    Ok(RiccatiState {
        v: v_new,
        w: w_new,
        t: t + dt,
    })
}

/// Riccati trajectory on `[0, t_final]` sampled every `stride` steps.
pub fn riccati_integrate(
    initial: &RiccatiState,
    theta: &QuadraturePhase,
    params: &ModeParams,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<Vec<RiccatiState>> {
    let steps = step_count(t_final, dt)?;
    let stride = stride.max(1);
    let mut out = vec![*initial];
    let mut s = *initial;
    for k in 0..steps {
        s = riccati_step(&s, theta, params, dt).map_err(|e| e.at_step(k))?;
        s.t = initial.t + (k + 1) as f64 * dt;
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.push(s);
        }
    }
    Ok(out)
}

/// Innovation gain `√γ (W e^{iθ} + V e^{−iθ})`.
pub fn filter_gain(riccati: &RiccatiState, theta: f64, gamma: f64) -> C64 {
    (riccati.w * C64::from_polar(1.0, theta) + C64::from_polar(riccati.v, -theta)) * gamma.sqrt()
}

/// Predicted measurement rate `√γ (e^{iθ}â + e^{−iθ}â*)`.
pub fn predicted_rate(a_hat: C64, theta: f64, gamma: f64) -> f64 {
    2.0 * gamma.sqrt() * (C64::from_polar(1.0, theta) * a_hat).re
}

/// One filter step driven by the innovations increment `dI`, with the
/// control drive `beta` held constant over the step.
pub fn qkf_step(
    state: &QkfState,
    di: f64,
    beta: C64,
    theta: &QuadraturePhase,
    params: &ModeParams,
    dt: f64,
) -> Result<QkfState> {
    check_dt(dt)?;
    let t = state.t();
    let gain = filter_gain(&state.riccati, theta.at(t), params.gamma);
    let decay = params.decay();
    let f = |a: C64| -decay * a + beta;
    let a = state.a_hat;
    let k1 = f(a);
    let k2 = f(a + k1 * (0.5 * dt));
    let k3 = f(a + k2 * (0.5 * dt));
    let k4 = f(a + k3 * dt);
    let a_hat = a + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0) + gain * di;
    let riccati = riccati_step(&state.riccati, theta, params, dt)?;
    if !(a_hat.re.is_finite() && a_hat.im.is_finite()) {
        return Err(Error::Divergence {
            t: t + dt,
            detail: "filter mean not finite".into(),
        });
    }
    Ok(QkfState { a_hat, riccati })
}

/// Result of a scan over constant homodyne phases.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureScan {
    pub theta_star: f64,
    pub v_final: Vec<f64>,
}

/// Integrates the Riccati pair for each constant phase and returns the one
/// minimizing `V(T)`; ties go to the smallest phase reduced to `[0, π)`.
pub fn optimal_quadrature_scan(
    params: &ModeParams,
    initial: &RiccatiState,
    t_final: f64,
    dt: f64,
    theta_grid: &[f64],
) -> Result<QuadratureScan> {
    if theta_grid.is_empty() {
        return Err(Error::Domain("phase grid is empty".into()));
    }
    let mut v_final = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let series = riccati_integrate(
            initial,
            &QuadraturePhase::Constant(theta),
            params,
            dt,
            t_final,
            usize::MAX,
        )?;
        v_final.push(series.last().map(|s| s.v).unwrap_or(initial.v));
    }
    let reduced = |theta: f64| theta.rem_euclid(std::f64::consts::PI);
    let mut best = 0;
    for k in 1..theta_grid.len() {
        let tol = 1e-14 * v_final[best].abs().max(1e-300);
        let better = v_final[k] < v_final[best] - tol;
        let tie = (v_final[k] - v_final[best]).abs() <= tol
            && reduced(theta_grid[k]) < reduced(theta_grid[best]);
        if better || tie {
            best = k;
        }
    }
    Ok(QuadratureScan {
        theta_star: theta_grid[best],
        v_final,
    })
}
