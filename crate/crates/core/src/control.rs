//! PID feedback around the quantum Kalman filter.
//!
//! The controller acts on the filtered estimate `â` through the drive
//! `β = k_P(μr − â) + k_I ∫(r − â) + k_D(νṙ − dâ/dt)`. Because `dâ/dt` does not
//! exist for a diffusive estimate, the D term is realized through the
//! conditional drift `ϖ(ℒa)` and a measurement-feedback coupling
//! `L = √γ a − iF`, `F = i k_D (Ξ* a − Ξ a†)`.
//!
//! References are causal (zero for `t < 0`). A jump `Δ` of the reference
//! (step onsets, and the initial value of constant and sinusoidal references at
//! `t = 0`) produces an impulse in `ṙ` and hence a jump
//! `k_D ν Δ / (1 + k_D)` of the estimate. States at a grid time are left
//! limits: the jump at a time `τ` is applied by the step starting at `τ`.

use crate::error::{Error, Result};
use crate::fock::{
    annihilation_op, coherent_state, displacement_op, gaussian_pure_state, gaussian_state,
    number_op, CavityOperator, CovariancePair, Moments, C64, I,
};
use crate::qkf::{filter_gain, riccati_step, ModeParams, QkfState};
use crate::trajectory::{
    check_dt, sme_step, sse_step, step_count, NoiseStream, QuadraturePhase, SlhCoefficients,
    TrajectoryState,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Set-point weight on `r` in the proportional term.
    pub mu: f64,
    /// Set-point weight on `ṙ` in the derivative term.
    pub nu: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            k_p: 0.0,
            k_i: 0.0,
            k_d: 0.0,
            mu: 1.0,
            nu: 1.0,
        }
    }
}

impl PidGains {
    pub fn new(k_p: f64, k_i: f64, k_d: f64) -> Result<Self> {
        Self::weighted(k_p, k_i, k_d, 1.0, 1.0)
    }

    pub fn weighted(k_p: f64, k_i: f64, k_d: f64, mu: f64, nu: f64) -> Result<Self> {
        for (name, value) in [("k_P", k_p), ("k_I", k_i), ("k_D", k_d)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Domain(format!("gain {name} = {value} must be >= 0")));
            }
        }
        if !(mu.is_finite() && nu.is_finite()) {
            return Err(Error::Domain("set-point weights must be finite".into()));
        }
        Ok(Self { k_p, k_i, k_d, mu, nu })
    }

    pub fn is_open_loop(&self) -> bool {
        self.k_p == 0.0 && self.k_i == 0.0 && self.k_d == 0.0
    }
}

/// Reference signal with analytic derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReferenceSignal {
    /// `r(t) = value` for `t ≥ 0`.
    Constant { value: C64 },
    /// `r(t) = amplitude` for `t ≥ onset`.
    Step { amplitude: C64, onset: f64 },
    /// `r(t) = slope (t − onset)` for `t ≥ onset`.
    Ramp { slope: C64, onset: f64 },
    /// `r(t) = amplitude sin(frequency t + phase)` for `t ≥ 0`.
    Sinusoid {
        amplitude: C64,
        frequency: f64,
        phase: f64,
    },
}

impl Default for ReferenceSignal {
    fn default() -> Self {
        ReferenceSignal::Constant {
            value: C64::new(0.0, 0.0),
        }
    }
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

impl ReferenceSignal {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn unit_step() -> Self {
        ReferenceSignal::Step {
            amplitude: C64::new(1.0, 0.0),
            onset: 0.0,
        }
    }

    fn start(&self) -> f64 {
        match *self {
            ReferenceSignal::Constant { .. } | ReferenceSignal::Sinusoid { .. } => 0.0,
            ReferenceSignal::Step { onset, .. } | ReferenceSignal::Ramp { onset, .. } => onset,
        }
    }

    fn raw(&self, t: f64) -> C64 {
        match *self {
            ReferenceSignal::Constant { value } => value,
            ReferenceSignal::Step { amplitude, .. } => amplitude,
            ReferenceSignal::Ramp { slope, onset } => slope * (t - onset),
            ReferenceSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * t + phase).sin(),
        }
    }

    fn raw_rate(&self, t: f64) -> C64 {
        match *self {
            ReferenceSignal::Constant { .. } | ReferenceSignal::Step { .. } => ZERO,
            ReferenceSignal::Ramp { slope, .. } => slope,
            ReferenceSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => amplitude * frequency * (frequency * t + phase).cos(),
        }
    }

    /// `r(t)`, right-continuous.
    pub fn value(&self, t: f64) -> C64 {
        if t >= self.start() {
            self.raw(t)
        } else {
            ZERO
        }
    }

    /// `r(t−)`.
    pub fn value_left(&self, t: f64) -> C64 {
        if t > self.start() {
            self.raw(t)
        } else {
            ZERO
        }
    }

    /// Regular part of `ṙ(t)`, right-continuous.
    pub fn rate(&self, t: f64) -> C64 {
        if t >= self.start() {
            self.raw_rate(t)
        } else {
            ZERO
        }
    }

    /// Regular part of `ṙ(t−)`.
    pub fn rate_left(&self, t: f64) -> C64 {
        if t > self.start() {
            self.raw_rate(t)
        } else {
            ZERO
        }
    }

    /// Jump discontinuities `(τ, r(τ) − r(τ−))`.
    pub fn jumps(&self) -> Vec<(f64, C64)> {
        let tau = self.start();
        let size = self.raw(tau);
        if size == ZERO || tau < 0.0 {
            Vec::new()
        } else {
            vec![(tau, size)]
        }
    }

    /// Times where `r` or `ṙ` is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        let tau = self.start();
        let kink = self.raw(tau) != ZERO || self.raw_rate(tau) != ZERO;
        if kink && tau >= 0.0 {
            vec![tau]
        } else {
            Vec::new()
        }
    }
}

/// Filter plus accumulated integral error `∫(r − â)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedLoopState {
    pub filter: QkfState,
    pub integral_error: C64,
}

impl ClosedLoopState {
    pub fn new(filter: QkfState) -> Self {
        Self {
            filter,
            integral_error: ZERO,
        }
    }

    pub fn t(&self) -> f64 {
        self.filter.t()
    }
}

/// Innovation gain of the D-controlled filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiGain(pub C64);

pub fn error_signal(r_t: C64, a_hat: C64) -> C64 {
    r_t - a_hat
}

/// `Ξ = √γ (V + W) / (1 + k_D)`.
pub fn xi_gain(cov: &crate::qkf::RiccatiState, gains: &PidGains, gamma: f64) -> XiGain {
    XiGain(filter_gain(cov, 0.0, gamma) / (1.0 + gains.k_d))
}

fn drift_terms(gains: &PidGains, a_hat: C64, integral: C64, r: C64, r_dot: C64, params: &ModeParams) -> C64 {
    (-params.decay() * a_hat
        + (r * gains.mu - a_hat) * gains.k_p
        + integral * gains.k_i
        + r_dot * (gains.k_d * gains.nu))
        / (1.0 + gains.k_d)
}

/// Conditional drift `ϖ(ℒa)` of the estimate under PID feedback.
pub fn drift_estimate(
    gains: &PidGains,
    filter: &QkfState,
    reference: &ReferenceSignal,
    integral_error: C64,
    t: f64,
    params: &ModeParams,
) -> C64 {
    drift_terms(
        gains,
        filter.a_hat,
        integral_error,
        reference.value(t),
        reference.rate(t),
        params,
    )
}

/// Jump of the estimate caused by a reference jump `delta`.
pub fn estimate_jump(gains: &PidGains, delta: C64) -> C64 {
    delta * (gains.k_d * gains.nu / (1.0 + gains.k_d))
}

/// Ladder operators reused across SLH constructions.
#[derive(Clone, Debug)]
pub struct LadderOps {
    pub a: CavityOperator,
    pub ad: CavityOperator,
    pub n: CavityOperator,
    dim: usize,
}

impl LadderOps {
    pub fn new(dim: usize) -> Result<Self> {
        let a = annihilation_op(dim)?;
        Ok(Self {
            ad: a.adjoint(),
            n: number_op(dim)?,
            a,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Controlled SLH coefficients with explicit ladder operators.
pub fn controlled_slh_with(
    ops: &LadderOps,
    gains: &PidGains,
    filter: &QkfState,
    reference: &ReferenceSignal,
    integral_error: C64,
    t: f64,
    params: &ModeParams,
) -> Result<SlhCoefficients> {
    let sg = params.gamma.sqrt();
    let mut l = ops.a.scale(C64::new(sg, 0.0));
    let mut h = ops.n.scale(C64::new(params.omega, 0.0));
    if gains.is_open_loop() {
        return SlhCoefficients::new(l, h);
    }
    let xi = xi_gain(&filter.riccati, gains, params.gamma).0;
    let a_hat = filter.a_hat;
    let varpi = drift_estimate(gains, filter, reference, integral_error, t, params);
    let lambda = 2.0 * sg * a_hat.re;
    let beta = (reference.value(t) * gains.mu - a_hat) * gains.k_p
        + integral_error * gains.k_i
        + (reference.rate(t) * gains.nu - varpi + xi * lambda) * gains.k_d;
    // i β a† − i β* a
    let drive = ops.ad.scale(I * beta).sub(&ops.a.scale(I * beta.conj()))?;
    h = h.add(&drive)?;
    if gains.k_d != 0.0 {
        let f = feedback_operator(ops, gains, XiGain(xi))?;
        l = l.sub(&f.scale(I))?;
        let fa = f.mul(&ops.a)?;
        let wiseman = fa.add(&fa.adjoint())?.scale(C64::new(0.5 * sg, 0.0));
        h = h.add(&wiseman)?;
    }
    SlhCoefficients::new(l, h)
}

/// Controlled SLH coefficients `(1, √γa − iF, ωa†a + H_P + H_I + H_D)`.
pub fn controlled_slh(
    gains: &PidGains,
    filter: &QkfState,
    reference: &ReferenceSignal,
    integral_error: C64,
    t: f64,
    params: &ModeParams,
    dim: usize,
) -> Result<SlhCoefficients> {
    controlled_slh_with(
        &LadderOps::new(dim)?,
        gains,
        filter,
        reference,
        integral_error,
        t,
        params,
    )
}

/// `F = i k_D (Ξ* a − Ξ a†)`.
pub fn feedback_operator(ops: &LadderOps, gains: &PidGains, xi: XiGain) -> Result<CavityOperator> {
    ops.a
        .scale(I * gains.k_d * xi.0.conj())
        .sub(&ops.ad.scale(I * gains.k_d * xi.0))
}

/// RK4 for `(â, E)` over `[s0, s1]` of length `h`, a segment free of
/// reference breakpoints.
#[allow(clippy::too_many_arguments)]
fn drift_segment(
    gains: &PidGains,
    reference: &ReferenceSignal,
    params: &ModeParams,
    a: C64,
    e: C64,
    s0: f64,
    s1: f64,
    h: f64,
) -> (C64, C64) {
    let mid = s0 + 0.5 * h;
    let f = |a: C64, e: C64, r: C64, rd: C64| (drift_terms(gains, a, e, r, rd, params), r - a);
    let (r0, rd0) = (reference.value(s0), reference.rate(s0));
    let (rm, rdm) = (reference.value(mid), reference.rate(mid));
    let (r1, rd1) = (reference.value_left(s1), reference.rate_left(s1));
    let (k1a, k1e) = f(a, e, r0, rd0);
    let (k2a, k2e) = f(a + k1a * (0.5 * h), e + k1e * (0.5 * h), rm, rdm);
    let (k3a, k3e) = f(a + k2a * (0.5 * h), e + k2e * (0.5 * h), rm, rdm);
    let (k4a, k4e) = f(a + k3a * h, e + k3e * h, r1, rd1);
    (
        a + (k1a + (k2a + k3a) * 2.0 + k4a) * (h / 6.0),
        e + (k1e + (k2e + k3e) * 2.0 + k4e) * (h / 6.0),
    )
}

/// One step of the PID-controlled filter driven by the innovations `dI`.
pub fn pid_filter_step(
    state: &ClosedLoopState,
    di: f64,
    gains: &PidGains,
    reference: &ReferenceSignal,
    params: &ModeParams,
    dt: f64,
) -> Result<ClosedLoopState> {
    check_dt(dt)?;
    let t0 = state.t();
    let t1 = t0 + dt;
    let xi = xi_gain(&state.filter.riccati, gains, params.gamma);
    let mut a = state.filter.a_hat;
    let mut e = state.integral_error;
    let mut cuts: Vec<f64> = reference
        .breakpoints()
        .into_iter()
        .filter(|&b| b > t0 && b < t1)
        .collect();
    cuts.push(t1);
    let jumps = reference.jumps();
    let mut s = t0;
    for cut in cuts {
        for &(tau, delta) in &jumps {
            if tau == s {
                a += estimate_jump(gains, delta);
            }
        }
        let h = if s == t0 && cut == t1 { dt } else { cut - s };
        let (a_new, e_new) = drift_segment(gains, reference, params, a, e, s, cut, h);
        a = a_new;
        e = e_new;
        s = cut;
    }
    let a_hat = a + xi.0 * di;
    let riccati = riccati_step(&state.filter.riccati, &QuadraturePhase::Constant(0.0), params, dt)?;
    if !(a_hat.re.is_finite() && a_hat.im.is_finite() && e.re.is_finite() && e.im.is_finite()) {
        return Err(Error::Divergence {
            t: t1,
            detail: "closed-loop filter not finite".into(),
        });
    }
    Ok(ClosedLoopState {
        filter: QkfState { a_hat, riccati },
        integral_error: e,
    })
}

/// Noise-free closed-loop filter on `[0, t_final]` sampled every `stride`
/// steps (left limits at the sample times).
pub fn pid_filter_noise_free(
    initial: &ClosedLoopState,
    gains: &PidGains,
    reference: &ReferenceSignal,
    params: &ModeParams,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<Vec<ClosedLoopState>> {
    let steps = step_count(t_final, dt)?;
    let stride = stride.max(1);
    let mut out = vec![*initial];
    let mut s = *initial;
    for k in 0..steps {
        s = pid_filter_step(&s, 0.0, gains, reference, params, dt).map_err(|e| e.at_step(k))?;
        s.filter.riccati.t = initial.t() + (k + 1) as f64 * dt;
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.push(s);
        }
    }
    Ok(out)
}

/// Representation used for the Fock-space truth in a co-simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TruthModel {
    /// Pure-state equation if the initial data is pure, density operator otherwise.
    #[default]
    Auto,
    Sse,
    Sme,
}

/// Gaussian initial data shared by the filter and the truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianInitial {
    pub alpha: C64,
    pub cov: CovariancePair,
}

impl GaussianInitial {
    pub fn coherent(alpha: C64) -> Self {
        Self {
            alpha,
            cov: CovariancePair::VACUUM,
        }
    }

    pub fn is_pure(&self) -> bool {
        self.cov.uncertainty_margin().abs() <= 1e-9
    }

    /// Conditional state of the truth in `dim` levels.
    pub fn truth_state(&self, dim: usize, model: TruthModel) -> Result<TrajectoryState> {
        let pure = match model {
            TruthModel::Auto => self.is_pure(),
            TruthModel::Sse => true,
            TruthModel::Sme => false,
        };
        if pure {
            let psi = if self.cov == CovariancePair::VACUUM {
                coherent_state(self.alpha, dim)?
            } else {
                gaussian_pure_state(self.alpha, self.cov, dim)?
            };
            TrajectoryState::sse(psi)
        } else {
            Ok(TrajectoryState::sme(gaussian_state(self.alpha, self.cov, dim)?))
        }
    }
}

/// Paired record of a co-simulation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosimSample {
    pub t: f64,
    pub truth: Moments,
    pub filter: QkfState,
    pub integral_error: C64,
    /// Accumulated measurement record.
    pub y: f64,
    /// Accumulated filter innovations `∫ dY − √γ(â + â*) dt`.
    pub i: f64,
}

/// Co-simulation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosimConfig {
    pub dim: usize,
    pub t_final: f64,
    pub stride: usize,
    pub truth: TruthModel,
}

/// Runs the Fock-space truth under the controlled SLH model together with
/// the PID filter fed by the truth's measurement record.
pub fn closed_loop_cosim(
    initial: &GaussianInitial,
    gains: &PidGains,
    reference: &ReferenceSignal,
    params: &ModeParams,
    config: &CosimConfig,
    noise: &mut NoiseStream,
) -> Result<Vec<CosimSample>> {
    let stride = config.stride.max(1);
    let steps = step_count(config.t_final, noise.dt())?;
    let mut out = Vec::with_capacity(steps / stride + 2);
    closed_loop_cosim_observe(initial, gains, reference, params, config, noise, |k, s| {
        if k % stride == 0 || k == steps {
            out.push(*s);
        }
    })?;
    Ok(out)
}

/// As [`closed_loop_cosim`], handing every sample (step index, sample) to
/// `observe` instead of collecting them.
pub fn closed_loop_cosim_observe(
    initial: &GaussianInitial,
    gains: &PidGains,
    reference: &ReferenceSignal,
    params: &ModeParams,
    config: &CosimConfig,
    noise: &mut NoiseStream,
    mut observe: impl FnMut(usize, &CosimSample),
) -> Result<()> {
    if !initial.cov.is_physical() {
        return Err(Error::Domain("initial covariances are unphysical".into()));
    }
    let dt = noise.dt();
    let steps = step_count(config.t_final, dt)?;
    let ops = LadderOps::new(config.dim)?;
    let mut truth = initial.truth_state(config.dim, config.truth)?;
    let mut filt = ClosedLoopState::new(QkfState::new(initial.alpha, initial.cov));
    let jumps = reference.jumps();
    let sg = params.gamma.sqrt();
    let sample = |truth: &TrajectoryState, filt: &ClosedLoopState, i: f64, t: f64| CosimSample {
        t,
        truth: truth.moments(),
        filter: filt.filter,
        integral_error: filt.integral_error,
        y: truth.y,
        i,
    };
    let mut innovations = 0.0;
    observe(0, &sample(&truth, &filt, innovations, 0.0));
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let t1 = t0 + dt;
        let mut shifted = filt.filter;
        for &(tau, delta) in &jumps {
            if tau >= t0 && tau < t1 {
                let jump = estimate_jump(gains, delta);
                let d = displacement_op(jump, config.dim).map_err(|e| e.at_step(k))?;
                truth = truth.transform(&d).map_err(|e| e.at_step(k))?;
                shifted.a_hat += jump;
            }
        }
        let slh = controlled_slh_with(&ops, gains, &shifted, reference, filt.integral_error, t0, params)
            .map_err(|e| e.at_step(k))?;
        let dw = noise.next_increment();
        let next = match truth.state {
            crate::trajectory::ConditionalState::Sme(_) => sme_step(&truth, &slh, 0.0, dw, dt),
            _ => sse_step(&truth, &slh, 0.0, dw, dt),
        }
        .map_err(|e| e.at_step(k))?;
        let dy = next.y - truth.y;
        truth = next;
        truth.t = t1;
        let di = dy - 2.0 * sg * filt.filter.a_hat.re * dt;
        filt = pid_filter_step(&filt, di, gains, reference, params, dt).map_err(|e| e.at_step(k))?;
        filt.filter.riccati.t = t1;
        innovations += di;
        observe(k + 1, &sample(&truth, &filt, innovations, t1));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qkf::{qkf_step, RiccatiState};
    use crate::trajectory::lindblad_apply;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn error_signal_cases() {
        assert_eq!(error_signal(ZERO, ZERO), ZERO);
        assert_eq!(error_signal(c(1.0, 0.0), c(1.0, 0.0)), ZERO);
        assert_eq!(error_signal(c(1.0, 0.0), c(0.25, -0.5)), c(0.75, 0.5));
    }

    #[test]
    fn xi_gain_cases() {
        let cov = RiccatiState::new(0.5, ZERO);
        let g = PidGains::new(0.0, 0.0, 1.0).unwrap();
        assert!((xi_gain(&cov, &g, 1.0).0 - c(0.25, 0.0)).norm() < 1e-15);
        let g0 = PidGains::default();
        let cov = RiccatiState::new(0.3, c(0.1, -0.2));
        assert_eq!(xi_gain(&cov, &g0, 2.0).0, filter_gain(&cov, 0.0, 2.0));
        assert_eq!(xi_gain(&RiccatiState::vacuum(), &g, 2.0).0, ZERO);
    }

    #[test]
    fn gains_validated() {
        assert!(PidGains::new(0.0, 0.0, -0.5).is_err());
        assert!(PidGains::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn open_loop_drift() {
        let p = ModeParams::new(1.0, 0.3).unwrap();
        let f = QkfState::new(c(0.4, 0.1), CovariancePair::VACUUM);
        let d = drift_estimate(&PidGains::default(), &f, &ReferenceSignal::unit_step(), ZERO, 1.0, &p);
        assert_eq!(d, -p.decay() * f.a_hat);
    }

    #[test]
    fn large_derivative_gain_follows_reference_rate() {
        let p = ModeParams::new(1.0, 0.0).unwrap();
        let g = PidGains::new(0.0, 0.0, 1e6).unwrap();
        let r = ReferenceSignal::Ramp {
            slope: c(1.0, 0.0),
            onset: 0.0,
        };
        let f = QkfState::new(c(0.5, 0.0), CovariancePair::VACUUM);
        let d = drift_estimate(&g, &f, &r, ZERO, 2.0, &p);
        assert!((d - c(1.0, 0.0)).norm() <= 1e-5);
    }

    #[test]
    fn drift_matches_finite_difference() {
        let p = ModeParams::new(1.0, 0.5).unwrap();
        let g = PidGains::new(2.0, 1.0, 0.5).unwrap();
        let r = ReferenceSignal::Sinusoid {
            amplitude: c(1.0, 0.0),
            frequency: 2.0,
            phase: 0.3,
        };
        let dt = 1e-4;
        let init = ClosedLoopState::new(QkfState::new(ZERO, CovariancePair::VACUUM));
        let series = pid_filter_noise_free(&init, &g, &r, &p, dt, 1.0, 1).unwrap();
        for k in [100, 4000, 9000] {
            let fd = (series[k + 1].filter.a_hat - series[k - 1].filter.a_hat) / (2.0 * dt);
            let s = &series[k];
            let d = drift_estimate(&g, &s.filter, &r, s.integral_error, k as f64 * dt, &p);
            assert!((fd - d).norm() < 1e-5, "{fd} vs {d}");
        }
    }

    #[test]
    fn open_loop_slh() {
        let p = ModeParams::new(0.8, 0.4).unwrap();
        let f = QkfState::new(c(0.2, 0.1), CovariancePair::new(0.3, c(0.1, 0.0)));
        let slh = controlled_slh(&PidGains::default(), &f, &ReferenceSignal::unit_step(), ZERO, 0.5, &p, 10).unwrap();
        let plain = SlhCoefficients::damped_mode(0.8, 0.4, 10).unwrap();
        assert_eq!(slh, plain);
        let pi = PidGains::new(3.0, 2.0, 0.0).unwrap();
        let slh = controlled_slh(&pi, &f, &ReferenceSignal::unit_step(), c(0.1, 0.0), 0.5, &p, 10).unwrap();
        assert_eq!(slh.l(), plain.l());
    }

    #[test]
    fn zero_gain_reduces_to_open_loop_filter() {
        let p = ModeParams::new(1.0, 0.7).unwrap();
        let start = QkfState::new(c(0.5, -0.1), CovariancePair::new(0.4, c(0.2, 0.1)));
        let mut a = ClosedLoopState::new(start);
        let mut b = start;
        let mut noise = NoiseStream::new(9, 1e-3).unwrap();
        let r = ReferenceSignal::Constant { value: c(1.0, 0.0) };
        for _ in 0..500 {
            let di = noise.next_increment();
            a = pid_filter_step(&a, di, &PidGains::default(), &r, &p, 1e-3).unwrap();
            b = qkf_step(&b, di, ZERO, &QuadraturePhase::Constant(0.0), &p, 1e-3).unwrap();
            assert_eq!(a.filter, b);
        }
    }

    #[test]
    fn proportional_final_value() {
        let p = ModeParams::new(1.0, 0.0).unwrap();
        let g = PidGains::new(50.0, 0.0, 0.0).unwrap();
        let init = ClosedLoopState::new(QkfState::new(ZERO, CovariancePair::VACUUM));
        let s = pid_filter_noise_free(&init, &g, &ReferenceSignal::unit_step(), &p, 1e-3, 2.0, 1000).unwrap();
        assert!((s.last().unwrap().filter.a_hat - c(100.0 / 101.0, 0.0)).norm() < 1e-6);
        let g = PidGains::new(50.0, 1.0, 0.0).unwrap();
        let s = pid_filter_noise_free(&init, &g, &ReferenceSignal::unit_step(), &p, 1e-2, 1000.0, 1000).unwrap();
        assert!((s.last().unwrap().filter.a_hat - c(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn reference_jump_moves_estimate() {
        let p = ModeParams::new(1.0, 0.0).unwrap();
        let g = PidGains::new(0.0, 0.0, 1.0).unwrap();
        let r = ReferenceSignal::Step {
            amplitude: c(2.0, 0.0),
            onset: 0.5,
        };
        let init = ClosedLoopState::new(QkfState::new(ZERO, CovariancePair::VACUUM));
        let s = pid_filter_noise_free(&init, &g, &r, &p, 0.1, 1.0, 1).unwrap();
        assert_eq!(s[5].filter.a_hat, ZERO);
        // jump of 1 at t = 0.5, then decay at rate γ/2 / (1 + k_D) = 1/4
        let expected = (-0.25f64 * 0.1).exp();
        assert!((s[6].filter.a_hat.re - expected).abs() < 1e-8);
    }

    #[test]
    fn reference_limits() {
        let r = ReferenceSignal::Step {
            amplitude: c(1.0, 0.0),
            onset: 1.0,
        };
        assert_eq!(r.value(1.0), c(1.0, 0.0));
        assert_eq!(r.value_left(1.0), ZERO);
        assert_eq!(r.value(-1.0), ZERO);
        let s = ReferenceSignal::Sinusoid {
            amplitude: c(1.0, 0.0),
            frequency: 1.0,
            phase: 0.0,
        };
        assert!(s.jumps().is_empty());
        assert_eq!(s.breakpoints(), vec![0.0]);
        assert_eq!(ReferenceSignal::zero().breakpoints(), Vec::<f64>::new());
    }

    #[test]
    fn controlled_generator_reproduces_filter_drift() {
        // ⟨ℒa⟩ in a Gaussian state with mean â equals the PID drift
        let dim = 40;
        let p = ModeParams::new(1.0, 0.5).unwrap();
        let g = PidGains::weighted(2.0, 1.0, 0.5, 0.8, 1.2).unwrap();
        let r = ReferenceSignal::Sinusoid {
            amplitude: c(0.7, 0.2),
            frequency: 1.3,
            phase: 0.4,
        };
        let cov = CovariancePair::new(0.3, c(0.1, -0.05));
        let f = QkfState::new(c(0.3, -0.2), cov);
        let e = c(0.05, 0.02);
        let t = 0.9;
        let slh = controlled_slh(&g, &f, &r, e, t, &p, dim).unwrap();
        let rho = gaussian_state(f.a_hat, cov, dim).unwrap();
        let la = lindblad_apply(&slh, &annihilation_op(dim).unwrap()).unwrap();
        let got = crate::fock::expectation(&la, &rho).unwrap();
        let want = drift_estimate(&g, &f, &r, e, t, &p);
        assert!((got - want).norm() < 1e-6, "{got} vs {want}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn controlled_slh_structure(
            kp in 0.0f64..10.0, ki in 0.0f64..5.0, kd in 0.0f64..5.0,
            are in -1.0f64..1.0, aim in -1.0f64..1.0, v in 0.0f64..1.0, wf in 0.0f64..1.0, wp in 0.0f64..6.3,
            ere in -1.0f64..1.0, t in 0.0f64..5.0,
        ) {
            let dim = 12;
            let p = ModeParams::new(1.0, 0.3).unwrap();
            let g = PidGains::new(kp, ki, kd).unwrap();
            let w = C64::from_polar(wf * (v * (v + 1.0)).sqrt(), wp);
            let f = QkfState::new(c(are, aim), CovariancePair::new(v, w));
            let r = ReferenceSignal::Ramp { slope: c(0.5, 0.1), onset: 0.2 };
            let slh = controlled_slh(&g, &f, &r, c(ere, 0.0), t, &p, dim).unwrap();
            prop_assert!(slh.h().hermiticity_defect() <= 1e-10);
            let ops = LadderOps::new(dim).unwrap();
            let fd = feedback_operator(&ops, &g, xi_gain(&f.riccati, &g, 1.0)).unwrap();
            prop_assert!(fd.hermiticity_defect() <= 1e-10);
            let recon = slh.l().add(&fd.scale(I)).unwrap();
            let l0 = ops.a.scale(c(1.0, 0.0));
            prop_assert!((recon.matrix() - l0.matrix()).norm() <= 1e-10);
        }

        #[test]
        fn reduction_chain(
            kp in 0.0f64..10.0, ki in 0.0f64..5.0,
            are in -1.0f64..1.0, e in -1.0f64..1.0, t in 0.0f64..3.0,
        ) {
            // P and PI drifts are the k_D = 0 specializations of the PID drift
            let p = ModeParams::new(1.0, 0.4).unwrap();
            let f = QkfState::new(c(are, 0.1), CovariancePair::VACUUM);
            let r = ReferenceSignal::unit_step();
            let pid = drift_estimate(&PidGains::new(kp, ki, 0.0).unwrap(), &f, &r, c(e, 0.0), t, &p);
            let pi = -p.decay() * f.a_hat + (r.value(t) - f.a_hat) * kp + c(e, 0.0) * ki;
            prop_assert_eq!(pid, pi);
            let pd = drift_estimate(&PidGains::new(kp, 0.0, 0.0).unwrap(), &f, &r, c(e, 0.0), t, &p);
            let pc = -p.decay() * f.a_hat + (r.value(t) - f.a_hat) * kp;
            prop_assert_eq!(pd, pc);
        }
    }
}
