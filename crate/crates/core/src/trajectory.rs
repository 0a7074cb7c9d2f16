//! Quantum trajectories of the cavity mode under homodyne detection.
//!
//! Three conditional-state representations are supported: the normalized
//! pure state (stochastic Schrödinger equation), the density operator
//! (stochastic master equation) and the unnormalized pure state of the
//! linear Belavkin-Zakai equation. All three are driven by the same
//! measurement record `dY = λ dt + dI`, where `dI` is the innovations
//! increment and `λ = ⟨e^{iθ}L + e^{−iθ}L†⟩`.
//!
//! Each stepper applies the one-step operator
//! `M = 1 + e^{iθ}L dY − (½L†L + iH) dt` to the conditional state and then
//! renormalizes (`ψ → Mψ/‖Mψ‖`, `ρ → MρM†/tr`). To first order in `dt` this
//! is the Euler-Maruyama discretization of the normalized equations, and the
//! three representations agree to rounding on pure states.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fock::{
    annihilation_op, number_op, CavityOperator, DensityOperator, Moments, QuantumState,
    StateVector, C64, I, ONE,
};

/// Tolerance on `|‖Mψ‖² − (1 + λ dY)|` above which a step is rejected.
pub const NORM_STEP_TOLERANCE: f64 = 1e-2;

/// Hudson-Parthasarathy coefficients `(S, L, H)` of a single-channel system.
#[derive(Clone, Debug, PartialEq)]
pub struct SlhCoefficients {
    s: C64,
    l: CavityOperator,
    h: CavityOperator,
    ldl: CavityOperator,
}

impl SlhCoefficients {
    pub fn new(l: CavityOperator, h: CavityOperator) -> Result<Self> {
        Self::with_scattering(ONE, l, h)
    }

    pub fn with_scattering(s: C64, l: CavityOperator, h: CavityOperator) -> Result<Self> {
        if (s.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("scattering coefficient {s} is not unimodular")));
        }
        if l.dim() != h.dim() {
            return Err(Error::DimensionMismatch {
                expected: l.dim(),
                found: h.dim(),
            });
        }
        let defect = h.hermiticity_defect();
        if defect > 1e-10 {
            return Err(Error::Domain(format!(
                "Hamiltonian is not Hermitian (defect {defect:.3e})"
            )));
        }
        let ldl = l.adjoint().mul(&l)?;
        Ok(Self { s, l, h, ldl })
    }

    /// `L = √γ a`, `H = ω a†a`.
    pub fn damped_mode(gamma: f64, omega: f64, dim: usize) -> Result<Self> {
        let l = annihilation_op(dim)?.scale(C64::new(gamma.sqrt(), 0.0));
        let h = number_op(dim)?.scale(C64::new(omega, 0.0));
        Self::new(l, h)
    }

    pub fn s(&self) -> C64 {
        self.s
    }

    pub fn l(&self) -> &CavityOperator {
        &self.l
    }

    pub fn h(&self) -> &CavityOperator {
        &self.h
    }

    /// `L†L`.
    pub fn l_dag_l(&self) -> &CavityOperator {
        &self.ldl
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    /// Same system with the coupling rotated to `e^{iθ}L`.
    pub fn rotated(&self, theta: f64) -> Self {
        Self {
            s: self.s,
            l: self.l.scale(C64::from_polar(1.0, theta)),
            h: self.h.clone(),
            ldl: self.ldl.clone(),
        }
    }
}

/// Deterministic homodyne phase `θ(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuadraturePhase {
    Constant(f64),
    Linear { theta0: f64, rate: f64 },
}

impl QuadraturePhase {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            QuadraturePhase::Constant(theta) => theta,
            QuadraturePhase::Linear { theta0, rate } => theta0 + rate * t,
        }
    }
}

impl Default for QuadraturePhase {
    fn default() -> Self {
        QuadraturePhase::Constant(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConditionalState {
    /// Normalized pure state.
    Sse(StateVector),
    /// Density operator.
    Sme(DensityOperator),
    /// Unnormalized pure state.
    Zakai(StateVector),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub state: ConditionalState,
    /// Accumulated measurement record.
    pub y: f64,
    /// Accumulated innovations.
    pub i: f64,
}

impl TrajectoryState {
    pub fn sse(psi: StateVector) -> Result<Self> {
        Ok(Self::from_state(ConditionalState::Sse(psi.normalized()?)))
    }

    pub fn sme(rho: DensityOperator) -> Self {
        Self::from_state(ConditionalState::Sme(rho))
    }

    pub fn zakai(chi: StateVector) -> Self {
        Self::from_state(ConditionalState::Zakai(chi))
    }

    fn from_state(state: ConditionalState) -> Self {
        Self {
            t: 0.0,
            state,
            y: 0.0,
            i: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.state {
            ConditionalState::Sse(psi) | ConditionalState::Zakai(psi) => psi.dim(),
            ConditionalState::Sme(rho) => rho.dim(),
        }
    }

    /// Normalized expectation of `op` in the conditional state.
    pub fn expect(&self, op: &CavityOperator) -> Result<C64> {
        match &self.state {
            ConditionalState::Sse(psi) | ConditionalState::Zakai(psi) => psi.expect(op),
            ConditionalState::Sme(rho) => rho.expect(op),
        }
    }

    pub fn moments(&self) -> Moments {
        match &self.state {
            ConditionalState::Sse(psi) | ConditionalState::Zakai(psi) => psi.moments(),
            ConditionalState::Sme(rho) => rho.moments(),
        }
    }

    /// Applies a unitary (or any operator) to the state, renormalizing.
    pub fn transform(&self, u: &CavityOperator) -> Result<Self> {
        let state = match &self.state {
            ConditionalState::Sse(psi) => {
                ConditionalState::Sse(StateVector::new(u.apply(psi.amplitudes()))?.normalized()?)
            }
            ConditionalState::Zakai(chi) => {
                ConditionalState::Zakai(StateVector::new(u.apply(chi.amplitudes()))?)
            }
            ConditionalState::Sme(rho) => {
                ConditionalState::Sme(sandwich(u, rho.matrix())?)
            }
        };
        Ok(Self {
            t: self.t,
            state,
            y: self.y,
            i: self.i,
        })
    }
}

/// Reproducible stream of Wiener increments of variance `dt`.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    seed: u64,
    dt: f64,
    sqrt_dt: f64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Self {
            seed,
            dt,
            sqrt_dt: dt.sqrt(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Stream of trajectory `index` in an ensemble with seed `base_seed`.
    pub fn for_trajectory(base_seed: u64, index: usize, dt: f64) -> Result<Self> {
        Self::new(base_seed ^ index as u64, dt)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn next_increment(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        z * self.sqrt_dt
    }

    /// A standard normal draw from the same stream.
    pub fn next_standard(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

pub(crate) fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step {dt} must be positive and finite")));
    }
    Ok(())
}

/// Number of steps of size `dt` covering `[0, t_final]`; `dt` must divide `t_final`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    check_dt(dt)?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::Domain(format!("final time {t_final} must be >= 0")));
    }
    let steps = (t_final / dt).round();
    if (steps * dt - t_final).abs() > 1e-12 * t_final.max(1.0) {
        return Err(Error::Domain(format!(
            "time step {dt} does not divide final time {t_final}"
        )));
    }
    Ok(steps as usize)
}

/// Heisenberg-picture generator `ℒX = ½L†[X,L] + ½[L†,X]L − i[X,H]`.
pub fn lindblad_apply(slh: &SlhCoefficients, x: &CavityOperator) -> Result<CavityOperator> {
    let l = slh.l();
    let ld = l.adjoint();
    let first = ld.mul(&x.commutator(l)?)?;
    let second = ld.commutator(x)?.mul(l)?;
    let ham = x.commutator(slh.h())?;
    first
        .add(&second)?
        .scale(C64::new(0.5, 0.0))
        .sub(&ham.scale(I))
}

/// Schrödinger-picture generator `ℒ′ρ = LρL† − ½{L†L, ρ} + i[ρ, H]` for Hermitian `ρ`.
pub fn lindblad_dual(slh: &SlhCoefficients, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let l = slh.l();
    let lrho = l.mul_dense(rho);
    let lrhold = l.mul_dense(&lrho.adjoint()).adjoint();
    let ldl_rho = slh.l_dag_l().mul_dense(rho);
    let h_rho = slh.h().mul_dense(rho);
    let rho_ldl = ldl_rho.adjoint();
    let rho_h = h_rho.adjoint();
    lrhold - (&ldl_rho + &rho_ldl) * C64::new(0.5, 0.0) + (rho_h - h_rho) * I
}

/// `λ = ⟨e^{iθ}L + e^{−iθ}L†⟩ = 2 Re(e^{iθ}⟨L⟩)`.
pub fn measurement_rate(state: &TrajectoryState, slh: &SlhCoefficients, theta_t: f64) -> Result<f64> {
    let l_mean = state.expect(slh.l())?;
    Ok(2.0 * (C64::from_polar(1.0, theta_t) * l_mean).re)
}

/// `dY = λ dt + dW` on the current conditional state.
pub fn measurement_increment(
    state: &TrajectoryState,
    slh: &SlhCoefficients,
    theta_t: f64,
    dw: f64,
    dt: f64,
) -> Result<f64> {
    check_dt(dt)?;
    Ok(measurement_rate(state, slh, theta_t)? * dt + dw)
}

/// `χ + e^{iθ}Lχ dY − (½L†L + iH)χ dt`.
fn propagate_vector(
    slh: &SlhCoefficients,
    theta_t: f64,
    amps: &nalgebra::DVector<C64>,
    dy: f64,
    dt: f64,
) -> nalgebra::DVector<C64> {
    let l_chi = slh.l().apply(amps);
    let ldl_chi = slh.l_dag_l().apply(amps);
    let h_chi = slh.h().apply(amps);
    let c_l = C64::from_polar(dy, theta_t);
    let mut out = amps.clone();
    for k in 0..out.len() {
        out[k] += c_l * l_chi[k] - (ldl_chi[k] * 0.5 + I * h_chi[k]) * dt;
    }
    out
}

fn step_operator(slh: &SlhCoefficients, theta_t: f64, dy: f64, dt: f64) -> Result<CavityOperator> {
    let n = slh.dim();
    let (l, ldl, h) = (slh.l(), slh.l_dag_l(), slh.h());
    let b = l.band().max(ldl.band()).max(h.band());
    let c_l = C64::from_polar(dy, theta_t);
    let (ls, ldls, hs) = (l.matrix().as_slice(), ldl.matrix().as_slice(), h.matrix().as_slice());
    let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    let out = m.as_mut_slice();
    for j in 0..n {
        for i in j.saturating_sub(b)..=(j + b).min(n - 1) {
            let k = j * n + i;
            let mut v = c_l * ls[k] - (ldls[k] * 0.5 + I * hs[k]) * dt;
            if i == j {
                v += ONE;
            }
            out[k] = v;
        }
    }
    Ok(CavityOperator::from_banded(m, b))
}

/// `M ρ M†` renormalized and Hermitized, visiting only the band of `M`.
fn sandwich(m: &CavityOperator, rho: &DMatrix<C64>) -> Result<DensityOperator> {
    let n = m.dim();
    let b = m.band();
    let ms = m.matrix().as_slice();
    let rs = rho.as_slice();
    // column-major: entry (i, j) lives at j * n + i
    let mut x = vec![C64::new(0.0, 0.0); n * n];
    for j in 0..n {
        let col = &mut x[j * n..(j + 1) * n];
        for k in 0..n {
            let r = rs[j * n + k];
            let mk = &ms[k * n..(k + 1) * n];
            for i in k.saturating_sub(b)..=(k + b).min(n - 1) {
                col[i] += mk[i] * r;
            }
        }
    }
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    {
        let ys = y.as_mut_slice();
        for j in 0..n {
            for k in j.saturating_sub(b)..=(j + b).min(n - 1) {
                let c = ms[k * n + j].conj();
                let xk = &x[k * n..(k + 1) * n];
                let yj = &mut ys[j * n..(j + 1) * n];
                for i in 0..n {
                    yj[i] += xk[i] * c;
                }
            }
        }
    }
    let tr: f64 = y.diagonal().iter().map(|c| c.re).sum();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::StepSize(format!("updated density has trace {tr}")));
    }
    DensityOperator::hermitize_normalize(&mut y);
    DensityOperator::from_matrix_unchecked(y)
}

fn check_dims(state: &TrajectoryState, slh: &SlhCoefficients) -> Result<()> {
    if state.dim() != slh.dim() {
        return Err(Error::DimensionMismatch {
            expected: slh.dim(),
            found: state.dim(),
        });
    }
    Ok(())
}

fn advance(state: &TrajectoryState, next: ConditionalState, dy: f64, di: f64, dt: f64) -> TrajectoryState {
    TrajectoryState {
        t: state.t + dt,
        state: next,
        y: state.y + dy,
        i: state.i + di,
    }
}

/// Stochastic Schrödinger step driven by the innovations increment `dI`.
pub fn sse_step(
    state: &TrajectoryState,
    slh: &SlhCoefficients,
    theta_t: f64,
    di: f64,
    dt: f64,
) -> Result<TrajectoryState> {
    check_dt(dt)?;
    check_dims(state, slh)?;
    let ConditionalState::Sse(psi) = &state.state else {
        return Err(Error::Domain("sse_step needs a pure normalized state".into()));
    };
    let lambda = measurement_rate(state, slh, theta_t)?;
    let dy = di + lambda * dt;
    let chi = StateVector::new(propagate_vector(slh, theta_t, psi.amplitudes(), dy, dt))?;
    let drift = chi.norm_squared() - (1.0 + lambda * dy);
    if !(drift.abs() <= NORM_STEP_TOLERANCE) {
        return Err(Error::StepSize(format!(
            "squared norm deviates from 1 + lambda dY by {drift:.3e}"
        )));
    }
    Ok(advance(state, ConditionalState::Sse(chi.normalized()?), dy, di, dt))
}

/// Stochastic master equation step driven by the innovations increment `dI`.
pub fn sme_step(
    state: &TrajectoryState,
    slh: &SlhCoefficients,
    theta_t: f64,
    di: f64,
    dt: f64,
) -> Result<TrajectoryState> {
    check_dt(dt)?;
    check_dims(state, slh)?;
    let ConditionalState::Sme(rho) = &state.state else {
        return Err(Error::Domain("sme_step needs a density operator".into()));
    };
    let lambda = measurement_rate(state, slh, theta_t)?;
    let dy = di + lambda * dt;
    let m = step_operator(slh, theta_t, dy, dt)?;
    let next = sandwich(&m, rho.matrix())?;
    let worst = next
        .matrix()
        .diagonal()
        .iter()
        .map(|c| c.re)
        .fold(f64::INFINITY, f64::min);
    if worst < -1e-6 {
        return Err(Error::StepSize(format!(
            "updated density has negative population {worst:.3e}"
        )));
    }
    Ok(advance(state, ConditionalState::Sme(next), dy, di, dt))
}

/// Linear Belavkin-Zakai step for an unnormalized state, driven by the
/// measurement increment `dY`. The measurement phase is carried by `slh`
/// (see [`SlhCoefficients::rotated`]).
pub fn belavkin_zakai_step(
    state: &TrajectoryState,
    slh: &SlhCoefficients,
    dy: f64,
    dt: f64,
) -> Result<TrajectoryState> {
    check_dt(dt)?;
    check_dims(state, slh)?;
    let ConditionalState::Zakai(chi) = &state.state else {
        return Err(Error::Domain("belavkin_zakai_step needs an unnormalized pure state".into()));
    };
    let lambda = measurement_rate(state, slh, 0.0)?;
    let next = StateVector::new(propagate_vector(slh, 0.0, chi.amplitudes(), dy, dt))?;
    let norm = next.norm();
    if !(1e-100..=1e100).contains(&norm) {
        return Err(Error::RescaleRequired { norm });
    }
    Ok(advance(state, ConditionalState::Zakai(next), dy, dy - lambda * dt, dt))
}

/// Supplies the SLH coefficients in force at each step.
pub trait SlhSource {
    fn slh_at(&mut self, t: f64, state: &TrajectoryState) -> Result<&SlhCoefficients>;
}

impl SlhSource for SlhCoefficients {
    fn slh_at(&mut self, _t: f64, _state: &TrajectoryState) -> Result<&SlhCoefficients> {
        Ok(self)
    }
}

/// Recorded point of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub moments: Moments,
    pub y: f64,
    pub i: f64,
}

impl TrajectorySample {
    pub fn of(state: &TrajectoryState) -> Self {
        Self {
            t: state.t,
            moments: state.moments(),
            y: state.y,
            i: state.i,
        }
    }
}

/// One step of whichever equation matches the state representation, with
/// the innovations increment `dw` supplied by the caller.
pub fn step(
    state: &TrajectoryState,
    slh: &SlhCoefficients,
    theta_t: f64,
    dw: f64,
    dt: f64,
) -> Result<TrajectoryState> {
    match state.state {
        ConditionalState::Sse(_) => sse_step(state, slh, theta_t, dw, dt),
        ConditionalState::Sme(_) => sme_step(state, slh, theta_t, dw, dt),
        ConditionalState::Zakai(_) => {
            let rotated = slh.rotated(theta_t);
            let dy = measurement_increment(state, &rotated, 0.0, dw, dt)?;
            belavkin_zakai_step(state, &rotated, dy, dt)
        }
    }
}

/// Fixed-step trajectory on `[0, t_final]`, sampled every `stride` steps
/// (the initial and final states are always recorded).
pub fn run_trajectory(
    initial: &TrajectoryState,
    source: &mut dyn SlhSource,
    theta: &QuadraturePhase,
    noise: &mut NoiseStream,
    t_final: f64,
    stride: usize,
) -> Result<Vec<TrajectorySample>> {
    let dt = noise.dt();
    let steps = step_count(t_final, dt)?;
    let stride = stride.max(1);
    let mut samples = Vec::with_capacity(steps / stride + 2);
    let mut state = initial.clone();
    samples.push(TrajectorySample::of(&state));
    for k in 0..steps {
        let t = initial.t + k as f64 * dt;
        let slh = source.slh_at(t, &state).map_err(|e| e.at_step(k))?;
        let dw = noise.next_increment();
        state = step(&state, slh, theta.at(t), dw, dt).map_err(|e| e.at_step(k))?;
        state.t = initial.t + (k + 1) as f64 * dt;
        if (k + 1) % stride == 0 || k + 1 == steps {
            samples.push(TrajectorySample::of(&state));
        }
    }
    Ok(samples)
}

/// Unconditional evolution `dρ/dt = ℒ′ρ` by classical RK4, sampled every
/// `stride` steps.
pub fn master_equation_integrate(
    rho0: &DensityOperator,
    slh: &SlhCoefficients,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<Vec<(f64, DensityOperator)>> {
    let steps = step_count(t_final, dt)?;
    let stride = stride.max(1);
    let mut rho = rho0.matrix().clone();
    let mut out = vec![(0.0, rho0.clone())];
    let half = C64::new(0.5 * dt, 0.0);
    let full = C64::new(dt, 0.0);
    for k in 0..steps {
        let k1 = lindblad_dual(slh, &rho);
        let k2 = lindblad_dual(slh, &(&rho + &k1 * half));
        let k3 = lindblad_dual(slh, &(&rho + &k2 * half));
        let k4 = lindblad_dual(slh, &(&rho + &k3 * full));
        rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);
        DensityOperator::hermitize_normalize(&mut rho);
        if !rho.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::Divergence {
                t: (k + 1) as f64 * dt,
                detail: "master equation state not finite".into(),
            });
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.push((
                (k + 1) as f64 * dt,
                DensityOperator::from_matrix_unchecked(rho.clone())?,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, creation_op, gaussian_pure_state, CovariancePair, ZERO};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_density(dim: usize, seed: u64) -> DMatrix<C64> {
        let mut noise = NoiseStream::new(seed, 1.0).unwrap();
        let g = DMatrix::from_fn(dim, dim, |_, _| c(noise.next_standard(), noise.next_standard()));
        let mut rho = &g * g.adjoint();
        DensityOperator::hermitize_normalize(&mut rho);
        rho
    }

    fn random_operator(dim: usize, seed: u64) -> CavityOperator {
        let mut noise = NoiseStream::new(seed, 1.0).unwrap();
        CavityOperator::from_matrix(DMatrix::from_fn(dim, dim, |_, _| {
            c(noise.next_standard(), noise.next_standard())
        }))
        .unwrap()
    }

    #[test]
    fn generator_kills_identity() {
        let slh = SlhCoefficients::damped_mode(0.7, 1.3, 12).unwrap();
        let id = CavityOperator::identity(12).unwrap();
        assert!(lindblad_apply(&slh, &id).unwrap().matrix().norm() < 1e-12);
    }

    #[test]
    fn generator_on_annihilation() {
        let (gamma, omega, dim) = (0.8, 0.6, 15);
        let slh = SlhCoefficients::damped_mode(gamma, omega, dim).unwrap();
        let a = annihilation_op(dim).unwrap();
        let la = lindblad_apply(&slh, &a).unwrap();
        let expected = a.scale(c(-gamma / 2.0, -omega));
        for i in 0..dim - 1 {
            for j in 0..dim - 1 {
                assert!((la.matrix()[(i, j)] - expected.matrix()[(i, j)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn generator_duality() {
        let dim = 8;
        let a = annihilation_op(dim).unwrap();
        let l = a.scale(c(0.9, 0.2)).add(&a.adjoint().scale(c(0.1, 0.0))).unwrap();
        let h = number_op(dim)
            .unwrap()
            .add(&a.mul(&a).unwrap().add(&creation_op(dim).unwrap().mul(&a.adjoint()).unwrap()).unwrap())
            .unwrap();
        let slh = SlhCoefficients::new(l, h).unwrap();
        for seed in 0..4 {
            let rho = random_density(dim, seed);
            let x = random_operator(dim, seed + 100);
            let lhs = (&rho * lindblad_apply(&slh, &x).unwrap().matrix()).trace();
            let rhs = (lindblad_dual(&slh, &rho) * x.matrix()).trace();
            assert!((lhs - rhs).norm() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn non_hermitian_hamiltonian_rejected() {
        let a = annihilation_op(5).unwrap();
        assert!(matches!(SlhCoefficients::new(a.clone(), a), Err(Error::Domain(_))));
    }

    #[test]
    fn measurement_on_vacuum_and_coherent() {
        let gamma = 2.0;
        let slh = SlhCoefficients::damped_mode(gamma, 0.0, 30).unwrap();
        let vac = TrajectoryState::sse(StateVector::vacuum(30).unwrap()).unwrap();
        assert_eq!(measurement_increment(&vac, &slh, 0.0, 0.017, 1e-3).unwrap(), 0.017);
        let alpha = 0.6;
        let coh = TrajectoryState::sse(coherent_state(c(alpha, 0.0), 30).unwrap()).unwrap();
        let lambda = measurement_rate(&coh, &slh, 0.0).unwrap();
        assert!((lambda - 2.0 * gamma.sqrt() * alpha).abs() < 1e-10);
    }

    #[test]
    fn vacuum_is_deterministic_phase_only() {
        let slh = SlhCoefficients::damped_mode(1.0, 2.0, 10).unwrap();
        let mut s = TrajectoryState::sse(StateVector::vacuum(10).unwrap()).unwrap();
        let mut noise = NoiseStream::new(3, 1e-3).unwrap();
        for _ in 0..100 {
            s = sse_step(&s, &slh, 0.0, noise.next_increment(), 1e-3).unwrap();
        }
        assert!(s.moments().a.norm() < 1e-14);
        let rho0 = StateVector::vacuum(10).unwrap().to_density().unwrap();
        let mut r = TrajectoryState::sme(rho0.clone());
        for _ in 0..100 {
            r = sme_step(&r, &slh, 0.0, noise.next_increment(), 1e-3).unwrap();
        }
        let ConditionalState::Sme(rho) = &r.state else { unreachable!() };
        assert!((rho.matrix() - rho0.matrix()).norm() < 1e-14);
    }

    #[test]
    fn closed_mode_rotates() {
        let omega = 1.5;
        let slh = SlhCoefficients::new(
            CavityOperator::zeros(30).unwrap(),
            number_op(30).unwrap().scale(c(omega, 0.0)),
        )
        .unwrap();
        let alpha = c(0.8, 0.0);
        let mut s = TrajectoryState::sse(coherent_state(alpha, 30).unwrap()).unwrap();
        let dt = 1e-4;
        for _ in 0..10_000 {
            s = sse_step(&s, &slh, 0.0, 0.0, dt).unwrap();
        }
        let expected = alpha * C64::from_polar(1.0, -omega);
        assert!((s.moments().a - expected).norm() < 1e-3, "{}", s.moments().a);
    }

    #[test]
    fn rescale_signal() {
        let slh = SlhCoefficients::damped_mode(1.0, 0.0, 4).unwrap();
        let tiny = StateVector::new(nalgebra::DVector::from_element(4, c(1e-101, 0.0))).unwrap();
        let s = TrajectoryState::zakai(tiny);
        assert!(matches!(
            belavkin_zakai_step(&s, &slh, 0.0, 1e-3),
            Err(Error::RescaleRequired { .. })
        ));
    }

    #[test]
    fn trivial_zakai_is_constant() {
        let slh = SlhCoefficients::new(
            CavityOperator::zeros(6).unwrap(),
            CavityOperator::zeros(6).unwrap(),
        )
        .unwrap();
        let chi = StateVector::new(nalgebra::DVector::from_fn(6, |i, _| c(i as f64, 1.0))).unwrap();
        let s = TrajectoryState::zakai(chi.clone());
        let next = belavkin_zakai_step(&s, &slh, 0.3, 1e-2).unwrap();
        let ConditionalState::Zakai(out) = &next.state else { unreachable!() };
        assert_eq!(out, &chi);
    }

    #[test]
    fn zakai_on_vacuum_is_hamiltonian_only() {
        let slh = SlhCoefficients::damped_mode(1.0, 0.0, 6).unwrap();
        let s = TrajectoryState::zakai(StateVector::vacuum(6).unwrap());
        let next = belavkin_zakai_step(&s, &slh, 0.5, 1e-2).unwrap();
        let ConditionalState::Zakai(out) = &next.state else { unreachable!() };
        assert_eq!(out, &StateVector::vacuum(6).unwrap());
    }

    #[test]
    fn three_representations_agree_per_step() {
        let dim = 30;
        let slh = SlhCoefficients::damped_mode(1.0, 0.5, dim).unwrap();
        let r: f64 = 0.3;
        let cov = CovariancePair::new(r.sinh().powi(2), C64::from_polar(r.sinh() * r.cosh(), 1.0));
        let psi = gaussian_pure_state(c(0.4, 0.2), cov, dim).unwrap();
        let dt: f64 = 1e-6;
        for (theta, di) in [(0.0, dt.sqrt()), (0.7, -dt.sqrt()), (2.0, 0.5 * dt.sqrt())] {
            let sse = TrajectoryState::sse(psi.clone()).unwrap();
            let sme = TrajectoryState::sme(psi.to_density().unwrap());
            let bz = TrajectoryState::zakai(psi.clone());
            let s1 = sse_step(&sse, &slh, theta, di, dt).unwrap();
            let s2 = sme_step(&sme, &slh, theta, di, dt).unwrap();
            let rotated = slh.rotated(theta);
            let dy = di + measurement_rate(&bz, &rotated, 0.0).unwrap() * dt;
            let s3 = belavkin_zakai_step(&bz, &rotated, dy, dt).unwrap();
            let (m1, m2, m3) = (s1.moments(), s2.moments(), s3.moments());
            for (x, y) in [(m1, m2), (m1, m3)] {
                assert!((x.a - y.a).norm() < 1e-8);
                assert!((x.n - y.n).abs() < 1e-8);
                assert!((x.a2 - y.a2).norm() < 1e-8);
            }
            assert!((s1.y - s3.y).abs() < 1e-15);
            assert!((s3.i - di).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_seeds_identical_records() {
        let slh = SlhCoefficients::damped_mode(1.0, 0.3, 20);
        let init = TrajectoryState::sse(coherent_state(c(0.5, 0.1), 20).unwrap()).unwrap();
        let run = || {
            let mut src = slh.as_ref().unwrap().clone();
            let mut noise = NoiseStream::new(42, 1e-3).unwrap();
            run_trajectory(&init, &mut src, &QuadraturePhase::Constant(0.0), &mut noise, 0.5, 10)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 51);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.t.to_bits(), y.t.to_bits());
            assert_eq!(x.moments.a.re.to_bits(), y.moments.a.re.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
        }
    }

    #[test]
    fn step_errors_carry_index() {
        let slh = SlhCoefficients::damped_mode(1.0, 0.0, 10).unwrap();
        let init = TrajectoryState::sse(coherent_state(c(0.5, 0.0), 20).unwrap()).unwrap();
        let mut src = slh;
        let mut noise = NoiseStream::new(1, 1e-3).unwrap();
        let err = run_trajectory(&init, &mut src, &QuadraturePhase::default(), &mut noise, 0.01, 1)
            .unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 0, .. }));
        assert!(step_count(1.0, 0.3).is_err());
    }

    #[test]
    fn ensemble_mean_of_sme_is_master_equation() {
        let dim = 12;
        let slh = SlhCoefficients::damped_mode(1.0, 0.5, dim).unwrap();
        let rho0 = crate::fock::gaussian_state(c(0.6, 0.0), CovariancePair::new(0.2, ZERO), dim).unwrap();
        let dt = 1e-3;
        let t_final = 0.5;
        let me = master_equation_integrate(&rho0, &slh, dt, t_final, 500).unwrap();
        let target = me.last().unwrap().1.moments();
        let n_traj = 200;
        let (mut sum, mut sum_sq) = (ZERO, 0.0);
        for index in 0..n_traj {
            let mut noise = NoiseStream::for_trajectory(5, index, dt).unwrap();
            let mut src = slh.clone();
            let samples = run_trajectory(
                &TrajectoryState::sme(rho0.clone()),
                &mut src,
                &QuadraturePhase::default(),
                &mut noise,
                t_final,
                500,
            )
            .unwrap();
            let a = samples.last().unwrap().moments.a;
            sum += a;
            sum_sq += a.norm_sqr();
        }
        let mean = sum / n_traj as f64;
        let var = sum_sq / n_traj as f64 - mean.norm_sqr();
        let se = (var / n_traj as f64).sqrt();
        assert!((mean - target.a).norm() <= 3.0 * se + 1e-3, "{mean} vs {}", target.a);
        let exact = c(0.6, 0.0) * (c(-0.5, -0.5) * t_final).exp();
        assert!((target.a - exact).norm() < 1e-6);
    }

    #[test]
    fn sme_keeps_trace_and_hermiticity() {
        let dim = 10;
        let slh = SlhCoefficients::damped_mode(1.0, 0.2, dim).unwrap();
        let rho0 = DensityOperator::thermal(0.3, dim).unwrap();
        let mut s = TrajectoryState::sme(rho0);
        let mut noise = NoiseStream::new(8, 1e-3).unwrap();
        for _ in 0..200 {
            s = sme_step(&s, &slh, 0.4, noise.next_increment(), 1e-3).unwrap();
        }
        let ConditionalState::Sme(rho) = &s.state else { unreachable!() };
        rho.validate().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn measurement_rate_is_real_expectation(
            re in -1.0f64..1.0, im in -1.0f64..1.0, theta in 0.0f64..6.3, gamma in 0.0f64..3.0,
        ) {
            let dim = 30;
            let slh = SlhCoefficients::damped_mode(gamma, 0.0, dim).unwrap();
            let s = TrajectoryState::sse(coherent_state(c(re, im), dim).unwrap()).unwrap();
            let lt = slh.l().scale(C64::from_polar(1.0, theta));
            let quad = lt.add(&lt.adjoint()).unwrap();
            let direct = s.expect(&quad).unwrap();
            prop_assert!(direct.im.abs() <= 1e-12);
            prop_assert!((direct.re - measurement_rate(&s, &slh, theta).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn sse_preserves_norm(seed in 0u64..1000, theta in 0.0f64..6.3) {
            let dim = 25;
            let slh = SlhCoefficients::damped_mode(1.0, 0.7, dim).unwrap();
            let mut s = TrajectoryState::sse(coherent_state(c(0.5, -0.4), dim).unwrap()).unwrap();
            let mut noise = NoiseStream::new(seed, 1e-3).unwrap();
            for _ in 0..50 {
                s = sse_step(&s, &slh, theta, noise.next_increment(), 1e-3).unwrap();
                let ConditionalState::Sse(psi) = &s.state else { unreachable!() };
                prop_assert!((psi.norm() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
