//! Complex-coefficient rational transfer functions for the filtered mode,
//! the PID controller and their closed loops.
//!
//! Polynomials are stored as coefficient vectors in ascending powers of `s`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{PidGains, ReferenceSignal};
use crate::error::{Error, Result};
use crate::fock::C64;
use crate::qkf::ModeParams;
use crate::trajectory::step_count;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Tolerance for cancelling common factors of numerator and denominator.
pub const CANCEL_TOL: f64 = 1e-12;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn trim(mut p: Vec<C64>) -> Vec<C64> {
    while p.len() > 1 && p[p.len() - 1] == ZERO {
        p.pop();
    }
    if p.is_empty() {
        p.push(ZERO);
    }
    p
}

pub fn poly_eval(p: &[C64], s: C64) -> C64 {
    p.iter().rev().fold(ZERO, |acc, &k| acc * s + k)
}

fn poly_scale_at(p: &[C64], s: C64) -> f64 {
    let r = s.norm();
    p.iter()
        .enumerate()
        .map(|(k, a)| a.norm() * r.powi(k as i32))
        .sum()
}

pub fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(out)
}

pub fn poly_add(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    trim(out)
}

fn degree(p: &[C64]) -> usize {
    trim(p.to_vec()).len() - 1
}

fn is_zero_poly(p: &[C64]) -> bool {
    p.iter().all(|&k| k == ZERO)
}

/// `(q, r)` with `a = q b + r`, `deg r < deg b`.
pub fn poly_divrem(a: &[C64], b: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let b = trim(b.to_vec());
    let mut r = trim(a.to_vec());
    let db = b.len() - 1;
    if r.len() - 1 < db || is_zero_poly(&r) {
        return (vec![ZERO], r);
    }
    let lead = b[db];
    let mut q = vec![ZERO; r.len() - db];
    for k in (0..q.len()).rev() {
        let coef = r[k + db] / lead;
        q[k] = coef;
        for (j, bj) in b.iter().enumerate() {
            r[k + j] -= coef * bj;
        }
        r[k + db] = ZERO;
    }
    r.truncate(db.max(1));
    (trim(q), trim(r))
}

/// Divides out the factor `(s − z)` (synthetic division, remainder dropped).
fn deflate(p: &[C64], z: C64) -> Vec<C64> {
    let n = p.len() - 1;
    let mut q = vec![ZERO; n];
    let mut carry = ZERO;
    for k in (0..n).rev() {
        carry = p[k + 1] + carry * z;
        q[k] = carry;
    }
    trim(q)
}

fn poly_derivative(p: &[C64]) -> Vec<C64> {
    if p.len() <= 1 {
        return vec![ZERO];
    }
    trim(p.iter().enumerate().skip(1).map(|(k, a)| a * k as f64).collect())
}

/// Roots of a polynomial: closed form up to degree two, Durand-Kerner with
/// Newton polishing above.
pub fn roots(p: &[C64]) -> Result<Vec<C64>> {
    let p = trim(p.to_vec());
    let n = p.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    if is_zero_poly(&p) {
        return Err(Error::Algebra("roots of the zero polynomial".into()));
    }
    // factor out roots at zero exactly
    let zeros = p.iter().take_while(|&&k| k == ZERO).count();
    if zeros > 0 {
        let mut out = vec![ZERO; zeros];
        out.extend(roots(&p[zeros..])?);
        return Ok(out);
    }
    match n {
        1 => Ok(vec![-p[0] / p[1]]),
        2 => {
            let (a, b, cc) = (p[2], p[1], p[0]);
            let disc = (b * b - a * cc * 4.0).sqrt();
            let q = if (b + disc).norm() >= (b - disc).norm() {
                -(b + disc) * 0.5
            } else {
                -(b - disc) * 0.5
            };
            Ok(vec![q / a, cc / q])
        }
        _ => {
            let lead = p[n];
            let monic: Vec<C64> = p.iter().map(|k| k / lead).collect();
            let radius = 1.0 + monic[..n].iter().map(|k| k.norm()).fold(0.0, f64::max);
            let seed = C64::new(0.4, 0.9);
            let mut z: Vec<C64> = (0..n).map(|k| seed.powu(k as u32) * radius * 0.5).collect();
            for _ in 0..2000 {
                let mut change: f64 = 0.0;
                for k in 0..n {
                    let mut denom = ONE;
                    for j in 0..n {
                        if j != k {
                            denom *= z[k] - z[j];
                        }
                    }
                    if denom == ZERO {
                        denom = C64::new(1e-300, 0.0);
                    }
                    let step = poly_eval(&monic, z[k]) / denom;
                    z[k] -= step;
                    change = change.max(step.norm() / (1.0 + z[k].norm()));
                }
                if change < 1e-15 {
                    break;
                }
            }
            let dp = poly_derivative(&monic);
            for zk in z.iter_mut() {
                for _ in 0..3 {
                    let d = poly_eval(&dp, *zk);
                    if d == ZERO {
                        break;
                    }
                    let step = poly_eval(&monic, *zk) / d;
                    if !(step.re.is_finite() && step.im.is_finite()) {
                        break;
                    }
                    *zk -= step;
                }
            }
            Ok(z)
        }
    }
}

/// Rational function `num(s) / den(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalTF {
    num: Vec<C64>,
    den: Vec<C64>,
}

impl RationalTF {
    pub fn new(num: Vec<C64>, den: Vec<C64>) -> Result<Self> {
        let num = trim(num);
        let den = trim(den);
        if is_zero_poly(&den) {
            return Err(Error::Algebra("denominator is identically zero".into()));
        }
        if num.iter().chain(&den).any(|k| !(k.re.is_finite() && k.im.is_finite())) {
            return Err(Error::Algebra("coefficients must be finite".into()));
        }
        Ok(Self { num, den })
    }

    pub fn constant(k: C64) -> Self {
        Self {
            num: vec![k],
            den: vec![ONE],
        }
    }

    pub fn num(&self) -> &[C64] {
        &self.num
    }

    pub fn den(&self) -> &[C64] {
        &self.den
    }

    pub fn eval(&self, s: C64) -> C64 {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    pub fn is_proper(&self) -> bool {
        is_zero_poly(&self.num) || degree(&self.num) <= degree(&self.den)
    }

    pub fn is_strictly_proper(&self) -> bool {
        is_zero_poly(&self.num) || degree(&self.num) < degree(&self.den)
    }

    /// Same function with a monic denominator.
    pub fn normalized(&self) -> Self {
        let lead = self.den[self.den.len() - 1];
        Self {
            num: self.num.iter().map(|k| k / lead).collect(),
            den: self.den.iter().map(|k| k / lead).collect(),
        }
    }

    pub fn poles(&self) -> Result<Vec<C64>> {
        roots(&self.den)
    }

    pub fn zeros(&self) -> Result<Vec<C64>> {
        if is_zero_poly(&self.num) {
            return Ok(Vec::new());
        }
        roots(&self.num)
    }

    /// Cancels denominator roots at which the numerator vanishes to `tol`.
    pub fn reduced(&self, tol: f64) -> Result<Self> {
        let mut num = self.num.clone();
        let mut den = self.den.clone();
        if is_zero_poly(&num) {
            return Ok(Self {
                num: vec![ZERO],
                den: vec![ONE],
            });
        }
        loop {
            if degree(&num) == 0 || degree(&den) == 0 {
                break;
            }
            let mut cancelled = false;
            for z in roots(&den)? {
                let scale = poly_scale_at(&num, z).max(f64::MIN_POSITIVE);
                if poly_eval(&num, z).norm() <= tol * scale {
                    num = deflate(&num, z);
                    den = deflate(&den, z);
                    cancelled = true;
                    break;
                }
            }
            if !cancelled {
                break;
            }
        }
        Self::new(num, den)
    }
}

/// `G(s) = 1 / (s + γ/2 + iω)`.
pub fn plant_tf(params: &ModeParams) -> RationalTF {
    RationalTF {
        num: vec![ONE],
        den: vec![params.decay(), ONE],
    }
}

/// `K(s) = k_P + k_I / s + k_D s`.
pub fn pid_tf(gains: &PidGains) -> RationalTF {
    if gains.k_i == 0.0 {
        RationalTF {
            num: trim(vec![c(gains.k_p), c(gains.k_d)]),
            den: vec![ONE],
        }
    } else {
        RationalTF {
            num: trim(vec![c(gains.k_i), c(gains.k_p), c(gains.k_d)]),
            den: vec![ZERO, ONE],
        }
    }
}

/// `dG dK + nG nK`, the characteristic polynomial of the unity-feedback loop.
pub fn characteristic_polynomial(g: &RationalTF, k: &RationalTF) -> Vec<C64> {
    poly_add(&poly_mul(&g.den, &k.den), &poly_mul(&g.num, &k.num))
}

/// `GK / (1 + GK)` with common factors cancelled; monic denominator.
pub fn closed_loop(g: &RationalTF, k: &RationalTF) -> Result<RationalTF> {
    let den = characteristic_polynomial(g, k);
    if is_zero_poly(&den) {
        return Err(Error::Algebra("1 + GK vanishes identically".into()));
    }
    let num = poly_mul(&g.num, &k.num);
    Ok(RationalTF::new(num, den)?.reduced(CANCEL_TOL)?.normalized())
}

/// Set-point weighted PI loop `(μ k_P s + k_I) / (s² + s(γ/2 + iω + k_P) + k_I)`.
pub fn setpoint_tf(gains: &PidGains, params: &ModeParams) -> Result<RationalTF> {
    if gains.k_d != 0.0 {
        return Err(Error::Domain("set-point weighting form has no derivative action".into()));
    }
    RationalTF::new(
        vec![c(gains.k_i), c(gains.mu * gains.k_p)],
        vec![c(gains.k_i), params.decay() + gains.k_p, ONE],
    )
}

/// Map from `r` to `â` of the weighted PID filter:
/// `(k_D ν s² + μ k_P s + k_I) / ((1 + k_D) s² + (γ/2 + iω + k_P) s + k_I)`.
pub fn weighted_pid_tf(gains: &PidGains, params: &ModeParams) -> Result<RationalTF> {
    RationalTF::new(
        vec![c(gains.k_i), c(gains.mu * gains.k_p), c(gains.k_d * gains.nu)],
        vec![c(gains.k_i), params.decay() + gains.k_p, c(1.0 + gains.k_d)],
    )?
    .reduced(CANCEL_TOL)
    .map(|h| h.normalized())
}

/// PI gains placing the closed-loop poles at the roots of `s² + 2ζω₀ s + ω₀²`.
pub fn pole_place_pi(zeta: f64, omega0: f64, params: &ModeParams) -> Result<PidGains> {
    if params.omega != 0.0 {
        return Err(Error::Domain("pole placement needs a resonant mode (omega = 0)".into()));
    }
    if !(zeta > 0.0 && omega0 > 0.0 && zeta.is_finite() && omega0.is_finite()) {
        return Err(Error::Domain("zeta and omega0 must be positive".into()));
    }
    let k_p = 2.0 * zeta * omega0 - 0.5 * params.gamma;
    if k_p < 0.0 {
        return Err(Error::Infeasible(format!(
            "2 zeta omega0 = {} is below gamma/2 = {}",
            2.0 * zeta * omega0,
            0.5 * params.gamma
        )));
    }
    PidGains::new(k_p, omega0 * omega0, 0.0)
}

/// `tf(iΩ)` on a grid of real frequencies.
pub fn freq_response(tf: &RationalTF, omegas: &[f64]) -> Result<Vec<C64>> {
    omegas
        .iter()
        .map(|&w| {
            let s = C64::new(0.0, w);
            let d = poly_eval(&tf.den, s);
            if d.norm() <= 1e-12 * poly_scale_at(&tf.den, s).max(1.0) {
                return Err(Error::PoleOnAxis { omega: w });
            }
            Ok(poly_eval(&tf.num, s) / d)
        })
        .collect()
}

/// Controllable companion realization
/// `ẋ = A x + B u`, `y = C x + D u + Σ_k taps[k] u^{(k+1)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceRealization {
    pub a: DMatrix<C64>,
    pub b: DVector<C64>,
    pub c: DVector<C64>,
    pub d: C64,
    /// Coefficients of `u′, u″, …` from the polynomial part.
    pub taps: Vec<C64>,
}

impl StateSpaceRealization {
    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// `C (sI − A)⁻¹ B + D + Σ taps[k] s^{k+1}`.
    pub fn transfer_at(&self, s: C64) -> Result<C64> {
        let n = self.order();
        let mut poly = self.d;
        for (k, t) in self.taps.iter().enumerate() {
            poly += t * s.powu(k as u32 + 1);
        }
        if n == 0 {
            return Ok(poly);
        }
        let m = DMatrix::from_diagonal_element(n, n, s) - &self.a;
        let x = m
            .lu()
            .solve(&self.b)
            .ok_or_else(|| Error::Algebra(format!("sI - A singular at s = {s}")))?;
        Ok(self.output(x.as_slice()) + poly)
    }
}

/// Realizes `tf`, checking the result at 16 pseudo-random frequencies.
pub fn realize(tf: &RationalTF) -> Result<StateSpaceRealization> {
    let (q, r) = poly_divrem(&tf.num, &tf.den);
    let lead = tf.den[tf.den.len() - 1];
    let n = degree(&tf.den);
    let den: Vec<C64> = tf.den.iter().map(|k| k / lead).collect();
    let rem: Vec<C64> = (0..n)
        .map(|k| r.get(k).copied().unwrap_or(ZERO) / lead)
        .collect();
    let mut a = DMatrix::from_element(n, n, ZERO);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = ONE;
    }
    if n > 0 {
        for k in 0..n {
            a[(n - 1, k)] = -den[k];
        }
    }
    let mut b = DVector::from_element(n, ZERO);
    if n > 0 {
        b[n - 1] = ONE;
    }
    let cvec = DVector::from_vec(rem);
    let d = q.first().copied().unwrap_or(ZERO);
    let taps: Vec<C64> = q.iter().skip(1).copied().collect();
    let ss = StateSpaceRealization {
        a,
        b,
        c: cvec,
        d,
        taps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..16 {
        let s = C64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let want = tf.eval(s);
        let got = ss.transfer_at(s)?;
        if (want - got).norm() > 1e-10 * (1.0 + want.norm()) {
            return Err(Error::Algebra(format!(
                "realization mismatch at s = {s}: {got} vs {want}"
            )));
        }
    }
    Ok(ss)
}

impl StateSpaceRealization {
    fn output(&self, x: &[C64]) -> C64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    fn rhs(&self, x: &[C64], u: C64, out: &mut [C64]) {
        let n = self.order();
        for i in 0..n.saturating_sub(1) {
            out[i] = x[i + 1];
        }
        if n > 0 {
            let mut acc = u;
            for k in 0..n {
                acc += self.a[(n - 1, k)] * x[k];
            }
            out[n - 1] = acc;
        }
    }
}

/// Response of `tf` from rest to the reference `r`, sampled at `t_k = k dt`
/// (left limits). The states are advanced by RK4, segment by segment between
/// reference breakpoints; polynomial terms act on the analytic `ṙ`.
pub fn step_response(
    tf: &RationalTF,
    reference: &ReferenceSignal,
    t_final: f64,
    dt: f64,
) -> Result<Vec<(f64, C64)>> {
    let ss = realize(tf)?;
    if ss.taps.len() > 1 {
        return Err(Error::Algebra(
            "responses need at most one derivative of the reference".into(),
        ));
    }
    let steps = step_count(t_final, dt)?;
    let n = ss.order();
    let tap = ss.taps.first().copied().unwrap_or(ZERO);
    let y_at = |x: &[C64], t: f64| {
        ss.output(x) + ss.d * reference.value_left(t) + tap * reference.rate_left(t)
    };
    let mut x = vec![ZERO; n];
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, y_at(&x, 0.0)));
    let bps = reference.breakpoints();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
    let mut tmp = vec![ZERO; n];
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let t1 = t0 + dt;
        let mut cuts: Vec<f64> = bps.iter().copied().filter(|&b| b > t0 && b < t1).collect();
        cuts.push(t1);
        let mut s = t0;
        for cut in cuts {
            let h = if s == t0 && cut == t1 { dt } else { cut - s };
            let mid = s + 0.5 * h;
            let (u0, um, u1) = (reference.value(s), reference.value(mid), reference.value_left(cut));
            ss.rhs(&x, u0, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + k1[i] * (0.5 * h);
            }
            ss.rhs(&tmp, um, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + k2[i] * (0.5 * h);
            }
            ss.rhs(&tmp, um, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + k3[i] * h;
            }
            ss.rhs(&tmp, u1, &mut k4);
            for i in 0..n {
                x[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
            }
            s = cut;
        }
        out.push((t1, y_at(&x, t1)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cc(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn plant_values() {
        let g = plant_tf(&ModeParams::new(2.0, 0.0).unwrap());
        assert_eq!(g.eval(ZERO), ONE);
        let p = plant_tf(&ModeParams::new(1.0, 0.5).unwrap());
        assert!((p.poles().unwrap()[0] - cc(-0.5, -0.5)).norm() < 1e-15);
        assert!(p.eval(cc(0.0, 1e8)).norm() < 1e-7);
        assert!(p.is_strictly_proper());
    }

    #[test]
    fn pid_forms() {
        let k = pid_tf(&PidGains::new(3.0, 0.0, 0.0).unwrap());
        assert_eq!(k, RationalTF::constant(c(3.0)));
        let k = pid_tf(&PidGains::new(1.0, 2.0, 3.0).unwrap());
        assert!((k.eval(ONE) - c(6.0)).norm() < 1e-15);
        let k = pid_tf(&PidGains::new(0.0, 1.0, 0.0).unwrap());
        assert_eq!(k.poles().unwrap(), vec![ZERO]);
    }

    #[test]
    fn proportional_loop() {
        let params = ModeParams::new(1.0, 0.5).unwrap();
        let h = closed_loop(&plant_tf(&params), &pid_tf(&PidGains::new(50.0, 0.0, 0.0).unwrap())).unwrap();
        assert_eq!(h.num().len(), 1);
        assert!((h.num()[0] - c(50.0)).norm() <= 1e-12);
        assert!((h.den()[0] - cc(50.5, 0.5)).norm() <= 1e-12);
        assert!((h.den()[1] - ONE).norm() <= 1e-12);
    }

    #[test]
    fn pi_and_pid_loops() {
        let params = ModeParams::new(1.0, 0.5).unwrap();
        let g = plant_tf(&params);
        let (kp, ki, kd) = (2.0, 1.0, 0.5);
        let pi = closed_loop(&g, &pid_tf(&PidGains::new(kp, ki, 0.0).unwrap())).unwrap();
        let want = [c(ki), c(kp)];
        let want_den = [c(ki), cc(kp + 0.5, 0.5), ONE];
        for (a, b) in pi.num().iter().zip(&want) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in pi.den().iter().zip(&want_den) {
            assert!((a - b).norm() < 1e-12);
        }
        let pid = closed_loop(&g, &pid_tf(&PidGains::new(kp, ki, kd).unwrap())).unwrap();
        let expected = RationalTF::new(
            vec![c(ki), c(kp), c(kd)],
            vec![c(ki), cc(kp + 0.5, 0.5), c(1.0 + kd)],
        )
        .unwrap()
        .normalized();
        for (a, b) in pid.num().iter().zip(expected.num()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in pid.den().iter().zip(expected.den()) {
            assert!((a - b).norm() < 1e-12);
        }
        let weighted = weighted_pid_tf(&PidGains::new(kp, ki, kd).unwrap(), &params).unwrap();
        assert_eq!(weighted.num().len(), pid.num().len());
    }

    #[test]
    fn setpoint_weighting() {
        let params = ModeParams::new(1.0, 0.0).unwrap();
        let g = PidGains::weighted(2.0, 3.0, 0.0, 1.0, 1.0).unwrap();
        let h = setpoint_tf(&g, &params).unwrap();
        let pi = closed_loop(&plant_tf(&params), &pid_tf(&g)).unwrap();
        for s in [cc(0.3, 0.2), cc(-1.0, 2.0)] {
            assert!((h.eval(s) - pi.eval(s)).norm() < 1e-12);
        }
        assert!((h.eval(ZERO) - ONE).norm() < 1e-15);
        let g0 = PidGains::weighted(2.0, 3.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(setpoint_tf(&g0, &params).unwrap().num(), &[c(3.0)]);
        assert!(setpoint_tf(&PidGains::new(1.0, 1.0, 1.0).unwrap(), &params).is_err());
    }

    #[test]
    fn pole_placement() {
        let params = ModeParams::new(2.0, 0.0).unwrap();
        let g = pole_place_pi(1.0, 1.0, &params).unwrap();
        assert_eq!((g.k_p, g.k_i), (1.0, 1.0));
        let chi = characteristic_polynomial(&plant_tf(&params), &pid_tf(&g));
        assert_eq!(chi, vec![ONE, c(2.0), ONE]);
        for z in roots(&chi).unwrap() {
            assert!((z + ONE).norm() <= 1e-9);
        }
        let g = pole_place_pi(0.5, 2.0, &ModeParams::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!((g.k_p, g.k_i), (2.0, 4.0));
        let h = closed_loop(&plant_tf(&params), &pid_tf(&g)).unwrap();
        assert!((h.eval(ZERO) - ONE).norm() < 1e-12);
        assert!(matches!(
            pole_place_pi(0.1, 1.0, &params),
            Err(Error::Infeasible(_))
        ));
        assert!(pole_place_pi(1.0, 1.0, &ModeParams::new(1.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn frequency_responses() {
        let k = RationalTF::constant(cc(0.3, 0.1));
        assert!(freq_response(&k, &[-1.0, 0.0, 5.0]).unwrap().iter().all(|&v| v == cc(0.3, 0.1)));
        let g = plant_tf(&ModeParams::new(2.0, 0.0).unwrap());
        assert_eq!(freq_response(&g, &[0.0]).unwrap()[0], ONE);
        let g = plant_tf(&ModeParams::new(1.0, 0.5).unwrap());
        let r = freq_response(&g, &[-1.0, 1.0]).unwrap();
        assert!((r[0].norm() - r[1].norm()).abs() > 1e-3);
        let integrator = pid_tf(&PidGains::new(0.0, 1.0, 0.0).unwrap());
        assert!(matches!(
            freq_response(&integrator, &[1.0, 0.0]),
            Err(Error::PoleOnAxis { omega }) if omega == 0.0
        ));
    }

    #[test]
    fn identity_response_is_reference() {
        let r = ReferenceSignal::Sinusoid {
            amplitude: cc(1.0, 0.5),
            frequency: 2.0,
            phase: 0.1,
        };
        let out = step_response(&RationalTF::constant(ONE), &r, 1.0, 0.01).unwrap();
        for (t, y) in out {
            assert_eq!(y, r.value_left(t));
        }
    }

    #[test]
    fn proportional_step_settles() {
        let params = ModeParams::new(1.0, 0.0).unwrap();
        let h = closed_loop(&plant_tf(&params), &pid_tf(&PidGains::new(50.0, 0.0, 0.0).unwrap())).unwrap();
        let out = step_response(&h, &ReferenceSignal::unit_step(), 1.0, 1e-3).unwrap();
        assert!((out.last().unwrap().1 - c(100.0 / 101.0)).norm() < 1e-6);
    }

    #[test]
    fn cancellation() {
        // (s + 1) / ((s + 1)(s + 2))
        let h = RationalTF::new(vec![ONE, ONE], vec![c(2.0), c(3.0), ONE]).unwrap();
        let r = h.reduced(CANCEL_TOL).unwrap().normalized();
        assert_eq!(r.num().len(), 1);
        assert!((r.den()[0] - c(2.0)).norm() < 1e-12);
        assert!(closed_loop(&RationalTF::constant(ONE), &RationalTF::constant(-ONE)).is_err());
    }

    #[test]
    fn improper_controller_realization() {
        let k = pid_tf(&PidGains::new(1.0, 2.0, 3.0).unwrap());
        let ss = realize(&k).unwrap();
        assert_eq!(ss.taps, vec![c(3.0)]);
        let ramp = ReferenceSignal::Ramp { slope: ONE, onset: 0.0 };
        // K applied to r = t: k_P t + k_I t²/2 + k_D
        let out = step_response(&k, &ramp, 1.0, 1e-3).unwrap();
        let (t, y) = out[out.len() - 1];
        assert!((y - c(t + t * t + 3.0)).norm() < 1e-9, "{y}");
    }

    #[test]
    fn higher_degree_roots() {
        let want = [cc(-1.0, 0.5), cc(2.0, 0.0), cc(0.3, -1.2), cc(-0.7, -0.7)];
        let mut p = vec![ONE];
        for z in want {
            p = poly_mul(&p, &[-z, ONE]);
        }
        let got = roots(&p).unwrap();
        for z in want {
            assert!(got.iter().any(|g| (g - z).norm() < 1e-10));
        }
    }

    proptest! {
        #[test]
        fn closed_loop_matches_pointwise(
            kp in 0.0f64..20.0, ki in 0.0f64..5.0, kd in 0.0f64..3.0,
            gamma in 0.1f64..3.0, omega in -2.0f64..2.0,
            sre in -5.0f64..5.0, sim in -5.0f64..5.0,
        ) {
            let params = ModeParams::new(gamma, omega).unwrap();
            let g = plant_tf(&params);
            let k = pid_tf(&PidGains::new(kp, ki, kd).unwrap());
            prop_assume!(kp + ki + kd > 0.0);
            let h = closed_loop(&g, &k).unwrap();
            let s = cc(sre, sim);
            let gk = g.eval(s) * k.eval(s);
            let want = gk / (1.0 + gk);
            prop_assert!((h.eval(s) - want).norm() <= 1e-10 * (1.0 + want.norm()));
        }

        #[test]
        fn pole_placement_denominator(zeta in 0.3f64..3.0, w0 in 0.5f64..5.0, gamma in 0.0f64..1.0) {
            let params = ModeParams::new(gamma, 0.0).unwrap();
            let g = pole_place_pi(zeta, w0, &params).unwrap();
            let h = closed_loop(&plant_tf(&params), &pid_tf(&g)).unwrap();
            prop_assume!(h.den().len() == 3);
            prop_assert!((h.den()[2] - ONE).norm() <= 1e-12);
            prop_assert!((h.den()[1] - c(2.0 * zeta * w0)).norm() <= 1e-12 * (1.0 + 2.0 * zeta * w0));
            prop_assert!((h.den()[0] - c(w0 * w0)).norm() <= 1e-12 * (1.0 + w0 * w0));
        }

        #[test]
        fn realization_reproduces_transfer(
            n0 in -2.0f64..2.0, n1 in -2.0f64..2.0, n2 in -2.0f64..2.0,
            d0 in 0.5f64..3.0, d1 in 0.5f64..3.0, di in -1.0f64..1.0,
        ) {
            let tf = RationalTF::new(vec![c(n0), cc(n1, 0.3), c(n2)], vec![c(d0), cc(d1, di), ONE]).unwrap();
            let ss = realize(&tf).unwrap();
            for s in [cc(0.1, 0.2), cc(-0.4, 1.7), cc(2.0, -2.0)] {
                prop_assert!((ss.transfer_at(s).unwrap() - tf.eval(s)).norm() <= 1e-10 * (1.0 + tf.eval(s).norm()));
            }
        }

        #[test]
        fn stable_step_response_converges(a in 0.5f64..3.0, b in -2.0f64..2.0, k in 0.1f64..2.0) {
            let tf = RationalTF::new(vec![c(k)], vec![cc(a, b), ONE]).unwrap();
            let amp = cc(0.7, -0.2);
            let out = step_response(&tf, &ReferenceSignal::Step { amplitude: amp, onset: 0.0 }, 40.0, 1e-2).unwrap();
            prop_assert!((out.last().unwrap().1 - tf.eval(ZERO) * amp).norm() <= 1e-6);
        }
    }
}
