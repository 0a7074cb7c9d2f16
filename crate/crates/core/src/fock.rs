//! Truncated Fock-space algebra for a single cavity mode.
//!
//! Operators are dense `dim × dim` complex matrices. Every operator built in
//! this crate is a low-order polynomial in `a` and `a†`, so each one also
//! records its bandwidth (largest `|i - j|` with a nonzero entry) and the hot
//! matrix-vector kernels only visit that band.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Population (top two levels plus leaked mass) above which a warning is logged.
pub const TRUNCATION_WARN: f64 = 1e-8;
/// Population above which construction fails.
pub const TRUNCATION_ERROR: f64 = 1e-4;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension { dim })
    } else {
        Ok(())
    }
}

fn check_same(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Applies the crate-wide truncation policy to a tail population.
pub fn check_truncation(tail: f64) -> Result<()> {
    if tail > TRUNCATION_ERROR {
        return Err(Error::Truncation {
            population: tail,
            threshold: TRUNCATION_ERROR,
        });
    }
    if tail > TRUNCATION_WARN {
        log::warn!(
            "Fock truncation: tail population {tail:.3e} exceeds {TRUNCATION_WARN:.0e}"
        );
    }
    Ok(())
}

/// Operator on the truncated Fock space of one mode.
///
/// `band` is an upper bound on the bandwidth; entries outside it are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityOperator {
    m: DMatrix<C64>,
    band: usize,
}

fn bandwidth(m: &DMatrix<C64>) -> usize {
    let n = m.nrows();
    let mut band = 0;
    for j in 0..n {
        for i in 0..n {
            if m[(i, j)] != ZERO {
                band = band.max(i.abs_diff(j));
            }
        }
    }
    band
}

impl CavityOperator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        check_same(m.nrows(), m.ncols())?;
        check_dim(m.nrows())?;
        let band = bandwidth(&m);
        Ok(Self { m, band })
    }

    /// Wraps a matrix whose entries vanish outside `band` diagonals.
    pub(crate) fn from_banded(m: DMatrix<C64>, band: usize) -> Self {
        Self { m, band }
    }

    fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        let band = bandwidth(&m);
        Self { m, band }
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            m: DMatrix::identity(dim, dim),
            band: 0,
        })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            m: DMatrix::zeros(dim, dim),
            band: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: self.m.adjoint(),
            band: self.band,
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        if c == ZERO {
            return Self {
                m: DMatrix::zeros(self.dim(), self.dim()),
                band: 0,
            };
        }
        Self {
            m: &self.m * c,
            band: self.band,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(self.dim(), other.dim())?;
        Ok(Self {
            m: &self.m + &other.m,
            band: self.band.max(other.band),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same(self.dim(), other.dim())?;
        Ok(Self {
            m: &self.m - &other.m,
            band: self.band.max(other.band),
        })
    }

    /// Operator product, visiting only the two bands.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_same(self.dim(), other.dim())?;
        let n = self.dim();
        Ok(Self {
            m: self.mul_dense_band(&other.m, other.band),
            band: (self.band + other.band).min(n - 1),
        })
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// Largest entry of `|X - X†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.m[(i, j)] - self.m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// `X v`, visiting only the stored band.
    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        let b = self.band;
        let mut out = DVector::from_element(n, ZERO);
        for j in 0..n {
            let vj = v[j];
            if vj == ZERO {
                continue;
            }
            let lo = j.saturating_sub(b);
            let hi = (j + b).min(n - 1);
            for i in lo..=hi {
                out[i] += self.m[(i, j)] * vj;
            }
        }
        out
    }

    /// `X† v`, visiting only the stored band.
    pub fn apply_adjoint(&self, v: &DVector<C64>) -> DVector<C64> {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        let b = self.band;
        let mut out = DVector::from_element(n, ZERO);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let hi = (i + b).min(n - 1);
            let mut acc = ZERO;
            for j in lo..=hi {
                acc += self.m[(j, i)].conj() * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// `X M` for a dense square `M`, visiting only the band of `X`.
    pub fn mul_dense(&self, rhs: &DMatrix<C64>) -> DMatrix<C64> {
        self.mul_dense_band(rhs, rhs.nrows())
    }

    /// `X M` where `M` is known to vanish outside `rhs_band` diagonals.
    fn mul_dense_band(&self, rhs: &DMatrix<C64>, rhs_band: usize) -> DMatrix<C64> {
        let n = self.dim();
        debug_assert_eq!(rhs.nrows(), n);
        let b = self.band;
        let mut out = DMatrix::from_element(n, rhs.ncols(), ZERO);
        for c in 0..rhs.ncols() {
            let k_lo = c.saturating_sub(rhs_band);
            let k_hi = (c + rhs_band).min(n - 1);
            for k in k_lo..=k_hi {
                let r = rhs[(k, c)];
                if r == ZERO {
                    continue;
                }
                let lo = k.saturating_sub(b);
                let hi = (k + b).min(n - 1);
                for i in lo..=hi {
                    out[(i, c)] += self.m[(i, k)] * r;
                }
            }
        }
        out
    }
}

/// `a` on `dim` levels: `a|n⟩ = √n |n−1⟩`.
pub fn annihilation_op(dim: usize) -> Result<CavityOperator> {
    check_dim(dim)?;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(CavityOperator { m, band: 1 })
}

/// `a†` on `dim` levels; the image of the top level is truncated away.
pub fn creation_op(dim: usize) -> Result<CavityOperator> {
    Ok(annihilation_op(dim)?.adjoint())
}

pub fn number_op(dim: usize) -> Result<CavityOperator> {
    check_dim(dim)?;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for n in 0..dim {
        m[(n, n)] = C64::new(n as f64, 0.0);
    }
    Ok(CavityOperator { m, band: 0 })
}

/// Pure (possibly unnormalized) state vector in the Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: DVector<C64>,
}

impl StateVector {
    pub fn new(amps: DVector<C64>) -> Result<Self> {
        check_dim(amps.len())?;
        Ok(Self { amps })
    }

    pub fn basis(dim: usize, n: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::Domain(format!(
                "basis level {n} outside {dim}-level space"
            )));
        }
        let mut amps = DVector::from_element(dim, ZERO);
        amps[n] = ONE;
        Ok(Self { amps })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::basis(dim, 0)
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn norm_squared(&self) -> f64 {
        self.amps.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Domain(format!("cannot normalize state of norm {norm}")));
        }
        Ok(Self {
            amps: &self.amps / C64::new(norm, 0.0),
        })
    }

    pub fn populations(&self) -> Vec<f64> {
        let total = self.norm_squared();
        self.amps.iter().map(|c| c.norm_sqr() / total).collect()
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        let psi = self.normalized()?;
        Ok(DensityOperator {
            m: &psi.amps * psi.amps.adjoint(),
        })
    }
}

/// Density operator on the truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    m: DMatrix<C64>,
}

impl DensityOperator {
    /// Wraps a matrix, checking the invariants (Hermitian, unit trace, PSD).
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(m)?;
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps a square matrix without checking positivity or trace.
    pub fn from_matrix_unchecked(m: DMatrix<C64>) -> Result<Self> {
        check_same(m.nrows(), m.ncols())?;
        check_dim(m.nrows())?;
        Ok(Self { m })
    }

    pub fn validate(&self) -> Result<()> {
        let herm = CavityOperator::from_matrix_unchecked(self.m.clone()).hermiticity_defect();
        if herm > 1e-12 {
            return Err(Error::Domain(format!("density operator not Hermitian ({herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("density operator trace {tr}")));
        }
        let lo = self.min_eigenvalue();
        if lo < -1e-10 {
            return Err(Error::Domain(format!("density operator eigenvalue {lo:.3e} < 0")));
        }
        Ok(())
    }

    pub fn thermal(n_bar: f64, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if !(n_bar >= 0.0 && n_bar.is_finite()) {
            return Err(Error::Domain(format!("thermal occupation {n_bar} must be >= 0")));
        }
        let ratio = n_bar / (1.0 + n_bar);
        let pops: Vec<f64> = (0..dim)
            .map(|n| ratio.powi(n as i32) / (1.0 + n_bar))
            .collect();
        let kept: f64 = pops.iter().sum();
        check_truncation((1.0 - kept) + pops[dim - 1] + pops[dim - 2])?;
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for (n, p) in pops.iter().enumerate() {
            m[(n, n)] = C64::new(p / kept, 0.0);
        }
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn purity(&self) -> f64 {
        // tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.m.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.trace().powi(2)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.m.clone().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn populations(&self) -> Vec<f64> {
        let tr = self.trace();
        self.m.diagonal().iter().map(|c| c.re / tr).collect()
    }

    /// Replaces `ρ` by `(ρ + ρ†) / 2` and rescales to unit trace.
    pub(crate) fn hermitize_normalize(m: &mut DMatrix<C64>) {
        let n = m.nrows();
        for j in 0..n {
            for i in 0..j {
                let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                m[(i, j)] = avg;
                m[(j, i)] = avg.conj();
            }
            m[(j, j)] = C64::new(m[(j, j)].re, 0.0);
        }
        let tr: f64 = m.diagonal().iter().map(|c| c.re).sum();
        *m /= C64::new(tr, 0.0);
    }
}

/// Conditional covariance pair of a single mode.
///
/// `v = ⟨a†a⟩ − |⟨a⟩|²` and `w = ⟨a²⟩ − ⟨a⟩²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovariancePair {
    pub v: f64,
    pub w: C64,
}

impl CovariancePair {
    pub const VACUUM: CovariancePair = CovariancePair { v: 0.0, w: ZERO };

    pub fn new(v: f64, w: C64) -> Self {
        Self { v, w }
    }

    /// `V(V+1) − |W|²`; nonnegative for every physical Gaussian state, zero for pure ones.
    pub fn uncertainty_margin(&self) -> f64 {
        self.v * (self.v + 1.0) - self.w.norm_sqr()
    }

    pub fn is_physical(&self) -> bool {
        self.v >= -1e-10 && self.uncertainty_margin() >= -1e-8
    }
}

/// Low-order moments of the mode in a given state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    /// ⟨a⟩
    pub a: C64,
    /// ⟨a†a⟩
    pub n: f64,
    /// ⟨a²⟩
    pub a2: C64,
    /// ⟨a³⟩
    pub a3: C64,
}

impl Moments {
    pub fn covariances(&self) -> CovariancePair {
        CovariancePair {
            v: self.n - self.a.norm_sqr(),
            w: self.a2 - self.a * self.a,
        }
    }

    /// Third central moment `⟨a³⟩ − 3⟨a²⟩⟨a⟩ + 2⟨a⟩³`; vanishes on Gaussian states.
    pub fn third_cumulant(&self) -> C64 {
        self.a3 - 3.0 * self.a2 * self.a + 2.0 * self.a * self.a * self.a
    }
}

/// Anything that assigns expectation values to cavity operators.
pub trait QuantumState {
    fn dim(&self) -> usize;
    fn expect(&self, op: &CavityOperator) -> Result<C64>;
    fn moments(&self) -> Moments;
}

impl QuantumState for StateVector {
    fn dim(&self) -> usize {
        self.amps.len()
    }

    fn expect(&self, op: &CavityOperator) -> Result<C64> {
        check_same(self.dim(), op.dim())?;
        let x = op.apply(&self.amps);
        Ok(self.amps.dotc(&x) / self.norm_squared())
    }

    fn moments(&self) -> Moments {
        let psi = &self.amps;
        let n = psi.len();
        let (mut a, mut num, mut a2, mut a3) = (ZERO, 0.0, ZERO, ZERO);
        for k in 0..n {
            let ck = psi[k].conj();
            num += k as f64 * psi[k].norm_sqr();
            if k + 1 < n {
                a += ck * psi[k + 1] * ((k + 1) as f64).sqrt();
            }
            if k + 2 < n {
                a2 += ck * psi[k + 2] * (((k + 1) * (k + 2)) as f64).sqrt();
            }
            if k + 3 < n {
                a3 += ck * psi[k + 3] * (((k + 1) * (k + 2) * (k + 3)) as f64).sqrt();
            }
        }
        let norm2 = self.norm_squared();
        Moments {
            a: a / norm2,
            n: num / norm2,
            a2: a2 / norm2,
            a3: a3 / norm2,
        }
    }
}

impl QuantumState for DensityOperator {
    fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn expect(&self, op: &CavityOperator) -> Result<C64> {
        check_same(self.dim(), op.dim())?;
        // tr(ρX) = Σ_ij ρ_ij X_ji
        let n = self.dim();
        let b = op.band;
        let mut acc = ZERO;
        for j in 0..n {
            for i in j.saturating_sub(b)..=(j + b).min(n - 1) {
                acc += self.m[(i, j)] * op.m[(j, i)];
            }
        }
        Ok(acc / self.trace())
    }

    fn moments(&self) -> Moments {
        let rho = &self.m;
        let n = rho.nrows();
        let (mut a, mut num, mut a2, mut a3) = (ZERO, 0.0, ZERO, ZERO);
        for i in 0..n {
            num += i as f64 * rho[(i, i)].re;
            if i >= 1 {
                a += rho[(i, i - 1)] * (i as f64).sqrt();
            }
            if i >= 2 {
                a2 += rho[(i, i - 2)] * ((i * (i - 1)) as f64).sqrt();
            }
            if i >= 3 {
                a3 += rho[(i, i - 3)] * ((i * (i - 1) * (i - 2)) as f64).sqrt();
            }
        }
        let tr = self.trace();
        Moments {
            a: a / tr,
            n: num / tr,
            a2: a2 / tr,
            a3: a3 / tr,
        }
    }
}

/// `⟨X⟩` in a pure or mixed state.
pub fn expectation<S: QuantumState + ?Sized>(op: &CavityOperator, state: &S) -> Result<C64> {
    state.expect(op)
}

pub fn conditional_covariances<S: QuantumState + ?Sized>(state: &S) -> CovariancePair {
    state.moments().covariances()
}

/// Truncated, renormalized coherent state `|α⟩`.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    let mut amps = DVector::from_element(dim, ZERO);
    amps[0] = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 1..dim {
        amps[n] = amps[n - 1] * alpha / (n as f64).sqrt();
    }
    let kept: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    let top = (amps[dim - 1].norm_sqr() + amps[dim - 2].norm_sqr()) / kept;
    check_truncation((1.0 - kept).max(0.0) + top)?;
    StateVector::new(amps)?.normalized()
}

/// `exp(G)` for anti-Hermitian `G`, via the eigendecomposition of `iG`.
fn exp_anti_hermitian(g: &DMatrix<C64>) -> DMatrix<C64> {
    let k = g * I;
    let eig = k.symmetric_eigen();
    let u = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(0.0, -l).exp()));
    u * phases * u.adjoint()
}

fn working_dim(dim: usize) -> usize {
    2 * dim + 20
}

/// `D(α) S(ξ)` on `m` levels, with `S(ξ) = exp(½(ξ* a² − ξ a†²))` and
/// `D(α) = exp(α a† − α* a)`.
fn displaced_squeeze(alpha: C64, xi: C64, m: usize) -> DMatrix<C64> {
    let a = annihilation_op(m).expect("working dimension >= 2");
    let ad = a.adjoint();
    let a2 = &a.m * &a.m;
    let ad2 = &ad.m * &ad.m;
    let s = exp_anti_hermitian(&((a2 * xi.conj() - ad2 * xi) * C64::new(0.5, 0.0)));
    let d = exp_anti_hermitian(&(&ad.m * alpha - &a.m * alpha.conj()));
    d * s
}

/// Displacement operator `D(α)` restricted to `dim` levels: computed on a
/// larger working space and truncated.
pub fn displacement_op(alpha: C64, dim: usize) -> Result<CavityOperator> {
    check_dim(dim)?;
    let m = working_dim(dim);
    let a = annihilation_op(m)?;
    let d = exp_anti_hermitian(&(&a.adjoint().m * alpha - &a.m * alpha.conj()));
    CavityOperator::from_matrix(d.view((0, 0), (dim, dim)).into_owned())
}

/// Squeezing and thermal parameters reproducing a covariance pair:
/// returns `(ξ, n_thermal)` with `ρ = S(ξ) ρ_th(n_thermal) S(ξ)†`.
fn squeeze_parameters(cov: &CovariancePair) -> Result<(C64, f64)> {
    if !cov.v.is_finite() || !cov.w.re.is_finite() || !cov.w.im.is_finite() {
        return Err(Error::Domain("covariance pair must be finite".into()));
    }
    if !cov.is_physical() {
        return Err(Error::Domain(format!(
            "unphysical covariances V = {}, W = {}: V(V+1) - |W|^2 = {:.3e}",
            cov.v,
            cov.w,
            cov.uncertainty_margin()
        )));
    }
    let v = cov.v.max(0.0);
    let wabs = cov.w.norm();
    // (V + 1/2)² − |W|² = (2N+1)²/4
    let c = (2.0 * ((v + 0.5).powi(2) - wabs * wabs).max(0.0).sqrt()).max(1.0);
    let n_th = (c - 1.0) / 2.0;
    let r = 0.5 * (2.0 * wabs / c).asinh();
    let phi = cov.w.arg() + std::f64::consts::PI;
    Ok((C64::from_polar(r, phi), n_th))
}

/// Displaced squeezed thermal state with mean `alpha` and covariances `cov`.
pub fn gaussian_state(alpha: C64, cov: CovariancePair, dim: usize) -> Result<DensityOperator> {
    check_dim(dim)?;
    let (xi, n_th) = squeeze_parameters(&cov)?;
    let m = working_dim(dim);
    let ds = displaced_squeeze(alpha, xi, m);
    let ratio = n_th / (1.0 + n_th);
    let mut rho_m = DMatrix::from_element(m, m, ZERO);
    for k in 0..m {
        let p = ratio.powi(k as i32) / (1.0 + n_th);
        if p < 1e-300 {
            break;
        }
        let col = ds.column(k);
        rho_m += (&col * col.adjoint()) * C64::new(p, 0.0);
    }
    let block = rho_m.view((0, 0), (dim, dim)).into_owned();
    let kept: f64 = block.diagonal().iter().map(|c| c.re).sum();
    let top = (block[(dim - 1, dim - 1)].re + block[(dim - 2, dim - 2)].re) / kept;
    check_truncation((1.0 - kept).max(0.0) + top)?;
    let mut out = block;
    DensityOperator::hermitize_normalize(&mut out);
    Ok(DensityOperator { m: out })
}

/// Pure Gaussian state `D(α) S(ξ) |0⟩`; `cov` must saturate `V(V+1) = |W|²`.
pub fn gaussian_pure_state(alpha: C64, cov: CovariancePair, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    if cov.uncertainty_margin().abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "covariances V = {}, W = {} do not describe a pure state",
            cov.v, cov.w
        )));
    }
    let (xi, _) = squeeze_parameters(&cov)?;
    let m = working_dim(dim);
    let ds = displaced_squeeze(alpha, xi, m);
    let amps: DVector<C64> = ds.column(0).rows(0, dim).into_owned();
    let kept: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    let top = (amps[dim - 1].norm_sqr() + amps[dim - 2].norm_sqr()) / kept;
    check_truncation((1.0 - kept).max(0.0) + top)?;
    StateVector::new(amps)?.normalized()
}
