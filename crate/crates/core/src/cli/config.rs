//! Scenario configuration: sectioned TOML, parsed and validated up front.

use std::path::PathBuf;

use serde::Deserialize;

use crate::classical::{ScalarLGModel, UniformGrid};
use crate::control::{GaussianInitial, PidGains, ReferenceSignal, TruthModel};
use crate::error::{Error, Result};
use crate::fock::{CovariancePair, C64};
use crate::qkf::{ModeParams, RiccatiForm};
use crate::trajectory::QuadraturePhase;

fn one() -> f64 {
    1.0
}

fn default_dim() -> usize {
    20
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: RawMode,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    measurement: RawMeasurement,
    #[serde(default)]
    control: RawControl,
    #[serde(default)]
    reference: RawReference,
    run: RawRun,
    #[serde(default)]
    classical: RawClassical,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    gamma: f64,
    #[serde(default)]
    omega: f64,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default)]
    riccati_form: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: Option<String>,
    #[serde(default)]
    alpha_re: f64,
    #[serde(default)]
    alpha_im: f64,
    nbar: Option<f64>,
    v: Option<f64>,
    #[serde(default)]
    w_re: f64,
    #[serde(default)]
    w_im: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    #[serde(default)]
    theta: f64,
    #[serde(default)]
    theta_rate: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    #[serde(default, rename = "k_P")]
    k_p: f64,
    #[serde(default, rename = "k_I")]
    k_i: f64,
    #[serde(default, rename = "k_D")]
    k_d: f64,
    #[serde(default = "one")]
    mu: f64,
    #[serde(default = "one")]
    nu: f64,
    zeta: Option<f64>,
    omega0: Option<f64>,
}

impl Default for RawControl {
    fn default() -> Self {
        Self {
            k_p: 0.0,
            k_i: 0.0,
            k_d: 0.0,
            mu: 1.0,
            nu: 1.0,
            zeta: None,
            omega0: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    kind: Option<String>,
    #[serde(default)]
    re: f64,
    #[serde(default)]
    im: f64,
    #[serde(default)]
    onset: f64,
    #[serde(default)]
    frequency: f64,
    #[serde(default)]
    phase: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(rename = "T")]
    t_final: f64,
    dt: f64,
    #[serde(default = "default_n")]
    n_traj: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_stride")]
    stride: usize,
    truth: Option<String>,
    freq_min: Option<f64>,
    freq_max: Option<f64>,
    freq_points: Option<usize>,
}

fn default_n() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawClassical {
    a: f64,
    b: f64,
    h: f64,
    q: f64,
    x0: f64,
    p0: f64,
    grid_lo: f64,
    grid_hi: f64,
    grid_n: usize,
}

impl Default for RawClassical {
    fn default() -> Self {
        Self {
            a: -1.0,
            b: 0.0,
            h: 1.0,
            q: 1.0,
            x0: 0.0,
            p0: 1.0,
            grid_lo: -10.0,
            grid_hi: 10.0,
            grid_n: 801,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// Truth used by the `ensemble` and `filter` subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthKind {
    Fock(TruthModel),
    /// Coherent amplitudes drawn from the Gaussian P-function.
    PFunction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub t_final: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub stride: usize,
    pub truth: TruthKind,
    pub freq_min: f64,
    pub freq_max: f64,
    pub freq_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoleTarget {
    pub zeta: f64,
    pub omega0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicalSpec {
    pub model: ScalarLGModel,
    pub x0: f64,
    pub p0: f64,
    pub grid: UniformGrid,
}

/// A fully validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub params: ModeParams,
    pub dim: usize,
    pub initial: GaussianInitial,
    pub theta: QuadraturePhase,
    pub gains: PidGains,
    pub pole_target: Option<PoleTarget>,
    pub reference: ReferenceSignal,
    pub run: RunSpec,
    pub classical: ClassicalSpec,
    pub output_dir: Option<PathBuf>,
}

fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::ConfigValue {
        path: path.into(),
        message: message.into(),
    }
}

fn finite(path: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(path, "must be finite"))
    }
}

fn nonneg(path: &str, v: f64) -> Result<f64> {
    if finite(path, v)? < 0.0 {
        return Err(bad(path, format!("must be >= 0, got {v}")));
    }
    Ok(v)
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if !(finite(path, v)? > 0.0) {
        return Err(bad(path, format!("must be > 0, got {v}")));
    }
    Ok(v)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    validate(raw)
}

fn validate(raw: RawConfig) -> Result<ScenarioConfig> {
    let m = &raw.mode;
    let gamma = nonneg("mode.gamma", m.gamma)?;
    let omega = finite("mode.omega", m.omega)?;
    let form = match m.riccati_form.as_deref() {
        None | Some("derived") => RiccatiForm::Derived,
        Some("as_printed") => RiccatiForm::AsPrinted,
        Some(other) => return Err(bad("mode.riccati_form", format!("unknown form {other:?}"))),
    };
    let params = ModeParams::new(gamma, omega)
        .map_err(|e| bad("mode.gamma", e.to_string()))?
        .with_form(form);
    if m.dim < 2 {
        return Err(bad("mode.dim", "need at least 2 levels"));
    }

    let i = &raw.initial;
    let alpha = C64::new(finite("initial.alpha_re", i.alpha_re)?, finite("initial.alpha_im", i.alpha_im)?);
    let w = C64::new(finite("initial.w_re", i.w_re)?, finite("initial.w_im", i.w_im)?);
    let initial = match i.kind.as_deref().unwrap_or("vacuum") {
        "vacuum" => {
            if alpha != C64::new(0.0, 0.0) {
                return Err(bad("initial.alpha_re", "vacuum takes no displacement"));
            }
            GaussianInitial::coherent(alpha)
        }
        "coherent" => GaussianInitial::coherent(alpha),
        "thermal" => {
            let nbar = nonneg("initial.nbar", i.nbar.ok_or_else(|| bad("initial.nbar", "required for thermal states"))?)?;
            GaussianInitial {
                alpha,
                cov: CovariancePair { v: nbar, w: C64::new(0.0, 0.0) },
            }
        }
        "gaussian" => {
            let v = finite("initial.v", i.v.ok_or_else(|| bad("initial.v", "required for gaussian states"))?)?;
            let cov = CovariancePair { v, w };
            if !cov.is_physical() {
                return Err(bad("initial.v", "violates (V + 1/2)^2 - |W|^2 >= 1/4"));
            }
            GaussianInitial { alpha, cov }
        }
        other => return Err(bad("initial.kind", format!("unknown kind {other:?}"))),
    };

    let theta0 = finite("measurement.theta", raw.measurement.theta)?;
    let rate = finite("measurement.theta_rate", raw.measurement.theta_rate)?;
    let theta = if rate == 0.0 {
        QuadraturePhase::Constant(theta0)
    } else {
        QuadraturePhase::Linear { theta0, rate }
    };

    let c = &raw.control;
    let gains = PidGains::weighted(
        nonneg("control.k_P", c.k_p)?,
        nonneg("control.k_I", c.k_i)?,
        nonneg("control.k_D", c.k_d)?,
        finite("control.mu", c.mu)?,
        finite("control.nu", c.nu)?,
    )
    .map_err(|e| bad("control", e.to_string()))?;
    let pole_target = match (c.zeta, c.omega0) {
        (None, None) => None,
        (Some(z), Some(w0)) => Some(PoleTarget {
            zeta: positive("control.zeta", z)?,
            omega0: positive("control.omega0", w0)?,
        }),
        (None, Some(_)) => return Err(bad("control.zeta", "required with control.omega0")),
        (Some(_), None) => return Err(bad("control.omega0", "required with control.zeta")),
    };

    let r = &raw.reference;
    let amp = C64::new(finite("reference.re", r.re)?, finite("reference.im", r.im)?);
    let onset = nonneg("reference.onset", r.onset)?;
    let reference = match r.kind.as_deref().unwrap_or("zero") {
        "zero" => ReferenceSignal::zero(),
        "constant" => ReferenceSignal::Constant { value: amp },
        "step" => ReferenceSignal::Step { amplitude: amp, onset },
        "ramp" => ReferenceSignal::Ramp { slope: amp, onset },
        "sinusoid" => ReferenceSignal::Sinusoid {
            amplitude: amp,
            frequency: finite("reference.frequency", r.frequency)?,
            phase: finite("reference.phase", r.phase)?,
        },
        other => return Err(bad("reference.kind", format!("unknown kind {other:?}"))),
    };

    let rr = &raw.run;
    let t_final = nonneg("run.T", rr.t_final)?;
    let dt = positive("run.dt", rr.dt)?;
    if dt > t_final {
        return Err(bad("run.dt", format!("must not exceed run.T = {t_final}")));
    }
    if rr.n_traj == 0 {
        return Err(bad("run.n_traj", "must be >= 1"));
    }
    if rr.stride == 0 {
        return Err(bad("run.stride", "must be >= 1"));
    }
    let truth = match rr.truth.as_deref().unwrap_or("auto") {
        "auto" => TruthKind::Fock(TruthModel::Auto),
        "sse" => TruthKind::Fock(TruthModel::Sse),
        "sme" => TruthKind::Fock(TruthModel::Sme),
        "pfunction" => {
            if initial.cov.v < initial.cov.w.norm() {
                return Err(bad("run.truth", "P-function sampling needs V >= |W|"));
            }
            TruthKind::PFunction
        }
        other => return Err(bad("run.truth", format!("unknown truth {other:?}"))),
    };
    if truth == TruthKind::Fock(TruthModel::Sse) && !initial.is_pure() {
        return Err(bad("run.truth", "a mixed initial state needs the density-operator truth"));
    }
    let freq_min = finite("run.freq_min", rr.freq_min.unwrap_or(-10.0))?;
    let freq_max = finite("run.freq_max", rr.freq_max.unwrap_or(10.0))?;
    if freq_max <= freq_min {
        return Err(bad("run.freq_max", "must exceed run.freq_min"));
    }
    let freq_points = rr.freq_points.unwrap_or(201);
    if freq_points < 2 {
        return Err(bad("run.freq_points", "must be >= 2"));
    }

    let k = &raw.classical;
    let model = ScalarLGModel::new(
        finite("classical.a", k.a)?,
        finite("classical.b", k.b)?,
        finite("classical.h", k.h)?,
        nonneg("classical.q", k.q)?,
    )?;
    let grid = UniformGrid::new(finite("classical.grid_lo", k.grid_lo)?, finite("classical.grid_hi", k.grid_hi)?, k.grid_n)
        .map_err(|e| bad("classical.grid_n", e.to_string()))?;

    Ok(ScenarioConfig {
        params,
        dim: m.dim,
        initial,
        theta,
        gains,
        pole_target,
        reference,
        run: RunSpec {
            t_final,
            dt,
            n_traj: rr.n_traj,
            seed: rr.seed,
            stride: rr.stride,
            truth,
            freq_min,
            freq_max,
            freq_points,
        },
        classical: ClassicalSpec {
            model,
            x0: finite("classical.x0", k.x0)?,
            p0: nonneg("classical.p0", k.p0)?,
            grid,
        },
        output_dir: raw.output.dir,
    })
}
