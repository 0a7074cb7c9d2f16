//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use crate::classical::{filter_chain, ChainConfig};
use crate::control::{closed_loop_cosim, CosimConfig, TruthModel};
use crate::error::{Error, Result};
use crate::fock::C64;
use crate::lti::{
    characteristic_polynomial, freq_response, pid_tf, plant_tf, pole_place_pi, roots, step_response,
    weighted_pid_tf, RationalTF,
};
use crate::mc::{
    cosim_record, innovations_test, mse_vs_v, open_loop_record, pfunction_record, run_ensemble, summarize,
    EnsembleConfig, EnsembleRecord, RecordOptions,
};
use crate::qkf::{riccati_integrate, RiccatiState};
use crate::control::ReferenceSignal;
use crate::trajectory::{NoiseStream, QuadraturePhase};

use super::config::{ScenarioConfig, TruthKind};
use super::output::{write_csv, Summary, TrajectoryCsvRow, TRAJECTORY_HEADER};

/// Relative MSE deviation accepted by `ensemble --assert`.
pub const MSE_TOLERANCE: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Riccati,
    Filter,
    ClosedLoop,
    Ensemble,
    Tf,
    Tune,
    Classical,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Riccati => "riccati",
            Command::Filter => "filter",
            Command::ClosedLoop => "closed-loop",
            Command::Ensemble => "ensemble",
            Command::Tf => "tf",
            Command::Tune => "tune",
            Command::Classical => "classical",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Set when `--assert` was given and a statistical test failed.
    pub assertion_failed: bool,
}

/// Process exit status for a subcommand result.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.assertion_failed => 4,
        Ok(_) => 0,
        Err(e) if e.is_config() => 2,
        Err(_) => 3,
    }
}

struct Emitter {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn csv<R: AsRef<[f64]>>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<()> {
        let path = self.dir.join(name);
        write_csv(&path, header, rows)?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, summary: &Summary) -> Result<()> {
        let path = self.dir.join(name);
        summary.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn trajectory(&mut self, name: &str, rec: &EnsembleRecord) -> Result<()> {
        let rows: Vec<[f64; 11]> = TrajectoryCsvRow::from_record(rec).iter().map(|r| r.fields()).collect();
        self.csv(name, &TRAJECTORY_HEADER, &rows)
    }

    fn done(self, assertion_failed: bool) -> Outcome {
        Outcome {
            files: self.files,
            assertion_failed,
        }
    }
}

fn config_err(path: &str, message: &str) -> Error {
    Error::ConfigValue {
        path: path.into(),
        message: message.into(),
    }
}

fn require_theta_zero(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.theta != QuadraturePhase::Constant(0.0) {
        return Err(config_err("measurement.theta", "feedback runs measure the theta = 0 quadrature"));
    }
    Ok(())
}

fn fock_truth(cfg: &ScenarioConfig) -> TruthModel {
    match cfg.run.truth {
        TruthKind::Fock(m) => m,
        TruthKind::PFunction => TruthModel::Auto,
    }
}

pub fn run_subcommand(cmd: Command, cfg: &ScenarioConfig, out: &Path, assert: bool) -> Result<Outcome> {
    let mut em = Emitter::new(out)?;
    let failed = match cmd {
        Command::Riccati => riccati(cfg, &mut em)?,
        Command::Filter => filter(cfg, &mut em)?,
        Command::ClosedLoop => closed_loop(cfg, &mut em)?,
        Command::Ensemble => ensemble(cfg, &mut em)?,
        Command::Tf => tf(cfg, &mut em)?,
        Command::Tune => tune(cfg, &mut em)?,
        Command::Classical => classical(cfg, &mut em)?,
    };
    Ok(em.done(assert && failed))
}

fn riccati(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    let init = RiccatiState::from(cfg.initial.cov);
    let series = riccati_integrate(&init, &cfg.theta, &cfg.params, cfg.run.dt, cfg.run.t_final, cfg.run.stride)?;
    let rows: Vec<[f64; 4]> = series.iter().map(|s| [s.t, s.v, s.w.re, s.w.im]).collect();
    em.csv("riccati.csv", &["t", "V", "re_W", "im_W"], &rows)?;
    Ok(false)
}

fn single_record(cfg: &ScenarioConfig, noise: &mut NoiseStream, full_innovations: bool) -> Result<EnsembleRecord> {
    let run = &cfg.run;
    let options = RecordOptions {
        stride: run.stride,
        full_innovations,
    };
    let open_loop = cfg.gains.is_open_loop() && cfg.reference == ReferenceSignal::zero();
    match run.truth {
        TruthKind::PFunction => {
            if !open_loop {
                return Err(config_err("run.truth", "the P-function truth is uncontrolled"));
            }
            let theta = match cfg.theta {
                QuadraturePhase::Constant(t) => t,
                _ => return Err(config_err("measurement.theta_rate", "the P-function truth needs a constant phase")),
            };
            pfunction_record(&cfg.initial, &cfg.params, theta, run.t_final, options, noise)
        }
        TruthKind::Fock(model) if open_loop => {
            open_loop_record(&cfg.initial, &cfg.params, &cfg.theta, cfg.dim, model, run.t_final, options, noise)
        }
        TruthKind::Fock(model) => {
            require_theta_zero(cfg)?;
            let cosim = CosimConfig {
                dim: cfg.dim,
                t_final: run.t_final,
                stride: run.stride,
                truth: model,
            };
            cosim_record(&cfg.initial, &cfg.gains, &cfg.reference, &cfg.params, &cosim, full_innovations, noise)
        }
    }
}

fn filter(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    let mut noise = NoiseStream::new(cfg.run.seed, cfg.run.dt)?;
    let open = ScenarioConfig {
        gains: Default::default(),
        reference: ReferenceSignal::zero(),
        ..cfg.clone()
    };
    let rec = single_record(&open, &mut noise, false)?;
    em.trajectory("filter.csv", &rec)?;
    Ok(false)
}

fn closed_loop(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    require_theta_zero(cfg)?;
    let mut noise = NoiseStream::new(cfg.run.seed, cfg.run.dt)?;
    let cosim = CosimConfig {
        dim: cfg.dim,
        t_final: cfg.run.t_final,
        stride: cfg.run.stride,
        truth: fock_truth(cfg),
    };
    let samples = closed_loop_cosim(&cfg.initial, &cfg.gains, &cfg.reference, &cfg.params, &cosim, &mut noise)?;
    let mut rows = Vec::with_capacity(samples.len());
    let mut sup_dev: f64 = 0.0;
    let mut mse_sum = 0.0;
    let mut mse_max: f64 = 0.0;
    for s in &samples {
        let m = &s.truth;
        let f = &s.filter;
        rows.push(
            TrajectoryCsvRow {
                t: s.t,
                re_a_truth: m.a.re,
                im_a_truth: m.a.im,
                n_truth: m.n,
                re_a_hat: f.a_hat.re,
                im_a_hat: f.a_hat.im,
                v: f.riccati.v,
                re_w: f.riccati.w.re,
                im_w: f.riccati.w.im,
                y: s.y,
                i: s.i,
            }
            .fields(),
        );
        sup_dev = sup_dev.max((f.a_hat - m.a).norm());
        let mse = m.n - m.a.norm_sqr() + (m.a - f.a_hat).norm_sqr();
        mse_sum += mse;
        mse_max = mse_max.max(mse);
    }
    em.csv("closed_loop.csv", &TRAJECTORY_HEADER, &rows)?;
    let last = samples.last().expect("at least the initial sample");
    let r_t = cfg.reference.value_left(last.t);
    let summary = Summary::new()
        .num("T", last.t)
        .num("terminal_error", (r_t - last.filter.a_hat).norm())
        .num("terminal_truth_error", (r_t - last.truth.a).norm())
        .num("sup_filter_deviation", sup_dev)
        .num("mse_mean", mse_sum / samples.len() as f64)
        .num("mse_max", mse_max)
        .int("seed", cfg.run.seed);
    em.json("closed_loop.json", &summary)?;
    Ok(false)
}

fn ensemble(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    let run = &cfg.run;
    let config = EnsembleConfig::new(run.n_traj, run.t_final, run.dt, run.seed, "ensemble")?;
    let records = run_ensemble(&config, |_, mut noise| single_record(cfg, &mut noise, true))?;
    let summary = summarize(&records)?;
    let rows: Vec<[f64; 7]> = (0..summary.t.len())
        .map(|k| {
            [
                summary.t[k],
                summary.mean_truth_a[k].re,
                summary.mean_truth_a[k].im,
                summary.mean_a_hat[k].re,
                summary.mean_a_hat[k].im,
                summary.mse[k],
                summary.v[k],
            ]
        })
        .collect();
    em.csv(
        "ensemble.csv",
        &["t", "re_mean_a_truth", "im_mean_a_truth", "re_mean_a_hat", "im_mean_a_hat", "mse", "V"],
        &rows,
    )?;
    let paths: Vec<&[f64]> = records.iter().map(|r| r.innovations.as_slice()).collect();
    let verdict = innovations_test(&paths, run.t_final);
    let report = mse_vs_v(&records, run.t_final)?;
    let mse_pass = report.max_rel_deviation <= MSE_TOLERANCE;
    let json = Summary::new()
        .int("n_traj", run.n_traj as u64)
        .int("seed", run.seed)
        .num("T", run.t_final)
        .num("dt", run.dt)
        .num("innovations_terminal_mean", verdict.terminal_mean)
        .num("innovations_mean_threshold", verdict.mean_threshold)
        .flag("innovations_mean_pass", verdict.mean_pass)
        .num("qv_ratio_min", verdict.qv_min)
        .num("qv_ratio_max", verdict.qv_max)
        .num("qv_ratio_lower", verdict.qv_bounds.0)
        .num("qv_ratio_upper", verdict.qv_bounds.1)
        .flag("qv_pass", verdict.qv_pass)
        .num("mse_window_start", report.window.0)
        .num("mse_window_end", report.window.1)
        .num("mse_max_relative_deviation", report.max_rel_deviation)
        .num("mse_tolerance", MSE_TOLERANCE)
        .flag("mse_pass", mse_pass)
        .flag("pass", verdict.pass() && mse_pass);
    em.json("ensemble.json", &json)?;
    Ok(!(verdict.pass() && mse_pass))
}

fn closed_loop_tf(cfg: &ScenarioConfig) -> Result<RationalTF> {
    weighted_pid_tf(&cfg.gains, &cfg.params)
}

fn pointwise(tf: &RationalTF, omega: f64) -> Result<C64> {
    match freq_response(tf, &[omega]) {
        Ok(v) => Ok(v[0]),
        Err(Error::PoleOnAxis { .. }) => Ok(C64::new(f64::NAN, f64::NAN)),
        Err(e) => Err(e),
    }
}

fn tf(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    let g = plant_tf(&cfg.params);
    let k = pid_tf(&cfg.gains);
    let h = closed_loop_tf(cfg)?;
    let run = &cfg.run;
    let n = run.freq_points;
    let mut freq_rows = Vec::with_capacity(n);
    for j in 0..n {
        let w = run.freq_min + (run.freq_max - run.freq_min) * j as f64 / (n - 1) as f64;
        let (gv, kv, hv) = (pointwise(&g, w)?, pointwise(&k, w)?, pointwise(&h, w)?);
        freq_rows.push([w, gv.re, gv.im, kv.re, kv.im, hv.re, hv.im]);
    }
    em.csv("tf_freq.csv", &["omega", "re_G", "im_G", "re_K", "im_K", "re_H", "im_H"], &freq_rows)?;
    let unit = ReferenceSignal::unit_step();
    let sg = step_response(&g, &unit, run.t_final, run.dt)?;
    let sk = step_response(&k, &unit, run.t_final, run.dt)?;
    let sh = step_response(&h, &unit, run.t_final, run.dt)?;
    let stride = run.stride;
    let step_rows: Vec<[f64; 7]> = (0..sg.len())
        .filter(|&j| j % stride == 0 || j + 1 == sg.len())
        .map(|j| [sg[j].0, sg[j].1.re, sg[j].1.im, sk[j].1.re, sk[j].1.im, sh[j].1.re, sh[j].1.im])
        .collect();
    em.csv("tf_step.csv", &["t", "re_G", "im_G", "re_K", "im_K", "re_H", "im_H"], &step_rows)?;
    let mut summary = Summary::new();
    let dc_h = h.eval(C64::new(0.0, 0.0));
    summary = summary.num("re_H0", dc_h.re).num("im_H0", dc_h.im);
    let dc_g = g.eval(C64::new(0.0, 0.0));
    summary = summary.num("re_G0", dc_g.re).num("im_G0", dc_g.im);
    for (j, p) in h.poles()?.iter().enumerate() {
        summary = summary.num(&format!("re_pole_{j}"), p.re).num(&format!("im_pole_{j}"), p.im);
    }
    for (j, z) in h.zeros()?.iter().enumerate() {
        summary = summary.num(&format!("re_zero_{j}"), z.re).num(&format!("im_zero_{j}"), z.im);
    }
    em.json("tf.json", &summary)?;
    Ok(false)
}

fn tune(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    let target = cfg
        .pole_target
        .ok_or_else(|| config_err("control.zeta", "tune needs control.zeta and control.omega0"))?;
    let gains = pole_place_pi(target.zeta, target.omega0, &cfg.params)?;
    let chi = characteristic_polynomial(&plant_tf(&cfg.params), &pid_tf(&gains));
    let placed = roots(&chi)?;
    let target_poles = roots(&[
        C64::new(target.omega0 * target.omega0, 0.0),
        C64::new(2.0 * target.zeta * target.omega0, 0.0),
        C64::new(1.0, 0.0),
    ])?;
    // closest-pair matching of two poles
    let direct = (placed[0] - target_poles[0]).norm().max((placed[1] - target_poles[1]).norm());
    let swapped = (placed[0] - target_poles[1]).norm().max((placed[1] - target_poles[0]).norm());
    let mut summary = Summary::new()
        .num("k_P", gains.k_p)
        .num("k_I", gains.k_i)
        .num("k_D", gains.k_d)
        .num("zeta", target.zeta)
        .num("omega0", target.omega0);
    for (j, p) in placed.iter().enumerate() {
        summary = summary.num(&format!("re_pole_{j}"), p.re).num(&format!("im_pole_{j}"), p.im);
    }
    summary = summary.num("max_pole_error", direct.min(swapped));
    em.json("tune.json", &summary)?;
    Ok(false)
}

fn classical(cfg: &ScenarioConfig, em: &mut Emitter) -> Result<bool> {
    let c = &cfg.classical;
    let chain = ChainConfig {
        model: c.model,
        x0_mean: c.x0,
        p0: c.p0,
        grid: c.grid,
        t_final: cfg.run.t_final,
        stride: cfg.run.stride,
    };
    let mut noise = NoiseStream::new(cfg.run.seed, cfg.run.dt)?;
    let samples = filter_chain(&chain, &mut noise)?;
    let rows: Vec<[f64; 8]> = samples
        .iter()
        .map(|s| [s.t, s.x, s.kalman.0, s.kalman.1, s.bucy.0, s.bucy.1, s.zakai.0, s.zakai.1])
        .collect();
    em.csv(
        "classical.csv",
        &["t", "x", "kalman_mean", "kalman_var", "bucy_mean", "bucy_var", "zakai_mean", "zakai_var"],
        &rows,
    )?;
    let mut p_rel: f64 = 0.0;
    let mut zm: f64 = 0.0;
    let mut zv: f64 = 0.0;
    for s in &samples {
        if s.bucy.1 > 0.0 {
            p_rel = p_rel.max((s.kalman.1 - s.bucy.1).abs() / s.bucy.1);
        }
        zm = zm.max((s.zakai.0 - s.bucy.0).abs());
        zv = zv.max((s.zakai.1 - s.bucy.1).abs());
    }
    let summary = Summary::new()
        .num("max_rel_variance_gap_kalman_bucy", p_rel)
        .num("max_mean_gap_zakai_bucy", zm)
        .num("max_variance_gap_zakai_bucy", zv);
    em.json("classical.json", &summary)?;
    Ok(false)
}
