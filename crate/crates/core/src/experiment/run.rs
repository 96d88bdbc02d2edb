use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GainSpec, Mode, RunsConfig, ScheduleSpec};
use super::plot::{write_figure, Figure, Scale, Series};
use super::replay::RunSpec;
use super::ExperimentError;
use crate::matrix_time::ContinuousRealization;
use crate::plant_sim::{mrms, run_closed_loop, ClosedLoopRun, ClosedLoopSetup, ClosedLoopTrace, ControllerMode};
use crate::quantizer::ScheduleKind;
use crate::stability::{
    disturbance_energy_bound, eta_bound, lyapunov_audit, min_quantization_gain, residual_set, schedule_admissible,
    solve_feasibility, AuditModel, Feasibility, FeasibilityOptions, LmiProblem, ScheduleVerdict, StabilityCertificate,
};

pub const REPORT_FILE: &str = "report.toml";
const NO_CERTIFICATE: &str = "no certificate";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces the configured seed.
    pub seed: Option<u64>,
    /// Worker threads; the rayon default when None.
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRow {
    pub h: f64,
    pub feasible: bool,
    pub solver_status: String,
    /// Smallest LMI margin (certified) or best margin found (not certified).
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub h: f64,
    pub schedule: String,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_gain: Option<f64>,
    pub seed: u64,
    /// Whether Σ 1/Λ_k² is finite for the schedule.
    pub summable: bool,
    pub steps: usize,
    pub completed: usize,
    pub status: String,
    pub z0: f64,
    pub z_final: f64,
    pub u_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrms: Option<f64>,
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub eta_bar: f64,
    pub sigma: f64,
    pub rho: f64,
    pub v_bar: f64,
    /// (V_0 − V̄_ρ)/σ.
    pub entry_bound: f64,
    /// First time V(z(t)) ≤ V̄_ρ on the substep grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_time: Option<f64>,
    pub entered_in_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub label: String,
    pub h: f64,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_gain: Option<f64>,
    pub status: String,
    pub intervals: usize,
    pub violations: usize,
    pub functional_violations: usize,
    pub lmi_feasible: bool,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
    pub varsigma: f64,
    pub v0: f64,
    pub total_z2: f64,
    pub total_eta2: f64,
    /// ℰ_η bounding ∫‖η‖².
    pub energy_bound: f64,
    /// μ3⁻¹(V_0 + μ4 ℰ_η).
    pub cumulative_bound: f64,
    pub cumulative_ok: bool,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualRow>,
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub feasibility: Vec<FeasibilityRow>,
    pub runs: Vec<RunRow>,
    pub audits: Vec<AuditRow>,
    /// Every file written, relative to the output directory.
    pub files: Vec<String>,
}

impl ExperimentReport {
    /// Runs and audits skipped because no certificate exists at their period.
    pub fn unrunnable(&self) -> usize {
        self.runs.iter().filter(|r| r.status == NO_CERTIFICATE).count()
            + self.audits.iter().filter(|a| a.status == NO_CERTIFICATE).count()
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Io(e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(dir.join(REPORT_FILE))?;
        toml::from_str(&text).map_err(|e| ExperimentError::Io(e.to_string()))
    }
}

/// Seed of sweep cell `cell`: the first word of ChaCha stream `cell` keyed by `seed`.
pub fn cell_seed(seed: u64, cell: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    rng.next_u64()
}

fn h_tag(h: f64) -> String {
    format!("h{h}")
}

/// Certificates and Λ_min per sampling period, keyed by the bits of h.
type CertCache = BTreeMap<u64, (FeasibilityRow, Option<StabilityCertificate>)>;

fn certify(cr: &ContinuousRealization, h: f64, min_gain: bool, out: &Path) -> Result<(FeasibilityRow, Option<StabilityCertificate>), ExperimentError> {
    let problem = LmiProblem::new(cr, h);
    match solve_feasibility(&problem, &FeasibilityOptions::default()) {
        Feasibility::Certified(cert) => {
            let lambda_min = if min_gain { min_quantization_gain(&cert, cr).ok() } else { None };
            let rel = format!("certificates/{}.toml", h_tag(h));
            cert.save(&out.join(&rel)).map_err(|e| ExperimentError::from(e).context(&rel))?;
            let row = FeasibilityRow {
                h,
                feasible: true,
                solver_status: "certified".into(),
                margin: cert.margins.min(),
                upper_bound: None,
                ratio: Some(cert.ratio),
                lambda_min,
                certificate: Some(rel),
            };
            Ok((row, Some(*cert)))
        }
        Feasibility::Infeasible(rep) => Ok((
            FeasibilityRow {
                h,
                feasible: false,
                solver_status: format!("{:?}", rep.status).to_lowercase(),
                margin: rep.best_margin,
                upper_bound: Some(rep.upper_bound),
                ratio: None,
                lambda_min: None,
                certificate: None,
            },
            None,
        )),
    }
}

/// Static gain for a run at period index `i`; None when a certificate is
/// needed and missing.
fn static_gain(spec: &GainSpec, factor: f64, i: usize, h: f64, certs: &CertCache) -> Option<f64> {
    match spec.fixed(i) {
        Some(g) => Some(g),
        None => certs.get(&h.to_bits()).and_then(|(row, _)| row.lambda_min).map(|g| g * factor),
    }
}

struct Cell<'a> {
    h: f64,
    schedule: Option<&'a ScheduleSpec>,
    gain: Option<f64>,
    seed: u64,
    dir: String,
    label: String,
}

fn controller_mode(
    cfg: &ExperimentConfig,
    mode: Mode,
    schedule: Option<&ScheduleSpec>,
    gain: Option<f64>,
    seed: u64,
) -> Result<ControllerMode, ExperimentError> {
    let sched = match (schedule, gain) {
        (Some(s), Some(g)) => Some(s.schedule(g)?),
        _ => None,
    };
    Ok(match (mode, sched) {
        (Mode::Ideal, _) | (_, None) => ControllerMode::Ideal,
        (Mode::Quantized, Some(schedule)) => ControllerMode::Quantized { schedule },
        (Mode::Encrypted, Some(schedule)) => ControllerMode::Encrypted {
            schedule,
            crypto: cfg.crypto.params(seed)?,
            noise_gain: cfg.crypto.noise_gain()?,
        },
    })
}

fn simulate(
    cfg: &ExperimentConfig,
    cr: &ContinuousRealization,
    h: f64,
    mode: ControllerMode,
    transcript: bool,
) -> Result<ClosedLoopRun, ExperimentError> {
    let (x0, chi0) = cfg.simulation.initial_states(cr.n())?;
    let transcript_config = match (&mode, transcript) {
        (ControllerMode::Encrypted { schedule, crypto, .. }, true) => Some(
            RunSpec {
                plant: cfg.plant.clone(),
                h,
                horizon: cfg.simulation.horizon,
                substeps: cfg.simulation.substeps,
                x0: x0.iter().copied().collect(),
                chi0: chi0.iter().copied().collect(),
                schedule: schedule.clone(),
                crypto: crypto.clone(),
                noise_gain_bits: cfg.crypto.noise_gain_bits,
            }
            .to_toml()?,
        ),
        _ => None,
    };
    let setup = ClosedLoopSetup {
        realization: cr.clone(),
        h,
        horizon: cfg.simulation.horizon,
        substeps: cfg.simulation.substeps,
        x0,
        chi0,
        mode,
        transcript_config,
    };
    Ok(run_closed_loop(&setup)?)
}

fn summable(schedule: Option<&ScheduleSpec>, gain: f64) -> bool {
    schedule
        .and_then(|s| s.schedule(gain).ok())
        .is_some_and(|s| schedule_admissible(&s).verdict == ScheduleVerdict::Summable)
}

fn run_cell(
    cfg: &ExperimentConfig,
    rc: &RunsConfig,
    cr: &ContinuousRealization,
    cell: &Cell,
    out: &Path,
) -> Result<(RunRow, Option<ClosedLoopTrace>, Vec<String>), ExperimentError> {
    let mode = cfg.simulation.mode;
    let steps = (cfg.simulation.horizon / cell.h).round() as usize;
    let schedule_label = cell.schedule.map_or_else(|| "none".to_string(), ScheduleSpec::label);
    let mut row = RunRow {
        h: cell.h,
        schedule: schedule_label,
        mode: mode.as_str().into(),
        static_gain: cell.gain,
        seed: cell.seed,
        summable: summable(cell.schedule, cell.gain.unwrap_or(1.0)),
        steps,
        completed: 0,
        status: NO_CERTIFICATE.into(),
        z0: f64::NAN,
        z_final: f64::NAN,
        u_max: f64::NAN,
        mrms: None,
        dir: cell.dir.clone(),
        transcript: None,
    };
    if mode != Mode::Ideal && cell.gain.is_none() {
        return Ok((row, None, Vec::new()));
    }
    let ctrl = controller_mode(cfg, mode, cell.schedule, cell.gain, cell.seed)?;
    let run = simulate(cfg, cr, cell.h, ctrl, rc.transcripts).map_err(|e| e.context(&cell.dir))?;
    let trace = run.trace;
    let dir = out.join(&cell.dir);
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    if rc.traces {
        let f = fs::File::create(dir.join("trace.csv"))?;
        trace.write_csv_every(std::io::BufWriter::new(f), cfg.simulation.substeps)?;
        files.push(format!("{}/trace.csv", cell.dir));
    }
    if let Some(t) = &run.transcript {
        let rel = format!("{}/transcript.bin", cell.dir);
        fs::write(out.join(&rel), t.to_bytes())?;
        row.transcript = Some(rel.clone());
        files.push(rel);
    }
    let last = trace.len() - 1;
    row.completed = run.samples.len();
    row.status = status_of(&run.failure);
    row.z0 = trace.z_norm(0);
    row.z_final = trace.z_norm(last);
    row.u_max = trace.u.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if let (Some(m), None) = (&rc.mrms, &run.failure) {
        let theta = trace.output_channel(0);
        row.mrms = mrms(&trace.t, &theta, m.at, m.window).ok();
    }
    Ok((row, Some(trace), files))
}

fn status_of(f: &Option<crate::plant_sim::StepFailure>) -> String {
    match f {
        None => "ok".into(),
        Some(f) => format!("stopped at step {} (t = {}): {}", f.step, f.time, f.reason),
    }
}

fn run_sweep(
    cfg: &ExperimentConfig,
    rc: &RunsConfig,
    cr: &ContinuousRealization,
    certs: &CertCache,
    seed: u64,
    out: &Path,
) -> Result<(Vec<RunRow>, Vec<String>), ExperimentError> {
    let ideal_only = cfg.simulation.mode == Mode::Ideal || rc.schedules.is_empty();
    let schedules: Vec<Option<&ScheduleSpec>> =
        if ideal_only { vec![None] } else { rc.schedules.iter().map(Some).collect() };
    let mut cells = Vec::new();
    for (i, &h) in rc.h.iter().enumerate() {
        for s in &schedules {
            let idx = cells.len();
            let slug = s.map_or_else(|| "ideal".to_string(), |s| s.slug());
            let mut label = Vec::new();
            if rc.h.len() > 1 || schedules.len() == 1 {
                label.push(format!("h = {h}"));
            }
            if let Some(s) = s {
                label.push(format!("Λk = {}", s.label()));
            }
            cells.push(Cell {
                h,
                schedule: *s,
                gain: static_gain(&rc.static_gain, rc.gain_factor, i, h, certs),
                seed: cell_seed(seed, idx as u64),
                dir: format!("runs/{idx:02}_{}_{slug}", h_tag(h)),
                label: label.join(", "),
            });
        }
    }
    let results: Vec<_> = cells.par_iter().map(|c| run_cell(cfg, rc, cr, c, out)).collect();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut theta = Vec::new();
    let mut input = Vec::new();
    let mut norm = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        let (row, trace, f) = res?;
        rows.push(row);
        files.extend(f);
        if let Some(t) = trace {
            let pts = |v: Vec<f64>| t.t.iter().copied().zip(v).collect::<Vec<_>>();
            theta.push(Series::thinned(cell.label.clone(), pts(t.output_channel(0))));
            input.push(Series::thinned(cell.label.clone(), pts((0..t.len()).map(|i| t.u_at(i)[0]).collect())));
            norm.push(Series::thinned(cell.label.clone(), pts((0..t.len()).map(|i| t.z_norm(i)).collect())));
        }
    }
    if rc.plots && !theta.is_empty() {
        let dir = out.join("plots");
        fs::create_dir_all(&dir)?;
        let title = format!("{} ({} mode)", cfg.name, cfg.simulation.mode.as_str());
        for (stem, y, scale, series) in [
            ("theta_e", "angle error [rad]", Scale::Linear, &theta),
            ("u", "control input [V]", Scale::Linear, &input),
            ("norm_z", "|z|", Scale::Log, &norm),
        ] {
            let fig = Figure { title: &title, x_label: "t [s]", y_label: y, scale, series };
            files.extend(write_figure(&dir, stem, &fig)?.into_iter().map(|f| format!("plots/{f}")));
        }
    }
    Ok((rows, files))
}

struct AuditCell<'a> {
    label: String,
    schedule: Option<&'a ScheduleSpec>,
    seed: u64,
}

fn audit_cell(
    cfg: &ExperimentConfig,
    cr: &ContinuousRealization,
    cell: &AuditCell,
    h: f64,
    gain: Option<f64>,
    cert: Option<&StabilityCertificate>,
    sigma: Option<f64>,
    out: &Path,
) -> Result<(AuditRow, Vec<String>), ExperimentError> {
    let mode = match (cell.schedule, cfg.simulation.mode) {
        (None, _) => Mode::Ideal,
        (Some(_), Mode::Ideal) => Mode::Quantized,
        (Some(_), m) => m,
    };
    let dir = format!("audit/{}", cell.label);
    let mut row = AuditRow {
        label: cell.label.clone(),
        h,
        mode: mode.as_str().into(),
        static_gain: gain.filter(|_| cell.schedule.is_some()),
        status: NO_CERTIFICATE.into(),
        intervals: 0,
        violations: 0,
        functional_violations: 0,
        lmi_feasible: false,
        mu1: f64::NAN,
        mu2: f64::NAN,
        mu3: f64::NAN,
        mu4: f64::NAN,
        varsigma: f64::NAN,
        v0: f64::NAN,
        total_z2: f64::NAN,
        total_eta2: f64::NAN,
        energy_bound: f64::NAN,
        cumulative_bound: f64::NAN,
        cumulative_ok: false,
        passed: false,
        residual: None,
        dir: dir.clone(),
    };
    let (Some(cert), Some(gain)) = (cert, gain.or(cell.schedule.is_none().then_some(1.0))) else {
        return Ok((row, Vec::new()));
    };
    let ctrl = controller_mode(cfg, mode, cell.schedule, Some(gain), cell.seed)?;
    let run = simulate(cfg, cr, h, ctrl, false).map_err(|e| e.context(&dir))?;
    let model = AuditModel::new(cr, run.uncertainty.as_ref(), h);
    let audit = lyapunov_audit(&run.trace, &run.samples, &cert.vars, &model)?;
    let (n, r) = (cr.n(), cr.r());
    let steps = run.samples.len();
    let m_u = run.uncertainty.as_ref().map_or(0.0, |u| u.eta_gain_norm());
    let schedule = cell.schedule.map(|s| s.schedule(gain)).transpose()?;
    let energy = match &schedule {
        None => 0.0,
        Some(s) => {
            let whole = schedule_admissible(s).verdict == ScheduleVerdict::Summable;
            disturbance_energy_bound(s, h, m_u, n, r, if whole { None } else { Some(steps) })?
        }
    };
    let c = &audit.constants;
    row.status = status_of(&run.failure);
    row.intervals = audit.intervals.len();
    row.violations = audit.violations;
    row.functional_violations = audit.functional_violations;
    row.lmi_feasible = audit.lmi.feasible;
    (row.mu1, row.mu2, row.mu3, row.mu4, row.varsigma) = (c.mu1, c.mu2, c.mu3, c.mu4, c.varsigma);
    row.v0 = audit.v0;
    row.total_z2 = audit.total_z2;
    row.total_eta2 = audit.total_eta2;
    row.energy_bound = energy;
    row.cumulative_bound = audit.cumulative_bound(energy);
    row.cumulative_ok = audit.cumulative_holds(energy, 0.01);
    row.passed = audit.passed() && row.cumulative_ok;

    if let Some(s) = schedule.as_ref().filter(|s| matches!(s.kind, ScheduleKind::Fixed { .. })) {
        let mut eta_bar: f64 = 0.0;
        for k in 0..steps {
            eta_bar = eta_bar.max(eta_bound(m_u, n, r, gain, s.dynamic_gain(k).map_err(|e| ExperimentError::Config(e.to_string()))?));
        }
        let rs = residual_set(&cert.vars, c, eta_bar, sigma)?;
        let tr = &run.trace;
        let entry_time = (0..tr.len()).find_map(|i| {
            let z = DVector::from_vec(tr.z_at(i));
            (z.dot(&(&cert.vars.p * &z)) <= rs.v_bar).then_some(tr.t[i])
        });
        let entry_bound = rs.entry_time_bound(0.0, audit.v0);
        row.residual = Some(ResidualRow {
            eta_bar,
            sigma: rs.sigma,
            rho: rs.rho,
            v_bar: rs.v_bar,
            entry_bound,
            entry_time,
            entered_in_time: entry_time.is_some_and(|t| t <= entry_bound),
        });
    }

    fs::create_dir_all(out.join(&dir))?;
    let rel = format!("{dir}/intervals.csv");
    let mut w = csv::Writer::from_path(out.join(&rel)).map_err(|e| ExperimentError::Io(e.to_string()))?;
    let err = |e: csv::Error| ExperimentError::Io(e.to_string());
    w.write_record([
        "k",
        "v_start",
        "v_end",
        "w_start",
        "u_end",
        "w_end",
        "f_start",
        "f_end",
        "int_z2",
        "int_eta2",
        "dissipation_residual",
        "functional_residual",
        "jump_gap",
        "ok",
    ])
    .map_err(err)?;
    for i in &audit.intervals {
        let vals = [
            i.v_start,
            i.v_end,
            i.w_start,
            i.u_end,
            i.w_end,
            i.f_start,
            i.f_end,
            i.int_z2,
            i.int_eta2,
            i.dissipation_residual,
            i.functional_residual,
            i.jump_gap,
        ];
        let mut rec = vec![i.k.to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        rec.push(i.ok.to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()?;
    Ok((row, vec![rel]))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_tables(report: &ExperimentReport, out: &Path) -> Result<Vec<String>, ExperimentError> {
    let err = |e: csv::Error| ExperimentError::Io(e.to_string());
    let mut files = Vec::new();
    if !report.feasibility.is_empty() {
        let mut w = csv::Writer::from_path(out.join("feasibility.csv")).map_err(err)?;
        w.write_record(["h", "feasible", "lambda_min", "margin", "upper_bound", "ratio", "solver_status", "certificate"])
            .map_err(err)?;
        for r in &report.feasibility {
            w.write_record([
                r.h.to_string(),
                r.feasible.to_string(),
                opt(r.lambda_min),
                r.margin.to_string(),
                opt(r.upper_bound),
                opt(r.ratio),
                r.solver_status.clone(),
                r.certificate.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        files.push("feasibility.csv".to_string());
    }
    if !report.runs.is_empty() {
        let mut w = csv::Writer::from_path(out.join("runs.csv")).map_err(err)?;
        w.write_record([
            "h", "schedule", "mode", "static_gain", "summable", "mrms", "z0", "z_final", "u_max", "steps", "completed", "status",
            "seed", "dir",
        ])
        .map_err(err)?;
        for r in &report.runs {
            w.write_record([
                r.h.to_string(),
                r.schedule.clone(),
                r.mode.clone(),
                opt(r.static_gain),
                r.summable.to_string(),
                opt(r.mrms),
                r.z0.to_string(),
                r.z_final.to_string(),
                r.u_max.to_string(),
                r.steps.to_string(),
                r.completed.to_string(),
                r.status.clone(),
                r.seed.to_string(),
                r.dir.clone(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        files.push("runs.csv".to_string());
    }
    if !report.audits.is_empty() {
        let mut w = csv::Writer::from_path(out.join("audit.csv")).map_err(err)?;
        w.write_record([
            "label",
            "h",
            "mode",
            "static_gain",
            "intervals",
            "violations",
            "functional_violations",
            "lmi_feasible",
            "mu3",
            "mu4",
            "total_z2",
            "cumulative_bound",
            "cumulative_ok",
            "rho",
            "v_bar",
            "entry_bound",
            "entry_time",
            "entered_in_time",
            "passed",
            "status",
        ])
        .map_err(err)?;
        for a in &report.audits {
            let res = a.residual.as_ref();
            w.write_record([
                a.label.clone(),
                a.h.to_string(),
                a.mode.clone(),
                opt(a.static_gain),
                a.intervals.to_string(),
                a.violations.to_string(),
                a.functional_violations.to_string(),
                a.lmi_feasible.to_string(),
                a.mu3.to_string(),
                a.mu4.to_string(),
                a.total_z2.to_string(),
                a.cumulative_bound.to_string(),
                a.cumulative_ok.to_string(),
                opt(res.map(|r| r.rho)),
                opt(res.map(|r| r.v_bar)),
                opt(res.map(|r| r.entry_bound)),
                opt(res.and_then(|r| r.entry_time)),
                res.map_or_else(String::new, |r| r.entered_in_time.to_string()),
                a.passed.to_string(),
                a.status.clone(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        files.push("audit.csv".to_string());
    }
    Ok(files)
}

/// Executes every section of the configuration and writes tables, traces,
/// certificates, plots and `report.toml` under `opts.out_dir`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| ExperimentError::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, opts))
}

fn run_inner(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
    let seed = opts.seed.unwrap_or(cfg.seed);
    let out = opts.out_dir.as_path();
    fs::create_dir_all(out.join("certificates"))?;
    let cr = cfg.plant.realization()?;
    let mut files = Vec::new();

    // every period that needs a certificate, in first-use order
    let mut periods: Vec<(f64, bool)> = Vec::new();
    let mut need = |h: f64, min_gain: bool| match periods.iter_mut().find(|(p, _)| p.to_bits() == h.to_bits()) {
        Some(p) => p.1 |= min_gain,
        None => periods.push((h, min_gain)),
    };
    if let Some(f) = &cfg.feasibility {
        f.h.iter().for_each(|&h| need(h, f.min_gain));
    }
    if let Some(r) = cfg.runs.as_ref().filter(|r| r.static_gain.from_certificate()) {
        r.h.iter().for_each(|&h| need(h, true));
    }
    if let Some(a) = &cfg.audit {
        need(a.h, a.static_gain.from_certificate());
    }
    let solved: Vec<_> = periods.par_iter().map(|&(h, mg)| certify(&cr, h, mg, out)).collect();
    let mut certs = CertCache::new();
    for ((h, _), res) in periods.iter().zip(solved) {
        let (row, cert) = res?;
        if let Some(c) = &row.certificate {
            files.push(c.clone());
        }
        certs.insert(h.to_bits(), (row, cert));
    }
    let feasibility = cfg
        .feasibility
        .iter()
        .flat_map(|f| &f.h)
        .map(|h| certs[&h.to_bits()].0.clone())
        .collect();

    let mut runs = Vec::new();
    if let Some(rc) = &cfg.runs {
        let (rows, f) = run_sweep(cfg, rc, &cr, &certs, seed, out)?;
        runs = rows;
        files.extend(f);
    }

    let mut audits = Vec::new();
    if let Some(ac) = &cfg.audit {
        let entry = certs.get(&ac.h.to_bits());
        let cert = entry.and_then(|(_, c)| c.as_ref());
        let gain = static_gain(&ac.static_gain, ac.gain_factor, 0, ac.h, &certs);
        let mut cells = vec![AuditCell { label: "ideal".into(), schedule: None, seed: cell_seed(seed, 1 << 32) }];
        for (i, s) in ac.schedules.iter().enumerate() {
            cells.push(AuditCell { label: s.slug(), schedule: Some(s), seed: cell_seed(seed, (1 << 32) + 1 + i as u64) });
        }
        let results: Vec<_> =
            cells.par_iter().map(|c| audit_cell(cfg, &cr, c, ac.h, gain, cert, ac.sigma, out)).collect();
        for r in results {
            let (row, f) = r?;
            audits.push(row);
            files.extend(f);
        }
    }

    let mut report = ExperimentReport { name: cfg.name.clone(), seed, feasibility, runs, audits, files: Vec::new() };
    files.extend(write_tables(&report, out)?);
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    files.push("config.toml".into());
    files.push(REPORT_FILE.into());
    files.sort();
    report.files = files;
    fs::write(out.join(REPORT_FILE), report.to_toml()?)?;
    Ok(report)
}
