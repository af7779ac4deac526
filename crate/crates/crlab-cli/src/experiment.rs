//! Experiment dispatch: one point per sweep value, a bounded worker pool,
//! and deterministic CSV emission. Workers only compute; the main thread
//! writes every file in point order so equal configs give byte-identical
//! artifacts regardless of `--jobs`.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crlab_core::deadline;
use crlab_core::sched::with_admission_control;
use crlab_core::sim::{measure_interference, run_sim, PolicyKind, SimTrace};
use crlab_core::stopping::{
    k_out_of_m, no_osr, solve_multi_su, solve_overlay, solve_underlay, EnergyDetector,
    OverlaySolution, StoppingError,
};

use crate::config::{
    config_hash, validate, CliError, ExperimentConfig, Mode, PolicyName, SweepBlock,
};

/// Fixed 12-significant-digit float formatting for every CSV cell.
fn fmt(x: f64) -> String {
    format!("{x:.11e}")
}

/// Later errors within a point append rather than overwrite.
fn note(error: &mut Option<String>, msg: String) {
    match error {
        Some(prev) => {
            prev.push_str("; ");
            prev.push_str(&msg);
        }
        None => *error = Some(msg),
    }
}

struct Csv {
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn new(header: &[&str]) -> Csv {
        Csv {
            rows: vec![header.iter().map(|s| s.to_string()).collect()],
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.rows[0].len());
        self.rows.push(row);
    }

    fn data_rows(&self) -> usize {
        self.rows.len() - 1
    }

    fn bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.write_record(row).expect("csv row");
        }
        w.into_inner().expect("csv buffer")
    }
}

struct PointOutcome {
    /// (file name, contents); the summary CSV first, dumps after.
    files: Vec<(String, Vec<u8>)>,
    rows: usize,
    error: Option<String>,
}

pub struct RunSummary {
    pub points: usize,
    pub failures: usize,
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: usize,
    quiet: bool,
) -> Result<RunSummary, CliError> {
    validate(cfg)?;
    let hash = config_hash(cfg);
    let out = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    // A plain run is a sweep with a single unlabeled point.
    let (target, axis): (Mode, Option<&SweepBlock>) = match cfg.mode.unwrap() {
        Mode::Sweep => {
            let sweep = cfg.sweep.as_ref().unwrap();
            (sweep.target, Some(sweep))
        }
        other => (other, None),
    };
    let points: Vec<(String, Option<f64>)> = match axis {
        Some(sweep) if !sweep.values.is_empty() => sweep
            .values
            .iter()
            .map(|&v| (sweep.parameter.clone(), Some(v)))
            .collect(),
        _ => vec![(String::new(), None)],
    };

    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<PointOutcome>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    let workers = jobs.max(1).min(points.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= points.len() {
                    break;
                }
                let (param, value) = &points[idx];
                let outcome = run_point(cfg, target, idx, param, *value, &hash, points.len() > 1);
                if !quiet {
                    let label = match value {
                        Some(v) => format!("{param}={v}"),
                        None => "single point".into(),
                    };
                    let status = match &outcome.error {
                        Some(e) => format!("FAILED: {e}"),
                        None => format!("{} rows", outcome.rows),
                    };
                    println!(
                        "[{}/{}] {label}: {status}",
                        done.fetch_add(1, Ordering::Relaxed) + 1,
                        points.len()
                    );
                }
                outcomes.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });
    let outcomes = outcomes.into_inner().unwrap();

    let mut index = Csv::new(&[
        "config", "point", "parameter", "value", "file", "rows", "status", "error",
    ]);
    let mut failures = Vec::new();
    for (idx, outcome) in outcomes.iter().enumerate() {
        let outcome = outcome.as_ref().expect("every point ran");
        let (param, value) = &points[idx];
        for (name, bytes) in &outcome.files {
            fs::write(out.join(name), bytes)
                .map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        }
        let summary_name = outcome
            .files
            .first()
            .map(|(name, _)| name.clone())
            .unwrap_or_default();
        let (status, error) = match &outcome.error {
            Some(e) => ("error", e.clone()),
            None => ("ok", String::new()),
        };
        if let Some(e) = &outcome.error {
            failures.push(serde_json::json!({
                "point": idx,
                "parameter": param,
                "value": value,
                "error": e,
            }));
        }
        index.push(vec![
            hash.clone(),
            idx.to_string(),
            param.clone(),
            value.map(fmt).unwrap_or_default(),
            summary_name,
            outcome.rows.to_string(),
            status.into(),
            error,
        ]);
    }
    fs::write(out.join("index.csv"), index.bytes())
        .map_err(|e| CliError::Io(format!("index.csv: {e}")))?;
    if !failures.is_empty() {
        let record = serde_json::to_vec_pretty(&serde_json::json!({ "failures": failures }))
            .expect("error record serializes");
        fs::write(out.join("error.json"), record)
            .map_err(|e| CliError::Io(format!("error.json: {e}")))?;
    }
    Ok(RunSummary {
        points: points.len(),
        failures: failures.len(),
    })
}

fn run_point(
    cfg: &ExperimentConfig,
    target: Mode,
    idx: usize,
    param: &str,
    value: Option<f64>,
    hash: &str,
    swept: bool,
) -> PointOutcome {
    let mut cfg = cfg.clone();
    if let Some(v) = value {
        if let Err(e) = apply_axis(&mut cfg, target, param, v) {
            return PointOutcome {
                files: Vec::new(),
                rows: 0,
                error: Some(e.to_string()),
            };
        }
    }
    let stem = if swept {
        format!("point_{idx:03}")
    } else {
        "summary".to_string()
    };
    let mut files = Vec::new();
    let mut error = None;
    let csv = match target {
        Mode::SolveOverlay => overlay_point(&cfg, hash, &mut error),
        Mode::SolveUnderlay => underlay_point(&cfg, hash, &mut error),
        Mode::SolveMultisu => multisu_point(&cfg, hash, &mut error),
        Mode::PlanFrame => plan_frame_point(&cfg, hash, &mut error),
        Mode::Simulate => simulate_point(&cfg, hash, &stem, &mut files, &mut error),
        Mode::Sweep => unreachable!("sweep target validated"),
    };
    let rows = csv.data_rows();
    files.insert(0, (format!("{stem}.csv"), csv.bytes()));
    PointOutcome { files, rows, error }
}

fn apply_axis(
    cfg: &mut ExperimentConfig,
    target: Mode,
    param: &str,
    value: f64,
) -> Result<(), CliError> {
    let bad = || CliError::Run(format!("cannot apply {param}={value} for {}", target.name()));
    match param {
        "p_avg" => cfg.ensemble.as_mut().ok_or_else(bad)?.p_avg = value,
        "d_max" => cfg.ensemble.as_mut().ok_or_else(bad)?.d_max = Some(value),
        "tau_over_t" => cfg.ensemble.as_mut().ok_or_else(bad)?.tau_over_t = value,
        "i_avg" if target == Mode::SolveUnderlay => {
            cfg.ensemble.as_mut().ok_or_else(bad)?.i_avg = Some(value)
        }
        "users" => cfg.ensemble.as_mut().ok_or_else(bad)?.users = Some(value as u32),
        "assurance" => cfg.frame.as_mut().ok_or_else(bad)?.assurance = value,
        "lambda" => {
            for su in &mut cfg.fleet.as_mut().ok_or_else(bad)?.sus {
                su.lambda = value;
            }
        }
        "horizon" => cfg.fleet.as_mut().ok_or_else(bad)?.horizon = value as u64,
        "v" => cfg.fleet.as_mut().ok_or_else(bad)?.v = value,
        "epsilon" => cfg.fleet.as_mut().ok_or_else(bad)?.epsilon = value,
        "csi_alpha" => cfg.fleet.as_mut().ok_or_else(bad)?.csi_alpha = Some(value),
        "i_avg" => cfg.fleet.as_mut().ok_or_else(bad)?.i_avg = Some(value),
        _ => return Err(bad()),
    }
    Ok(())
}

/// Unconstrained, delay-capped, first-free, and sense-k policies on one
/// ensemble; a row per variant. An unreachable delay cap reports the
/// solver's best-effort policy with `feasible` false.
fn overlay_point(cfg: &ExperimentConfig, hash: &str, error: &mut Option<String>) -> Csv {
    let mut csv = Csv::new(&[
        "config", "seed", "p_avg", "d_max", "variant", "throughput", "power", "success_prob",
        "expected_delay", "lambda_p", "feasible",
    ]);
    let block = cfg.ensemble.as_ref().unwrap();
    let seed = cfg.seeds[0];
    let ens = match block.ensemble() {
        Ok(ens) => ens,
        Err(e) => {
            note(error, e.to_string());
            return csv;
        }
    };
    let d_max = block.d_max.unwrap_or(f64::INFINITY);
    let mut push = |variant: &str, sol: &OverlaySolution, feasible: bool| {
        csv.push(vec![
            hash.into(),
            seed.to_string(),
            fmt(block.p_avg),
            fmt(d_max),
            variant.into(),
            fmt(sol.stats.throughput),
            fmt(sol.stats.power),
            fmt(sol.stats.success_prob),
            fmt(sol.stats.expected_delay),
            fmt(sol.policy.lambda_p),
            feasible.to_string(),
        ]);
    };
    match solve_overlay(&ens, block.p_avg, f64::INFINITY, block.p_max, block.grid) {
        Ok(sol) => push("unconstrained", &sol, true),
        Err(e) => note(error, format!("unconstrained: {e}")),
    }
    if d_max.is_finite() {
        match solve_overlay(&ens, block.p_avg, d_max, block.p_max, block.grid) {
            Ok(sol) => push("constrained", &sol, true),
            Err(StoppingError::InfeasibleDelay(best)) => push("constrained", &best, false),
            Err(e) => note(error, format!("constrained: {e}")),
        }
    }
    match no_osr(&ens, block.p_avg, block.p_max) {
        Ok(sol) => push("first-free", &sol, true),
        Err(e) => note(error, format!("first-free: {e}")),
    }
    if let Some(k) = block.k {
        match k_out_of_m(&ens, k, block.p_avg) {
            Ok(sol) => {
                csv.push(vec![
                    hash.into(),
                    seed.to_string(),
                    fmt(block.p_avg),
                    fmt(d_max),
                    format!("sense-{k}"),
                    fmt(sol.stats.throughput),
                    fmt(sol.stats.power),
                    fmt(sol.stats.success_prob),
                    fmt(sol.stats.expected_delay),
                    fmt(sol.lambda_p),
                    true.to_string(),
                ]);
            }
            Err(e) => note(error, format!("sense-{k}: {e}")),
        }
    }
    csv
}

fn underlay_point(cfg: &ExperimentConfig, hash: &str, error: &mut Option<String>) -> Csv {
    let mut csv = Csv::new(&[
        "config", "seed", "i_avg", "p_avg", "d_max", "throughput", "power", "interference",
        "success_prob", "expected_delay", "lambda_p", "lambda_i",
    ]);
    let block = cfg.ensemble.as_ref().unwrap();
    let seed = cfg.seeds[0];
    let run = || -> Result<_, CliError> {
        let ens = block.ensemble()?;
        let spec = block.sensing.as_ref().unwrap();
        let model = EnergyDetector {
            samples: spec.samples,
            noise_power: spec.noise_power,
            signal_energy: spec.signal_energy,
        }
        .model()
        .map_err(|e| CliError::Run(e.to_string()))?;
        let d_max = block.d_max.unwrap_or(f64::INFINITY);
        solve_underlay(
            &ens,
            &model,
            block.i_avg.unwrap(),
            Some(block.p_avg),
            d_max,
            block.grid,
        )
        .map_err(|e| CliError::Run(e.to_string()))
    };
    match run() {
        Ok(sol) => csv.push(vec![
            hash.into(),
            seed.to_string(),
            fmt(block.i_avg.unwrap()),
            fmt(block.p_avg),
            fmt(block.d_max.unwrap_or(f64::INFINITY)),
            fmt(sol.stats.throughput),
            fmt(sol.stats.power),
            fmt(sol.stats.interference.unwrap_or(f64::NAN)),
            fmt(sol.stats.success_prob),
            fmt(sol.stats.expected_delay),
            fmt(sol.policy.lambda_p),
            fmt(sol.policy.lambda_i),
        ]),
        Err(e) => note(error, e.to_string()),
    }
    csv
}

fn multisu_point(cfg: &ExperimentConfig, hash: &str, error: &mut Option<String>) -> Csv {
    let mut csv = Csv::new(&[
        "config", "seed", "users", "p_avg", "d_max", "throughput", "power", "success_prob",
        "expected_delay", "approx_valid", "max_threshold_gap", "feasible",
    ]);
    let block = cfg.ensemble.as_ref().unwrap();
    let seed = cfg.seeds[0];
    let users = block.users.unwrap();
    let d_max = block.d_max.unwrap_or(f64::INFINITY);
    let run = || -> Result<_, CliError> {
        let ens = block.ensemble()?;
        match solve_multi_su(&ens, users, block.p_avg, d_max) {
            Ok(sol) => Ok((sol.per_su, sol.threshold_gaps, sol.approx_valid, true)),
            Err(StoppingError::InfeasibleDelay(best)) => Ok((*best, Vec::new(), true, false)),
            Err(e) => Err(CliError::Run(e.to_string())),
        }
    };
    match run() {
        Ok((per_su, gaps, approx_valid, feasible)) => {
            let max_gap = gaps.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            csv.push(vec![
                hash.into(),
                seed.to_string(),
                users.to_string(),
                fmt(block.p_avg),
                fmt(d_max),
                fmt(per_su.stats.throughput),
                fmt(per_su.stats.power),
                fmt(per_su.stats.success_prob),
                fmt(per_su.stats.expected_delay),
                approx_valid.to_string(),
                fmt(max_gap),
                feasible.to_string(),
            ]);
        }
        Err(e) => note(error, e.to_string()),
    }
    csv
}

/// Per-state success requirements for the frame goal: a row for every
/// (packets left, slots left) pair the online policy can reach.
fn plan_frame_point(cfg: &ExperimentConfig, hash: &str, error: &mut Option<String>) -> Csv {
    let mut csv = Csv::new(&[
        "config", "seed", "packets_left", "slots_left", "required_p", "frame_success_at_p",
    ]);
    let frame = cfg.frame.as_ref().unwrap();
    let seed = cfg.seeds[0];
    for k in 1..=frame.packets {
        for s in k..=frame.slots {
            let row = deadline::required_p(k, s, frame.assurance)
                .and_then(|p| deadline::p_frame(k, s, p).map(|succ| (p, succ)));
            match row {
                Ok((p, succ)) => csv.push(vec![
                    hash.into(),
                    seed.to_string(),
                    k.to_string(),
                    s.to_string(),
                    fmt(p),
                    fmt(succ),
                ]),
                Err(e) => note(error, format!("state ({k}, {s}): {e}")),
            }
        }
    }
    csv
}

fn policy_kind(name: PolicyName) -> PolicyKind {
    match name {
        PolicyName::Doic => PolicyKind::Doic,
        PolicyName::Doac => PolicyKind::Doac,
        PolicyName::Subopt => PolicyKind::Subopt,
        PolicyName::Csma => PolicyKind::Csma,
    }
}

/// One row per (seed, policy, user) with trace-level aggregates repeated,
/// plus optional frame/slot dumps per run.
fn simulate_point(
    cfg: &ExperimentConfig,
    hash: &str,
    stem: &str,
    files: &mut Vec<(String, Vec<u8>)>,
    error: &mut Option<String>,
) -> Csv {
    let mut csv = Csv::new(&[
        "config", "seed", "policy", "su", "lambda", "arrivals", "completed", "mean_wait",
        "bits_delivered", "mean_interference", "frames", "degraded_frames", "y_over_frames",
        "x_over_frames",
    ]);
    let block = cfg.fleet.as_ref().unwrap();
    let base = block.fleet();
    let fleet = if block.admission_control {
        match with_admission_control(&base) {
            Ok((fleet, _scaled)) => fleet,
            Err(e) => {
                note(error, format!("admission control: {e}"));
                return csv;
            }
        }
    } else {
        base
    };
    for &seed in &cfg.seeds {
        for &policy in &block.policies {
            let trace = match run_sim(&fleet, policy_kind(policy), block.horizon, seed, block.csi_alpha)
            {
                Ok(trace) => trace,
                Err(e) => {
                    note(error, format!("{} seed {seed}: {e}", policy.name()));
                    continue;
                }
            };
            let interference = measure_interference(&trace);
            let frames = trace.final_state.frame_index;
            for (i, su) in trace.per_su.iter().enumerate() {
                let mean_wait = if su.completed > 0 {
                    su.sum_wait / su.completed as f64
                } else {
                    f64::NAN
                };
                let y_over = if frames > 0 {
                    trace.final_state.y[i] / frames as f64
                } else {
                    f64::NAN
                };
                let x_over = if frames > 0 {
                    trace.final_state.x / frames as f64
                } else {
                    f64::NAN
                };
                csv.push(vec![
                    hash.into(),
                    seed.to_string(),
                    policy.name().into(),
                    i.to_string(),
                    fmt(fleet.sus[i].lambda),
                    su.arrivals.to_string(),
                    su.completed.to_string(),
                    fmt(mean_wait),
                    fmt(su.bits_delivered),
                    fmt(interference),
                    frames.to_string(),
                    trace.degraded_frames.to_string(),
                    fmt(y_over),
                    fmt(x_over),
                ]);
            }
            if block.dump_frames {
                files.push((
                    format!("{stem}_frames_{}_{seed}.csv", policy.name()),
                    frames_csv(&trace, hash, seed).bytes(),
                ));
            }
            if block.dump_slots {
                files.push((
                    format!("{stem}_slots_{}_{seed}.csv", policy.name()),
                    slots_csv(&trace, hash, seed).bytes(),
                ));
            }
        }
    }
    csv
}

fn frames_csv(trace: &SimTrace, hash: &str, seed: u64) -> Csv {
    let n = trace.per_su.len();
    let mut header: Vec<String> = [
        "config", "seed", "frame", "start_slot", "idle_slots", "busy_slots", "t_k", "x",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..n {
        header.push(format!("y_{i}"));
    }
    header.extend(
        ["priority", "powers", "degraded", "interference_energy", "truncated"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut csv = Csv {
        rows: vec![header],
    };
    for f in &trace.frames {
        let mut row = vec![
            hash.into(),
            seed.to_string(),
            f.index.to_string(),
            f.start_slot.to_string(),
            f.idle_slots.to_string(),
            f.busy_slots.to_string(),
            f.t_k().to_string(),
            fmt(f.x),
        ];
        row.extend(f.y.iter().map(|&y| fmt(y)));
        row.push(
            f.priority
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join("|"),
        );
        row.push(
            f.power_params
                .iter()
                .map(|&p| fmt(p))
                .collect::<Vec<_>>()
                .join("|"),
        );
        row.push(f.degraded.to_string());
        row.push(fmt(f.interference_energy));
        row.push(f.truncated.to_string());
        csv.push(row);
    }
    csv
}

fn slots_csv(trace: &SimTrace, hash: &str, seed: u64) -> Csv {
    let mut csv = Csv::new(&[
        "config", "seed", "slot", "su", "power", "gain", "interference_gain", "bits",
        "interference",
    ]);
    for r in &trace.slots {
        csv.push(vec![
            hash.into(),
            seed.to_string(),
            r.slot.to_string(),
            r.su.to_string(),
            fmt(r.power),
            fmt(r.gain),
            fmt(r.interference_gain),
            fmt(r.bits),
            fmt(r.interference),
        ]);
    }
    csv
}
