//! Experiment configuration: JSON ingestion, named presets, validation,
//! and the provenance hash carried on every output row.

use std::fmt;
use std::path::Path;

use crlab_core::numerics::Density1D;
use crlab_core::sched::{FleetConfig, SuProfile};
use crlab_core::stopping::ChannelEnsemble;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Invalid(Vec<String>),
    Run(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(msg) => write!(f, "io error: {msg}"),
            CliError::Parse(msg) => write!(f, "config parse error: {msg}"),
            CliError::Invalid(problems) => {
                write!(f, "invalid config: {}", problems.join("; "))
            }
            CliError::Run(msg) => write!(f, "run failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveOverlay,
    SolveUnderlay,
    SolveMultisu,
    PlanFrame,
    Simulate,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveOverlay => "solve-overlay",
            Mode::SolveUnderlay => "solve-underlay",
            Mode::SolveMultisu => "solve-multisu",
            Mode::PlanFrame => "plan-frame",
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
        }
    }
}

/// Gain law for a channel or a user link.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GainSpec {
    Exponential { mean: f64 },
    Gumbel { scale: f64 },
    PointMass { value: f64 },
}

impl GainSpec {
    pub fn density(&self) -> Density1D {
        match *self {
            GainSpec::Exponential { mean } => Density1D::exponential(mean),
            GainSpec::Gumbel { scale } => Density1D::gumbel(scale),
            GainSpec::PointMass { value } => Density1D::point_mass(value),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensingSpec {
    pub samples: u32,
    pub noise_power: f64,
    pub signal_energy: f64,
}

/// Channel ensemble plus the solver knobs of the stopping modes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleBlock {
    pub theta: Vec<f64>,
    pub tau_over_t: f64,
    pub gain: GainSpec,
    pub p_avg: f64,
    /// Expected-delay cap; omitted means unconstrained.
    pub d_max: Option<f64>,
    pub p_max: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Sense-k baseline size, when the comparison column is wanted.
    pub k: Option<usize>,
    /// Contending user count for solve-multisu.
    pub users: Option<u32>,
    /// Average interference budget for solve-underlay.
    pub i_avg: Option<f64>,
    pub sensing: Option<SensingSpec>,
}

fn default_grid() -> usize {
    24
}

impl EnsembleBlock {
    pub fn ensemble(&self) -> Result<ChannelEnsemble, CliError> {
        ChannelEnsemble::new(self.theta.clone(), self.tau_over_t, self.gain.density())
            .map_err(|e| CliError::Run(e.to_string()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuBlock {
    pub lambda: f64,
    pub d: f64,
    pub packet_bits: u32,
    pub gain: GainSpec,
    pub interference: GainSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Doic,
    Doac,
    Subopt,
    Csma,
}

impl PolicyName {
    pub fn name(self) -> &'static str {
        match self {
            PolicyName::Doic => "doic",
            PolicyName::Doac => "doac",
            PolicyName::Subopt => "subopt",
            PolicyName::Csma => "csma",
        }
    }
}

/// Uplink fleet plus the simulator knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FleetBlock {
    pub sus: Vec<SuBlock>,
    pub p_max: f64,
    pub i_inst: f64,
    pub i_avg: Option<f64>,
    pub r_max: Option<f64>,
    pub v: f64,
    pub epsilon: f64,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    pub csi_alpha: Option<f64>,
    /// Scale arrivals down to a carriable load before simulating.
    #[serde(default)]
    pub admission_control: bool,
    #[serde(default)]
    pub dump_frames: bool,
    #[serde(default)]
    pub dump_slots: bool,
}

fn default_policies() -> Vec<PolicyName> {
    vec![PolicyName::Doic]
}

fn default_horizon() -> u64 {
    1_000_000
}

impl FleetBlock {
    pub fn fleet(&self) -> FleetConfig {
        FleetConfig {
            sus: self
                .sus
                .iter()
                .map(|su| SuProfile {
                    lambda: su.lambda,
                    d: su.d,
                    packet_bits: su.packet_bits,
                    gain_density: su.gain.density(),
                    interference_density: su.interference.density(),
                })
                .collect(),
            p_max: self.p_max,
            i_inst: self.i_inst,
            i_avg: self.i_avg,
            r_max: self.r_max,
            v: self.v,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FrameBlock {
    pub packets: u32,
    pub slots: u32,
    pub assurance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepBlock {
    /// Underlying mode each sweep point runs.
    pub target: Mode,
    pub parameter: String,
    /// Empty list collapses to a single point at the base config.
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    /// Named preset whose blocks fill any the file leaves out.
    pub preset: Option<String>,
    pub ensemble: Option<EnsembleBlock>,
    pub fleet: Option<FleetBlock>,
    pub frame: Option<FrameBlock>,
    pub sweep: Option<SweepBlock>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub output_dir: String,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_out() -> String {
    "out".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: None,
            preset: None,
            ensemble: None,
            fleet: None,
            frame: None,
            sweep: None,
            seeds: default_seeds(),
            output_dir: default_out(),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))?;
    if let Some(name) = cfg.preset.clone() {
        apply_preset(&mut cfg, &name)?;
    }
    Ok(cfg)
}

/// Fill blocks the config leaves out from the named preset. Blocks given in
/// the file win.
pub fn apply_preset(cfg: &mut ExperimentConfig, name: &str) -> Result<(), CliError> {
    let preset = match name {
        "ch2-overlay" => ch2_overlay(),
        "ch3-table" => ch3_table(),
        other => {
            return Err(CliError::Invalid(vec![format!(
                "unknown preset `{other}` (available: ch2-overlay, ch3-table)"
            )]))
        }
    };
    if cfg.ensemble.is_none() {
        cfg.ensemble = preset.ensemble;
    }
    if cfg.fleet.is_none() {
        cfg.fleet = preset.fleet;
    }
    if cfg.frame.is_none() {
        cfg.frame = preset.frame;
    }
    if cfg.sweep.is_none() {
        cfg.sweep = preset.sweep;
    }
    cfg.preset = Some(name.to_string());
    Ok(())
}

/// Ten channels at availabilities 0.05..0.50, five-percent sensing cost,
/// unit-mean exponential gains, delay cap 1.02, sense-5 baseline, thirty
/// contending users, and the two-packets-in-four-slots frame goal.
fn ch2_overlay() -> ExperimentConfig {
    ExperimentConfig {
        ensemble: Some(EnsembleBlock {
            theta: (1..=10).map(|i| 0.05 * i as f64).collect(),
            tau_over_t: 0.05,
            gain: GainSpec::Exponential { mean: 1.0 },
            p_avg: 10.0,
            d_max: Some(1.02),
            p_max: None,
            grid: default_grid(),
            k: Some(5),
            users: Some(30),
            i_avg: None,
            sensing: None,
        }),
        frame: Some(FrameBlock {
            packets: 2,
            slots: 4,
            assurance: 0.95,
        }),
        sweep: Some(SweepBlock {
            target: Mode::SolveOverlay,
            parameter: "p_avg".into(),
            values: (1..=10).map(|p| p as f64).collect(),
        }),
        ..ExperimentConfig::default()
    }
}

/// Two-user uplink table: 1000-bit packets, rate cap 82, exponential gains
/// (2, 4) and interference gains (0.4, 0.2), instantaneous cap 50, power
/// cap 100, tradeoff weight 10, admission slack 0.1, estimation error 0.1,
/// deadlines 32 and 10^4 slots, arrival sweep 0.001..0.010.
fn ch3_table() -> ExperimentConfig {
    let su = |lambda, d, gain_mean, int_mean| SuBlock {
        lambda,
        d,
        packet_bits: 1000,
        gain: GainSpec::Exponential { mean: gain_mean },
        interference: GainSpec::Exponential { mean: int_mean },
    };
    ExperimentConfig {
        fleet: Some(FleetBlock {
            sus: vec![su(1e-3, 32.0, 2.0, 0.4), su(1e-3, 10_000.0, 4.0, 0.2)],
            p_max: 100.0,
            i_inst: 50.0,
            i_avg: None,
            r_max: Some(82.0),
            v: 10.0,
            epsilon: 0.1,
            policies: default_policies(),
            horizon: default_horizon(),
            csi_alpha: Some(0.1),
            admission_control: false,
            dump_frames: false,
            dump_slots: false,
        }),
        sweep: Some(SweepBlock {
            target: Mode::Simulate,
            parameter: "lambda".into(),
            values: (1..=10).map(|s| s as f64 * 1e-3).collect(),
        }),
        ..ExperimentConfig::default()
    }
}

/// Sweepable scalar parameters per target mode.
pub fn sweep_axes(target: Mode) -> &'static [&'static str] {
    match target {
        Mode::SolveOverlay => &["p_avg", "d_max", "tau_over_t"],
        Mode::SolveUnderlay => &["i_avg", "p_avg", "d_max"],
        Mode::SolveMultisu => &["p_avg", "d_max", "users"],
        Mode::PlanFrame => &["assurance"],
        Mode::Simulate => &["lambda", "horizon", "v", "epsilon", "csi_alpha", "i_avg"],
        Mode::Sweep => &[],
    }
}

/// Collects every violated invariant instead of stopping at the first.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let mode = match cfg.mode {
        Some(mode) => mode,
        None => {
            return Err(CliError::Invalid(vec![
                "mode missing: give a subcommand or a `mode` field".into()
            ]))
        }
    };
    if cfg.seeds.is_empty() {
        problems.push("seeds list is empty".into());
    }
    let needs_ensemble = |problems: &mut Vec<String>, what: &str| {
        if cfg.ensemble.is_none() {
            problems.push(format!("{what} requires an `ensemble` block"));
        }
    };
    let check_target = |problems: &mut Vec<String>, target: Mode| match target {
        Mode::SolveOverlay => needs_ensemble(problems, "solve-overlay"),
        Mode::SolveUnderlay => {
            needs_ensemble(problems, "solve-underlay");
            if let Some(ens) = &cfg.ensemble {
                if ens.sensing.is_none() {
                    problems.push("solve-underlay requires `ensemble.sensing`".into());
                }
                if ens.i_avg.is_none() {
                    problems.push("solve-underlay requires `ensemble.i_avg`".into());
                }
            }
        }
        Mode::SolveMultisu => {
            needs_ensemble(problems, "solve-multisu");
            if cfg.ensemble.as_ref().map_or(false, |e| e.users.is_none()) {
                problems.push("solve-multisu requires `ensemble.users`".into());
            }
        }
        Mode::PlanFrame => {
            if cfg.frame.is_none() {
                problems.push("plan-frame requires a `frame` block".into());
            }
        }
        Mode::Simulate => {
            if cfg.fleet.is_none() {
                problems.push("simulate requires a `fleet` block".into());
            } else if cfg.fleet.as_ref().map_or(false, |f| f.policies.is_empty()) {
                problems.push("fleet.policies is empty".into());
            }
        }
        Mode::Sweep => problems.push("sweep target cannot itself be sweep".into()),
    };
    match mode {
        Mode::Sweep => match &cfg.sweep {
            None => problems.push("sweep mode requires a `sweep` block".into()),
            Some(sweep) => {
                check_target(&mut problems, sweep.target);
                let axes = sweep_axes(sweep.target);
                if !axes.contains(&sweep.parameter.as_str()) {
                    problems.push(format!(
                        "sweep parameter `{}` not sweepable for {} (available: {})",
                        sweep.parameter,
                        sweep.target.name(),
                        axes.join(", ")
                    ));
                }
            }
        },
        other => check_target(&mut problems, other),
    }
    if let Some(ens) = &cfg.ensemble {
        if ens.theta.is_empty() {
            problems.push("ensemble.theta is empty".into());
        }
        if let Some(k) = ens.k {
            if k == 0 || k > ens.theta.len() {
                problems.push(format!(
                    "ensemble.k = {k} outside 1..={}",
                    ens.theta.len()
                ));
            }
        }
    }
    if let Some(frame) = &cfg.frame {
        if frame.packets == 0 || frame.packets > frame.slots {
            problems.push(format!(
                "frame needs 1 <= packets <= slots, got {}/{}",
                frame.packets, frame.slots
            ));
        }
        if !(frame.assurance > 0.0 && frame.assurance < 1.0) {
            problems.push(format!(
                "frame.assurance must sit in (0, 1), got {}",
                frame.assurance
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(problems))
    }
}

/// FNV-1a over the canonical serialization; every output row carries it.
/// The output path is excluded: where the CSVs land is not provenance.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut hashed = cfg.clone();
    hashed.output_dir = String::new();
    let bytes = serde_json::to_vec(&hashed).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
