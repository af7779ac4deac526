//! Slot-level uplink simulator.
//!
//! Drives a fleet of secondary users through `horizon` slots under one of the
//! frame-based schedulers. Each slot: arrivals land, the scheduler picks the
//! highest-priority backlogged user (or a uniform pick under, CSMA), the slot
//! power respects the instantaneous interference cap through the estimated
//! gain, and the head-of-line packet absorbs `min(rate, remaining)` bits.
//!
//! Frames follow the idle/busy alternation: a frame is a maximal idle run
//! followed by a maximal busy run, and a frame closes only once a fully empty
//! slot shows up after its busy run. An arrival landing on the slot right
//! after the queues drain therefore extends the same busy run; the virtual
//! queues settle and the next plan is drawn at the close. The first frame
//! starts at slot 1 (its idle run may be empty); the trailing frame is cut at
//! the horizon and recorded as truncated without settling the virtual queues.
//!
//! Every random quantity draws from its own counter-based stream keyed by
//! (user, quantity) with the slot index as the step, so traces are
//! reproducible bit for bit and policies can share common random numbers.

use std::collections::VecDeque;

use crate::rng::{Quantity, Stream};
use crate::sched::{
    csi_adjust, doac_pow_alloc, doic_frame_setup, effective_rate, slot_power, sort_descending,
    subopt_frame_setup, update_virtual_queues, FleetConfig, FramePlanState, FrameTrace,
    QueueingConstants, SchedError, VirtualQueueState,
};

/// Which scheduler plans the frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// Delay-optimal under the instantaneous cap only: rate-weighted delay
    /// sort, everyone at full power.
    Doic,
    /// Delay-optimal under both caps: subset-table order and power search.
    Doac,
    /// Threshold heuristic: bang-bang powers, then the rate-weighted sort.
    Subopt,
    /// Random pick among backlogged users each slot; powers and virtual
    /// queues still follow the Doac plan so only the order degrades.
    Csma,
}

/// Per-user mutable state while the simulator runs.
///
/// `queue` holds arrival slots in FIFO order; `hol_remaining` is the bit
/// residue of the head packet (reset to the packet size whenever a fresh
/// packet reaches the head). `completed` collects (arrival, completion)
/// slot pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SuRuntime {
    pub queue: VecDeque<u64>,
    pub hol_remaining: f64,
    pub completed: Vec<(u64, u64)>,
    pub arrivals: u64,
    packet_bits: f64,
}

impl SuRuntime {
    fn new(packet_bits: u32) -> Self {
        SuRuntime {
            queue: VecDeque::new(),
            hol_remaining: 0.0,
            completed: Vec::new(),
            arrivals: 0,
            packet_bits: f64::from(packet_bits),
        }
    }

    fn push_arrival(&mut self, slot: u64) {
        if self.queue.is_empty() {
            self.hol_remaining = self.packet_bits;
        }
        self.queue.push_back(slot);
        self.arrivals += 1;
    }

    /// Sends `rate` bits against the head packet. Returns the bits actually
    /// delivered and the inclusive wait if the packet completed.
    fn serve(&mut self, slot: u64, rate: f64) -> (f64, Option<f64>) {
        let sent = rate.min(self.hol_remaining);
        self.hol_remaining -= sent;
        if self.hol_remaining <= 0.0 {
            let arrived = self.queue.pop_front().expect("served an empty queue");
            self.completed.push((arrived, slot));
            if !self.queue.is_empty() {
                self.hol_remaining = self.packet_bits;
            } else {
                self.hol_remaining = 0.0;
            }
            return (sent, Some((slot - arrived + 1) as f64));
        }
        (sent, None)
    }
}

/// One transmission. Idle slots carry no record.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub su: usize,
    /// Transmit power after the instantaneous-cap clamp.
    pub power: f64,
    /// Realized direct-channel gain.
    pub gain: f64,
    /// Realized interference-channel gain.
    pub interference_gain: f64,
    /// Bits delivered to the head packet this slot.
    pub bits: f64,
    /// Power times the true interference gain.
    pub interference: f64,
}

/// One frame: bookkeeping snapshot taken when the frame opened plus the
/// counts accumulated until it closed (or was truncated at the horizon).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub start_slot: u64,
    pub idle_slots: u64,
    pub busy_slots: u64,
    /// Virtual delay queues as seen by the planner for this frame.
    pub y: Vec<f64>,
    /// Virtual interference queue as seen by the planner.
    pub x: f64,
    pub priority: Vec<usize>,
    pub power_params: Vec<f64>,
    /// True when the power allocation fell back to the global minimum
    /// because every ordering saturated.
    pub degraded: bool,
    /// Sum of power times true interference gain over the frame's slots.
    pub interference_energy: f64,
    /// True for the final frame when the horizon cut it short; its virtual
    /// queues were never settled.
    pub truncated: bool,
}

impl FrameRecord {
    pub fn t_k(&self) -> u64 {
        self.idle_slots + self.busy_slots
    }
}

/// Per-user tallies over the whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct SuSummary {
    pub arrivals: u64,
    pub completed: u64,
    /// Packets still queued (head included) when the horizon hit.
    pub in_flight: u64,
    pub bits_delivered: f64,
    pub served_slots: u64,
    /// Sum of inclusive waits over completed packets.
    pub sum_wait: f64,
}

/// Everything a run produces. Two traces from the same inputs compare equal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub policy: PolicyKind,
    pub horizon: u64,
    pub seed: u64,
    pub csi_alpha: Option<f64>,
    pub slots: Vec<SlotRecord>,
    pub frames: Vec<FrameRecord>,
    pub runtimes: Vec<SuRuntime>,
    pub per_su: Vec<SuSummary>,
    /// Virtual queues after the last settled frame.
    pub final_state: VirtualQueueState,
    pub degraded_frames: u64,
}

/// Delay measurements over completed packets.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayStats {
    /// Mean inclusive wait per user, completed packets only.
    pub mean_wait: Vec<f64>,
    pub completed: Vec<u64>,
    /// Residual packets per user, excluded from the means.
    pub in_flight: Vec<u64>,
}

/// Time-average virtual-queue growth rates.
#[derive(Clone, Debug, PartialEq)]
pub struct RateDiagnostic {
    pub y_over_k: Vec<f64>,
    pub x_over_k: f64,
    /// Number of settled frames the averages run over.
    pub frames: u64,
}

struct FrameBuilder {
    index: u64,
    start_slot: u64,
    idle: u64,
    busy: u64,
    energy: f64,
    waits: Vec<Vec<f64>>,
    y: Vec<f64>,
    x: f64,
    priority: Vec<usize>,
    power_params: Vec<f64>,
    degraded: bool,
}

impl FrameBuilder {
    fn open(
        index: u64,
        start_slot: u64,
        state: &VirtualQueueState,
        plan: &FramePlanState,
        degraded: bool,
    ) -> Self {
        FrameBuilder {
            index,
            start_slot,
            idle: 0,
            busy: 0,
            energy: 0.0,
            waits: vec![Vec::new(); state.y.len()],
            y: state.y.clone(),
            x: state.x,
            priority: plan.priority.clone(),
            power_params: plan.power_params.clone(),
            degraded,
        }
    }

    /// Splits into the public record and, for settled frames, the trace the
    /// virtual-queue update consumes.
    fn close(self, truncated: bool) -> (FrameRecord, Option<FrameTrace>) {
        let trace = if truncated {
            None
        } else {
            Some(FrameTrace {
                waits: self.waits,
                interference_energy: self.energy,
                t_k: self.idle + self.busy,
            })
        };
        let record = FrameRecord {
            index: self.index,
            start_slot: self.start_slot,
            idle_slots: self.idle,
            busy_slots: self.busy,
            y: self.y,
            x: self.x,
            priority: self.priority,
            power_params: self.power_params,
            degraded: self.degraded,
            interference_energy: self.energy,
            truncated,
        };
        (record, trace)
    }
}

/// Plans the next frame for `policy`. When the subset-table allocation finds
/// every ordering saturated it falls back to running everyone at the global
/// minimum power, sorted by rate-weighted delay debt at that power; the
/// second return flags that degraded frame.
fn plan_frame(
    policy: PolicyKind,
    consts: &QueueingConstants,
    state: &VirtualQueueState,
) -> Result<(FramePlanState, bool), SchedError> {
    match policy {
        PolicyKind::Doic => Ok((doic_frame_setup(consts, state), false)),
        PolicyKind::Subopt => Ok((subopt_frame_setup(consts, state)?, false)),
        PolicyKind::Doac | PolicyKind::Csma => match doac_pow_alloc(consts, state) {
            Ok(plan) => Ok((plan, false)),
            Err(SchedError::Saturated { .. }) => {
                let p_min = consts.p_min_global()?;
                let keys: Vec<f64> = (0..consts.n())
                    .map(|i| state.y[i] * consts.mu(i, p_min))
                    .collect();
                Ok((
                    FramePlanState {
                        priority: sort_descending(&keys),
                        power_params: vec![p_min; consts.n()],
                    },
                    true,
                ))
            }
            Err(e) => Err(e),
        },
    }
}

/// Runs the slot loop for `horizon` slots.
///
/// Arrivals are Bernoulli per user per slot and land at the slot start, so a
/// packet can be served in its arrival slot. Gains are drawn fresh each
/// transmission. With `csi_alpha = Some(a)` the scheduler sees relative
/// estimation errors of width `a` pushed to their conservative edges, so the
/// true interference never exceeds the instantaneous cap.
///
/// Unstable fleets run fine under `Doic`; the other policies need the
/// minimum-power structure and report `InfeasibleLoad` up front.
pub fn run_sim(
    fleet: &FleetConfig,
    policy: PolicyKind,
    horizon: u64,
    seed: u64,
    csi_alpha: Option<f64>,
) -> Result<SimTrace, SchedError> {
    if horizon == 0 {
        return Err(SchedError::BadInput("horizon must be at least 1".into()));
    }
    if let Some(a) = csi_alpha {
        if !a.is_finite() || !(0.0..2.0).contains(&a) {
            return Err(SchedError::BadInput(format!(
                "csi_alpha must sit in [0, 2), got {a}"
            )));
        }
    }
    let consts = QueueingConstants::build(fleet)?;
    if policy != PolicyKind::Doic {
        consts.p_min_global()?;
    }
    let n = consts.n();

    let stream = |q: Quantity| -> Vec<Stream> {
        (0..n).map(|i| Stream::new(seed, i as u32, q)).collect()
    };
    let arrival = stream(Quantity::Arrival);
    let gain = stream(Quantity::Gain);
    let igain = stream(Quantity::InterferenceGain);
    let gain_err = stream(Quantity::GainError);
    let igain_err = stream(Quantity::InterferenceGainError);
    let scheduler = Stream::new(seed, n as u32, Quantity::Scheduler);

    let mut runtimes: Vec<SuRuntime> = fleet
        .sus
        .iter()
        .map(|su| SuRuntime::new(su.packet_bits))
        .collect();
    let mut state = VirtualQueueState::new(n);
    let mut degraded_frames = 0u64;
    let (mut plan, mut degraded) = plan_frame(policy, &consts, &state)?;
    if degraded {
        degraded_frames += 1;
    }

    let mut slots: Vec<SlotRecord> = Vec::new();
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut fb = FrameBuilder::open(0, 1, &state, &plan, degraded);

    for t in 1..=horizon {
        for i in 0..n {
            if arrival[i].bernoulli(t, fleet.sus[i].lambda) {
                runtimes[i].push_arrival(t);
            }
        }
        let any_backlog = runtimes.iter().any(|r| !r.queue.is_empty());
        if !any_backlog {
            if fb.busy > 0 {
                // The busy run ended at t-1: settle the frame and replan.
                let (record, trace) = fb.close(false);
                let trace = trace.expect("settled frame without a trace");
                state = update_virtual_queues(fleet, &state, &trace)?;
                frames.push(record);
                let (next_plan, next_degraded) = plan_frame(policy, &consts, &state)?;
                plan = next_plan;
                degraded = next_degraded;
                if degraded {
                    degraded_frames += 1;
                }
                fb = FrameBuilder::open(frames.len() as u64, t, &state, &plan, degraded);
            }
            fb.idle += 1;
            continue;
        }
        fb.busy += 1;

        let su = match policy {
            PolicyKind::Csma => {
                let backlogged: Vec<usize> =
                    (0..n).filter(|&i| !runtimes[i].queue.is_empty()).collect();
                let u = scheduler.uniform(t);
                let pick = ((u * backlogged.len() as f64) as usize).min(backlogged.len() - 1);
                backlogged[pick]
            }
            _ => *plan
                .priority
                .iter()
                .find(|&&i| !runtimes[i].queue.is_empty())
                .expect("backlogged slot with no candidate"),
        };

        let gamma = fleet.sus[su].gain_density.sample(gain[su].uniform(t))?;
        let g = fleet.sus[su]
            .interference_density
            .sample(igain[su].uniform(t))?;
        let (gamma_hat, g_hat) = match csi_alpha {
            None => (gamma, g),
            Some(a) => {
                let gamma_est = gamma * (1.0 + a * (gain_err[su].uniform(t) - 0.5));
                let g_est = g * (1.0 + a * (igain_err[su].uniform(t) - 0.5));
                csi_adjust(gamma_est, g_est, a)?
            }
        };

        let p_param = plan.power_params[su];
        let power = slot_power(p_param, g_hat, fleet.i_inst);
        let rate = effective_rate(p_param, g_hat, gamma_hat, fleet.i_inst, fleet.r_max);
        let (bits, wait) = runtimes[su].serve(t, rate);
        if let Some(w) = wait {
            fb.waits[su].push(w);
        }
        let interference = power * g;
        fb.energy += interference;
        slots.push(SlotRecord {
            slot: t,
            su,
            power,
            gain: gamma,
            interference_gain: g,
            bits,
            interference,
        });
    }
    let (record, _) = fb.close(true);
    frames.push(record);

    let mut per_su: Vec<SuSummary> = runtimes
        .iter()
        .map(|r| SuSummary {
            arrivals: r.arrivals,
            completed: r.completed.len() as u64,
            in_flight: r.queue.len() as u64,
            bits_delivered: 0.0,
            served_slots: 0,
            sum_wait: r
                .completed
                .iter()
                .map(|&(a, c)| (c - a + 1) as f64)
                .sum(),
        })
        .collect();
    for rec in &slots {
        per_su[rec.su].bits_delivered += rec.bits;
        per_su[rec.su].served_slots += 1;
    }

    Ok(SimTrace {
        policy,
        horizon,
        seed,
        csi_alpha,
        slots,
        frames,
        runtimes,
        per_su,
        final_state: state,
        degraded_frames,
    })
}

/// Mean inclusive waits over packets that completed within the horizon.
/// Packets still in flight are counted but excluded from the means. Errors
/// when any user finished nothing, naming the user.
pub fn measure_delays(trace: &SimTrace) -> Result<DelayStats, SchedError> {
    let mut mean_wait = Vec::with_capacity(trace.runtimes.len());
    let mut completed = Vec::with_capacity(trace.runtimes.len());
    let mut in_flight = Vec::with_capacity(trace.runtimes.len());
    for (i, (rt, sum)) in trace.runtimes.iter().zip(&trace.per_su).enumerate() {
        if rt.completed.is_empty() {
            return Err(SchedError::BadInput(format!(
                "user {i} completed no packets within the horizon"
            )));
        }
        mean_wait.push(sum.sum_wait / rt.completed.len() as f64);
        completed.push(rt.completed.len() as u64);
        in_flight.push(rt.queue.len() as u64);
    }
    Ok(DelayStats {
        mean_wait,
        completed,
        in_flight,
    })
}

/// Time-average interference at the primary receiver: the sum of power times
/// true interference gain over every slot (idle slots contribute zero),
/// divided by the horizon.
pub fn measure_interference(trace: &SimTrace) -> f64 {
    let total: f64 = trace.slots.iter().map(|r| r.interference).sum();
    total / trace.horizon as f64
}

/// Virtual-queue levels divided by the number of settled frames. Vanishing
/// ratios certify the long-run delay credits and the average-interference
/// budget; ratios bounded away from zero expose an infeasible target.
/// Needs at least 100 settled frames.
pub fn mean_rate_diagnostic(trace: &SimTrace) -> Result<RateDiagnostic, SchedError> {
    let k = trace.final_state.frame_index;
    if k < 100 {
        return Err(SchedError::BadInput(format!(
            "need at least 100 settled frames for rate diagnostics, have {k}"
        )));
    }
    let kf = k as f64;
    Ok(RateDiagnostic {
        y_over_k: trace.final_state.y.iter().map(|y| y / kf).collect(),
        x_over_k: trace.final_state.x / kf,
        frames: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Density1D;
    use crate::sched::SuProfile;

    fn point_fleet(lambda: f64, packet_bits: u32, d: f64) -> FleetConfig {
        FleetConfig {
            sus: vec![SuProfile {
                lambda,
                d,
                packet_bits,
                gain_density: Density1D::point_mass(7.0),
                interference_density: Density1D::point_mass(0.0),
            }],
            p_max: 1.0,
            i_inst: 50.0,
            i_avg: None,
            r_max: None,
            v: 10.0,
            epsilon: 0.1,
        }
    }

    fn table_fleet(lambda: f64) -> FleetConfig {
        FleetConfig {
            sus: vec![
                SuProfile {
                    lambda,
                    d: 32.0,
                    packet_bits: 1000,
                    gain_density: Density1D::exponential(2.0),
                    interference_density: Density1D::exponential(0.4),
                },
                SuProfile {
                    lambda,
                    d: 10_000.0,
                    packet_bits: 1000,
                    gain_density: Density1D::exponential(4.0),
                    interference_density: Density1D::exponential(0.2),
                },
            ],
            p_max: 100.0,
            i_inst: 50.0,
            i_avg: None,
            r_max: Some(82.0),
            v: 10.0,
            epsilon: 0.1,
        }
    }

    #[test]
    fn quiet_horizon_is_one_truncated_idle_frame() {
        let fleet = point_fleet(1e-12, 10, 0.0);
        let trace = run_sim(&fleet, PolicyKind::Doic, 500, 3, None).unwrap();
        assert!(trace.slots.is_empty());
        assert_eq!(trace.frames.len(), 1);
        let f = &trace.frames[0];
        assert!(f.truncated);
        assert_eq!(f.idle_slots, 500);
        assert_eq!(f.busy_slots, 0);
        assert_eq!(trace.final_state.frame_index, 0);
        assert_eq!(measure_interference(&trace), 0.0);
        assert!(measure_delays(&trace).is_err());
        assert_eq!(trace.per_su[0].arrivals, 0);
    }

    // Rate 3 per slot against 3-bit packets: every packet finishes in its
    // arrival slot, so waits are exactly one and nothing ever queues.
    #[test]
    fn single_slot_packets_have_unit_waits() {
        let fleet = point_fleet(0.5, 3, 0.0);
        let trace = run_sim(&fleet, PolicyKind::Doic, 20_000, 7, None).unwrap();
        let delays = measure_delays(&trace).unwrap();
        assert_eq!(delays.mean_wait[0], 1.0);
        assert_eq!(delays.in_flight[0], 0);
        assert_eq!(trace.per_su[0].arrivals, trace.per_su[0].completed);
        assert!(trace.per_su[0].arrivals > 9_000);
        for rec in &trace.slots {
            assert_eq!(rec.bits, 3.0);
        }
    }

    // Fixed-rate service, four slots per packet. The pre-arrival workload
    // V(t+1) = max(V(t) + 4 B(t) - 1, 0) is a small Markov chain; an
    // arriving packet waits its own four slots plus the workload it sees.
    #[test]
    fn deterministic_service_matches_the_workload_chain() {
        let lambda = 0.1;
        let service = 4u64;
        let cap = 400usize;
        let mut pi = vec![0.0f64; cap + 1];
        pi[0] = 1.0;
        loop {
            let mut next = vec![0.0f64; cap + 1];
            for (v, &mass) in pi.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let with = (v + service as usize - 1).min(cap);
                next[with] += mass * lambda;
                let without = v.saturating_sub(1);
                next[without] += mass * (1.0 - lambda);
            }
            let diff: f64 = pi
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if diff < 1e-14 {
                break;
            }
        }
        let expected: f64 = pi
            .iter()
            .enumerate()
            .map(|(v, &mass)| mass * (v as f64 + service as f64))
            .sum();

        let fleet = point_fleet(lambda, 10, 0.0);
        let trace = run_sim(&fleet, PolicyKind::Doic, 300_000, 11, None).unwrap();
        let delays = measure_delays(&trace).unwrap();
        let rel = (delays.mean_wait[0] - expected).abs() / expected;
        assert!(
            rel < 0.02,
            "simulated {} vs chain {expected} (rel {rel:.4})",
            delays.mean_wait[0]
        );

        // Bit conservation: everything sent is either a completed packet or
        // the head deficit.
        let sent: f64 = trace.slots.iter().map(|r| r.bits).sum();
        let rt = &trace.runtimes[0];
        let head_deficit = if rt.queue.is_empty() {
            0.0
        } else {
            10.0 - rt.hol_remaining
        };
        let accounted = 10.0 * rt.completed.len() as f64 + head_deficit;
        assert!((sent - accounted).abs() < 1e-6);
    }

    #[test]
    fn frames_partition_the_horizon() {
        let fleet = table_fleet(0.002);
        let horizon = 120_000;
        let trace = run_sim(&fleet, PolicyKind::Doic, horizon, 21, None).unwrap();
        let total: u64 = trace.frames.iter().map(|f| f.t_k()).sum();
        assert_eq!(total, horizon);

        let last = trace.frames.len() - 1;
        let mut expected_start = 1;
        for (k, f) in trace.frames.iter().enumerate() {
            assert_eq!(f.index, k as u64);
            assert_eq!(f.start_slot, expected_start);
            expected_start += f.t_k();
            assert_eq!(f.truncated, k == last);
            if !f.truncated {
                assert!(f.busy_slots >= 1, "settled frame {k} has an empty busy run");
            }
            if k > 0 {
                assert!(f.idle_slots >= 1, "interior frame {k} has no idle run");
            }
        }
        assert_eq!(trace.final_state.frame_index, last as u64);
        let flagged = trace.frames.iter().filter(|f| f.degraded).count() as u64;
        assert_eq!(flagged, trace.degraded_frames);
        assert!(trace.final_state.frame_index > 50);
    }

    // Replays the run from the same streams and the recorded plans: queue
    // recursion, work conservation in both directions, rate recomputation,
    // and the instantaneous cap on every slot.
    #[test]
    fn slot_records_replay_the_queue_recursion() {
        let mut fleet = table_fleet(0.002);
        fleet.i_avg = Some(2.0);
        let horizon = 100_000u64;
        let seed = 31;
        let trace = run_sim(&fleet, PolicyKind::Doac, horizon, seed, None).unwrap();

        let n = fleet.sus.len();
        let arrival: Vec<Stream> = (0..n)
            .map(|i| Stream::new(seed, i as u32, Quantity::Arrival))
            .collect();
        let mut queues: Vec<VecDeque<u64>> = vec![VecDeque::new(); n];
        let mut hol: Vec<f64> = vec![0.0; n];
        let mut completed = vec![0u64; n];
        let mut sent_total = 0.0f64;
        let mut rec_iter = trace.slots.iter().peekable();
        let mut frame_iter = trace.frames.iter();
        let mut frame = frame_iter.next().unwrap();
        for t in 1..=horizon {
            while t >= frame.start_slot + frame.t_k() {
                frame = frame_iter.next().unwrap();
            }
            for i in 0..n {
                if arrival[i].bernoulli(t, fleet.sus[i].lambda) {
                    if queues[i].is_empty() {
                        hol[i] = f64::from(fleet.sus[i].packet_bits);
                    }
                    queues[i].push_back(t);
                }
            }
            let backlog = queues.iter().any(|q| !q.is_empty());
            let rec = rec_iter.peek().filter(|r| r.slot == t);
            assert_eq!(
                backlog,
                rec.is_some(),
                "work conservation broke at slot {t}"
            );
            let Some(&rec) = rec else { continue };
            rec_iter.next();
            assert!(!queues[rec.su].is_empty());
            let p_param = frame.power_params[rec.su];
            let rate = effective_rate(
                p_param,
                rec.interference_gain,
                rec.gain,
                fleet.i_inst,
                fleet.r_max,
            );
            let expect_bits = rate.min(hol[rec.su]);
            assert_eq!(rec.bits, expect_bits, "bits diverged at slot {t}");
            assert_eq!(
                rec.power,
                slot_power(p_param, rec.interference_gain, fleet.i_inst)
            );
            assert!(rec.power * rec.interference_gain <= fleet.i_inst * (1.0 + 1e-12));
            hol[rec.su] -= expect_bits;
            sent_total += expect_bits;
            if hol[rec.su] <= 0.0 {
                queues[rec.su].pop_front();
                completed[rec.su] += 1;
                if !queues[rec.su].is_empty() {
                    hol[rec.su] = f64::from(fleet.sus[rec.su].packet_bits);
                }
            }
        }
        for i in 0..n {
            assert_eq!(completed[i], trace.per_su[i].completed);
            assert_eq!(queues[i].len(), trace.runtimes[i].queue.len());
        }
        let recorded: f64 = trace.slots.iter().map(|r| r.bits).sum();
        assert_eq!(sent_total, recorded);

        // Frame energies add up to the slot-level interference.
        let frame_energy: f64 = trace.frames.iter().map(|f| f.interference_energy).sum();
        let slot_energy: f64 = trace.slots.iter().map(|r| r.interference).sum();
        assert!((frame_energy - slot_energy).abs() <= 1e-9 * slot_energy.max(1.0));
    }

    #[test]
    fn seeds_pin_the_whole_trace() {
        let fleet = table_fleet(0.0025);
        let a = run_sim(&fleet, PolicyKind::Doac, 20_000, 17, None).unwrap();
        let b = run_sim(&fleet, PolicyKind::Doac, 20_000, 17, None).unwrap();
        assert_eq!(a, b);
        let c = run_sim(&fleet, PolicyKind::Doac, 20_000, 18, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csma_draws_any_backlogged_user() {
        let fleet = table_fleet(0.0025);
        let trace = run_sim(&fleet, PolicyKind::Csma, 60_000, 41, None).unwrap();
        let served: Vec<u64> = trace.per_su.iter().map(|s| s.served_slots).collect();
        assert!(served[0] > 0 && served[1] > 0);
        for rec in &trace.slots {
            assert!(rec.power * rec.interference_gain <= fleet.i_inst * (1.0 + 1e-12));
        }
    }

    // Estimation errors pushed to their conservative edges: the true
    // interference still respects the cap, and the scheduled rate never
    // exceeds what the true channel would carry.
    #[test]
    fn conservative_estimates_never_break_the_cap() {
        let fleet = table_fleet(0.002);
        let trace = run_sim(&fleet, PolicyKind::Doac, 60_000, 43, Some(0.1)).unwrap();
        let mut frame_iter = trace.frames.iter();
        let mut frame = frame_iter.next().unwrap();
        for rec in &trace.slots {
            while rec.slot >= frame.start_slot + frame.t_k() {
                frame = frame_iter.next().unwrap();
            }
            assert!(rec.interference <= fleet.i_inst * (1.0 + 1e-12));
            let true_rate = effective_rate(
                frame.power_params[rec.su],
                rec.interference_gain,
                rec.gain,
                fleet.i_inst,
                fleet.r_max,
            );
            assert!(rec.bits <= true_rate + 1e-12);
        }
        assert!(run_sim(&fleet, PolicyKind::Doac, 100, 1, Some(2.0)).is_err());
    }

    // A half-slot deadline credit is unearnable (waits are at least one), so
    // the delay queue grows linearly in the frame count.
    #[test]
    fn unmet_deadline_targets_inflate_the_delay_queue() {
        let mut fleet = point_fleet(0.1, 10, 0.5);
        fleet.v = 0.1;
        let trace = run_sim(&fleet, PolicyKind::Doic, 30_000, 47, None).unwrap();
        let diag = mean_rate_diagnostic(&trace).unwrap();
        assert!(diag.frames >= 100);
        assert!(
            diag.y_over_k[0] > 0.1,
            "delay queue should grow, got {}",
            diag.y_over_k[0]
        );
        assert_eq!(diag.x_over_k, 0.0);
    }

    #[test]
    fn silent_users_fail_the_delay_measurement() {
        let mut fleet = table_fleet(0.002);
        fleet.sus[1].lambda = 1e-9;
        let trace = run_sim(&fleet, PolicyKind::Doic, 5_000, 53, None).unwrap();
        let err = measure_delays(&trace).unwrap_err();
        assert!(err.to_string().contains("user 1"));
    }
}
