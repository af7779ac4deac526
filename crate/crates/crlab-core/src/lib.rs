//! Link-layer laboratory for cognitive-radio uplinks.
//!
//! Three problem families share this crate:
//!
//! * sequential channel probing with an optimal stopping rule, power control
//!   and delay/interference duals (`stopping`),
//! * deadline-aware frame planning that maps a K-packets-in-t_f-slots QoS
//!   target onto per-slot success probabilities (`deadline`),
//! * frame-based uplink scheduling with virtual delay/interference queues and
//!   per-frame priority/power optimization, plus the slot-level simulator
//!   that exercises those policies (`sched`, `sim`).
//!
//! `numerics` holds the shared scalar kernels (Lambert W, bisection, adaptive
//! quadrature over one-dimensional densities, monotone interpolation) and
//! `rng` the counter-based random streams used by every simulator so that
//! runs are reproducible and policy-independent.

pub mod deadline;
pub mod numerics;
pub mod rng;
pub mod sched;
pub mod sim;
pub mod stopping;
