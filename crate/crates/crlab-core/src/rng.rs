//! Counter-based random streams for the simulators.
//!
//! Every stochastic quantity draws from its own stream keyed by
//! `(seed, entity, quantity)`, and each draw is a pure function of
//! `(stream, step)`. Consequences:
//!
//! * policy decisions cannot perturb the randomness (a draw is indexed by
//!   slot number, not by how many draws happened before it), so two policies
//!   run against the same seed see identical channels and arrivals — exact
//!   common-random-numbers comparisons;
//! * adding an entity leaves every other entity's draws untouched;
//! * runs are bit-reproducible across thread counts.

/// What a stream feeds. One stream per (entity, quantity).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    /// Packet arrival coin flips.
    Arrival,
    /// Direct channel gain.
    Gain,
    /// Interference channel gain.
    InterferenceGain,
    /// Multiplicative estimation error on the direct gain.
    GainError,
    /// Multiplicative estimation error on the interference gain.
    InterferenceGainError,
    /// Channel busy/free indicator.
    Occupancy,
    /// Sensing statistic.
    SensingStat,
    /// Scheduler-internal draws (random tie breaks, CSMA selection).
    Scheduler,
}

impl Quantity {
    fn tag(self) -> u64 {
        match self {
            Quantity::Arrival => 1,
            Quantity::Gain => 2,
            Quantity::InterferenceGain => 3,
            Quantity::GainError => 4,
            Quantity::InterferenceGainError => 5,
            Quantity::Occupancy => 6,
            Quantity::SensingStat => 7,
            Quantity::Scheduler => 8,
        }
    }
}

/// splitmix64 finalizer; bijective on u64.
#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    z
}

#[derive(Clone, Copy, Debug)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64, entity: u32, quantity: Quantity) -> Stream {
        let id = (entity as u64) << 8 | quantity.tag();
        let key = mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0x2545_f491_4f6c_dd1d) ^ mix(id));
        Stream { key }
    }

    #[inline]
    pub fn bits(&self, step: u64) -> u64 {
        mix(self.key ^ mix(step.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&self, step: u64) -> f64 {
        (self.bits(step) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_in(&self, step: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform(step)
    }

    #[inline]
    pub fn bernoulli(&self, step: u64, p: f64) -> bool {
        self.uniform(step) < p
    }

    /// Exponential with the given mean.
    #[inline]
    pub fn exponential(&self, step: u64, mean: f64) -> f64 {
        -mean * (1.0 - self.uniform(step)).ln()
    }
}
