use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// The three parties of the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Alice,
    Bob,
    Eve,
}

impl NodeId {
    pub fn index(self) -> usize {
        match self {
            NodeId::Alice => 0,
            NodeId::Bob => 1,
            NodeId::Eve => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeId::Alice => "alice",
            NodeId::Bob => "bob",
            NodeId::Eve => "eve",
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Rtt,
    Climex,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Rtt => "rtt",
            Protocol::Climex => "climex",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One collector's vector of round-trip times.
///
/// Measurement `i` belongs to relative time `i * interval_s` after `timestamp`.
/// `delta` is the collector's own transmit dither and is only present for
/// CLIMEX epochs recorded by the node that sent the pings.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEpoch {
    pub timestamp: f64,
    pub interval_s: f64,
    pub values: Vec<f64>,
    pub collector: NodeId,
    pub protocol: Protocol,
    pub delta: Option<Vec<f64>>,
}

impl MeasurementEpoch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Measurement times relative to the epoch start.
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| i as f64 * self.interval_s).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(invalid("an epoch needs at least two measurements"));
        }
        if !(self.interval_s > 0.0 && self.interval_s.is_finite()) {
            return Err(invalid("epoch interval must be positive"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("epoch values must be finite"));
        }
        if let Some(d) = &self.delta {
            if d.len() != self.values.len() {
                return Err(invalid("dither record length differs from the epoch"));
            }
        }
        Ok(())
    }
}

/// Independent random streams derived from one scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Jitter and channel noise of the epoch initiated by the node.
    Noise(NodeId),
    /// Transmit dither of the epoch initiated by the node.
    Dither(NodeId),
    /// Eve's timestamping noise on the exchange she overhears.
    Listener,
    /// Eve's noise when timing arrivals against her own clock edges.
    ListenerClock,
    /// Injection timing.
    Injection,
    /// Scenario setup, such as clock phases left to chance.
    Setup,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Noise(n) => 2 * n.index() as u64,
            Stream::Dither(n) => 2 * n.index() as u64 + 1,
            Stream::Listener => 16,
            Stream::Injection => 17,
            Stream::ListenerClock => 18,
            Stream::Setup => 19,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
