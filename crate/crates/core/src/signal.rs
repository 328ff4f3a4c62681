//! Closed-form RTT and CLIMEX measurement models.
//!
//! All moduli are the non-negative (Euclidean) modulus. Measurement times are
//! relative to the epoch start, and the phase is the sawtooth phase there.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::epoch::{stream_rng, MeasurementEpoch, NodeId, Protocol, Stream};
use crate::error::{ensure_finite, invalid, Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Non-negative modulus with the result guaranteed to lie in `[0, m)`.
#[inline]
pub fn modulo(x: f64, m: f64) -> f64 {
    let r = x.rem_euclid(m);
    // rem_euclid rounds tiny negative inputs up to exactly m
    if r >= m {
        0.0
    } else {
        r
    }
}

/// Fractional part in `[0, 1)`.
#[inline]
pub fn frac(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A node oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockParams {
    pub f_nominal: f64,
    pub delta_f: f64,
    pub sigma_j: f64,
}

impl ClockParams {
    pub fn new(f_nominal: f64, delta_f: f64, sigma_j: f64) -> Result<Self> {
        let c = ClockParams { f_nominal, delta_f, sigma_j };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("f_nominal", self.f_nominal)?;
        ensure_finite("delta_f", self.delta_f)?;
        ensure_finite("sigma_j", self.sigma_j)?;
        if self.f_nominal <= 0.0 || self.frequency() <= 0.0 {
            return Err(invalid("clock frequency must be positive"));
        }
        if self.sigma_j < 0.0 {
            return Err(invalid("sigma_j must be non-negative"));
        }
        Ok(())
    }

    pub fn frequency(&self) -> f64 {
        self.f_nominal + self.delta_f
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency()
    }
}

/// Two-source Gaussian noise: clock-edge jitter and channel noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseParams {
    pub sigma_j: f64,
    pub sigma_c: f64,
}

/// Noise realisation for one epoch.
///
/// `inner` is the noise inside the modulus (initiator jitter, forward channel,
/// responder jitter) and `outer` is added to the measurement (responder jitter,
/// return channel).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
}

impl NoiseDraw {
    pub fn zeros(n: usize) -> Self {
        NoiseDraw { inner: vec![0.0; n], outer: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }
}

impl NoiseParams {
    pub fn new(sigma_j: f64, sigma_c: f64) -> Result<Self> {
        let p = NoiseParams { sigma_j, sigma_c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("sigma_j", self.sigma_j)?;
        ensure_finite("sigma_c", self.sigma_c)?;
        if self.sigma_j < 0.0 || self.sigma_c < 0.0 {
            return Err(invalid("noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn inner_variance(&self) -> f64 {
        self.sigma_c * self.sigma_c + 2.0 * self.sigma_j * self.sigma_j
    }

    pub fn outer_variance(&self) -> f64 {
        self.sigma_c * self.sigma_c + self.sigma_j * self.sigma_j
    }

    /// Draws `n` measurements' worth of noise, component by component.
    ///
    /// The draw order is fixed so that the closed-form model and the tick
    /// simulator consume identical sequences from the same generator.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> NoiseDraw {
        let mut inner = Vec::with_capacity(n);
        let mut outer = Vec::with_capacity(n);
        let mut g = |s: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            s * z
        };
        for _ in 0..n {
            let jitter_init = g(self.sigma_j);
            let channel_fwd = g(self.sigma_c);
            let jitter_resp = g(self.sigma_j);
            let jitter_meas = g(self.sigma_j);
            let channel_ret = g(self.sigma_c);
            inner.push(jitter_init + channel_fwd + jitter_resp);
            outer.push(jitter_meas + channel_ret);
        }
        NoiseDraw { inner, outer }
    }
}

/// Public protocol constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConstants {
    /// Ping interval, seconds.
    pub t_m: f64,
    /// Nominal responder wait, seconds.
    pub delta_0: f64,
    /// Public sawtooth amplitude, seconds.
    pub a_scale: f64,
    /// Measurements per epoch.
    pub n: usize,
    /// Propagation speed, m/s.
    pub c: f64,
}

impl ProtocolConstants {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("t_m", self.t_m), ("delta_0", self.delta_0), ("a_scale", self.a_scale), ("c", self.c)] {
            ensure_finite(k, v)?;
        }
        if self.t_m <= 0.0 || self.a_scale <= 0.0 || self.c <= 0.0 {
            return Err(invalid("t_m, a_scale and c must be positive"));
        }
        if self.delta_0 < 0.0 {
            return Err(invalid("delta_0 must be non-negative"));
        }
        if self.n < 2 {
            return Err(invalid("an epoch needs at least two measurements"));
        }
        Ok(())
    }

    /// Checks that the ping interval spans at least two responder periods.
    pub fn validate_against(&self, responder_period: f64) -> Result<()> {
        self.validate()?;
        if self.t_m < 2.0 * responder_period {
            return Err(invalid("t_m must be at least twice the responder clock period"));
        }
        Ok(())
    }
}

/// Ping interval actually realised by an initiator that can only transmit on
/// its own clock edges: the nominal interval rounded to whole cycles.
pub fn ping_interval(t_m: f64, f_initiator: f64) -> f64 {
    let cycles = (t_m * f_initiator).round().max(1.0);
    cycles / f_initiator
}

/// Arguments of the sawtooth functions. Missing dither or noise means zeros.
#[derive(Debug, Clone, Copy)]
pub struct SawtoothArgs<'a> {
    pub f_d: f64,
    pub t_b: f64,
    pub phi: f64,
    pub t: &'a [f64],
    pub delta: Option<&'a [f64]>,
    pub noise: Option<&'a [f64]>,
}

impl<'a> SawtoothArgs<'a> {
    pub fn new(f_d: f64, t_b: f64, phi: f64, t: &'a [f64]) -> Self {
        SawtoothArgs { f_d, t_b, phi, t, delta: None, noise: None }
    }

    pub fn with_delta(mut self, delta: &'a [f64]) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_noise(mut self, noise: &'a [f64]) -> Self {
        self.noise = Some(noise);
        self
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("f_d", self.f_d)?;
        ensure_finite("t_b", self.t_b)?;
        ensure_finite("phi", self.phi)?;
        if self.t_b <= 0.0 {
            return Err(invalid("T_B must be positive"));
        }
        if !(0.0..TAU).contains(&self.phi) {
            return Err(invalid(format!("phi must lie in [0, 2pi), got {}", self.phi)));
        }
        let n = self.t.len();
        for (name, v) in [("delta", self.delta), ("noise", self.noise)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(invalid(format!("{name} has length {} but t has {n}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("{name} must be finite")));
                }
            }
        }
        if self.t.iter().any(|x| !x.is_finite()) {
            return Err(invalid("t must be finite"));
        }
        if let Some(d) = self.delta {
            if d.iter().any(|&x| x < 0.0) {
                return Err(invalid("dither delays must be non-negative"));
            }
        }
        Ok(())
    }

    #[inline]
    fn edge_offset(&self, i: usize) -> f64 {
        let x = TAU * self.f_d * self.t[i] + self.phi;
        (self.t_b / TAU) * modulo(x, TAU)
    }
}

/// RTT sawtooth: `mod_TB((TB/2pi) mod_2pi(2pi f_d t + phi) + n)`. Dither is ignored.
pub fn sawtooth_h(args: &SawtoothArgs<'_>) -> Result<Vec<f64>> {
    args.validate()?;
    Ok((0..args.t.len())
        .map(|i| {
            let n = args.noise.map_or(0.0, |v| v[i]);
            modulo(args.edge_offset(i) + n, args.t_b)
        })
        .collect())
}

/// CLIMEX sawtooth: `(A/TB) mod_TB((TB/2pi) mod_2pi(2pi f_d t + phi) + delta + n)`.
pub fn sawtooth_g(args: &SawtoothArgs<'_>, a_scale: f64) -> Result<Vec<f64>> {
    args.validate()?;
    ensure_finite("a_scale", a_scale)?;
    if a_scale <= 0.0 {
        return Err(invalid("A must be positive"));
    }
    let ratio = a_scale / args.t_b;
    let top = a_scale.next_down();
    Ok((0..args.t.len())
        .map(|i| {
            let d = args.delta.map_or(0.0, |v| v[i]);
            let n = args.noise.map_or(0.0, |v| v[i]);
            (ratio * modulo(args.edge_offset(i) + d + n, args.t_b)).min(top)
        })
        .collect())
}

/// Responder delay scaling: maps `delta_b` in `[0, TB + delta_0]` onto
/// `[0, A + delta_0]` linearly.
pub fn scale_delay(delta_b: f64, t_b: f64, a_scale: f64, delta_0: f64) -> Result<f64> {
    for (k, v) in [("delta_b", delta_b), ("t_b", t_b), ("a_scale", a_scale), ("delta_0", delta_0)] {
        ensure_finite(k, v)?;
    }
    if t_b <= 0.0 || a_scale <= 0.0 || delta_0 < 0.0 {
        return Err(invalid("T_B and A must be positive, delta_0 non-negative"));
    }
    if !(0.0..=t_b + delta_0).contains(&delta_b) {
        return Err(Error::Domain(format!(
            "delay {delta_b:e} s outside [0, {:e}] s",
            t_b + delta_0
        )));
    }
    Ok(delta_b * ((a_scale + delta_0) / (t_b + delta_0)))
}

/// The measurement model reduced to what it actually depends on: the beat
/// frequency and the responder period, plus public constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatModel {
    pub f_d: f64,
    pub t_b: f64,
    pub phi: f64,
    pub interval: f64,
    pub n: usize,
    pub delta_0: f64,
    pub a_scale: f64,
    pub rho: f64,
    pub c: f64,
}

impl BeatModel {
    pub fn from_clocks(
        initiator: &ClockParams,
        responder: &ClockParams,
        consts: &ProtocolConstants,
        rho: f64,
        phi: f64,
    ) -> Result<Self> {
        initiator.validate()?;
        responder.validate()?;
        consts.validate_against(responder.period())?;
        ensure_finite("rho", rho)?;
        if rho < 0.0 {
            return Err(invalid("distance must be non-negative"));
        }
        Ok(BeatModel {
            f_d: initiator.frequency() - responder.frequency(),
            t_b: responder.period(),
            phi,
            interval: ping_interval(consts.t_m, initiator.frequency()),
            n: consts.n,
            delta_0: consts.delta_0,
            a_scale: consts.a_scale,
            rho,
            c: consts.c,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.interval).collect()
    }

    fn offset(&self) -> f64 {
        self.delta_0 + 2.0 * self.rho / self.c
    }

    pub fn rtt_values(&self, noise: &NoiseDraw) -> Result<Vec<f64>> {
        self.check_noise(noise)?;
        let t = self.times();
        let h = sawtooth_h(&SawtoothArgs::new(self.f_d, self.t_b, self.phi, &t).with_noise(&noise.inner))?;
        let off = self.offset();
        Ok(h.iter().zip(&noise.outer).map(|(h, w)| h + off + w).collect())
    }

    pub fn climex_values(&self, delta: &[f64], noise: &NoiseDraw) -> Result<Vec<f64>> {
        self.check_noise(noise)?;
        let t = self.times();
        let args = SawtoothArgs::new(self.f_d, self.t_b, self.phi, &t)
            .with_delta(delta)
            .with_noise(&noise.inner);
        let g = sawtooth_g(&args, self.a_scale)?;
        let off = self.offset();
        Ok(g.iter().zip(&noise.outer).map(|(g, w)| g + off + w).collect())
    }

    fn check_noise(&self, noise: &NoiseDraw) -> Result<()> {
        if noise.inner.len() != self.n || noise.outer.len() != self.n {
            return Err(invalid("noise draw length differs from N"));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn epoch_model(
    initiator: &ClockParams,
    responder: &ClockParams,
    consts: &ProtocolConstants,
    rho: f64,
    phi: f64,
    t_prime: f64,
    noise: &NoiseParams,
    seed: u64,
    delta: Option<&[f64]>,
) -> Result<MeasurementEpoch> {
    noise.validate()?;
    ensure_finite("t_prime", t_prime)?;
    let model = BeatModel::from_clocks(initiator, responder, consts, rho, phi)?;
    let draw = noise.draw(&mut stream_rng(seed, Stream::Noise(NodeId::Alice)), consts.n);
    let (values, protocol) = match delta {
        None => (model.rtt_values(&draw)?, Protocol::Rtt),
        Some(d) => (model.climex_values(d, &draw)?, Protocol::Climex),
    };
    Ok(MeasurementEpoch {
        timestamp: t_prime,
        interval_s: model.interval,
        values,
        collector: NodeId::Alice,
        protocol,
        delta: delta.map(<[f64]>::to_vec),
    })
}

/// Closed-form RTT epoch as recorded by the initiator.
///
/// Noise comes from the seed's Alice noise stream, the same stream the tick
/// simulator uses for an Alice-initiated epoch.
#[allow(clippy::too_many_arguments)]
pub fn rtt_epoch_model(
    initiator: &ClockParams,
    responder: &ClockParams,
    consts: &ProtocolConstants,
    rho_ab: f64,
    phi: f64,
    t_prime: f64,
    noise: &NoiseParams,
    seed: u64,
) -> Result<MeasurementEpoch> {
    epoch_model(initiator, responder, consts, rho_ab, phi, t_prime, noise, seed, None)
}

/// Closed-form CLIMEX epoch with the initiator's dither vector.
#[allow(clippy::too_many_arguments)]
pub fn climex_epoch_model(
    initiator: &ClockParams,
    responder: &ClockParams,
    consts: &ProtocolConstants,
    rho_ab: f64,
    phi: f64,
    t_prime: f64,
    noise: &NoiseParams,
    seed: u64,
    delta: &[f64],
) -> Result<MeasurementEpoch> {
    if delta.len() != consts.n {
        return Err(invalid("dither vector length differs from N"));
    }
    epoch_model(initiator, responder, consts, rho_ab, phi, t_prime, noise, seed, Some(delta))
}
