//! Eve: what she measures by listening, what she recovers from it, what
//! happens when she answers in Bob's place, and how the defenders notice.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::epoch::{stream_rng, MeasurementEpoch, NodeId, Protocol, Stream};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::estimate::{fit_series, fit_subset, grid_search, residual_vector, ParamEstimate, SearchGrid};
use crate::kernel::{Amp, Ctx, PeriodGrid};
use crate::signal::{modulo, NoiseParams, ProtocolConstants};
use crate::sim::{ArrivalLog, Geometry, LogEntry, NodeState, SignalKind};

/// Eve's passive record of one epoch: for each ping, the respond's arrival
/// minus the ping's arrival at her antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct EveEpoch {
    /// Arrival of the first ping at Eve.
    pub timestamp: f64,
    /// Mean spacing of the ping arrivals she heard.
    pub interval_s: f64,
    pub tdoa: Vec<f64>,
    pub initiator: NodeId,
    /// Geometry of the run. Oracle checks only; Eve's estimator never reads it.
    pub truth: Geometry,
}

impl EveEpoch {
    pub fn len(&self) -> usize {
        self.tdoa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tdoa.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.tdoa.len()).map(|i| i as f64 * self.interval_s).collect()
    }
}

fn responder_of(initiator: NodeId) -> Result<NodeId> {
    match initiator {
        NodeId::Alice => Ok(NodeId::Bob),
        NodeId::Bob => Ok(NodeId::Alice),
        NodeId::Eve => Err(invalid("Eve never initiates an epoch")),
    }
}

/// Pings of one epoch in slot order, and the legitimate respond per slot.
fn epoch_pairs(log: &ArrivalLog, initiator: NodeId) -> Result<(Vec<&LogEntry>, HashMap<usize, &LogEntry>)> {
    let responder = responder_of(initiator)?;
    let mut pings: Vec<&LogEntry> = log.epoch_entries(initiator).filter(|e| e.kind == SignalKind::Ping).collect();
    pings.sort_by_key(|e| e.slot);
    let responds = log
        .epoch_entries(initiator)
        .filter(|e| e.kind == SignalKind::Respond && e.emitter == responder)
        .map(|e| (e.slot, e))
        .collect();
    Ok((pings, responds))
}

fn listener_noise(noise: &NoiseParams) -> Result<f64> {
    noise.validate()?;
    // one channel traverse plus her own timestamping jitter
    Ok(noise.outer_variance().sqrt())
}

/// Eve's TDOA epoch for the exchange started by `initiator`.
///
/// Element `i` is `delay_i + r/c + n_E` with `r = rho_IR + rho_RE - rho_IE`,
/// summed per hop rather than differenced from absolute times so that
/// geometries with equal `r` give bit-identical epochs.
pub fn eve_tdoa_epoch(log: &ArrivalLog, initiator: NodeId, noise: &NoiseParams, seed: u64) -> Result<EveEpoch> {
    let responder = responder_of(initiator)?;
    let (pings, responds) = epoch_pairs(log, initiator)?;
    let g = &log.geometry;
    let r = (g.distance(initiator, responder) + g.distance(responder, NodeId::Eve) - g.distance(initiator, NodeId::Eve)) / log.c;
    let s = listener_noise(noise)?;
    let mut rng = stream_rng(seed, Stream::Listener);

    let mut arrivals = Vec::with_capacity(pings.len());
    let mut tdoa = Vec::with_capacity(pings.len());
    for p in &pings {
        let resp = responds.get(&p.slot);
        let heard = p.arrival_at(NodeId::Eve).zip(resp.and_then(|e| e.arrival_at(NodeId::Eve)));
        let (Some((t_ping, _)), Some(delay)) = (heard, resp.and_then(|e| e.responder_delay)) else {
            continue;
        };
        let z: f64 = rng.sample(StandardNormal);
        arrivals.push(t_ping);
        tdoa.push(delay + r + s * z);
    }
    if tdoa.len() < pings.len() || tdoa.len() < 2 {
        return Err(Error::ShortEpoch { expected: pings.len(), heard: tdoa.len() });
    }
    let n = arrivals.len();
    Ok(EveEpoch {
        timestamp: arrivals[0],
        interval_s: (arrivals[n - 1] - arrivals[0]) / (n - 1) as f64,
        tdoa,
        initiator,
        truth: log.geometry,
    })
}

/// Eve's search space: the defenders' frequency x phase grid plus a grid of
/// candidate responder periods, since she does not know `T_B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EveGrid {
    pub search: SearchGrid,
    pub t_b_lo: f64,
    pub t_b_hi: f64,
    pub t_b_step: f64,
    /// Nominal clock frequency of the hardware, public knowledge.
    pub nominal_f: f64,
}

impl EveGrid {
    /// Periods of every clock within `ppm` total tolerance of `f0`, in bins
    /// one `df_bin` of frequency wide.
    pub fn for_clocks(search: SearchGrid, f0: f64, ppm: f64, df_bin: f64) -> Result<Self> {
        for (k, v) in [("f0", f0), ("ppm", ppm), ("df_bin", df_bin)] {
            ensure_finite(k, v)?;
            if v <= 0.0 {
                return Err(invalid(format!("{k} must be positive")));
            }
        }
        let half = ppm * 1e-6 * f0 / 2.0;
        let (t_b_lo, t_b_hi) = (1.0 / (f0 + half), 1.0 / (f0 - half));
        let bins = (2.0 * half / df_bin).round().max(1.0);
        Ok(EveGrid { search, t_b_lo, t_b_hi, t_b_step: (t_b_hi - t_b_lo) / bins, nominal_f: f0 })
    }

    fn period_grid(&self) -> Result<PeriodGrid> {
        self.search.validate()?;
        if !(self.t_b_lo > 0.0 && self.t_b_lo <= self.t_b_hi && self.t_b_step > 0.0 && self.nominal_f > 0.0) {
            return Err(invalid("bad period grid"));
        }
        Ok(PeriodGrid { lo: self.t_b_lo, hi: self.t_b_hi, step: self.t_b_step })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EveEstimate {
    pub f_d_hat: f64,
    pub t_b_hat: f64,
    pub phi_hat: f64,
    /// Cost of the centred epoch with the level profiled out.
    pub cost: f64,
    pub at_grid_edge: bool,
}

/// Fits `(f_d, T_B, phi)` to Eve's de-meaned TDOA epoch.
pub fn eve_estimate_rtt(epoch: &EveEpoch, grid: &EveGrid) -> Result<EveEstimate> {
    let pg = grid.period_grid()?;
    if epoch.tdoa.iter().any(|v| !v.is_finite()) {
        return Err(invalid("tdoa must be finite"));
    }
    let ctx = Ctx {
        own_f: grid.nominal_f,
        amp: Amp::Free(pg),
        sigma_inner: grid.search.inner_noise_s,
        noise_period: Some(1.0 / grid.nominal_f),
    };
    let fit = fit_series(&epoch.times(), &epoch.tdoa, None, &grid.search, ctx)?;
    Ok(EveEstimate { f_d_hat: fit.f, t_b_hat: fit.amp, phi_hat: fit.phi, cost: fit.cost, at_grid_edge: fit.at_edge })
}

/// Eve timing each ping of the epoch against her own clock: the wait from
/// the ping's arrival to her next edge. Under RTT this is a sawtooth at
/// `f_I - f_E`; the CLIMEX dither scrambles it.
pub fn eve_interarrival_epoch(
    log: &ArrivalLog,
    initiator: NodeId,
    eve: &NodeState,
    noise: &NoiseParams,
    seed: u64,
) -> Result<MeasurementEpoch> {
    let (pings, _) = epoch_pairs(log, initiator)?;
    let s = listener_noise(noise)?;
    let mut rng = stream_rng(seed, Stream::ListenerClock);
    let arrivals: Vec<f64> = pings.iter().filter_map(|p| p.arrival_at(NodeId::Eve)).collect();
    if arrivals.len() < pings.len() || arrivals.len() < 2 {
        return Err(Error::ShortEpoch { expected: pings.len(), heard: arrivals.len() });
    }
    let (off, t_e) = (eve.edge_offset(), eve.period());
    let values = arrivals
        .iter()
        .map(|&a| {
            let z: f64 = rng.sample(StandardNormal);
            modulo(off - a + s * z, t_e)
        })
        .collect();
    let n = arrivals.len();
    Ok(MeasurementEpoch {
        timestamp: arrivals[0],
        interval_s: (arrivals[n - 1] - arrivals[0]) / (n - 1) as f64,
        values,
        collector: NodeId::Eve,
        protocol: Protocol::Rtt,
        delta: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterarrivalEstimate {
    /// `f_I - f_E`.
    pub f_diff_hat: f64,
    /// Initiator's clock frequency, `f_E + f_diff_hat`.
    pub f_initiator_hat: f64,
    pub phi_hat: f64,
    pub cost: f64,
    pub at_grid_edge: bool,
}

/// Frequency of the initiator's clock relative to Eve's, from an
/// interarrival epoch. The sawtooth amplitude is Eve's own period.
pub fn eve_interarrival_estimate(epoch: &MeasurementEpoch, eve: &NodeState, grid: &SearchGrid) -> Result<InterarrivalEstimate> {
    epoch.validate()?;
    let t_e = eve.period();
    let ctx = Ctx { own_f: eve.frequency(), amp: Amp::Fixed(t_e), sigma_inner: grid.inner_noise_s, noise_period: Some(t_e) };
    let fit = fit_series(&epoch.times(), &epoch.values, None, grid, ctx)?;
    Ok(InterarrivalEstimate {
        f_diff_hat: fit.f,
        f_initiator_hat: eve.frequency() + fit.f,
        phi_hat: fit.phi,
        cost: fit.cost,
        at_grid_edge: fit.at_edge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionStrategy {
    /// Respond a random time after hearing the ping.
    RandomTiming,
    /// Land exactly where Bob's respond would, using the hidden truth.
    OraclePerfect,
}

/// Which pings Eve answers in place of the responder.
///
/// `offsets` pairs a slot with the delay after the ping reaches Eve; the
/// oracle strategy ignores the delay.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionPlan {
    pub strategy: InjectionStrategy,
    pub initiator: NodeId,
    pub offsets: Vec<(usize, f64)>,
}

impl InjectionPlan {
    pub fn empty(initiator: NodeId) -> Self {
        InjectionPlan { strategy: InjectionStrategy::RandomTiming, initiator, offsets: Vec::new() }
    }

    /// Delays drawn from `U(0, max_offset)` on the injection stream.
    pub fn random_timing(initiator: NodeId, slots: &[usize], max_offset: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Injection);
        let offsets = slots.iter().map(|&s| (s, rng.random::<f64>() * max_offset)).collect();
        InjectionPlan { strategy: InjectionStrategy::RandomTiming, initiator, offsets }
    }

    pub fn oracle_perfect(initiator: NodeId, slots: &[usize]) -> Self {
        InjectionPlan { strategy: InjectionStrategy::OraclePerfect, initiator, offsets: slots.iter().map(|&s| (s, 0.0)).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        responder_of(self.initiator)?;
        for &(_, o) in &self.offsets {
            ensure_finite("injection offset", o)?;
        }
        Ok(())
    }
}

/// Adds Eve's responds to the log. The legitimate responds stay in the log;
/// [`apply_injections`] decides which one the collector hears.
pub fn inject_responses(log: &ArrivalLog, plan: &InjectionPlan) -> Result<ArrivalLog> {
    plan.validate()?;
    if plan.offsets.is_empty() {
        return Ok(log.clone());
    }
    if !log.eve_present {
        return Err(invalid("the log has no Eve"));
    }
    let (pings, responds) = epoch_pairs(log, plan.initiator)?;
    let by_slot: HashMap<usize, &LogEntry> = pings.iter().map(|p| (p.slot, *p)).collect();
    let to_collector = log.geometry.distance(NodeId::Eve, plan.initiator) / log.c;
    let mut out = log.clone();
    for &(slot, offset) in &plan.offsets {
        let ping = by_slot.get(&slot).ok_or_else(|| invalid(format!("no ping in slot {slot}")))?;
        let emit = match plan.strategy {
            InjectionStrategy::RandomTiming => {
                ping.arrival_at(NodeId::Eve).ok_or_else(|| invalid("Eve missed the ping"))? + offset
            }
            InjectionStrategy::OraclePerfect => {
                let bob = responds.get(&slot).ok_or_else(|| invalid(format!("no respond in slot {slot}")))?;
                bob.arrival_at(plan.initiator).ok_or_else(|| invalid("collector missed the respond"))? - to_collector
            }
        };
        out.entries.push(LogEntry {
            slot,
            initiator: plan.initiator,
            kind: SignalKind::Respond,
            emitter: NodeId::Eve,
            emit,
            arrivals: log.arrivals(NodeId::Eve, emit),
            responder_delay: None,
        });
    }
    Ok(out)
}

/// The collector's epoch as it would read with Eve's responds taken in place
/// of the legitimate ones.
pub fn apply_injections(epoch: &MeasurementEpoch, log: &ArrivalLog) -> Result<MeasurementEpoch> {
    let (_, responds) = epoch_pairs(log, epoch.collector)?;
    let mut out = epoch.clone();
    for e in log.epoch_entries(epoch.collector).filter(|e| e.emitter == NodeId::Eve && e.kind == SignalKind::Respond) {
        let legit = responds.get(&e.slot).and_then(|b| b.arrival_at(epoch.collector));
        let (Some(fake), Some(legit)) = (e.arrival_at(epoch.collector), legit) else {
            return Err(invalid(format!("slot {} cannot be replaced", e.slot)));
        };
        let v = out.values.get_mut(e.slot).ok_or_else(|| invalid(format!("slot {} outside the epoch", e.slot)))?;
        *v += fake - legit;
    }
    Ok(out)
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    let n = v.len();
    let (lo, m, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        (lo.iter().copied().fold(f64::MIN, f64::max) + m) / 2.0
    }
}

/// Residuals about their median, each moved by at most one sawtooth
/// amplitude towards zero so that noise across a wrap is not mistaken for
/// an outlier.
fn folded_residuals(res: &[f64], amp: f64) -> Vec<f64> {
    let m = median(res);
    res.iter()
        .map(|r| {
            let d = r - m;
            [d, d - amp, d + amp].into_iter().min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap()
        })
        .collect()
}

fn sawtooth_amp(epoch: &MeasurementEpoch, est: &ParamEstimate, consts: &ProtocolConstants, own_f: f64) -> f64 {
    match epoch.protocol {
        Protocol::Rtt => 1.0 / (own_f - est.f_d_hat),
        Protocol::Climex => consts.a_scale,
    }
}

/// Fit, drop the 5% of samples with the largest residuals, refit on the rest.
pub fn robust_fit(
    epoch: &MeasurementEpoch,
    grid: &SearchGrid,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
) -> Result<ParamEstimate> {
    let est = grid_search(epoch, grid, consts, own_f, known_delta)?;
    let res = residual_vector(epoch, &est, consts, own_f, known_delta)?;
    let folded = folded_residuals(&res, sawtooth_amp(epoch, &est, consts, own_f));
    let drop = epoch.len().div_ceil(20);
    let mut order: Vec<usize> = (0..epoch.len()).collect();
    order.sort_by(|&a, &b| folded[a].abs().total_cmp(&folded[b].abs()).then(a.cmp(&b)));
    let mut keep = order[..epoch.len() - drop].to_vec();
    keep.sort_unstable();
    fit_subset(epoch, &keep, grid, consts, own_f, known_delta)
}

/// Indices whose residual exceeds `k_sigma` robust standard deviations,
/// the scale taken as 1.4826 times the median absolute deviation.
pub fn detect_outliers(
    epoch: &MeasurementEpoch,
    est: &ParamEstimate,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
    k_sigma: f64,
) -> Result<Vec<usize>> {
    if !(k_sigma > 0.0 && k_sigma.is_finite()) {
        return Err(invalid("k_sigma must be positive"));
    }
    let res = residual_vector(epoch, est, consts, own_f, known_delta)?;
    let folded = folded_residuals(&res, sawtooth_amp(epoch, est, consts, own_f));
    let abs: Vec<f64> = folded.iter().map(|r| r.abs()).collect();
    let sigma = 1.4826 * median(&abs);
    Ok((0..abs.len()).filter(|&i| abs[i] > k_sigma * sigma).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn folding_moves_wraps_back() {
        // median is 0.1; 9.8 sits one amplitude above -0.2
        let f = folded_residuals(&[0.1, 9.8, 0.0, 0.3, 0.1], 10.0);
        assert!((f[1] + 0.3).abs() < 1e-12);
        assert!((f[3] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn period_grid_has_one_bin_per_hertz() {
        let g = EveGrid::for_clocks(SearchGrid::default(), 1e8, 10.0, 1.0).unwrap();
        let bins = ((g.t_b_hi - g.t_b_lo) / g.t_b_step).round();
        assert_eq!(bins, 1000.0);
        assert!(g.t_b_lo < 1e-8 && 1e-8 < g.t_b_hi);
    }
}
