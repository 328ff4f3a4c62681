//! Grid-search least-squares recovery of `(f_d, phi', rho)` from an epoch,
//! the counterpart frequency, and the shared test phase.

use std::f64::consts::TAU;

use crate::epoch::{MeasurementEpoch, Protocol};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::kernel::{Amp, Ctx, Hit, Samples, Scanner};
use crate::signal::{frac, modulo, sawtooth_g, sawtooth_h, ProtocolConstants, SawtoothArgs};
use crate::sim::NodeState;

/// Frequency x phase search grid. The phase axis has `phase_steps` points
/// covering `[0, 2pi)`; `refine` > 1 adds one pass `refine` times finer
/// around the coarse minimum.
///
/// `inner_noise_s` is the noise standard deviation inside the modulus that
/// the collector assumes for its hardware. When it is a sizeable fraction of
/// the responder period the fit uses the noise-averaged sawtooth; zero fits
/// the sharp sawtooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchGrid {
    pub f_lo: f64,
    pub f_hi: f64,
    pub df: f64,
    pub phase_steps: usize,
    pub refine: usize,
    pub inner_noise_s: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid { f_lo: -1000.0, f_hi: 1000.0, df: 1.0, phase_steps: 64, refine: 10, inner_noise_s: 0.0 }
    }
}

impl SearchGrid {
    pub fn dphi(&self) -> f64 {
        TAU / self.phase_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("f_lo", self.f_lo), ("f_hi", self.f_hi), ("df", self.df)] {
            ensure_finite(k, v)?;
        }
        if !(self.f_lo < self.f_hi) || self.df <= 0.0 || self.phase_steps == 0 || self.refine == 0 {
            return Err(invalid("empty search grid"));
        }
        if !(self.inner_noise_s >= 0.0 && self.inner_noise_s.is_finite()) {
            return Err(invalid("inner noise must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = ((self.f_hi - self.f_lo) / self.df + 1e-9).floor() as usize;
        (0..=n).map(|j| self.f_lo + j as f64 * self.df).collect()
    }

    /// Refined grid step in frequency.
    pub fn fine_df(&self) -> f64 {
        self.df / self.refine as f64
    }

    pub fn fine_dphi(&self) -> f64 {
        self.dphi() / self.refine as f64
    }
}

/// Result of fitting one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamEstimate {
    pub f_d_hat: f64,
    /// Sawtooth phase at the epoch start.
    pub phi_hat: f64,
    pub rho_hat: f64,
    pub cost: f64,
    /// Counterpart's clock frequency, `own_f - f_d_hat`.
    pub f_counterpart_hat: f64,
    /// Epoch start.
    pub timestamp: f64,
    /// The coarse minimum sat on the edge of the frequency range, so the true
    /// value may lie outside it.
    pub at_grid_edge: bool,
}

/// What the collector knows that the model needs.
#[derive(Debug, Clone, Copy)]
struct Model<'a> {
    own_f: f64,
    consts: &'a ProtocolConstants,
    protocol: Protocol,
    delta: Option<&'a [f64]>,
}

impl Model<'_> {
    fn responder_period(&self, f_d: f64) -> Result<f64> {
        let f = self.own_f - f_d;
        if !(f > 0.0) {
            return Err(invalid("frequency hypothesis implies a non-positive responder frequency"));
        }
        Ok(1.0 / f)
    }

    /// Noise-free sawtooth for the hypothesis.
    fn sawtooth(&self, t: &[f64], f_d: f64, phi: f64) -> Result<Vec<f64>> {
        let t_b = self.responder_period(f_d)?;
        let args = SawtoothArgs::new(f_d, t_b, phi, t);
        match (self.protocol, self.delta) {
            (Protocol::Rtt, _) => sawtooth_h(&args),
            (Protocol::Climex, Some(d)) => sawtooth_g(&args.with_delta(d), self.consts.a_scale),
            (Protocol::Climex, None) => sawtooth_g(&args, self.consts.a_scale),
        }
    }

    fn amp(&self) -> Amp {
        match self.protocol {
            Protocol::Rtt => Amp::ResponderPeriod,
            Protocol::Climex => Amp::Fixed(self.consts.a_scale),
        }
    }
}

fn check(epoch: &MeasurementEpoch, known_delta: Option<&[f64]>) -> Result<()> {
    epoch.validate()?;
    if let Some(d) = known_delta {
        if d.len() != epoch.len() {
            return Err(invalid("known dither length differs from the epoch"));
        }
    }
    Ok(())
}

fn model<'a>(epoch: &MeasurementEpoch, consts: &'a ProtocolConstants, own_f: f64, delta: Option<&'a [f64]>) -> Result<Model<'a>> {
    ensure_finite("own_f", own_f)?;
    consts.validate()?;
    Ok(Model { own_f, consts, protocol: epoch.protocol, delta })
}

fn residuals(
    epoch: &MeasurementEpoch,
    f_d: f64,
    phi: f64,
    m: &Model<'_>,
) -> Result<Vec<f64>> {
    if !(0.0..TAU).contains(&phi) {
        return Err(invalid("phi must lie in [0, 2pi)"));
    }
    let s = m.sawtooth(&epoch.times(), f_d, phi)?;
    Ok(epoch.values.iter().zip(&s).map(|(y, s)| y - s - m.consts.delta_0).collect())
}

/// Squared cost `||y - g(f_d, phi) - delta_0 - 2 rho / c||^2`.
///
/// `own_f` is the collector's frequency; the responder period of the
/// hypothesis is `1 / (own_f - f_d)`. `known_delta` is the collector's dither
/// (`None` for RTT).
pub fn cost_j(
    epoch: &MeasurementEpoch,
    f_d: f64,
    phi: f64,
    rho: f64,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
) -> Result<f64> {
    check(epoch, known_delta)?;
    let m = model(epoch, consts, own_f, known_delta)?;
    let prop = 2.0 * rho / consts.c;
    Ok(residuals(epoch, f_d, phi, &m)?.iter().map(|r| (r - prop) * (r - prop)).sum())
}

/// Distance that minimises the cost for fixed `(f_d, phi)`: half the mean
/// residual times `c`.
pub fn estimate_rho(
    epoch: &MeasurementEpoch,
    f_d: f64,
    phi: f64,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
) -> Result<f64> {
    check(epoch, known_delta)?;
    let m = model(epoch, consts, own_f, known_delta)?;
    let r = residuals(epoch, f_d, phi, &m)?;
    Ok(consts.c / 2.0 * r.iter().sum::<f64>() / r.len() as f64)
}

/// Searches the grid for the least-squares `(f_d, phi')`, with `rho` profiled
/// out, then refines once around the coarse minimum.
///
/// Ties go to the smallest frequency, then the smallest phase.
pub fn grid_search(
    epoch: &MeasurementEpoch,
    grid: &SearchGrid,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
) -> Result<ParamEstimate> {
    grid.validate()?;
    check(epoch, known_delta)?;
    let m = model(epoch, consts, own_f, known_delta)?;
    let idx: Vec<usize> = (0..epoch.len()).collect();
    let fit = search_subset(epoch, &idx, grid, &m)?;
    let rho_hat = match fit.model_mean {
        Some(mean_model) => {
            let mean_y = epoch.values.iter().sum::<f64>() / epoch.len() as f64;
            consts.c / 2.0 * (mean_y - consts.delta_0 - mean_model)
        }
        None => estimate_rho(epoch, fit.f_d, fit.phi, consts, own_f, known_delta)?,
    };
    let cost = cost_j(epoch, fit.f_d, fit.phi, rho_hat, consts, own_f, known_delta)?;
    Ok(ParamEstimate {
        f_d_hat: fit.f_d,
        phi_hat: fit.phi,
        rho_hat,
        cost,
        f_counterpart_hat: own_f - fit.f_d,
        timestamp: epoch.timestamp,
        at_grid_edge: fit.at_edge,
    })
}

struct SubsetFit {
    f_d: f64,
    phi: f64,
    at_edge: bool,
    /// Mean of the noise-averaged model over the subset, when it was used.
    model_mean: Option<f64>,
}

/// Grid search on a subset of the epoch's samples.
fn search_subset(epoch: &MeasurementEpoch, idx: &[usize], grid: &SearchGrid, m: &Model<'_>) -> Result<SubsetFit> {
    let times = epoch.times();
    let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| epoch.values[i]).collect();
    let d: Option<Vec<f64>> = m.delta.map(|d| idx.iter().map(|&i| d[i]).collect());
    let ctx = Ctx { own_f: m.own_f, amp: m.amp(), sigma_inner: grid.inner_noise_s, noise_period: None };
    let fit = fit_series(&t, &y, d.as_deref(), grid, ctx)?;
    Ok(SubsetFit { f_d: fit.f, phi: fit.phi, at_edge: fit.at_edge, model_mean: fit.model_mean })
}

/// Least-squares sawtooth fit of a generic series.
pub(crate) struct SeriesFit {
    pub f: f64,
    /// Sawtooth phase at time zero.
    pub phi: f64,
    pub amp: f64,
    /// Cost with the level profiled out, in the model that was fitted.
    pub cost: f64,
    pub at_edge: bool,
    pub model_mean: Option<f64>,
}

/// Fits `y_i ~ level + amp * S(f t_i + phi/2pi [+ dither])` over the grid.
/// The phase is searched at the middle of the time span, where it is least
/// correlated with the frequency, and reported at `t = 0`.
pub(crate) fn fit_series(t_abs: &[f64], y: &[f64], delta: Option<&[f64]>, grid: &SearchGrid, ctx: Ctx) -> Result<SeriesFit> {
    grid.validate()?;
    if t_abs.len() < 2 || t_abs.len() != y.len() {
        return Err(invalid("need at least two samples"));
    }
    let t_c = (t_abs[0] + t_abs[t_abs.len() - 1]) / 2.0;
    let t: Vec<f64> = t_abs.iter().map(|x| x - t_c).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let r: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut sc = Scanner::new(Samples { t: &t, r: &r, dither: delta }, ctx);

    let freqs = grid.frequencies();
    let smoothed = sc.smoothed(freqs[freqs.len() / 2]);
    let coarse = if smoothed {
        // frequency (with its sign) from the circular periodogram, then the
        // phase by least squares at that frequency
        let j = sc.circular_argmax(&freqs).ok_or_else(|| invalid("no admissible grid point"))?;
        sc.best_phase(j, freqs[j], grid.phase_steps, None)
    } else {
        scan(&mut sc, freqs.iter().copied().enumerate(), grid.phase_steps, None)
    }
    .ok_or_else(|| invalid("no admissible grid point"))?;
    let at_edge = coarse.f_index == 0 || coarse.f_index + 1 == freqs.len();

    let (hit, steps) = if grid.refine > 1 {
        let rf = grid.refine;
        let fine_df = grid.fine_df();
        let fs = (0..=2 * rf).map(|j| (j, coarse.f + (j as f64 - rf as f64) * fine_df));
        let steps = grid.phase_steps * rf;
        let window = (!smoothed).then_some((coarse.k * rf, rf));
        scan(&mut sc, fs, steps, window).map(|h| (h, steps)).unwrap_or((coarse, grid.phase_steps))
    } else {
        (coarse, grid.phase_steps)
    };
    let phi_c = hit.k as f64 / steps as f64;
    let phi = TAU * frac(phi_c - hit.f * t_c);
    let model_mean = sc.coefficients(hit.f).map(|_| {
        let v = sc.model(hit.f, hit.k, steps, hit.amp);
        v.iter().sum::<f64>() / v.len() as f64
    });
    Ok(SeriesFit { f: hit.f, phi: phi.min(TAU.next_down()), amp: hit.amp, cost: hit.cost, at_edge, model_mean })
}

fn scan(sc: &mut Scanner<'_>, fs: impl Iterator<Item = (usize, f64)>, steps: usize, window: Option<(usize, usize)>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (j, f) in fs {
        if let Some(h) = sc.best_phase(j, f, steps, window) {
            if best.is_none_or(|b| h.cost < b.cost) {
                best = Some(h);
            }
        }
    }
    best
}

/// Which clock the caller owns when converting a canonical `f_d = f_A - f_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Caller knows `f_A` and wants `f_B`.
    KnowsA,
    /// Caller knows `f_B` and wants `f_A`.
    KnowsB,
}

/// Counterpart frequency from the canonical difference `f_d = f_A - f_B`.
pub fn counterpart_frequency(f_d_hat: f64, own_f: f64, role: Role) -> f64 {
    match role {
        Role::KnowsA => own_f - f_d_hat,
        Role::KnowsB => own_f + f_d_hat,
    }
}

/// Predicts the phase of the responder's clock at `t_test`.
///
/// The responder edge nearest the epoch start sits `phi'/(2pi) * T_B` after
/// the ping arrival; the prediction carries that edge forward at the
/// estimated responder frequency `own_f - f_d_hat`.
pub fn predict_phi_test(est: &ParamEstimate, own_f: f64, t_test: f64, c: f64) -> Result<f64> {
    if est.f_d_hat == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    ensure_finite("t_test", t_test)?;
    if t_test < est.timestamp {
        return Err(invalid("t_test precedes the epoch"));
    }
    let f_b = own_f - est.f_d_hat;
    if !(f_b > 0.0) {
        return Err(invalid("estimated counterpart frequency is not positive"));
    }
    let cycles = est.phi_hat / TAU - f_b * (t_test - est.timestamp - est.rho_hat / c);
    Ok((TAU * frac(cycles)).min(TAU.next_down()))
}

/// Phase of `node`'s own clock at `t_test`: `2pi f` times the time to its
/// next edge.
pub fn measure_phi_test_local(node: &NodeState, t_test: f64) -> f64 {
    (TAU * node.time_to_next_edge(t_test) * node.frequency()).min(TAU.next_down())
}

/// Middle of the epoch, where an extrapolated phase is most accurate.
pub fn default_t_test(epoch: &MeasurementEpoch) -> f64 {
    epoch.timestamp + (epoch.len() - 1) as f64 * epoch.interval_s / 2.0
}

/// Circular distance between two phases, in `[0, pi]`.
pub fn phase_error(a: f64, b: f64) -> f64 {
    let d = modulo(a - b, TAU);
    d.min(TAU - d)
}

pub(crate) fn fit_subset(
    epoch: &MeasurementEpoch,
    idx: &[usize],
    grid: &SearchGrid,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
) -> Result<ParamEstimate> {
    grid.validate()?;
    check(epoch, known_delta)?;
    let m = model(epoch, consts, own_f, known_delta)?;
    let fit = search_subset(epoch, idx, grid, &m)?;
    let (f_d, phi, at_edge) = (fit.f_d, fit.phi, fit.at_edge);
    let res = residuals(epoch, f_d, phi, &m)?;
    let rho_hat = match fit.model_mean {
        Some(mean_model) => {
            let mean_y = idx.iter().map(|&i| epoch.values[i]).sum::<f64>() / idx.len() as f64;
            consts.c / 2.0 * (mean_y - consts.delta_0 - mean_model)
        }
        None => consts.c / 2.0 * idx.iter().map(|&i| res[i]).sum::<f64>() / idx.len() as f64,
    };
    let prop = 2.0 * rho_hat / consts.c;
    let cost = idx.iter().map(|&i| (res[i] - prop).powi(2)).sum();
    Ok(ParamEstimate {
        f_d_hat: f_d,
        phi_hat: phi,
        rho_hat,
        cost,
        f_counterpart_hat: own_f - f_d,
        timestamp: epoch.timestamp,
        at_grid_edge: at_edge,
    })
}

/// Model residuals `y - g - delta_0 - 2 rho / c` for a fitted estimate.
pub fn residual_vector(
    epoch: &MeasurementEpoch,
    est: &ParamEstimate,
    consts: &ProtocolConstants,
    own_f: f64,
    known_delta: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check(epoch, known_delta)?;
    let m = model(epoch, consts, own_f, known_delta)?;
    let prop = 2.0 * est.rho_hat / consts.c;
    Ok(residuals(epoch, est.f_d_hat, est.phi_hat, &m)?.into_iter().map(|r| r - prop).collect())
}
