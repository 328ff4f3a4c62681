//! Fast evaluation of the least-squares cost over a frequency x phase grid.
//!
//! For a fixed frequency the model at phase step `k` of `K` is
//! `a * frac(u_i + k/K)` with `u_i = frac(f (t_i - t_c) + delta_i / T_B)`.
//! The wrap `frac(u + k/K) = u + k/K - 1` happens exactly when
//! `floor(K u) >= K - k`, so bucketing the samples by `floor(K u)` and keeping
//! per-bucket sums gives every phase's cost from suffix sums in O(N + K).
//!
//! When the noise inside the modulus is a sizeable fraction of the period the
//! regression function is the noise-averaged sawtooth
//! `E[frac(u + s z)] = 1/2 - sum_k exp(-2 pi^2 k^2 s^2) sin(2 pi k u) / (pi k)`.
//! Only a handful of harmonics survive, so the sums the cost needs are
//! harmonic sums `sum_i r_i e^{2 pi i k u_i}` rotated per phase.

use std::f64::consts::{PI, TAU};

use crate::signal::frac;

#[derive(Debug, Clone, Copy)]
pub(crate) struct PeriodGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl PeriodGrid {
    pub fn snap(&self, t: f64) -> f64 {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor();
        let j = ((t - self.lo) / self.step).round().clamp(0.0, n);
        self.lo + j * self.step
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Amp {
    /// Known amplitude.
    Fixed(f64),
    /// Amplitude equals the responder period implied by the frequency hypothesis.
    ResponderPeriod,
    /// Amplitude profiled out, snapped to a grid.
    Free(PeriodGrid),
}

pub(crate) struct Samples<'a> {
    /// Times relative to the phase reference.
    pub t: &'a [f64],
    /// Centred observations.
    pub r: &'a [f64],
    pub dither: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ctx {
    /// Collector's own frequency; the responder runs at `own_f - f`.
    pub own_f: f64,
    pub amp: Amp,
    /// Noise standard deviation inside the modulus, seconds.
    pub sigma_inner: f64,
    /// Period the inner noise is measured against; `None` means the
    /// responder period of the frequency hypothesis.
    pub noise_period: Option<f64>,
}

/// Harmonic limit beyond which the sharp model is used instead.
const MAX_HARMONICS: usize = 24;

/// Fourier coefficients `b_k` of the noise-averaged sawtooth, or `None` when
/// the sharp sawtooth is the better description.
pub(crate) fn smooth_coefficients(s: f64) -> Option<Vec<f64>> {
    if !(s > 0.0) {
        return None;
    }
    let mut b = Vec::new();
    for k in 1..=MAX_HARMONICS + 1 {
        let kf = k as f64;
        let c = (-2.0 * PI * PI * kf * kf * s * s).exp() / (PI * kf);
        if c < 1e-9 {
            return Some(b);
        }
        b.push(c);
    }
    None
}

/// Noise-averaged sawtooth on `[0, 1)`.
pub(crate) fn smooth_sawtooth(u: f64, b: &[f64]) -> f64 {
    0.5 - b.iter().enumerate().map(|(k, bk)| bk * (TAU * (k + 1) as f64 * u).sin()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Hit {
    pub f_index: usize,
    pub f: f64,
    pub k: usize,
    pub cost: f64,
    pub amp: f64,
}

#[derive(Default)]
struct Buckets {
    cnt: Vec<f64>,
    su: Vec<f64>,
    suu: Vec<f64>,
    sru: Vec<f64>,
    sr: Vec<f64>,
    u: Vec<f64>,
    h: Vec<(f64, f64)>,
    g: Vec<(f64, f64)>,
}

impl Buckets {
    fn reset(&mut self, k: usize) {
        for v in [&mut self.cnt, &mut self.su, &mut self.suu, &mut self.sru, &mut self.sr] {
            v.clear();
            v.resize(k, 0.0);
        }
    }
}

pub(crate) struct Scanner<'a> {
    s: Samples<'a>,
    ctx: Ctx,
    srr: f64,
    sr: f64,
    n: f64,
    b: Buckets,
}

impl<'a> Scanner<'a> {
    pub fn new(s: Samples<'a>, ctx: Ctx) -> Self {
        let srr = s.r.iter().map(|x| x * x).sum();
        let sr = s.r.iter().sum();
        let n = s.r.len() as f64;
        Scanner { s, ctx, srr, sr, n, b: Buckets::default() }
    }

    /// Coefficients of the noise-averaged model at frequency `f`, if any.
    pub fn coefficients(&self, f: f64) -> Option<Vec<f64>> {
        let period = self.ctx.noise_period.unwrap_or(1.0 / (self.ctx.own_f - f));
        smooth_coefficients(self.ctx.sigma_inner / period)
    }

    /// Best phase step for frequency `f` among `steps` phases, optionally
    /// restricted to `window = (centre, half_width)` in circular step units.
    pub fn best_phase(&mut self, f_index: usize, f: f64, steps: usize, window: Option<(usize, usize)>) -> Option<Hit> {
        let f_resp = self.ctx.own_f - f;
        let needs_resp = matches!(self.ctx.amp, Amp::ResponderPeriod)
            || self.s.dither.is_some()
            || (self.ctx.noise_period.is_none() && self.ctx.sigma_inner > 0.0);
        if needs_resp && f_resp <= 0.0 {
            return None;
        }
        self.fill_phases(f, f_resp);
        let n = self.n;
        let p = self.sr;
        let mut best: Option<Hit> = None;
        let mut consider = |k: usize, sv: f64, svv: f64, srv: f64| {
            if let Some((centre, half)) = window {
                let d = (k + steps - centre) % steps;
                if d.min(steps - d) > half {
                    return;
                }
            }
            let amp = match self.ctx.amp {
                Amp::Fixed(a) => a,
                Amp::ResponderPeriod => 1.0 / f_resp,
                Amp::Free(grid) => {
                    let den = svv - sv * sv / n;
                    let a = if den > 0.0 { (srv - p * sv / n) / den } else { grid.lo };
                    grid.snap(a)
                }
            };
            let lvl = p - amp * sv;
            let cost = (self.srr - 2.0 * amp * srv + amp * amp * svv - lvl * lvl / n).max(0.0);
            if best.is_none_or(|b| cost < b.cost) {
                best = Some(Hit { f_index, f, k, cost, amp });
            }
        };
        match self.coefficients(f) {
            Some(b) => {
                let b = &b;
                harmonic_stats(&mut self.b, self.s.r, b, steps, &mut consider)
            }
            None => bucket_stats(&mut self.b, self.s.r, steps, &mut consider),
        }
        best
    }

    /// Whether frequency `f` is fitted with the noise-averaged model.
    pub fn smoothed(&self, f: f64) -> bool {
        self.coefficients(f).is_some()
    }

    /// Circular periodogram power `|sum_i exp(2 pi i (r_i / a - u_i))|^2 / N`.
    ///
    /// Read modulo the amplitude, each observation is a point on a circle
    /// that turns at the beat frequency; unlike the linear mean of a heavily
    /// wrapped sawtooth this keeps the direction of rotation, hence the sign
    /// of `f`.
    #[cfg(test)]
    pub fn circular_power(&mut self, f: f64) -> Option<f64> {
        let f_resp = self.ctx.own_f - f;
        let inv_a = match self.ctx.amp {
            Amp::Fixed(a) => 1.0 / a,
            Amp::ResponderPeriod if f_resp > 0.0 => f_resp,
            Amp::ResponderPeriod => return None,
            Amp::Free(_) => 1.0 / self.ctx.noise_period?,
        };
        if self.s.dither.is_some() && f_resp <= 0.0 {
            return None;
        }
        self.fill_phases(f, f_resp);
        let (mut re, mut im) = (0.0, 0.0);
        for (&u, &r) in self.b.u.iter().zip(self.s.r) {
            let (s, c) = (TAU * (r * inv_a - u)).sin_cos();
            re += c;
            im += s;
        }
        Some((re * re + im * im) / self.n)
    }

    /// Frequency with the largest circular power, ties to the smaller index.
    ///
    /// The amplitude and dither scaling are taken at the middle of the range;
    /// across a ppm-wide frequency range the difference is far below the
    /// noise. Uniformly spaced times use a phasor recurrence.
    pub fn circular_argmax(&mut self, freqs: &[f64]) -> Option<usize> {
        let f_mid = freqs[freqs.len() / 2];
        let f_resp = self.ctx.own_f - f_mid;
        let inv_a = match self.ctx.amp {
            Amp::Fixed(a) => 1.0 / a,
            Amp::ResponderPeriod => f_resp,
            Amp::Free(_) => 1.0 / self.ctx.noise_period?,
        };
        if !(inv_a > 0.0) || (self.s.dither.is_some() && f_resp <= 0.0) {
            return None;
        }
        let base: Vec<(f64, f64)> = (0..self.s.r.len())
            .map(|i| {
                let d = self.s.dither.map_or(0.0, |d| d[i] * f_resp);
                let (s, c) = (TAU * (self.s.r[i] * inv_a - d)).sin_cos();
                (c, s)
            })
            .collect();
        let t = self.s.t;
        let n = t.len();
        let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
        let uniform = t.iter().enumerate().all(|(i, &x)| (x - (t[0] + i as f64 * dt)).abs() <= 1e-9 * dt);
        let mut best: Option<(usize, f64)> = None;
        for (j, &f) in freqs.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            if uniform {
                let (s0, c0) = (-TAU * frac(f * t[0])).sin_cos();
                let (s1, c1) = (-TAU * frac(f * dt)).sin_cos();
                let step = (c1, s1);
                let mut z = (c0, s0);
                for (i, b) in base.iter().enumerate() {
                    if i % 256 == 0 && i > 0 {
                        // re-anchor to keep rounding from accumulating
                        let (s, c) = (-TAU * frac(f * t[i])).sin_cos();
                        z = (c, s);
                    }
                    let v = cmul(*b, z);
                    re += v.0;
                    im += v.1;
                    z = cmul(z, step);
                }
            } else {
                for (b, &ti) in base.iter().zip(t) {
                    let (s, c) = (-TAU * frac(f * ti)).sin_cos();
                    let v = cmul(*b, (c, s));
                    re += v.0;
                    im += v.1;
                }
            }
            let p = re * re + im * im;
            if best.is_none_or(|b| p > b.1) {
                best = Some((j, p));
            }
        }
        best.map(|b| b.0)
    }

    fn fill_phases(&mut self, f: f64, f_resp: f64) {
        let u = &mut self.b.u;
        u.clear();
        match self.s.dither {
            Some(d) => u.extend(self.s.t.iter().zip(d).map(|(t, d)| frac(f * t + d * f_resp))),
            None => u.extend(self.s.t.iter().map(|t| frac(f * t))),
        }
    }

    /// Model values `a * S(u_i + k/steps)` without the level.
    pub fn model(&mut self, f: f64, k: usize, steps: usize, amp: f64) -> Vec<f64> {
        let f_resp = self.ctx.own_f - f;
        self.fill_phases(f, f_resp);
        let c = k as f64 / steps as f64;
        let coef = self.coefficients(f);
        self.b
            .u
            .iter()
            .map(|&u| match &coef {
                Some(b) => amp * smooth_sawtooth(u + c, b),
                None => amp * frac(u + c),
            })
            .collect()
    }
}

/// Sharp-sawtooth sufficient statistics via phase buckets.
fn bucket_stats(b: &mut Buckets, r: &[f64], steps: usize, emit: &mut impl FnMut(usize, f64, f64, f64)) {
    let kf = steps as f64;
    let n = r.len() as f64;
    let p: f64 = r.iter().sum();
    b.reset(steps);
    let Buckets { cnt, su, suu, sru, sr, u, .. } = b;
    for (&u, &r) in u.iter().zip(r) {
        let j = ((u * kf) as usize).min(steps - 1);
        cnt[j] += 1.0;
        su[j] += u;
        suu[j] += u * u;
        sru[j] += r * u;
        sr[j] += r;
    }
    let tot_u: f64 = su.iter().sum();
    let tot_uu: f64 = suu.iter().sum();
    let tot_ru: f64 = sru.iter().sum();
    let (mut w, mut uw, mut pw) = (0.0, 0.0, 0.0);
    for k in 0..steps {
        if k > 0 {
            let j = steps - k;
            w += cnt[j];
            uw += su[j];
            pw += sr[j];
        }
        let c = k as f64 / kf;
        let sv = tot_u + n * c - w;
        let svv = tot_uu + 2.0 * c * tot_u + n * c * c - 2.0 * (uw + c * w) + w;
        let srv = tot_ru + c * p - pw;
        emit(k, sv, svv, srv);
    }
}

#[inline]
fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Noise-averaged sufficient statistics via harmonic sums.
fn harmonic_stats(bk: &mut Buckets, r: &[f64], b: &[f64], steps: usize, emit: &mut impl FnMut(usize, f64, f64, f64)) {
    let m = b.len();
    let n = r.len() as f64;
    let p: f64 = r.iter().sum();
    // h[k] = sum r e^{2 pi i k u}, g[k] = sum e^{2 pi i k u}, k = 0..=2m
    bk.h.clear();
    bk.h.resize(m + 1, (0.0, 0.0));
    bk.g.clear();
    bk.g.resize(2 * m + 1, (0.0, 0.0));
    for (&u, &r) in bk.u.iter().zip(r) {
        let (s1, c1) = (TAU * u).sin_cos();
        let z = (c1, s1);
        let mut zk = (1.0, 0.0);
        for k in 1..=2 * m {
            zk = cmul(zk, z);
            bk.g[k].0 += zk.0;
            bk.g[k].1 += zk.1;
            if k <= m {
                bk.h[k].0 += r * zk.0;
                bk.h[k].1 += r * zk.1;
            }
        }
    }
    bk.g[0] = (n, 0.0);
    let g = |k: i64| -> (f64, f64) {
        let v = bk.g[k.unsigned_abs() as usize];
        if k < 0 {
            (v.0, -v.1)
        } else {
            v
        }
    };
    let mut rot = vec![(0.0, 0.0); 2 * m + 1];
    for k in 0..steps {
        let c = k as f64 / steps as f64;
        for (j, w) in rot.iter_mut().enumerate() {
            let (s, co) = (TAU * j as f64 * c).sin_cos();
            *w = (co, s);
        }
        let rot_at = |j: i64| -> (f64, f64) {
            let v = rot[j.unsigned_abs() as usize];
            if j < 0 {
                (v.0, -v.1)
            } else {
                v
            }
        };
        let mut srv = 0.5 * p;
        let mut sv = 0.5 * n;
        let mut svv = 0.25 * n;
        for (i, &bi) in b.iter().enumerate() {
            let ki = (i + 1) as i64;
            srv -= bi * cmul(bk.h[ki as usize], rot_at(ki)).1;
            let gs = cmul(g(ki), rot_at(ki)).1;
            sv -= bi * gs;
            svv -= bi * gs;
            for (j, &bj) in b.iter().enumerate() {
                let kj = (j + 1) as i64;
                let diff = cmul(g(ki - kj), rot_at(ki - kj)).0;
                let sum = cmul(g(ki + kj), rot_at(ki + kj)).0;
                svv += bi * bj * 0.5 * (diff - sum);
            }
        }
        emit(k, sv, svv, srv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(t: &[f64], r: &[f64], f: f64, c: f64, a: f64) -> f64 {
        let d: Vec<f64> = t.iter().zip(r).map(|(t, r)| r - a * frac(f * t + c)).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|x| (x - m) * (x - m)).sum()
    }

    #[test]
    fn matches_direct_evaluation() {
        let t: Vec<f64> = (0..300).map(|i| i as f64 * 1e-3 - 0.15).collect();
        let r: Vec<f64> = t.iter().map(|t| 3.0 * frac(7.3 * t + 0.2) + (t * 91.0).sin() * 0.3).collect();
        let mut sc = Scanner::new(Samples { t: &t, r: &r, dither: None }, Ctx { own_f: 100.0, amp: Amp::Fixed(3.0), sigma_inner: 0.0, noise_period: None });
        for f in [-20.0, 1.0, 7.3, 11.1] {
            let hit = sc.best_phase(0, f, 37, None).unwrap();
            let brute = (0..37)
                .map(|k| (k, direct(&t, &r, f, k as f64 / 37.0, 3.0)))
                .fold((0, f64::MAX), |a, b| if b.1 < a.1 { b } else { a });
            assert_eq!(hit.k, brute.0);
            assert!((hit.cost - brute.1).abs() < 1e-9 * (1.0 + brute.1));
        }
    }

    #[test]
    fn free_amplitude_recovers_scale() {
        let t: Vec<f64> = (0..500).map(|i| i as f64 * 1e-3).collect();
        let r: Vec<f64> = t.iter().map(|t| 2.5 * frac(4.0 * t + 0.25) - 1.0).collect();
        let grid = PeriodGrid { lo: 0.5, hi: 5.0, step: 0.5 };
        let mut sc = Scanner::new(Samples { t: &t, r: &r, dither: None }, Ctx { own_f: 0.0, amp: Amp::Free(grid), sigma_inner: 0.0, noise_period: None });
        let hit = sc.best_phase(0, 4.0, 8, None).unwrap();
        assert_eq!(hit.k, 2);
        assert_eq!(hit.amp, 2.5);
        assert!(hit.cost < 1e-20);
    }

    #[test]
    fn harmonic_path_matches_direct_smoothed_model() {
        let t: Vec<f64> = (0..400).map(|i| i as f64 * 1e-3 - 0.2).collect();
        let r: Vec<f64> = t.iter().map(|t| 2.0 * frac(5.5 * t + 0.4) + (t * 37.0).cos() * 0.2).collect();
        let ctx = Ctx { own_f: 100.0, amp: Amp::Fixed(2.0), sigma_inner: 0.1 * 2.0, noise_period: Some(2.0) };
        let mut sc = Scanner::new(Samples { t: &t, r: &r, dither: None }, ctx);
        let b = sc.coefficients(5.5).expect("0.1 of a period is smooth");
        assert!(b.len() <= MAX_HARMONICS);
        for f in [-3.0, 5.5, 9.25] {
            let hit = sc.best_phase(0, f, 29, None).unwrap();
            let cost_at = |k: usize| {
                let d: Vec<f64> = t.iter().zip(&r).map(|(t, r)| r - 2.0 * smooth_sawtooth(frac(f * t) + k as f64 / 29.0, &b)).collect();
                let m = d.iter().sum::<f64>() / d.len() as f64;
                d.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            };
            let brute = (0..29).map(|k| (k, cost_at(k))).fold((0, f64::MAX), |a, b| if b.1 < a.1 { b } else { a });
            assert_eq!(hit.k, brute.0);
            assert!((hit.cost - brute.1).abs() < 1e-9 * (1.0 + brute.1));
        }
    }

    #[test]
    fn smoothing_vanishes_for_small_noise() {
        assert!(smooth_coefficients(0.0).is_none());
        assert!(smooth_coefficients(1e-4).is_none());
        let b = smooth_coefficients(0.3).unwrap();
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn circular_argmax_agrees_with_direct_power() {
        let t: Vec<f64> = (0..1000).map(|i| i as f64 * 1e-3 - 0.5).collect();
        let r: Vec<f64> = t.iter().map(|t| frac(-12.0 * t + 0.3) + 0.05 * (t * 311.0).sin()).collect();
        let ctx = Ctx { own_f: 1e6, amp: Amp::Fixed(1.0), sigma_inner: 0.0, noise_period: None };
        let mut sc = Scanner::new(Samples { t: &t, r: &r, dither: None }, ctx);
        let freqs: Vec<f64> = (-30..=30).map(|f| f as f64).collect();
        let j = sc.circular_argmax(&freqs).unwrap();
        let direct = (0..freqs.len())
            .map(|j| (j, sc.circular_power(freqs[j]).unwrap()))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(j, direct.0);
        assert_eq!(freqs[j], -12.0);
    }
}
