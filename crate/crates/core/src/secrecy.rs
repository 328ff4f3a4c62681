//! Secret-bit accounting and a bin-index key derivation.
//!
//! Each clock's offset from `f0` lies in a band of total width
//! `ppm * 1e-6 * f0` split into `n` bins of `df_bin`. A pair of offsets is
//! usable when the difference it implies falls inside the range the
//! estimator is certified for; the pairs are counted as area over the
//! `n x n` grid of bin cells.

use std::f64::consts::TAU;

use crate::error::{ensure_finite, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetInputs {
    /// Total clock tolerance, parts per million.
    pub ppm: f64,
    pub f0: f64,
    pub df_bin: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub phi_res: f64,
    pub rho_range: f64,
    pub rho_res: f64,
}

impl BudgetInputs {
    /// 10 ppm at 100 MHz, 1 Hz bins, `|f_d|` in [2, 1000] Hz, 0.1 rad,
    /// 100 m at 2 cm.
    pub fn desk() -> Self {
        BudgetInputs { ppm: 10.0, f0: 1e8, df_bin: 1.0, f_min: 2.0, f_max: 1000.0, phi_res: 0.1, rho_range: 100.0, rho_res: 0.02 }
    }

    /// Half-width of the offset band, Hz.
    pub fn half_width(&self) -> f64 {
        self.ppm * 1e-6 * self.f0 / 2.0
    }

    /// Lower edge of the lowest frequency bin.
    pub fn f_lowest(&self) -> f64 {
        self.f0 - self.half_width()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ppm", self.ppm),
            ("f0", self.f0),
            ("df_bin", self.df_bin),
            ("phi_res", self.phi_res),
            ("rho_range", self.rho_range),
            ("rho_res", self.rho_res),
        ];
        for (k, v) in fields {
            ensure_finite(k, v)?;
            if v <= 0.0 {
                return Err(invalid(format!("{k} must be positive")));
            }
        }
        ensure_finite("f_min", self.f_min)?;
        ensure_finite("f_max", self.f_max)?;
        if self.f_min < 0.0 {
            return Err(invalid("f_min must be non-negative"));
        }
        self.grid()?;
        Ok(())
    }

    /// Cells per axis and the band edges in bins.
    fn grid(&self) -> Result<(u64, i64, i64)> {
        let whole = |x: f64, what: &str| -> Result<f64> {
            let r = x.round();
            if (x - r).abs() > 1e-9 * x.abs().max(1.0) {
                return Err(Error::Domain(format!("{what} is not a whole number of bins")));
            }
            Ok(r)
        };
        let n = whole(2.0 * self.half_width() / self.df_bin, "the offset band")?;
        if !(1.0..=1e7).contains(&n) {
            return Err(Error::Domain(format!("{n} bins per axis is outside the supported range")));
        }
        let lo = whole(self.f_min / self.df_bin, "f_min")?;
        let hi = whole(self.f_max / self.df_bin, "f_max")?;
        Ok((n as u64, lo as i64, hi as i64))
    }
}

/// Half-cells of cell `(i, j)` inside `lo <= |x - y| <= hi`, in bin units.
///
/// With integer band edges every edge line either passes through the cell
/// centre along the diagonal or through its corners, so the answer is 0, 1
/// or 2 halves.
fn halves_in_band(i: u64, j: u64, lo: i64, hi: i64) -> u64 {
    let d = i.abs_diff(j) as i64;
    if d == 0 {
        // both halves span |x - y| in [0, 1]
        return if lo <= 0 && 1 <= hi { 2 } else { 0 };
    }
    // one half spans |x - y| in [d - 1, d], the other [d, d + 1]
    let lower = lo < d && d <= hi;
    let upper = lo <= d && d < hi;
    lower as u64 + upper as u64
}

/// Number of usable `(f_A, f_B)` bin pairs, by enumerating every cell.
/// Cells cut in half by a band edge count one half.
pub fn count_valid_pairs(inputs: &BudgetInputs) -> Result<f64> {
    inputs.validate()?;
    let (n, lo, hi) = inputs.grid()?;
    if lo > hi {
        return Ok(0.0);
    }
    let mut halves = 0u64;
    for i in 0..n {
        for j in 0..n {
            halves += halves_in_band(i, j, lo, hi);
        }
    }
    Ok(halves as f64 / 2.0)
}

/// Closed form of the same count: the square minus the two corner
/// triangles beyond `hi` minus the diagonal strip below `lo`.
pub fn two_triangle_area(inputs: &BudgetInputs) -> Result<f64> {
    inputs.validate()?;
    let (n, lo, hi) = inputs.grid()?;
    if lo > hi {
        return Ok(0.0);
    }
    let n = n as f64;
    let below = |e: f64| (n - e).max(0.0).powi(2);
    Ok(below(lo as f64) - below(hi as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecrecyBudget {
    pub cardinality_t: f64,
    pub n_f: u32,
    pub n_phi: u32,
    pub n_rho: u32,
    pub n_total: u32,
    /// Unrounded base-2 logarithms behind each count.
    pub log2_f: f64,
    pub log2_phi: f64,
    pub log2_rho: f64,
    /// The same logarithms rounded to the nearest integer, and their sum.
    pub rounded_f: u32,
    pub rounded_phi: u32,
    pub rounded_rho: u32,
    pub rounded_total: u32,
}

fn bits(x: f64) -> (f64, u32, u32) {
    let l = x.log2();
    if !(l > 0.0) {
        return (l.max(0.0), 0, 0);
    }
    // exact powers of two must not fall one short through rounding
    (l, (l + 1e-9).floor() as u32, l.round() as u32)
}

pub fn budget(inputs: &BudgetInputs) -> Result<SecrecyBudget> {
    let card = count_valid_pairs(inputs)?;
    let (log2_f, n_f, rounded_f) = bits(card);
    let (log2_phi, n_phi, rounded_phi) = bits(TAU / inputs.phi_res);
    let (log2_rho, n_rho, rounded_rho) = bits(inputs.rho_range / inputs.rho_res);
    Ok(SecrecyBudget {
        cardinality_t: card,
        n_f,
        n_phi,
        n_rho,
        n_total: n_f + n_phi + n_rho,
        log2_f,
        log2_phi,
        log2_rho,
        rounded_f,
        rounded_phi,
        rounded_rho,
        rounded_total: rounded_f + rounded_phi + rounded_rho,
    })
}

/// One side's view of the four shared values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyMaterial {
    pub f_a: f64,
    pub f_b: f64,
    pub phi_test: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub alice: String,
    pub bob: String,
}

impl KeyPair {
    pub fn agree(&self) -> bool {
        self.alice == self.bob
    }
}

fn push_bits(out: &mut String, value: u64, width: u32) {
    for b in (0..width).rev() {
        out.push(if (value >> b) & 1 == 1 { '1' } else { '0' });
    }
}

fn field(fraction: f64, width: u32) -> u64 {
    ((fraction * (1u64 << width) as f64) as u64).min((1u64 << width) - 1)
}

fn quantize(m: &KeyMaterial, inputs: &BudgetInputs, b: &SecrecyBudget) -> Result<String> {
    let (n, _, _) = inputs.grid()?;
    let bin = |f: f64, name: &str| -> Result<u64> {
        ensure_finite(name, f)?;
        let x = ((f - inputs.f_lowest()) / inputs.df_bin).floor();
        if x < 0.0 || x >= n as f64 {
            return Err(Error::Range(format!("{name} = {f} Hz is outside the clock tolerance band")));
        }
        Ok(x as u64)
    };
    let joint = bin(m.f_a, "f_A")? * n + bin(m.f_b, "f_B")?;
    ensure_finite("phi_test", m.phi_test)?;
    if !(0.0..TAU).contains(&m.phi_test) {
        return Err(Error::Range(format!("phi_test = {} is outside [0, 2pi)", m.phi_test)));
    }
    ensure_finite("rho", m.rho)?;
    if !(0.0..inputs.rho_range).contains(&m.rho) {
        return Err(Error::Range(format!("rho = {} m is outside [0, {})", m.rho, inputs.rho_range)));
    }
    let mut s = String::with_capacity(b.n_total as usize);
    push_bits(&mut s, field(joint as f64 / (n * n) as f64, b.n_f), b.n_f);
    push_bits(&mut s, field(m.phi_test / TAU, b.n_phi), b.n_phi);
    push_bits(&mut s, field(m.rho / inputs.rho_range, b.n_rho), b.n_rho);
    Ok(s)
}

/// Quantizes both sides' values into the budget's bins and concatenates the
/// bin indices MSB-first as `(f_A, f_B), phi_test, rho`. The frequency pair
/// is one joint index scaled into `N_f` bits.
pub fn derive_key(alice: &KeyMaterial, bob: &KeyMaterial, inputs: &BudgetInputs) -> Result<KeyPair> {
    let b = budget(inputs)?;
    if b.n_f.max(b.n_phi).max(b.n_rho) > 63 {
        return Err(invalid("a key field wider than 63 bits"));
    }
    Ok(KeyPair { alice: quantize(alice, inputs, &b)?, bob: quantize(bob, inputs, &b)? })
}
