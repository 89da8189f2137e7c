//! FWE-calibrated stopping thresholds and the corresponding error bounds.
//!
//! Thresholds are set at equality with their sufficient conditions:
//!
//! * gap: `c = |log α| + log C_W(m, J)`
//! * gap-intersection: `b = |log(α/2)| + log sum_{j>l} W_(j)`,
//!   `a = |log(β/2)| + log sum_{k<=u} 1/W_(k)`,
//!   `c = |log(α/2)| + log C_W(l, J)`, `d = |log(β/2)| + log C_W(u, J)`.
//!
//! `C_W` vanishes at the interval boundaries; the matching gap threshold is
//! then [`Threshold::Inactive`] and its boundary rule is disabled.

use std::fmt;

use crate::error::{check_level, Error, Result};
use crate::model::TruthAssignment;
use crate::weights::{c_w, max_complement_weight_sum, max_reciprocal_weight_sum, WeightVector};

/// A threshold that may be switched off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Active(f64),
    Inactive,
}

impl Threshold {
    /// `|log level| + log(factor)`, or `Inactive` when `factor == 0`.
    fn from_factor(level: f64, factor: f64) -> Self {
        if factor > 0.0 {
            Threshold::Active(level.ln().abs() + factor.ln())
        } else {
            Threshold::Inactive
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Active(v) => Some(v),
            Threshold::Inactive => None,
        }
    }

    pub fn is_active(self) -> bool {
        matches!(self, Threshold::Active(_))
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Active(v) => write!(f, "{v}"),
            Threshold::Inactive => f.write_str("inactive"),
        }
    }
}

/// Calibrated threshold of the weighted gap procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapThreshold {
    pub c: f64,
    pub alpha: f64,
    pub m: usize,
    /// `C_W(m, J)` for the weights the threshold was calibrated on.
    pub c_w: f64,
}

impl GapThreshold {
    pub const CSV_HEADER: &'static str = "alpha,m,c,c_w";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.alpha, self.m, self.c, self.c_w)
    }
}

/// Calibrated thresholds of the weighted gap-intersection procedure.
///
/// `b` is `-inf` when `l = J` and `a` is `-inf` when `u = 0`: the
/// corresponding error type cannot occur and the boundary never binds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GIThresholds {
    pub a: f64,
    pub b: f64,
    pub c: Threshold,
    pub d: Threshold,
    pub alpha: f64,
    pub beta: f64,
    pub l: usize,
    pub u: usize,
    pub c_w_l: f64,
    pub c_w_u: f64,
}

impl GIThresholds {
    pub const CSV_HEADER: &'static str = "alpha,beta,l,u,a,b,c,d,c_w_l,c_w_u";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.alpha, self.beta, self.l, self.u, self.a, self.b, self.c, self.d, self.c_w_l, self.c_w_u
        )
    }
}

/// Gap threshold for known signal count `m`, adapted to the given weights.
pub fn calibrate_gap(alpha: f64, m: usize, weights: &WeightVector) -> Result<GapThreshold> {
    check_level("alpha", alpha)?;
    let j = weights.len();
    if m == 0 || m >= j {
        return Err(Error::CountOutOfRange {
            name: "m",
            value: m,
            lo: 1,
            hi: j.saturating_sub(1),
        });
    }
    let cw = c_w(m, weights)?;
    Ok(GapThreshold {
        c: alpha.ln().abs() + cw.ln(),
        alpha,
        m,
        c_w: cw,
    })
}

/// Gap-intersection thresholds for a signal count known to lie in `[l, u]`.
pub fn calibrate_gi(alpha: f64, beta: f64, l: usize, u: usize, weights: &WeightVector) -> Result<GIThresholds> {
    check_level("alpha", alpha)?;
    check_level("beta", beta)?;
    let j = weights.len();
    if u > j {
        return Err(Error::CountOutOfRange { name: "u", value: u, lo: l, hi: j });
    }
    if l > u {
        return Err(Error::CountOutOfRange { name: "l", value: l, lo: 0, hi: u });
    }
    let half_alpha = alpha / 2.0;
    let half_beta = beta / 2.0;
    let b = half_alpha.ln().abs() + max_complement_weight_sum(l, weights)?.ln();
    let a = half_beta.ln().abs() + max_reciprocal_weight_sum(u, weights)?.ln();
    let c_w_l = c_w(l, weights)?;
    let c_w_u = c_w(u, weights)?;
    Ok(GIThresholds {
        a,
        b,
        c: Threshold::from_factor(half_alpha, c_w_l),
        d: Threshold::from_factor(half_beta, c_w_u),
        alpha,
        beta,
        l,
        u,
        c_w_l,
        c_w_u,
    })
}

fn set_sums(truth: &TruthAssignment, weights: &WeightVector) -> Result<(f64, f64)> {
    if truth.num_streams() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: truth.num_streams(),
        });
    }
    let w = weights.as_slice();
    let complement = truth.nulls().map(|k| w[k]).sum();
    let reciprocal = truth.signals().iter().map(|&k| 1.0 / w[k]).sum();
    Ok((complement, reciprocal))
}

/// `exp(-x) * factor`, with a vanishing factor contributing exactly zero.
fn scaled_tail(x: f64, factor: f64) -> f64 {
    if factor == 0.0 {
        0.0
    } else {
        (-x).exp() * factor
    }
}

/// Upper bound on `P_A(D != A)` for the gap procedure with threshold `c`.
/// Not clamped to 1.
pub fn fwe_bound_gap(c: f64, truth: &TruthAssignment, weights: &WeightVector) -> Result<f64> {
    let (complement, reciprocal) = set_sums(truth, weights)?;
    Ok(scaled_tail(c, complement * reciprocal))
}

/// Upper bounds on the type-I and type-II FWE of the gap-intersection
/// procedure under signal set `A`. Not clamped to 1.
pub fn fwe_bounds_gi(th: &GIThresholds, truth: &TruthAssignment, weights: &WeightVector) -> Result<(f64, f64)> {
    let (complement, reciprocal) = set_sums(truth, weights)?;
    let size = truth.num_signals();
    let gap_term = |t: Threshold, active_at: usize| match t {
        Threshold::Active(v) if size == active_at => scaled_tail(v, complement * reciprocal),
        _ => 0.0,
    };
    let type1 = scaled_tail(th.b, complement) + gap_term(th.c, th.l);
    let type2 = scaled_tail(th.a, reciprocal) + gap_term(th.d, th.u);
    Ok((type1, type2))
}
