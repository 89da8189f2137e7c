//! Sequential stopping engines.
//!
//! Both procedures work on the weighted LLRs `λ_W^j(n) = λ^j(n) + log W_j`,
//! ranked in descending order with ties broken by ascending stream index.
//! Order statistics outside `1..=J` follow the convention
//! `λ_W^(0) = +inf` and `λ_W^(J+1) = -inf`.
//!
//! * Weighted gap ([`GapConfig`]): stop at the first `n` with
//!   `λ_W^(m) - λ_W^(m+1) >= c` and reject the top `m` streams.
//! * Weighted gap-intersection ([`GIConfig`]): stop at the first of
//!   - τ1: `λ_W^(l+1) <= -a` and `λ_W^(l) - λ_W^(l+1) >= c`,
//!   - τ2: `l <= p_W <= u` and no `λ_W^j` inside `(-a, b)`,
//!   - τ3: `λ_W^(u) >= b` and `λ_W^(u) - λ_W^(u+1) >= d`,
//!
//!   and reject the streams with positive WLLR, truncated to `[l, u]` by
//!   WLLR rank.

use std::cmp::Ordering;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;

use crate::error::{check_level, Error, Result};
use crate::model::{Rate, StreamModel, TrialState, TruthAssignment};
use crate::thresholds::{GIThresholds, GapThreshold, Threshold};
use crate::weights::WeightVector;

/// Which rule ended sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FiredRule {
    Gap,
    Tau1,
    Tau2,
    Tau3,
    TruncatedCap,
}

impl fmt::Display for FiredRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FiredRule::Gap => "gap",
            FiredRule::Tau1 => "tau1",
            FiredRule::Tau2 => "tau2",
            FiredRule::Tau3 => "tau3",
            FiredRule::TruncatedCap => "truncated-cap",
        })
    }
}

/// Outcome of a sequential test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub stop_time: u64,
    /// Rejected (declared-signal) streams, ascending.
    pub rejected: Vec<usize>,
    pub fired_rule: FiredRule,
}

impl Decision {
    pub fn cap_hit(&self) -> bool {
        self.fired_rule == FiredRule::TruncatedCap
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopStatus {
    Continue,
    Stop(Decision),
}

impl StopStatus {
    pub fn decision(&self) -> Option<&Decision> {
        match self {
            StopStatus::Continue => None,
            StopStatus::Stop(d) => Some(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapConfig {
    pub threshold: GapThreshold,
    pub weights: WeightVector,
}

impl GapConfig {
    pub fn new(threshold: GapThreshold, weights: WeightVector) -> Result<Self> {
        let j = weights.len();
        if threshold.m == 0 || threshold.m >= j {
            return Err(Error::CountOutOfRange {
                name: "m",
                value: threshold.m,
                lo: 1,
                hi: j.saturating_sub(1),
            });
        }
        Ok(GapConfig { threshold, weights })
    }

    /// Calibrates the threshold on `weights` and wraps both.
    pub fn calibrated(alpha: f64, m: usize, weights: WeightVector) -> Result<Self> {
        let threshold = crate::thresholds::calibrate_gap(alpha, m, &weights)?;
        Self::new(threshold, weights)
    }

    pub fn m(&self) -> usize {
        self.threshold.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GIConfig {
    pub thresholds: GIThresholds,
    pub weights: WeightVector,
}

impl GIConfig {
    pub fn new(thresholds: GIThresholds, weights: WeightVector) -> Result<Self> {
        let j = weights.len();
        if thresholds.u > j || thresholds.l > thresholds.u {
            return Err(Error::InvalidParameter(format!(
                "interval [{}, {}] not within [0, {j}]",
                thresholds.l, thresholds.u
            )));
        }
        Ok(GIConfig { thresholds, weights })
    }

    pub fn calibrated(alpha: f64, beta: f64, l: usize, u: usize, weights: WeightVector) -> Result<Self> {
        let thresholds = crate::thresholds::calibrate_gi(alpha, beta, l, u, &weights)?;
        Self::new(thresholds, weights)
    }
}

/// Ranking order: descending value, then ascending stream index. Values
/// must not be NaN.
#[inline]
pub fn rank_cmp(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Weighted LLRs paired with their stream index, ranked by [`rank_cmp`].
pub fn ordered_wllr(state: &TrialState, weights: &WeightVector) -> Vec<(f64, usize)> {
    let mut buf = Vec::new();
    fill_wllr(&mut buf, state, weights.log_weights());
    buf.sort_by(rank_cmp);
    buf
}

/// Number of streams with strictly positive weighted LLR.
pub fn count_positive_wllr(state: &TrialState, weights: &WeightVector) -> usize {
    state
        .llr()
        .iter()
        .zip(weights.log_weights())
        .filter(|(l, w)| *l + *w > 0.0)
        .count()
}

fn fill_wllr(buf: &mut Vec<(f64, usize)>, state: &TrialState, log_w: &[f64]) {
    debug_assert_eq!(state.num_streams(), log_w.len());
    buf.clear();
    buf.extend(
        state
            .llr()
            .iter()
            .zip(log_w)
            .enumerate()
            .map(|(k, (l, w))| (l + w, k)),
    );
}

/// `(λ^(k), λ^(k+1))` for `0 <= k <= J`. Partially reorders `buf` so that
/// `buf[..k]` holds the top `k` entries.
fn order_stat_pair(buf: &mut [(f64, usize)], k: usize) -> (f64, f64) {
    let j = buf.len();
    if k == 0 {
        let top = buf.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        return (f64::INFINITY, top);
    }
    if k >= j {
        let bottom = buf.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        return (bottom, f64::NEG_INFINITY);
    }
    buf.select_nth_unstable_by(k, rank_cmp);
    let kth = buf[..k].iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    (kth, buf[k].0)
}

/// Indices of the top `k` ranked entries, ascending.
fn top_k_indices(buf: &mut [(f64, usize)], k: usize) -> Vec<usize> {
    if k > 0 && k < buf.len() {
        buf.select_nth_unstable_by(k, rank_cmp);
    }
    let mut out: Vec<usize> = buf[..k.min(buf.len())].iter().map(|e| e.1).collect();
    out.sort_unstable();
    out
}

/// A stopping rule evaluated on the current trial state.
pub trait StoppingRule {
    fn weights(&self) -> &WeightVector;

    /// Checks the rule at the current time. `scratch` is a reusable buffer.
    fn check(&self, state: &TrialState, scratch: &mut Vec<(f64, usize)>) -> StopStatus;

    /// Decision reported when sampling is cut off at the safety cap.
    fn forced_decision(&self, state: &TrialState, scratch: &mut Vec<(f64, usize)>) -> Vec<usize>;
}

impl StoppingRule for GapConfig {
    fn weights(&self) -> &WeightVector {
        &self.weights
    }

    fn check(&self, state: &TrialState, scratch: &mut Vec<(f64, usize)>) -> StopStatus {
        fill_wllr(scratch, state, self.weights.log_weights());
        let m = self.m();
        let (mth, next) = order_stat_pair(scratch, m);
        if mth - next >= self.threshold.c {
            StopStatus::Stop(Decision {
                stop_time: state.time(),
                rejected: top_k_indices(scratch, m),
                fired_rule: FiredRule::Gap,
            })
        } else {
            StopStatus::Continue
        }
    }

    fn forced_decision(&self, state: &TrialState, scratch: &mut Vec<(f64, usize)>) -> Vec<usize> {
        fill_wllr(scratch, state, self.weights.log_weights());
        top_k_indices(scratch, self.m())
    }
}

impl GIConfig {
    fn decision_size(&self, positives: usize) -> usize {
        positives.clamp(self.thresholds.l, self.thresholds.u)
    }
}

impl StoppingRule for GIConfig {
    fn weights(&self) -> &WeightVector {
        &self.weights
    }

    fn check(&self, state: &TrialState, scratch: &mut Vec<(f64, usize)>) -> StopStatus {
        fill_wllr(scratch, state, self.weights.log_weights());
        let th = &self.thresholds;
        let (neg_a, b) = (-th.a, th.b);
        let (mut positives, mut above_neg_a, mut at_least_b, mut undecided) = (0, 0, 0, 0);
        for &(v, _) in scratch.iter() {
            positives += (v > 0.0) as usize;
            above_neg_a += (v > neg_a) as usize;
            at_least_b += (v >= b) as usize;
            undecided += (v > neg_a && v < b) as usize;
        }

        // λ^(l+1) <= -a iff at most l values exceed -a; λ^(u) >= b iff at
        // least u values reach b. Only then are the order statistics needed.
        let tau1 = match th.c {
            Threshold::Active(c) if above_neg_a <= th.l => {
                let (hi, lo) = order_stat_pair(scratch, th.l);
                hi - lo >= c
            }
            _ => false,
        };
        let tau2 = !tau1 && undecided == 0 && (th.l..=th.u).contains(&positives);
        let tau3 = !tau1
            && !tau2
            && match th.d {
                Threshold::Active(d) if at_least_b >= th.u => {
                    let (hi, lo) = order_stat_pair(scratch, th.u);
                    hi >= b && hi - lo >= d
                }
                _ => false,
            };
        let fired_rule = if tau1 {
            FiredRule::Tau1
        } else if tau2 {
            FiredRule::Tau2
        } else if tau3 {
            FiredRule::Tau3
        } else {
            return StopStatus::Continue;
        };
        StopStatus::Stop(Decision {
            stop_time: state.time(),
            rejected: top_k_indices(scratch, self.decision_size(positives)),
            fired_rule,
        })
    }

    fn forced_decision(&self, state: &TrialState, scratch: &mut Vec<(f64, usize)>) -> Vec<usize> {
        fill_wllr(scratch, state, self.weights.log_weights());
        let positives = scratch.iter().filter(|e| e.0 > 0.0).count();
        top_k_indices(scratch, self.decision_size(positives))
    }
}

/// Evaluates the weighted gap rule on `state`.
pub fn gap_step(state: &TrialState, cfg: &GapConfig) -> StopStatus {
    cfg.check(state, &mut Vec::with_capacity(state.num_streams()))
}

/// Evaluates the weighted gap-intersection rule on `state`. When several
/// component rules hold at once the lowest-index one is reported; the
/// decision does not depend on which.
pub fn gi_step(state: &TrialState, cfg: &GIConfig) -> StopStatus {
    cfg.check(state, &mut Vec::with_capacity(state.num_streams()))
}

/// One running trial of a sequential procedure.
///
/// Each call to [`Trial::step`] draws one observation per stream and checks
/// the rule, so independent trials can be interleaved by a single caller.
pub struct Trial<'a, P: StoppingRule> {
    models: &'a [StreamModel],
    truth: &'a TruthAssignment,
    rule: &'a P,
    max_steps: u64,
    state: TrialState,
    scratch: Vec<(f64, usize)>,
    finished: bool,
}

impl<'a, P: StoppingRule> Trial<'a, P> {
    pub fn new(models: &'a [StreamModel], truth: &'a TruthAssignment, rule: &'a P, max_steps: u64) -> Result<Self> {
        let j = rule.weights().len();
        for got in [models.len(), truth.num_streams()] {
            if got != j {
                return Err(Error::DimensionMismatch { expected: j, got });
            }
        }
        if max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
        }
        Ok(Trial {
            models,
            truth,
            rule,
            max_steps,
            state: TrialState::new(j),
            scratch: Vec::with_capacity(j),
            finished: false,
        })
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    /// Advances one time step. Panics if called after a decision was emitted.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StopStatus {
        assert!(!self.finished, "trial already stopped");
        self.state.observe(self.models, self.truth, rng);
        let mut status = self.rule.check(&self.state, &mut self.scratch);
        if status == StopStatus::Continue && self.state.time() >= self.max_steps {
            status = StopStatus::Stop(Decision {
                stop_time: self.state.time(),
                rejected: self.rule.forced_decision(&self.state, &mut self.scratch),
                fired_rule: FiredRule::TruncatedCap,
            });
        }
        self.finished = status != StopStatus::Continue;
        status
    }

    pub fn run<R: Rng + ?Sized>(mut self, rng: &mut R) -> Decision {
        loop {
            if let StopStatus::Stop(d) = self.step(rng) {
                return d;
            }
        }
    }

    /// Like [`Trial::run`], writing `n,stream,llr,wllr` rows for every step.
    pub fn run_traced<R: Rng + ?Sized, W: Write>(mut self, rng: &mut R, mut out: W) -> io::Result<Decision> {
        writeln!(out, "n,stream,llr,wllr")?;
        loop {
            let status = self.step(rng);
            let n = self.state.time();
            for (k, (l, w)) in self.state.llr().iter().zip(self.rule.weights().log_weights()).enumerate() {
                writeln!(out, "{n},{k},{l},{}", l + w)?;
            }
            if let StopStatus::Stop(d) = status {
                return Ok(d);
            }
        }
    }
}

/// Runs the weighted gap procedure until it stops or `max_steps` is reached.
pub fn run_gap<R: Rng + ?Sized>(
    models: &[StreamModel],
    truth: &TruthAssignment,
    cfg: &GapConfig,
    rng: &mut R,
    max_steps: u64,
) -> Result<Decision> {
    Ok(Trial::new(models, truth, cfg, max_steps)?.run(rng))
}

/// Runs the weighted gap-intersection procedure until it stops or
/// `max_steps` is reached.
pub fn run_gi<R: Rng + ?Sized>(
    models: &[StreamModel],
    truth: &TruthAssignment,
    cfg: &GIConfig,
    rng: &mut R,
    max_steps: u64,
) -> Result<Decision> {
    Ok(Trial::new(models, truth, cfg, max_steps)?.run(rng))
}

/// First time every signal's WLLR exceeds every null's by more than `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConservativeTime {
    pub time: u64,
    pub capped: bool,
}

/// The conservative stopping time `T̃_W` of the gap procedure.
///
/// Draws observations in the same order as [`run_gap`], so an identically
/// seeded generator replays the same path and `run_gap(..).stop_time <= T̃_W`.
pub fn conservative_gap_time<R: Rng + ?Sized>(
    models: &[StreamModel],
    truth: &TruthAssignment,
    cfg: &GapConfig,
    rng: &mut R,
    max_steps: u64,
) -> Result<ConservativeTime> {
    let j = cfg.weights.len();
    for got in [models.len(), truth.num_streams()] {
        if got != j {
            return Err(Error::DimensionMismatch { expected: j, got });
        }
    }
    if max_steps == 0 {
        return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
    }
    let log_w = cfg.weights.log_weights();
    let c = cfg.threshold.c;
    let mut state = TrialState::new(j);
    loop {
        state.observe(models, truth, rng);
        let (mut min_signal, mut max_null) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((l, w), &s) in state.llr().iter().zip(log_w).zip(truth.mask()) {
            let v = l + w;
            if s {
                min_signal = min_signal.min(v);
            } else {
                max_null = max_null.max(v);
            }
        }
        if min_signal > max_null + c {
            return Ok(ConservativeTime { time: state.time(), capped: false });
        }
        if state.time() >= max_steps {
            return Ok(ConservativeTime { time: state.time(), capped: true });
        }
    }
}

/// Safety cap `ceil(50 |log min(α, β)| / (η1 + η0))`.
pub fn default_max_steps(alpha: f64, beta: f64, eta1: f64, eta0: f64) -> Result<u64> {
    check_level("alpha", alpha)?;
    check_level("beta", beta)?;
    check_rates(eta1, eta0)?;
    Ok((50.0 * alpha.min(beta).ln().abs() / (eta1 + eta0)).ceil().max(1.0) as u64)
}

fn check_rates(eta1: f64, eta0: f64) -> Result<()> {
    if eta1 > 0.0 && eta0 > 0.0 && eta1.is_finite() && eta0.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "information rates must be positive and finite, got eta1 = {eta1}, eta0 = {eta0}"
        )))
    }
}

/// Asymptotic ESS lower bound `|log α| / (η1 + η0)` for known signal count.
pub fn lower_bound_gap(alpha: f64, eta1: f64, eta0: f64) -> Result<f64> {
    check_level("alpha", alpha)?;
    check_rates(eta1, eta0)?;
    Ok(alpha.ln().abs() / (eta1 + eta0))
}

/// Asymptotic ESS lower bound for a signal count known to lie in `[l, u]`.
///
/// An `Unbounded` rate (empty signal or null set) makes every term it
/// divides vanish. When `l == u` both boundary cases coincide with the
/// known-count problem and the bound is `max(|log α|, |log β|) / (η1 + η0)`.
pub fn lower_bound_gi(
    alpha: f64,
    beta: f64,
    size_a: usize,
    l: usize,
    u: usize,
    eta1: Rate,
    eta0: Rate,
) -> Result<f64> {
    check_level("alpha", alpha)?;
    check_level("beta", beta)?;
    if l > u || size_a < l || size_a > u {
        return Err(Error::CountOutOfRange { name: "|A|", value: size_a, lo: l, hi: u });
    }
    for rate in [eta1, eta0] {
        if let Rate::Finite(v) = rate {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("information rate {v} must be positive")));
            }
        }
    }
    let (la, lb) = (alpha.ln().abs(), beta.ln().abs());
    let term = |level: f64, rates: &[Rate]| -> f64 {
        let mut total = 0.0;
        for r in rates {
            match r {
                Rate::Finite(v) => total += v,
                Rate::Unbounded => return 0.0,
            }
        }
        level / total
    };
    let both = [eta1, eta0];
    Ok(if l == u {
        term(la.max(lb), &both)
    } else if size_a == l {
        term(lb, &[eta0]).max(term(la, &both))
    } else if size_a == u {
        term(la, &[eta1]).max(term(lb, &both))
    } else {
        term(lb, &[eta0]).max(term(la, &[eta1]))
    })
}
