//! Brute-force validators.
//!
//! Everything here is deliberately naive: subset enumeration instead of
//! closed forms, full sorts and literal order statistics instead of the
//! selection-based engines. The checks compare exactly, without tolerance,
//! except for the FWE bounds which are compared against their level.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{StreamModel, TrialState, TruthAssignment};
use crate::procedures::{gap_step, gi_step, Decision, FiredRule, GIConfig, GapConfig, StopStatus};
use crate::thresholds::{calibrate_gap, calibrate_gi, fwe_bound_gap, fwe_bounds_gi, GIThresholds, GapThreshold, Threshold};
use crate::weights::{c_w, c_w_bruteforce, max_complement_weight_sum, max_reciprocal_weight_sum, WeightVector};

/// Largest `J` the enumeration oracles accept.
pub const ORACLE_MAX_STREAMS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: String,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl OracleReport {
    fn new(name: &str) -> Self {
        OracleReport {
            name: name.to_string(),
            checked: 0,
            mismatches: Vec::new(),
        }
    }

    fn check<T: PartialEq + fmt::Debug>(&mut self, input: impl FnOnce() -> String, expected: T, got: T) {
        self.checked += 1;
        if expected != got {
            self.mismatches.push(Mismatch {
                input: input(),
                expected: format!("{expected:?}"),
                got: format!("{got:?}"),
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub const CSV_HEADER: &'static str = "oracle,checked,mismatches,input,expected,got";

    /// One summary row, followed by one row per mismatch.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = format!("{},{},{},,,\n", self.name, self.checked, self.mismatches.len());
        for m in &self.mismatches {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.name,
                self.checked,
                self.mismatches.len(),
                quote(&m.input),
                quote(&m.expected),
                quote(&m.got)
            ));
        }
        out
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {}: {} checks, {} mismatches",
            self.name,
            self.checked,
            self.mismatches.len()
        )?;
        for m in self.mismatches.iter().take(10) {
            write!(f, "\n  {}: expected {}, got {}", m.input, m.expected, m.got)?;
        }
        Ok(())
    }
}

fn check_j_max(j_max: usize) -> Result<()> {
    if j_max == 0 || j_max > ORACLE_MAX_STREAMS {
        return Err(Error::EnumerationTooLarge(j_max, ORACLE_MAX_STREAMS));
    }
    Ok(())
}

/// Log-uniform weights on `[e^-3, e^3]`.
fn random_weights<R: Rng + ?Sized>(rng: &mut R, j: usize) -> WeightVector {
    WeightVector::new((0..j).map(|_| rng.random_range(-3.0..3.0f64).exp()).collect())
        .expect("log-uniform weights are positive")
}

/// Closed-form `C_W` against subset enumeration, for every `m`.
pub fn verify_cw_closed_form<R: Rng + ?Sized>(j_max: usize, trials: usize, rng: &mut R) -> Result<OracleReport> {
    check_j_max(j_max)?;
    let mut report = OracleReport::new("c_w_closed_form");
    for j in 1..=j_max {
        let ones = WeightVector::ones(j)?;
        for m in 0..=j {
            report.check(|| format!("ones J={j} m={m}"), (m * (j - m)) as f64, c_w(m, &ones)?);
        }
    }
    for _ in 0..trials {
        let j = rng.random_range(1..=j_max);
        let w = random_weights(rng, j);
        for m in 0..=j {
            report.check(|| format!("W={:?} m={m}", w.as_slice()), c_w_bruteforce(m, &w)?, c_w(m, &w)?);
        }
    }
    Ok(report)
}

/// Enumerated `(max sum over A^c of W, max sum over A of 1/W)` for
/// `|A| in [l, u]`, summing over ascending-sorted weights.
pub fn enumerate_gi_maxima(l: usize, u: usize, weights: &WeightVector) -> (f64, f64) {
    let sorted = weights.ascending();
    let j = sorted.len();
    let (mut best_complement, mut best_reciprocal) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for mask in 0u32..(1u32 << j) {
        let size = mask.count_ones() as usize;
        if size < l || size > u {
            continue;
        }
        let (mut complement, mut reciprocal) = (0.0, 0.0);
        for (pos, v) in sorted.iter().enumerate() {
            if mask & (1 << pos) != 0 {
                reciprocal += 1.0 / v;
            } else {
                complement += v;
            }
        }
        best_complement = best_complement.max(complement);
        best_reciprocal = best_reciprocal.max(reciprocal);
    }
    (best_complement, best_reciprocal)
}

/// Closed-form gap-intersection maxima against enumeration, for every
/// `0 <= l <= u <= J`.
pub fn verify_gi_maxima<R: Rng + ?Sized>(j_max: usize, trials: usize, rng: &mut R) -> Result<OracleReport> {
    check_j_max(j_max)?;
    let mut report = OracleReport::new("gi_maxima");
    let run = |w: &WeightVector, report: &mut OracleReport| -> Result<()> {
        let j = w.len();
        for l in 0..=j {
            for u in l..=j {
                let expected = enumerate_gi_maxima(l, u, w);
                let got = (max_complement_weight_sum(l, w)?, max_reciprocal_weight_sum(u, w)?);
                report.check(|| format!("W={:?} l={l} u={u}", w.as_slice()), expected, got);
            }
        }
        Ok(())
    };
    for j in 1..=j_max {
        run(&WeightVector::ones(j)?, &mut report)?;
    }
    for _ in 0..trials {
        let j = rng.random_range(1..=j_max);
        let w = random_weights(rng, j);
        run(&w, &mut report)?;
    }
    Ok(report)
}

fn all_subsets(j: usize) -> impl Iterator<Item = TruthAssignment> {
    (0u32..(1u32 << j)).map(move |mask| TruthAssignment::from_mask((0..j).map(|k| mask & (1 << k) != 0).collect()))
}

/// Calibrated thresholds keep the FWE bounds at or below their levels for
/// every admissible signal set.
pub fn verify_fwe_bounds<R: Rng + ?Sized>(j_max: usize, trials: usize, rng: &mut R) -> Result<OracleReport> {
    check_j_max(j_max)?;
    let mut report = OracleReport::new("fwe_bounds");
    let within = |bound: f64, level: f64| bound <= level * (1.0 + 1e-12);
    for _ in 0..trials {
        let j = rng.random_range(2..=j_max.clamp(2, 10));
        let w = random_weights(rng, j);
        let alpha = rng.random_range(0.001..0.3);
        let beta = rng.random_range(0.001..0.3);
        let l = rng.random_range(0..=j);
        let u = rng.random_range(l..=j);
        let gi = calibrate_gi(alpha, beta, l, u, &w)?;
        for truth in all_subsets(j) {
            let m = truth.num_signals();
            if (1..j).contains(&m) {
                let c = calibrate_gap(alpha, m, &w)?.c;
                let bound = fwe_bound_gap(c, &truth, &w)?;
                report.check(|| format!("gap W={:?} A={:?} alpha={alpha}", w.as_slice(), truth.signals()), true, within(bound, alpha));
            }
            if (l..=u).contains(&m) {
                let (t1, t2) = fwe_bounds_gi(&gi, &truth, &w)?;
                report.check(
                    || format!("gi W={:?} A={:?} l={l} u={u}", w.as_slice(), truth.signals()),
                    (true, true),
                    (within(t1, alpha), within(t2, beta)),
                );
            }
        }
    }
    Ok(report)
}

/// Descending WLLRs with stream indices, via a full sort.
fn sorted_wllr(state: &TrialState, weights: &WeightVector) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = state
        .llr()
        .iter()
        .zip(weights.as_slice())
        .map(|(l, w)| l + w.ln())
        .enumerate()
        .map(|(k, x)| (x, k))
        .collect();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    v
}

/// `λ^(k)` with 1-based `k`; `k = 0` is `+inf` and `k = J+1` is `-inf`.
fn order_stat(sorted: &[(f64, usize)], k: usize) -> f64 {
    if k == 0 {
        f64::INFINITY
    } else if k > sorted.len() {
        f64::NEG_INFINITY
    } else {
        sorted[k - 1].0
    }
}

fn top_indices(sorted: &[(f64, usize)], k: usize) -> Vec<usize> {
    let mut d: Vec<usize> = sorted.iter().take(k).map(|e| e.1).collect();
    d.sort();
    d
}

/// Literal weighted gap rule.
pub fn reference_gap_step(state: &TrialState, cfg: &GapConfig) -> StopStatus {
    let sorted = sorted_wllr(state, &cfg.weights);
    let m = cfg.threshold.m;
    if order_stat(&sorted, m) - order_stat(&sorted, m + 1) >= cfg.threshold.c {
        StopStatus::Stop(Decision {
            stop_time: state.time(),
            rejected: top_indices(&sorted, m),
            fired_rule: FiredRule::Gap,
        })
    } else {
        StopStatus::Continue
    }
}

/// Literal weighted gap-intersection rule.
pub fn reference_gi_step(state: &TrialState, cfg: &GIConfig) -> StopStatus {
    let sorted = sorted_wllr(state, &cfg.weights);
    let th = &cfg.thresholds;
    let (l, u) = (th.l, th.u);
    let p = sorted.iter().filter(|e| e.0 > 0.0).count();
    let tau1 = match th.c {
        Threshold::Active(c) => {
            order_stat(&sorted, l + 1) <= -th.a && order_stat(&sorted, l) - order_stat(&sorted, l + 1) >= c
        }
        Threshold::Inactive => false,
    };
    let tau2 = l <= p && p <= u && sorted.iter().all(|e| e.0 <= -th.a || e.0 >= th.b);
    let tau3 = match th.d {
        Threshold::Active(d) => {
            order_stat(&sorted, u) >= th.b && order_stat(&sorted, u) - order_stat(&sorted, u + 1) >= d
        }
        Threshold::Inactive => false,
    };
    let fired_rule = match (tau1, tau2, tau3) {
        (true, _, _) => FiredRule::Tau1,
        (false, true, _) => FiredRule::Tau2,
        (false, false, true) => FiredRule::Tau3,
        _ => return StopStatus::Continue,
    };
    StopStatus::Stop(Decision {
        stop_time: state.time(),
        rejected: top_indices(&sorted, p.clamp(l, u)),
        fired_rule,
    })
}

/// Pure weighted intersection rule: stop once no WLLR lies in `(-a, b)` and
/// reject the positive ones. Returns `(stop_time, rejected)`, or the state at
/// the cap with `None` for the time.
pub fn reference_intersection_run<R: Rng + ?Sized>(
    models: &[StreamModel],
    truth: &TruthAssignment,
    a: f64,
    b: f64,
    weights: &WeightVector,
    rng: &mut R,
    max_steps: u64,
) -> (Option<u64>, Vec<usize>) {
    let mut state = TrialState::new(weights.len());
    loop {
        state.observe(models, truth, rng);
        let wllr: Vec<f64> = state.llr().iter().zip(weights.as_slice()).map(|(l, w)| l + w.ln()).collect();
        let positives = wllr.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(k, _)| k).collect();
        if wllr.iter().all(|&v| v <= -a || v >= b) {
            return (Some(state.time()), positives);
        }
        if state.time() >= max_steps {
            return (None, positives);
        }
    }
}

/// Random states for differential tests; about half use a coarse value grid
/// so ties between streams are common.
fn random_state<R: Rng + ?Sized>(rng: &mut R, j: usize) -> TrialState {
    let tied = rng.random_bool(0.5);
    let llr = (0..j)
        .map(|_| {
            if tied {
                rng.random_range(-4i32..=4) as f64 * 0.5
            } else {
                rng.random_range(-6.0..6.0)
            }
        })
        .collect();
    TrialState::from_parts(rng.random_range(1..1000), llr)
}

fn random_stepping_weights<R: Rng + ?Sized>(rng: &mut R, j: usize) -> WeightVector {
    if rng.random_bool(0.5) {
        WeightVector::ones(j).expect("non-empty")
    } else {
        random_weights(rng, j)
    }
}

/// `gap_step` against [`reference_gap_step`] on random states.
pub fn verify_gap_step<R: Rng + ?Sized>(trials: usize, j_max: usize, rng: &mut R) -> Result<OracleReport> {
    if j_max < 2 {
        return Err(Error::InvalidParameter("gap differential test needs J >= 2".into()));
    }
    let mut report = OracleReport::new("gap_step");
    for _ in 0..trials {
        let j = rng.random_range(2..=j_max);
        let m = rng.random_range(1..j);
        let state = random_state(rng, j);
        let weights = random_stepping_weights(rng, j);
        // Thresholds on the grid make exact-boundary gaps reachable.
        let c = rng.random_range(0..=8) as f64 * 0.5;
        let cfg = GapConfig::new(GapThreshold { c, alpha: 0.05, m, c_w: 1.0 }, weights)?;
        report.check(
            || format!("llr={:?} W={:?} m={m} c={c}", state.llr(), cfg.weights.as_slice()),
            reference_gap_step(&state, &cfg),
            gap_step(&state, &cfg),
        );
    }
    Ok(report)
}

/// `gi_step` against [`reference_gi_step`] on random states and thresholds.
pub fn verify_gi_step<R: Rng + ?Sized>(trials: usize, j_max: usize, rng: &mut R) -> Result<OracleReport> {
    let mut report = OracleReport::new("gi_step");
    for _ in 0..trials {
        let j = rng.random_range(1..=j_max.max(1));
        let l = rng.random_range(0..=j);
        let u = rng.random_range(l..=j);
        let state = random_state(rng, j);
        let weights = random_stepping_weights(rng, j);
        let grid = |rng: &mut R| rng.random_range(0..=8) as f64 * 0.5;
        let maybe = |rng: &mut R, active: bool| {
            if active {
                Threshold::Active(grid(rng))
            } else {
                Threshold::Inactive
            }
        };
        let c = maybe(rng, l > 0);
        let d = maybe(rng, u < j);
        let thresholds = GIThresholds {
            a: grid(rng),
            b: grid(rng),
            c,
            d,
            alpha: 0.05,
            beta: 0.05,
            l,
            u,
            c_w_l: 0.0,
            c_w_u: 0.0,
        };
        let cfg = GIConfig::new(thresholds, weights)?;
        report.check(
            || format!("llr={:?} W={:?} th={:?}", state.llr(), cfg.weights.as_slice(), cfg.thresholds),
            reference_gi_step(&state, &cfg),
            gi_step(&state, &cfg),
        );
    }
    Ok(report)
}

/// Random small testbed for the seeded procedure checks: `J` in `2..=20`,
/// `1 <= m < J`, log-uniform weights and a uniformly drawn signal set.
struct Testbed {
    models: Vec<StreamModel>,
    truth: TruthAssignment,
    weights: WeightVector,
    alpha: f64,
    beta: f64,
}

impl Testbed {
    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let j = rng.random_range(2..=20);
        let m = rng.random_range(1..j);
        let mu = rng.random_range(0.25..1.0);
        let signals = rand::seq::index::sample(rng, j, m).into_vec();
        let weights = if rng.random_bool(0.25) {
            WeightVector::ones(j)?
        } else {
            random_weights(rng, j)
        };
        Ok(Testbed {
            models: vec![StreamModel::gaussian(mu)?; j],
            truth: TruthAssignment::new(j, signals)?,
            weights,
            alpha: rng.random_range(0.01..0.2),
            beta: rng.random_range(0.01..0.2),
        })
    }

    fn j(&self) -> usize {
        self.weights.len()
    }

    fn m(&self) -> usize {
        self.truth.num_signals()
    }
}

const TRIAL_CAP: u64 = 1_000_000;

fn trial_rng(seed: u64, trial: u64) -> rand_chacha::ChaCha8Rng {
    crate::montecarlo::replication_rng(seed, trial)
}

/// Same seed, weights `W` against `γW` (thresholds recalibrated): the gap
/// and gap-intersection procedures must return identical `(T, D)`.
pub fn verify_scaling_invariance(trials: usize, gamma: f64, seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport::new("scaling_invariance");
    for trial in 0..trials as u64 {
        let mut setup_rng = trial_rng(seed, 2 * trial);
        let bed = Testbed::draw(&mut setup_rng)?;
        let scaled = bed.weights.scaled(gamma)?;
        let path_seed = setup_rng.random::<u64>();

        let gap = GapConfig::calibrated(bed.alpha, bed.m(), bed.weights.clone())?;
        let gap_scaled = GapConfig::calibrated(bed.alpha, bed.m(), scaled.clone())?;
        let run = |cfg: &GapConfig| {
            crate::procedures::run_gap(&bed.models, &bed.truth, cfg, &mut trial_rng(path_seed, 0), TRIAL_CAP)
        };
        let (a, b) = (run(&gap)?, run(&gap_scaled)?);
        report.check(
            || format!("gap trial {trial} W={:?}", bed.weights.as_slice()),
            (a.stop_time, a.rejected),
            (b.stop_time, b.rejected),
        );

        let l = setup_rng.random_range(0..=bed.m());
        let u = setup_rng.random_range(bed.m()..=bed.j());
        let gi = GIConfig::calibrated(bed.alpha, bed.beta, l, u, bed.weights.clone())?;
        let gi_scaled = GIConfig::calibrated(bed.alpha, bed.beta, l, u, scaled)?;
        let run = |cfg: &GIConfig| {
            crate::procedures::run_gi(&bed.models, &bed.truth, cfg, &mut trial_rng(path_seed, 1), TRIAL_CAP)
        };
        let (a, b) = (run(&gi)?, run(&gi_scaled)?);
        report.check(
            || format!("gi trial {trial} l={l} u={u} W={:?}", bed.weights.as_slice()),
            (a.stop_time, a.rejected),
            (b.stop_time, b.rejected),
        );
    }
    Ok(report)
}

/// On a shared path the gap procedure never stops after the conservative
/// time: `T_W <= T̃_W`.
pub fn verify_conservative_dominance(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport::new("conservative_dominance");
    for trial in 0..trials as u64 {
        let mut setup_rng = trial_rng(seed, 2 * trial);
        let bed = Testbed::draw(&mut setup_rng)?;
        let cfg = GapConfig::calibrated(bed.alpha, bed.m(), bed.weights.clone())?;
        let path_seed = setup_rng.random::<u64>();
        let t = crate::procedures::run_gap(&bed.models, &bed.truth, &cfg, &mut trial_rng(path_seed, 0), TRIAL_CAP)?;
        let tc = crate::procedures::conservative_gap_time(
            &bed.models,
            &bed.truth,
            &cfg,
            &mut trial_rng(path_seed, 0),
            TRIAL_CAP,
        )?;
        report.check(
            || format!("trial {trial}: T={} T~={}", t.stop_time, tc.time),
            true,
            t.stop_time <= tc.time,
        );
    }
    Ok(report)
}

/// With `l = 0, u = J` the gap-intersection procedure must reproduce the
/// pure intersection rule: same stopping time and decision.
pub fn verify_intersection_reduction(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport::new("intersection_reduction");
    for trial in 0..trials as u64 {
        let mut setup_rng = trial_rng(seed, 2 * trial);
        let bed = Testbed::draw(&mut setup_rng)?;
        let j = bed.j();
        let cfg = GIConfig::calibrated(bed.alpha, bed.beta, 0, j, bed.weights.clone())?;
        let path_seed = setup_rng.random::<u64>();
        let d = crate::procedures::run_gi(&bed.models, &bed.truth, &cfg, &mut trial_rng(path_seed, 0), TRIAL_CAP)?;
        let (t, rejected) = reference_intersection_run(
            &bed.models,
            &bed.truth,
            cfg.thresholds.a,
            cfg.thresholds.b,
            &bed.weights,
            &mut trial_rng(path_seed, 0),
            TRIAL_CAP,
        );
        let got_t = (!d.cap_hit()).then_some(d.stop_time);
        report.check(|| format!("trial {trial} J={j}"), (t, rejected), (got_t, d.rejected));
    }
    Ok(report)
}
