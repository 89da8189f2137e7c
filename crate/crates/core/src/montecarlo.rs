//! Reproducible Monte Carlo harness for the simulation study.
//!
//! One replication draws a uniformly random signal set of size
//! `m = round(signal_fraction * J)` (ties to even), draws guess-based
//! weights, calibrates thresholds on the realized weights, runs the
//! procedure and scores its errors. Replication `i` of a scenario uses a
//! ChaCha8 generator keyed by `master_seed` on stream `i`, so every record
//! is a pure function of `(spec, i)` and the aggregate does not depend on
//! the number of workers.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_level, Error, Result};
use crate::model::{kl_info, StreamModel, TruthAssignment};
use crate::model::Rate;
use crate::procedures::{default_max_steps, lower_bound_gap, lower_bound_gi, GIConfig, Decision, GapConfig, StoppingRule, Trial};
use crate::thresholds::{calibrate_gap, calibrate_gi};
use crate::weights::{generate_weights, guess_probabilities, WeightGenSpec};

/// Identifier of the per-replication seed derivation, recorded in manifests.
pub const SEED_DERIVATION: &str = "chacha8-v1: key = ChaCha8Rng::seed_from_u64(master_seed), stream = rep_index";

/// Generator for replication `rep` of a scenario seeded with `master_seed`.
pub fn replication_rng(master_seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcedureKind {
    Gap,
    GapIntersection { l: usize, u: usize },
}

impl ProcedureKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ProcedureKind::Gap => "gap",
            ProcedureKind::GapIntersection { .. } => "gi",
        }
    }
}

/// The weighting scenarios of the simulation study: `(name, η, r)`.
pub const WEIGHTING_SCENARIOS: [(&str, f64, f64); 4] = [
    ("Unweighted", 1.0, 1.0),
    ("Informative", 20.0, 5.0),
    ("Misinformative", 0.05, 5.0),
    ("Noisy", 1.0, 5.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Unique name within a sweep.
    pub name: String,
    /// Series label for plotting; several scenarios (one per `J`) share it.
    pub group: String,
    pub j: usize,
    pub signal_fraction: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub r: f64,
    pub procedure: ProcedureKind,
    pub reps: usize,
    pub master_seed: u64,
    /// Safety cap; `None` uses [`default_max_steps`].
    pub max_steps: Option<u64>,
}

impl ScenarioSpec {
    /// Gap scenario with the simulation-study defaults: `μ = 0.15`,
    /// `α = β = 0.05`, `m/J = 0.1`, unweighted.
    pub fn gap(name: impl Into<String>, j: usize) -> Self {
        let name = name.into();
        ScenarioSpec {
            group: name.clone(),
            name,
            j,
            signal_fraction: 0.1,
            mu: 0.15,
            alpha: 0.05,
            beta: 0.05,
            eta: 1.0,
            r: 1.0,
            procedure: ProcedureKind::Gap,
            reps: 2000,
            master_seed: 0,
            max_steps: None,
        }
    }

    /// `m = round(signal_fraction * J)`, ties to even.
    pub fn num_signals(&self) -> usize {
        (self.signal_fraction * self.j as f64).round_ties_even().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if self.name.is_empty() {
            return fail("scenario name must not be empty".into());
        }
        if self.reps == 0 {
            return fail("reps must be at least 1".into());
        }
        if self.j < 2 {
            return fail(format!("J = {} must be at least 2", self.j));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction < 1.0) {
            return fail(format!("signal_fraction = {} must lie in (0, 1)", self.signal_fraction));
        }
        StreamModel::gaussian(self.mu)?;
        check_level("alpha", self.alpha)?;
        check_level("beta", self.beta)?;
        let m = self.num_signals();
        if m == 0 || m >= self.j {
            return Err(Error::CountOutOfRange { name: "m", value: m, lo: 1, hi: self.j - 1 });
        }
        guess_probabilities(&WeightGenSpec::new(self.eta, self.r, m as f64 / self.j as f64)?)?;
        if let ProcedureKind::GapIntersection { l, u } = self.procedure {
            if l > u || u > self.j {
                return fail(format!("interval [{l}, {u}] not within [0, {}]", self.j));
            }
            if m < l || m > u {
                return fail(format!("m = {m} outside the declared interval [{l}, {u}]"));
            }
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be at least 1".into());
        }
        Ok(())
    }

    /// `(η1, η0)` for identical Gaussian streams.
    pub fn information_rates(&self) -> Result<(f64, f64)> {
        let info = kl_info(&StreamModel::gaussian(self.mu)?)?;
        Ok((info.i1, info.i0))
    }

    pub fn cap(&self) -> Result<u64> {
        match self.max_steps {
            Some(cap) => Ok(cap),
            None => {
                let (eta1, eta0) = self.information_rates()?;
                default_max_steps(self.alpha, self.beta, eta1, eta0)
            }
        }
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: u64,
    pub stop_time: u64,
    pub cap_hit: bool,
    pub n_false_pos: usize,
    pub n_false_neg: usize,
    /// Realized weight-adaptive threshold: `c` for the gap procedure, `b`
    /// for gap-intersection.
    pub threshold_c: f64,
}

struct Prepared<'a> {
    spec: &'a ScenarioSpec,
    models: Vec<StreamModel>,
    m: usize,
    gen: WeightGenSpec,
    cap: u64,
}

impl<'a> Prepared<'a> {
    fn new(spec: &'a ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let m = spec.num_signals();
        Ok(Prepared {
            spec,
            models: vec![StreamModel::gaussian(spec.mu)?; spec.j],
            m,
            gen: WeightGenSpec::new(spec.eta, spec.r, m as f64 / spec.j as f64)?,
            cap: spec.cap()?,
        })
    }

    fn run(&self, rep: u64, rng: &mut ChaCha8Rng, trace: Option<&mut dyn Write>) -> Result<RepRecord> {
        let spec = self.spec;
        let truth = TruthAssignment::new(spec.j, index::sample(rng, spec.j, self.m))?;
        let weights = generate_weights(&self.gen, &truth, rng)?;
        let (decision, threshold_c) = match spec.procedure {
            ProcedureKind::Gap => {
                let threshold = calibrate_gap(spec.alpha, self.m, &weights)?;
                let c = threshold.c;
                let cfg = GapConfig::new(threshold, weights)?;
                (self.drive(&truth, &cfg, rng, trace)?, c)
            }
            ProcedureKind::GapIntersection { l, u } => {
                let thresholds = calibrate_gi(spec.alpha, spec.beta, l, u, &weights)?;
                let b = thresholds.b;
                let cfg = GIConfig::new(thresholds, weights)?;
                (self.drive(&truth, &cfg, rng, trace)?, b)
            }
        };
        let n_false_pos = decision.rejected.iter().filter(|&&k| !truth.is_signal(k)).count();
        let true_pos = decision.rejected.len() - n_false_pos;
        Ok(RepRecord {
            rep,
            stop_time: decision.stop_time,
            cap_hit: decision.cap_hit(),
            n_false_pos,
            n_false_neg: self.m - true_pos,
            threshold_c,
        })
    }
}

impl Prepared<'_> {
    fn drive<P: StoppingRule>(
        &self,
        truth: &TruthAssignment,
        rule: &P,
        rng: &mut ChaCha8Rng,
        trace: Option<&mut dyn Write>,
    ) -> Result<Decision> {
        let trial = Trial::new(&self.models, truth, rule, self.cap)?;
        Ok(match trace {
            Some(out) => trial.run_traced(rng, out)?,
            None => trial.run(rng),
        })
    }
}

/// Runs replication `rep` of `spec` on its derived generator.
pub fn run_replication(spec: &ScenarioSpec, rep: u64) -> Result<RepRecord> {
    run_replication_with_rng(spec, rep, &mut replication_rng(spec.master_seed, rep))
}

/// Runs one replication on a caller-supplied generator.
pub fn run_replication_with_rng(spec: &ScenarioSpec, rep: u64, rng: &mut ChaCha8Rng) -> Result<RepRecord> {
    Prepared::new(spec)?.run(rep, rng, None)
}

/// Runs replication `rep` exactly as [`run_replication`] does, writing the
/// per-step `n,stream,llr,wllr` trace to `out`.
pub fn trace_replication<W: Write>(spec: &ScenarioSpec, rep: u64, mut out: W) -> Result<RepRecord> {
    let mut rng = replication_rng(spec.master_seed, rep);
    Prepared::new(spec)?.run(rep, &mut rng, Some(&mut out))
}

/// Estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub m: usize,
    pub ess: Estimate,
    /// Type-I FWE: at least one false rejection.
    pub fwe1: Estimate,
    /// Type-II FWE: at least one missed signal.
    pub fwe2: Estimate,
    pub cap_rate: f64,
    pub optimality_ratio: f64,
    /// Per-replication records in replication order.
    pub records: Vec<RepRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses all available cores.
    pub workers: Option<usize>,
}

fn proportion(count: usize, n: usize) -> Estimate {
    let p = count as f64 / n as f64;
    Estimate {
        value: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
    }
}

/// Reduces records (in replication order) to scenario summaries.
pub fn aggregate(spec: &ScenarioSpec, records: Vec<RepRecord>) -> Result<ScenarioResult> {
    let n = records.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no replications to aggregate".into()));
    }
    let mean = records.iter().map(|r| r.stop_time as f64).sum::<f64>() / n as f64;
    let var = if n > 1 {
        records.iter().map(|r| (r.stop_time as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let ess = Estimate { value: mean, se: (var / n as f64).sqrt() };
    let (eta1, eta0) = spec.information_rates()?;
    Ok(ScenarioResult {
        spec: spec.clone(),
        m: spec.num_signals(),
        ess,
        fwe1: proportion(records.iter().filter(|r| r.n_false_pos > 0).count(), n),
        fwe2: proportion(records.iter().filter(|r| r.n_false_neg > 0).count(), n),
        cap_rate: records.iter().filter(|r| r.cap_hit).count() as f64 / n as f64,
        optimality_ratio: optimality_ratio(ess.value, spec, eta1, eta0)?,
        records,
    })
}

fn with_pool<T: Send>(options: RunOptions, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = options.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every replication of `spec` and aggregates them.
pub fn run_scenario(spec: &ScenarioSpec, options: RunOptions) -> Result<ScenarioResult> {
    let prepared = Prepared::new(spec)?;
    let records = with_pool(options, || {
        (0..spec.reps as u64)
            .into_par_iter()
            .map(|rep| prepared.run(rep, &mut replication_rng(spec.master_seed, rep), None))
            .collect::<Result<Vec<_>>>()
    })??;
    aggregate(spec, records)
}

/// Runs scenarios in order. Names must be unique and every spec is
/// validated before any replication starts.
pub fn run_sweep(specs: &[ScenarioSpec], options: RunOptions) -> Result<Vec<ScenarioResult>> {
    let mut seen = HashSet::new();
    for spec in specs {
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::DuplicateScenario(spec.name.clone()));
        }
        spec.validate().map_err(|e| Error::Scenario {
            name: spec.name.clone(),
            source: Box::new(e),
        })?;
    }
    specs
        .iter()
        .map(|spec| {
            run_scenario(spec, options).map_err(|e| Error::Scenario {
                name: spec.name.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// ESS divided by the asymptotic lower bound for the scenario's procedure.
pub fn optimality_ratio(ess: f64, spec: &ScenarioSpec, eta1: f64, eta0: f64) -> Result<f64> {
    let bound = match spec.procedure {
        ProcedureKind::Gap => lower_bound_gap(spec.alpha, eta1, eta0)?,
        ProcedureKind::GapIntersection { l, u } => lower_bound_gi(
            spec.alpha,
            spec.beta,
            spec.num_signals(),
            l,
            u,
            Rate::Finite(eta1),
            Rate::Finite(eta0),
        )?,
    };
    Ok(ess / bound)
}

/// The four weighting scenarios crossed with a grid of `J` values.
pub fn weighting_sweep(j_grid: &[usize], reps: usize, master_seed: u64) -> Vec<ScenarioSpec> {
    let mut specs = Vec::new();
    for &j in j_grid {
        for (group, eta, r) in WEIGHTING_SCENARIOS {
            specs.push(ScenarioSpec {
                name: format!("{group}-J{j}"),
                group: group.to_string(),
                eta,
                r,
                reps,
                master_seed,
                ..ScenarioSpec::gap(group, j)
            });
        }
    }
    specs
}

pub const RESULTS_HEADER: &str = "scenario,J,m,alpha,beta,eta,r,rep,T,cap_hit,n_false_pos,n_false_neg,threshold_c";
pub const SUMMARY_HEADER: &str =
    "scenario,J,m,alpha,beta,eta,r,reps,ess,ess_se,fwe1,fwe1_se,fwe2,fwe2_se,cap_rate,optimality_ratio";
pub const PLOT_HEADER: &str = "J,scenario,ess,ess_se";

/// One row per replication.
pub fn write_results_csv<W: Write>(results: &[ScenarioResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for res in results {
        let s = &res.spec;
        for r in &res.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.name,
                s.j,
                res.m,
                s.alpha,
                s.beta,
                s.eta,
                s.r,
                r.rep,
                r.stop_time,
                r.cap_hit as u8,
                r.n_false_pos,
                r.n_false_neg,
                r.threshold_c
            )?;
        }
    }
    Ok(())
}

/// One row per scenario.
pub fn write_summary_csv<W: Write>(results: &[ScenarioResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for res in results {
        let s = &res.spec;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.name,
            s.j,
            res.m,
            s.alpha,
            s.beta,
            s.eta,
            s.r,
            s.reps,
            res.ess.value,
            res.ess.se,
            res.fwe1.value,
            res.fwe1.se,
            res.fwe2.value,
            res.fwe2.se,
            res.cap_rate,
            res.optimality_ratio
        )?;
    }
    Ok(())
}

/// Plot-ready ESS by `J`, one series per scenario group.
pub fn write_plot_csv<W: Write>(results: &[ScenarioResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{PLOT_HEADER}")?;
    for res in results {
        writeln!(out, "{},{},{},{}", res.spec.j, res.spec.group, res.ess.value, res.ess.se)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> ScenarioSpec {
        ScenarioSpec {
            mu: 0.5,
            reps: 200,
            master_seed: 17,
            ..ScenarioSpec::gap(name, 20)
        }
    }

    #[test]
    fn traced_replication_matches_untraced() {
        let spec = small("t");
        let mut buf = Vec::new();
        let traced = trace_replication(&spec, 3, &mut buf).unwrap();
        assert_eq!(traced, run_replication(&spec, 3).unwrap());
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,stream,llr,wllr"));
        assert_eq!(lines.count() as u64, traced.stop_time * spec.j as u64);
    }

    #[test]
    fn signal_count_rounds_half_to_even() {
        let mut s = ScenarioSpec::gap("x", 25);
        s.signal_fraction = 0.1;
        assert_eq!(s.num_signals(), 2);
        s.j = 35;
        assert_eq!(s.num_signals(), 4);
        s.j = 200;
        assert_eq!(s.num_signals(), 20);
    }

    #[test]
    fn validation_errors() {
        let mut s = small("v");
        s.reps = 0;
        assert!(s.validate().is_err());
        let mut s = small("v");
        s.signal_fraction = 0.01;
        assert!(s.validate().is_err());
        let mut s = small("v");
        s.procedure = ProcedureKind::GapIntersection { l: 3, u: 2 };
        assert!(s.validate().is_err());
        let mut s = small("v");
        s.procedure = ProcedureKind::GapIntersection { l: 3, u: 5 };
        assert!(s.validate().is_err());
        let mut s = small("v");
        s.mu = 0.0;
        assert!(s.validate().is_err());
        assert!(small("v").validate().is_ok());
    }

    #[test]
    fn replication_is_reproducible() {
        let s = ScenarioSpec { eta: 20.0, r: 5.0, ..small("rep") };
        for rep in 0..20 {
            assert_eq!(run_replication(&s, rep).unwrap(), run_replication(&s, rep).unwrap());
        }
    }

    #[test]
    fn unweighted_threshold_is_fixed() {
        let s = small("unw");
        let expected = s.alpha.ln().abs() + ((2 * 18) as f64).ln();
        for rep in 0..30 {
            let r = run_replication(&s, rep).unwrap();
            assert_eq!(r.threshold_c, expected);
            assert_eq!(r.n_false_pos, r.n_false_neg);
        }
    }

    #[test]
    fn informative_guesses_follow_p1() {
        // Replays the weight draw of each replication to count how often a
        // signal receives the high weight.
        let s = ScenarioSpec { j: 100, eta: 20.0, r: 5.0, ..small("inf") };
        let m = s.num_signals();
        let gen = WeightGenSpec::new(s.eta, s.r, m as f64 / s.j as f64).unwrap();
        let (mut high, mut total) = (0usize, 0usize);
        for rep in 0..2000 {
            let mut rng = replication_rng(s.master_seed, rep);
            let truth = TruthAssignment::new(s.j, index::sample(&mut rng, s.j, m)).unwrap();
            let w = generate_weights(&gen, &truth, &mut rng).unwrap();
            for &k in truth.signals() {
                high += (w.as_slice()[k] > 1.0) as usize;
                total += 1;
            }
        }
        let p = high as f64 / total as f64;
        let p1 = 2.0 / 2.9;
        let se = (p1 * (1.0 - p1) / total as f64).sqrt();
        assert!((p - p1).abs() < 4.0 * se, "{p}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = ScenarioSpec { eta: 1.0, r: 5.0, ..small("det") };
        let a = run_scenario(&s, RunOptions { workers: Some(1) }).unwrap();
        let b = run_scenario(&s, RunOptions { workers: Some(3) }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gap_fwe_types_coincide() {
        let res = run_scenario(&ScenarioSpec { mu: 0.3, ..small("eq") }, RunOptions::default()).unwrap();
        assert_eq!(res.fwe1, res.fwe2);
        for r in &res.records {
            assert_eq!(r.n_false_pos > 0, r.n_false_neg > 0);
        }
    }

    #[test]
    fn sweep_checks_names() {
        assert!(run_sweep(&[], RunOptions::default()).unwrap().is_empty());
        let dup = [small("a"), small("a")];
        assert_eq!(run_sweep(&dup, RunOptions::default()), Err(Error::DuplicateScenario("a".into())));
        let mut bad = small("b");
        bad.reps = 0;
        assert!(matches!(run_sweep(&[small("a"), bad], RunOptions::default()), Err(Error::Scenario { .. })));
    }

    #[test]
    fn weighting_grid_shape() {
        let specs = weighting_sweep(&[200, 300, 400], 10, 1);
        assert_eq!(specs.len(), 12);
        let names: HashSet<_> = specs.iter().map(|s| s.name.clone()).collect();
        assert_eq!(names.len(), 12);
        assert!(specs.iter().all(|s| s.num_signals() * 10 == s.j));
    }

    #[test]
    fn optimality_ratio_guards() {
        let s = small("o");
        let ratio = optimality_ratio(266.28, &ScenarioSpec { mu: 0.15, ..s.clone() }, 0.01125, 0.01125).unwrap();
        assert!((ratio - 266.28 / (0.05f64.ln().abs() / 0.0225)).abs() < 1e-12);
        let degenerate = ScenarioSpec { alpha: 1.0, ..s };
        assert!(optimality_ratio(10.0, &degenerate, 0.1, 0.1).is_err());
    }

    #[test]
    fn csv_layouts() {
        let res = run_scenario(&ScenarioSpec { reps: 3, ..small("csv") }, RunOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&res), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), SUMMARY_HEADER.split(',').count());
        assert!(text.ends_with('\n'));

        let mut buf = Vec::new();
        write_results_csv(std::slice::from_ref(&res), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);

        let mut buf = Vec::new();
        write_plot_csv(std::slice::from_ref(&res), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), PLOT_HEADER);
        assert!(text.lines().nth(1).unwrap().starts_with("20,csv,"));
    }
}
