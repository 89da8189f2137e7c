//! Per-stream statistical model.
//!
//! Every stream tests a simple null against a simple alternative. The
//! cumulative log-likelihood ratio of a stream is a random walk whose
//! increments are [`llr_increment`] applied to each observation; its drift
//! is `+I1` under the alternative and `-I0` under the null.
//!
//! All `J` streams are observed synchronously: one observation per stream
//! per time step.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Simple-vs-simple hypothesis pair for one stream.
///
/// The enum is the extension point for further increment laws; only the
/// unit-variance Gaussian mean shift is used by the simulation testbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamModel {
    /// `N(0, 1)` under the null against `N(mu1, 1)` under the alternative.
    GaussianMean { mu1: f64 },
}

impl StreamModel {
    /// Gaussian mean-shift model. Rejects `mu1 == 0` (zero information) and
    /// non-finite means.
    pub fn gaussian(mu1: f64) -> Result<Self> {
        if !mu1.is_finite() {
            return Err(Error::DegenerateModel(format!("non-finite mean {mu1}")));
        }
        if mu1 == 0.0 {
            return Err(Error::DegenerateModel(
                "mu1 = 0 makes null and alternative identical".into(),
            ));
        }
        Ok(StreamModel::GaussianMean { mu1 })
    }

    /// Mean of the observation law under the alternative.
    pub fn alternative_mean(&self) -> f64 {
        match *self {
            StreamModel::GaussianMean { mu1 } => mu1,
        }
    }
}

/// Kullback-Leibler informations `(I0, I1)` of a stream model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlInfo {
    /// `-E_0[λ(1)]`
    pub i0: f64,
    /// `E_1[λ(1)]`
    pub i1: f64,
}

/// Worst-case information rate over a set of streams. An empty set has no
/// minimum and is reported as `Unbounded`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Finite(f64),
    Unbounded,
}

impl Rate {
    pub fn finite(self) -> Option<f64> {
        match self {
            Rate::Finite(v) => Some(v),
            Rate::Unbounded => None,
        }
    }
}

/// One-step log-likelihood ratio `log f1(x) / f0(x)`.
pub fn llr_increment(x: f64, model: &StreamModel) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFiniteObservation(x));
    }
    Ok(llr_increment_unchecked(x, model))
}

#[inline]
pub(crate) fn llr_increment_unchecked(x: f64, model: &StreamModel) -> f64 {
    match *model {
        StreamModel::GaussianMean { mu1 } => mu1 * x - 0.5 * mu1 * mu1,
    }
}

pub fn kl_info(model: &StreamModel) -> Result<KlInfo> {
    match *model {
        StreamModel::GaussianMean { mu1 } => {
            let i = 0.5 * mu1 * mu1;
            if !(i > 0.0 && i.is_finite()) {
                return Err(Error::DegenerateModel(format!(
                    "KL information {i} is not strictly positive"
                )));
            }
            Ok(KlInfo { i0: i, i1: i })
        }
    }
}

/// Draws one observation from the alternative law if `is_signal`, else from
/// the null law.
#[inline]
pub fn sample_increment<R: Rng + ?Sized>(rng: &mut R, model: &StreamModel, is_signal: bool) -> f64 {
    match *model {
        StreamModel::GaussianMean { mu1 } => {
            let z: f64 = rng.sample(StandardNormal);
            if is_signal {
                mu1 + z
            } else {
                z
            }
        }
    }
}

/// Which of the `J` streams carry a true signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthAssignment {
    is_signal: Vec<bool>,
    signals: Vec<usize>,
}

impl TruthAssignment {
    /// Builds the assignment from signal indices (0-based). Duplicates and
    /// indices `>= j` are rejected.
    pub fn new(j: usize, signals: impl IntoIterator<Item = usize>) -> Result<Self> {
        if j == 0 {
            return Err(Error::EmptyStreams);
        }
        let mut is_signal = vec![false; j];
        for k in signals {
            if k >= j {
                return Err(Error::CountOutOfRange {
                    name: "signal index",
                    value: k,
                    lo: 0,
                    hi: j - 1,
                });
            }
            if is_signal[k] {
                return Err(Error::InvalidParameter(format!("duplicate signal index {k}")));
            }
            is_signal[k] = true;
        }
        Ok(Self::from_mask(is_signal))
    }

    pub fn from_mask(is_signal: Vec<bool>) -> Self {
        let signals = is_signal
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| s.then_some(k))
            .collect();
        TruthAssignment { is_signal, signals }
    }

    pub fn num_streams(&self) -> usize {
        self.is_signal.len()
    }

    /// `m = |A|`
    pub fn num_signals(&self) -> usize {
        self.signals.len()
    }

    pub fn is_signal(&self, k: usize) -> bool {
        self.is_signal[k]
    }

    pub fn mask(&self) -> &[bool] {
        &self.is_signal
    }

    /// Signal indices in ascending order.
    pub fn signals(&self) -> &[usize] {
        &self.signals
    }

    /// Null indices in ascending order.
    pub fn nulls(&self) -> impl Iterator<Item = usize> + '_ {
        self.is_signal
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| (!s).then_some(k))
    }
}

/// `(η1, η0)`: minimum `I1` over signals and minimum `I0` over nulls.
pub fn worst_case_rates(models: &[StreamModel], truth: &TruthAssignment) -> Result<(Rate, Rate)> {
    if models.is_empty() {
        return Err(Error::EmptyStreams);
    }
    if models.len() != truth.num_streams() {
        return Err(Error::DimensionMismatch {
            expected: truth.num_streams(),
            got: models.len(),
        });
    }
    let mut eta1: Option<f64> = None;
    let mut eta0: Option<f64> = None;
    for (k, model) in models.iter().enumerate() {
        let info = kl_info(model)?;
        if truth.is_signal(k) {
            eta1 = Some(eta1.map_or(info.i1, |v| v.min(info.i1)));
        } else {
            eta0 = Some(eta0.map_or(info.i0, |v| v.min(info.i0)));
        }
    }
    let wrap = |v: Option<f64>| v.map_or(Rate::Unbounded, Rate::Finite);
    Ok((wrap(eta1), wrap(eta0)))
}

/// Time index and cumulative LLRs of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialState {
    n: u64,
    llr: Vec<f64>,
}

impl TrialState {
    pub fn new(j: usize) -> Self {
        TrialState { n: 0, llr: vec![0.0; j] }
    }

    /// State at an arbitrary time, mainly for tests and differential checks.
    pub fn from_parts(n: u64, llr: Vec<f64>) -> Self {
        TrialState { n, llr }
    }

    pub fn time(&self) -> u64 {
        self.n
    }

    pub fn llr(&self) -> &[f64] {
        &self.llr
    }

    pub fn num_streams(&self) -> usize {
        self.llr.len()
    }

    /// Adds one LLR increment per stream and advances time by one.
    pub fn advance(&mut self, increments: &[f64]) -> Result<()> {
        if increments.len() != self.llr.len() {
            return Err(Error::DimensionMismatch {
                expected: self.llr.len(),
                got: increments.len(),
            });
        }
        for (acc, inc) in self.llr.iter_mut().zip(increments) {
            *acc += inc;
        }
        self.n += 1;
        Ok(())
    }

    /// Samples one observation per stream and accumulates its LLR. Streams are
    /// drawn in index order, so two calls with identically seeded generators
    /// see identical paths.
    pub fn observe<R: Rng + ?Sized>(&mut self, models: &[StreamModel], truth: &TruthAssignment, rng: &mut R) {
        debug_assert_eq!(models.len(), self.llr.len());
        for ((acc, model), &signal) in self.llr.iter_mut().zip(models).zip(truth.mask()) {
            let x = sample_increment(rng, model, signal);
            *acc += llr_increment_unchecked(x, model);
        }
        self.n += 1;
    }
}
