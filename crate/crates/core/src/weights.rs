//! Hypothesis weights and the weight-dependent calibration constants.
//!
//! A weight `W_j > 0` shifts stream `j`'s LLR by `log W_j`. All maximizations
//! over admissible signal sets that enter threshold calibration have closed
//! forms over the ascending-ordered weights `W_(1) <= ... <= W_(J)`:
//!
//! * `C_W(m, J) = (sum_{j>m} W_(j)) * (sum_{k<=m} 1/W_(k))`
//! * `max_{|A| in [l,u]} sum_{j not in A} W_j = sum_{j>l} W_(j)`
//! * `max_{|A| in [l,u]} sum_{k in A} 1/W_k = sum_{k<=u} 1/W_(k)`
//!
//! Sums always run over the ascending order, which makes the closed forms
//! bit-identical to the enumeration in [`c_w_bruteforce`].

use std::io::{self, BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::TruthAssignment;

/// Largest `J` accepted by [`c_w_bruteforce`].
pub const BRUTEFORCE_MAX_STREAMS: usize = 20;

/// Positive, finite weights `W_1..W_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
    log_w: Vec<f64>,
    ascending: Vec<f64>,
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::EmptyStreams);
        }
        if let Some((index, &value)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidWeight { index, value });
        }
        let log_w = w.iter().map(|v| v.ln()).collect();
        // Stable sort keeps ties in stream-index order.
        let mut ascending = w.clone();
        ascending.sort_by(f64::total_cmp);
        Ok(WeightVector { w, log_w, ascending })
    }

    pub fn ones(j: usize) -> Result<Self> {
        Self::new(vec![1.0; j])
    }

    /// `γ W`
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        Self::new(self.w.iter().map(|v| v * gamma).collect())
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    /// Weights sorted in non-decreasing order.
    pub fn ascending(&self) -> &[f64] {
        &self.ascending
    }

    /// Arithmetic mean, summed with Neumaier compensation.
    pub fn mean(&self) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &v in &self.w {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
        }
        (sum + comp) / self.w.len() as f64
    }

    fn check_count(&self, name: &'static str, k: usize) -> Result<()> {
        if k > self.len() {
            return Err(Error::CountOutOfRange {
                name,
                value: k,
                lo: 0,
                hi: self.len(),
            });
        }
        Ok(())
    }

    /// Writes `stream_index,weight` rows (0-based indices) with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "stream_index,weight")?;
        for (k, v) in self.w.iter().enumerate() {
            writeln!(out, "{k},{v}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`WeightVector::write_csv`]. Rows must be
    /// listed in stream order starting at 0.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut w = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("stream_index")) {
                continue;
            }
            let bad = || Error::InvalidParameter(format!("weights line {}: {line:?}", lineno + 1));
            let (idx, val) = line.split_once(',').ok_or_else(bad)?;
            let idx: usize = idx.trim().parse().map_err(|_| bad())?;
            let val: f64 = val.trim().parse().map_err(|_| bad())?;
            if idx != w.len() {
                return Err(bad());
            }
            w.push(val);
        }
        Self::new(w)
    }
}

/// Weighted LLR `λ + log W`.
pub fn wllr(lambda: f64, weight: f64) -> Result<f64> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::InvalidWeight { index: 0, value: weight });
    }
    Ok(lambda + weight.ln())
}

/// Sum of the `J - l` largest weights.
pub fn max_complement_weight_sum(l: usize, weights: &WeightVector) -> Result<f64> {
    weights.check_count("l", l)?;
    Ok(weights.ascending[l..].iter().sum())
}

/// Sum of reciprocals of the `u` smallest weights.
pub fn max_reciprocal_weight_sum(u: usize, weights: &WeightVector) -> Result<f64> {
    weights.check_count("u", u)?;
    Ok(weights.ascending[..u].iter().map(|v| 1.0 / v).sum())
}

/// `C_W(m, J)` in closed form. Exactly zero at `m = 0` and `m = J`.
pub fn c_w(m: usize, weights: &WeightVector) -> Result<f64> {
    Ok(max_complement_weight_sum(m, weights)? * max_reciprocal_weight_sum(m, weights)?)
}

/// `C_W(m, J)` by enumerating every subset of size `m`.
pub fn c_w_bruteforce(m: usize, weights: &WeightVector) -> Result<f64> {
    let j = weights.len();
    if j > BRUTEFORCE_MAX_STREAMS {
        return Err(Error::EnumerationTooLarge(j, BRUTEFORCE_MAX_STREAMS));
    }
    weights.check_count("m", m)?;
    let sorted = weights.ascending();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << j) {
        if mask.count_ones() as usize != m {
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
        best = best.max(complement * reciprocal);
    }
    Ok(best)
}

/// Parameters of the guess-based weight generator used by the simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightGenSpec {
    /// Informativeness `η >= 0`: 1 is uninformative, above 1 informative,
    /// below 1 misinformative.
    pub eta: f64,
    /// Strength `r >= 1`: preliminary weight of a stream guessed to be a
    /// signal. `r = 1` is the unweighted case.
    pub r: f64,
    /// Signal fraction `m / J`.
    pub signal_fraction: f64,
}

impl WeightGenSpec {
    pub fn new(eta: f64, r: f64, signal_fraction: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta = {eta} must be >= 0")));
        }
        if !(r >= 1.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("r = {r} must be >= 1")));
        }
        if !(signal_fraction > 0.0 && signal_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "signal fraction {signal_fraction} must lie in (0, 1)"
            )));
        }
        Ok(WeightGenSpec { eta, r, signal_fraction })
    }
}

/// `(p1, p0)`: probabilities that a signal, respectively a null, is guessed
/// to be a signal.
pub fn guess_probabilities(spec: &WeightGenSpec) -> Result<(f64, f64)> {
    let f = spec.signal_fraction;
    let denom = 1.0 + (spec.eta - 1.0) * f;
    if denom <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "guess probability denominator {denom} is not positive"
        )));
    }
    let p0 = f / denom;
    let p1 = spec.eta * p0;
    // Small η combined with a large signal fraction pushes p0 above 1.
    if p0 > 1.0 || p1 > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "eta = {} with signal fraction {f} gives guess probabilities ({p1}, {p0}) outside [0, 1]",
            spec.eta
        )));
    }
    Ok((p1, p0))
}

/// `W_j = (1 + (r-1) U_j) / (1 + (r-1) Ū)` for realized guesses `U`.
pub fn weights_from_guesses(guesses: &[bool], r: f64) -> Result<WeightVector> {
    if guesses.is_empty() {
        return Err(Error::EmptyStreams);
    }
    let u_bar = guesses.iter().filter(|&&g| g).count() as f64 / guesses.len() as f64;
    let denom = 1.0 + (r - 1.0) * u_bar;
    WeightVector::new(
        guesses
            .iter()
            .map(|&g| if g { r / denom } else { 1.0 / denom })
            .collect(),
    )
}

/// Draws guesses `U_j ~ Bernoulli(p1)` for signals and `Bernoulli(p0)` for
/// nulls, in stream order, and normalizes them to mean-one weights.
pub fn generate_weights<R: Rng + ?Sized>(
    spec: &WeightGenSpec,
    truth: &TruthAssignment,
    rng: &mut R,
) -> Result<WeightVector> {
    let (p1, p0) = guess_probabilities(spec)?;
    let guesses: Vec<bool> = truth
        .mask()
        .iter()
        .map(|&s| rng.random_bool(if s { p1 } else { p0 }))
        .collect();
    weights_from_guesses(&guesses, spec.r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wv(w: &[f64]) -> WeightVector {
        WeightVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn wllr_examples() {
        assert_eq!(wllr(1.2, 1.0).unwrap(), 1.2);
        assert!((wllr(0.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!((wllr(-0.5, 2.0).unwrap() - 0.193_147_180_559_945_3).abs() < 1e-15);
        assert!(wllr(1.0, 0.0).is_err());
        assert!(wllr(1.0, -2.0).is_err());
    }

    #[test]
    fn weight_vector_rejects_bad_values() {
        assert!(WeightVector::new(vec![]).is_err());
        assert_eq!(
            WeightVector::new(vec![1.0, 0.0]),
            Err(Error::InvalidWeight { index: 1, value: 0.0 })
        );
        assert!(WeightVector::new(vec![f64::INFINITY]).is_err());
        assert!(WeightVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn c_w_examples() {
        assert_eq!(c_w(2, &wv(&[1.0; 5])).unwrap(), 6.0);
        assert_eq!(c_w(0, &wv(&[0.5, 1.0, 1.0, 2.0, 4.0])).unwrap(), 0.0);
        assert_eq!(c_w(5, &wv(&[0.5, 1.0, 1.0, 2.0, 4.0])).unwrap(), 0.0);
        assert_eq!(c_w(2, &wv(&[0.5, 1.0, 1.0, 2.0, 4.0])).unwrap(), 21.0);
        assert_eq!(c_w(2, &wv(&[4.0, 1.0, 2.0, 0.5, 1.0])).unwrap(), 21.0);
        assert!(c_w(6, &wv(&[1.0; 5])).is_err());
    }

    #[test]
    fn c_w_bruteforce_examples() {
        assert_eq!(c_w_bruteforce(2, &wv(&[1.0; 5])).unwrap(), 6.0);
        assert_eq!(c_w_bruteforce(2, &wv(&[0.5, 1.0, 1.0, 2.0, 4.0])).unwrap(), 21.0);
        assert_eq!(c_w_bruteforce(5, &wv(&[0.5, 1.0, 1.0, 2.0, 4.0])).unwrap(), 0.0);
        assert_eq!(
            c_w_bruteforce(1, &WeightVector::ones(21).unwrap()),
            Err(Error::EnumerationTooLarge(21, BRUTEFORCE_MAX_STREAMS))
        );
    }

    #[test]
    fn partial_sum_examples() {
        let w = wv(&[1.0, 2.0, 3.0]);
        assert_eq!(max_complement_weight_sum(0, &w).unwrap(), 6.0);
        assert_eq!(max_complement_weight_sum(3, &w).unwrap(), 0.0);
        let w = wv(&[0.5, 1.0, 1.0, 2.0, 4.0]);
        assert_eq!(max_complement_weight_sum(1, &w).unwrap(), 8.0);
        assert_eq!(max_reciprocal_weight_sum(0, &w).unwrap(), 0.0);
        assert_eq!(max_reciprocal_weight_sum(2, &w).unwrap(), 3.0);
        assert_eq!(max_reciprocal_weight_sum(7, &wv(&[1.0; 7])).unwrap(), 7.0);
        assert!(max_reciprocal_weight_sum(8, &wv(&[1.0; 7])).is_err());
    }

    #[test]
    fn guess_probability_examples() {
        let (p1, p0) = guess_probabilities(&WeightGenSpec::new(1.0, 1.0, 0.1).unwrap()).unwrap();
        assert!((p1 - 0.1).abs() < 1e-15 && (p0 - 0.1).abs() < 1e-15);
        let (p1, p0) = guess_probabilities(&WeightGenSpec::new(20.0, 5.0, 0.1).unwrap()).unwrap();
        assert!((p1 - 2.0 / 2.9).abs() < 1e-15, "{p1}");
        assert!((p1 - 0.689_655_172_413_793).abs() < 1e-12);
        assert!((p0 - 0.034_482_758_620_689_65).abs() < 1e-15);
        let (p1, p0) = guess_probabilities(&WeightGenSpec::new(0.0, 5.0, 0.1).unwrap()).unwrap();
        assert_eq!(p1, 0.0);
        assert!((p0 - 0.1 / 0.9).abs() < 1e-15);
        assert!(guess_probabilities(&WeightGenSpec::new(0.0, 5.0, 0.85).unwrap()).is_err());
        assert!(WeightGenSpec::new(-1.0, 5.0, 0.1).is_err());
        assert!(WeightGenSpec::new(1.0, 0.5, 0.1).is_err());
        assert!(WeightGenSpec::new(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn weights_from_guesses_examples() {
        let w = weights_from_guesses(&[true, false, false, false], 5.0).unwrap();
        assert_eq!(w.as_slice(), &[2.5, 0.5, 0.5, 0.5]);
        let w = weights_from_guesses(&[false; 6], 5.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0; 6]);
        let w = weights_from_guesses(&[true, false, true], 1.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0; 3]);
    }

    #[test]
    fn unweighted_generation_is_all_ones() {
        let truth = TruthAssignment::new(50, 0..5).unwrap();
        let spec = WeightGenSpec::new(20.0, 1.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = generate_weights(&spec, &truth, &mut rng).unwrap();
            assert!(w.as_slice().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn weight_csv_round_trip() {
        let w = wv(&[0.5, 1.25, 3.0]);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "stream_index,weight\n0,0.5\n1,1.25\n2,3\n");
        assert_eq!(WeightVector::read_csv(&buf[..]).unwrap(), w);
        assert!(WeightVector::read_csv("stream_index,weight\n1,2\n".as_bytes()).is_err());
    }

    fn weight_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..20.0, 1..=max_len)
    }

    proptest! {
        #[test]
        fn closed_form_matches_enumeration(w in weight_vec(10)) {
            let w = WeightVector::new(w).unwrap();
            for m in 0..=w.len() {
                prop_assert_eq!(c_w(m, &w).unwrap(), c_w_bruteforce(m, &w).unwrap());
            }
        }

        #[test]
        fn c_w_scale_invariant(w in weight_vec(12), gamma in 0.01f64..100.0) {
            let w = WeightVector::new(w).unwrap();
            let s = w.scaled(gamma).unwrap();
            for m in 0..=w.len() {
                let (a, b) = (c_w(m, &w).unwrap(), c_w(m, &s).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn c_w_unweighted_is_m_times_complement(j in 1usize..40) {
            let w = WeightVector::ones(j).unwrap();
            for m in 0..=j {
                prop_assert_eq!(c_w(m, &w).unwrap(), (m * (j - m)) as f64);
            }
        }

        #[test]
        fn generated_weights_have_unit_mean(
            seed in any::<u64>(),
            eta in 0.0f64..30.0,
            r in 1.0f64..10.0,
            j in 10usize..200,
        ) {
            let m = (j / 10).max(1);
            let truth = TruthAssignment::new(j, 0..m).unwrap();
            let spec = WeightGenSpec::new(eta, r, m as f64 / j as f64).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = generate_weights(&spec, &truth, &mut rng).unwrap();
            prop_assert!(w.as_slice().iter().all(|&v| v > 0.0));
            prop_assert!((w.mean() - 1.0).abs() <= 8.0 * f64::EPSILON);
        }

        #[test]
        fn p1_dominates_p0_iff_informative(eta in 0.0f64..50.0, f in 0.01f64..0.5) {
            let (p1, p0) = guess_probabilities(&WeightGenSpec::new(eta, 2.0, f).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p0));
            prop_assert_eq!(p1 >= p0, eta >= 1.0);
        }
    }
}
