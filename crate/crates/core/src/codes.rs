//! Probabilistic fingerprinting codes.
//!
//! A [`CodeBook`] is an `N × m` binary matrix whose column `j` is drawn with
//! bias `p_j`. Tracing scores every user against a pirated word with the
//! symmetric score function and accuses everybody above a threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::rng::{self, DetRng};

/// Exponent constant of the code-length bound `ε₀ = N·exp(−α₀·m)`.
pub const ALPHA0: f64 = 0.0725;

#[derive(Debug, Error, PartialEq)]
pub enum CodeError {
    #[error("error probability {0} must lie strictly between 0 and 1")]
    ErrorProbability(f64),
    #[error("number of users must be at least 1")]
    NoUsers,
    #[error("coalition bound must be at least 1")]
    CoalitionBound,
    #[error("error probability {eps} is not below the user count {users}")]
    NonPositiveLength { users: u32, eps: f64 },
    #[error("explicit code length {requested} is below the minimum {minimum}")]
    LengthTooShort { requested: usize, minimum: usize },
    #[error("bias distribution: {0}")]
    Bias(String),
    #[error("pirated codeword has length {got}, code book has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("erased symbols require the relaxed marking assumption")]
    ErasureNotAllowed,
    #[error("collusion needs at least one codeword")]
    EmptyCoalition,
    #[error("colluding codewords have different lengths")]
    RaggedCoalition,
    #[error("δ must lie in [0, 1], got {0}")]
    Delta(f64),
}

/// `m = ceil(ln(N/ε) / α₀)`.
pub fn code_length(num_users: u32, error_prob: f64) -> Result<usize, CodeError> {
    if !(error_prob > 0.0 && error_prob < 1.0) {
        return Err(CodeError::ErrorProbability(error_prob));
    }
    if num_users == 0 {
        return Err(CodeError::NoUsers);
    }
    if error_prob >= f64::from(num_users) {
        return Err(CodeError::NonPositiveLength {
            users: num_users,
            eps: error_prob,
        });
    }
    // ln N − ln ε keeps the boundary case N = 1, ε = e^{−α₀} on the right side
    // of the integer; ln(N/ε) rounds the quotient up first.
    let exact = (f64::from(num_users).ln() - error_prob.ln()) / ALPHA0;
    let m = exact.ceil();
    if m < 1.0 {
        return Err(CodeError::NonPositiveLength {
            users: num_users,
            eps: error_prob,
        });
    }
    Ok(m as usize)
}

/// Distribution the column biases are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasDistribution {
    /// Arcsine density on `[t, 1 − t]`; `t = None` means `1 / (300 c)`.
    Arcsine { cutoff: Option<f64> },
    /// Finite support with (unnormalised) weights, e.g. a tabulated discrete
    /// distribution loaded from a file.
    Discrete { support: Vec<f64>, weights: Vec<f64> },
}

impl Default for BiasDistribution {
    fn default() -> Self {
        BiasDistribution::Arcsine { cutoff: None }
    }
}

impl BiasDistribution {
    pub fn from_json(text: &str) -> Result<Self, CodeError> {
        let dist: BiasDistribution =
            serde_json::from_str(text).map_err(|e| CodeError::Bias(e.to_string()))?;
        dist.validate(1)?;
        Ok(dist)
    }

    /// Smallest and largest bias this distribution can produce.
    pub fn range(&self, coalition_bound: u16) -> (f64, f64) {
        match self {
            BiasDistribution::Arcsine { cutoff } => {
                let t = cutoff.unwrap_or_else(|| default_cutoff(coalition_bound));
                (t, 1.0 - t)
            }
            BiasDistribution::Discrete { support, .. } => support
                .iter()
                .fold((1.0, 0.0), |(lo, hi), &p| (f64::min(lo, p), f64::max(hi, p))),
        }
    }

    fn validate(&self, coalition_bound: u16) -> Result<(), CodeError> {
        match self {
            BiasDistribution::Arcsine { .. } => {
                let (t, _) = self.range(coalition_bound);
                if !(t > 0.0 && t < 0.5) {
                    return Err(CodeError::Bias(format!("cutoff {t} outside (0, 0.5)")));
                }
            }
            BiasDistribution::Discrete { support, weights } => {
                if support.is_empty() || support.len() != weights.len() {
                    return Err(CodeError::Bias(
                        "support and weights must be non-empty and equally long".into(),
                    ));
                }
                if support.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                    return Err(CodeError::Bias("support values must lie in (0, 1)".into()));
                }
                if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite()))
                    || weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(CodeError::Bias("weights must be non-negative with a positive sum".into()));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, coalition_bound: u16, rng: &mut DetRng) -> f64 {
        match self {
            BiasDistribution::Arcsine { .. } => {
                let (t, _) = self.range(coalition_bound);
                let lo = t.sqrt().asin();
                let r = rng.gen_range(lo..=FRAC_PI_2 - lo);
                r.sin().powi(2)
            }
            BiasDistribution::Discrete { support, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (&p, &w) in support.iter().zip(weights) {
                    if u < w {
                        return p;
                    }
                    u -= w;
                }
                support[support.len() - 1]
            }
        }
    }
}

fn default_cutoff(coalition_bound: u16) -> f64 {
    1.0 / (300.0 * f64::from(coalition_bound.max(1)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    pub num_users: u32,
    pub coalition_bound: u16,
    pub error_prob: f64,
    pub seed: u64,
    /// Explicit length; must not undercut [`code_length`]. `None` uses the bound.
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub bias: BiasDistribution,
}

impl CodeParams {
    pub fn new(num_users: u32, coalition_bound: u16, error_prob: f64, seed: u64) -> Self {
        Self {
            num_users,
            coalition_bound,
            error_prob,
            seed,
            length: None,
            bias: BiasDistribution::default(),
        }
    }

    pub fn with_length(mut self, length: usize) -> Self {
        self.length = Some(length);
        self
    }

    pub fn with_bias(mut self, bias: BiasDistribution) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<usize, CodeError> {
        if self.coalition_bound == 0 {
            return Err(CodeError::CoalitionBound);
        }
        let minimum = code_length(self.num_users, self.error_prob)?;
        self.bias.validate(self.coalition_bound)?;
        match self.length {
            Some(requested) if requested < minimum => {
                Err(CodeError::LengthTooShort { requested, minimum })
            }
            Some(requested) => Ok(requested),
            None => Ok(minimum),
        }
    }
}

/// The code state held by the monitor: codewords plus the secret biases.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBook {
    pub params: CodeParams,
    bias: Vec<f64>,
    rows: Vec<Vec<u8>>,
}

impl CodeBook {
    /// Reassembles a code book from stored parts (used by the container reader).
    pub fn from_parts(
        params: CodeParams,
        bias: Vec<f64>,
        rows: Vec<Vec<u8>>,
    ) -> Result<Self, CodeError> {
        let m = bias.len();
        if rows.len() != params.num_users as usize {
            return Err(CodeError::LengthMismatch {
                expected: params.num_users as usize,
                got: rows.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(CodeError::LengthMismatch {
                expected: m,
                got: bad.len(),
            });
        }
        Ok(Self { params, bias, rows })
    }

    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.rows.len()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Codeword of user `index` (0-based).
    pub fn codeword(&self, index: usize) -> &[u8] {
        &self.rows[index]
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }
}

/// Draws the biases first, then the bits row-major, from one seeded stream.
pub fn generate_code(params: &CodeParams) -> Result<CodeBook, CodeError> {
    let m = params.validate()?;
    let mut rng = rng::seeded(params.seed);
    let bias: Vec<f64> = (0..m)
        .map(|_| params.bias.sample(params.coalition_bound, &mut rng))
        .collect();
    let rows = (0..params.num_users)
        .map(|_| bias.iter().map(|&p| u8::from(rng.gen::<f64>() < p)).collect())
        .collect();
    Ok(CodeBook {
        params: params.clone(),
        bias,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PirateBit {
    Zero,
    One,
    Erased,
}

impl From<u8> for PirateBit {
    fn from(b: u8) -> Self {
        if b == 0 {
            PirateBit::Zero
        } else {
            PirateBit::One
        }
    }
}

/// Codeword recovered from a pirate copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiratedCodeword {
    symbols: Vec<PirateBit>,
    relaxed: bool,
}

impl PiratedCodeword {
    pub fn from_bits(bits: &[u8]) -> Self {
        Self {
            symbols: bits.iter().map(|&b| PirateBit::from(b)).collect(),
            relaxed: false,
        }
    }

    /// Under the δ-marking relaxation erased symbols are allowed.
    pub fn relaxed(symbols: Vec<PirateBit>) -> Self {
        Self {
            symbols,
            relaxed: true,
        }
    }

    pub fn new(symbols: Vec<PirateBit>) -> Result<Self, CodeError> {
        if symbols.contains(&PirateBit::Erased) {
            return Err(CodeError::ErasureNotAllowed);
        }
        Ok(Self {
            symbols,
            relaxed: false,
        })
    }

    pub fn symbols(&self) -> &[PirateBit] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    pub fn erased_count(&self) -> usize {
        self.symbols.iter().filter(|&&s| s == PirateBit::Erased).count()
    }

    /// Erasures map to 0.
    pub fn to_bits(&self) -> Vec<u8> {
        self.symbols
            .iter()
            .map(|&s| u8::from(s == PirateBit::One))
            .collect()
    }
}

/// Symmetric per-position score of a user bit against a pirate symbol.
pub fn position_score(pirate: PirateBit, user_bit: u8, p: f64) -> f64 {
    let one = ((1.0 - p) / p).sqrt();
    let zero = (p / (1.0 - p)).sqrt();
    match (pirate, user_bit) {
        (PirateBit::Erased, _) => 0.0,
        (PirateBit::One, 1) => one,
        (PirateBit::One, _) => -zero,
        (PirateBit::Zero, 0) => zero,
        (PirateBit::Zero, _) => -one,
    }
}

fn total_score(pc: &[PirateBit], row: &[u8], bias: &[f64]) -> f64 {
    pc.iter()
        .zip(row)
        .zip(bias)
        .map(|((&s, &b), &p)| position_score(s, b, p))
        .sum()
}

/// How the accusation threshold `Z` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Empirical calibration from innocent-score samples (see [`calibrate_threshold`]).
    Calibrated { samples: usize, seed: u64 },
}

/// Calibrates `Z` for `(N, c, ε, m)`.
///
/// Each sample draws fresh biases, an arbitrary pirate word and `N` codewords
/// independent of it, and records the largest of those innocent scores. `Z` is
/// the empirical `(1 − ε)` quantile of these maxima, so the probability that
/// any innocent user reaches `Z` is at most ε.
pub fn calibrate_threshold(params: &CodeParams, length: usize, samples: usize, seed: u64) -> f64 {
    let samples = samples.max(1);
    let mut rng = rng::seeded(seed);
    let mut maxima = Vec::with_capacity(samples);
    let mut bias = vec![0.0; length];
    let mut pc = vec![PirateBit::Zero; length];
    let mut row = vec![0u8; length];
    for _ in 0..samples {
        for (p, s) in bias.iter_mut().zip(pc.iter_mut()) {
            *p = params.bias.sample(params.coalition_bound, &mut rng);
            *s = PirateBit::from(u8::from(rng.gen::<f64>() < *p));
        }
        let mut best = f64::NEG_INFINITY;
        for _ in 0..params.num_users {
            for (b, &p) in row.iter_mut().zip(&bias) {
                *b = u8::from(rng.gen::<f64>() < p);
            }
            best = best.max(total_score(&pc, &row, &bias));
        }
        maxima.push(best);
    }
    maxima.sort_by(f64::total_cmp);
    let rank = ((1.0 - params.error_prob) * samples as f64).ceil() as usize;
    maxima[rank.clamp(1, samples) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub scores: Vec<f64>,
    /// 0-based user indices with `score ≥ threshold`, ascending.
    pub accused: Vec<usize>,
    pub threshold: f64,
}

impl TraceResult {
    /// User with the highest score (first one on ties).
    pub fn top(&self) -> Option<usize> {
        self.scores
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i)
    }
}

pub fn score_all(pc: &PiratedCodeword, book: &CodeBook) -> Result<Vec<f64>, CodeError> {
    if pc.len() != book.len() {
        return Err(CodeError::LengthMismatch {
            expected: book.len(),
            got: pc.len(),
        });
    }
    if !pc.relaxed && pc.erased_count() > 0 {
        return Err(CodeError::ErasureNotAllowed);
    }
    Ok(book
        .rows
        .iter()
        .map(|row| total_score(&pc.symbols, row, &book.bias))
        .collect())
}

pub fn trace(
    pc: &PiratedCodeword,
    book: &CodeBook,
    policy: ThresholdPolicy,
) -> Result<TraceResult, CodeError> {
    let scores = score_all(pc, book)?;
    let threshold = match policy {
        ThresholdPolicy::Fixed(z) => z,
        ThresholdPolicy::Calibrated { samples, seed } => {
            calibrate_threshold(&book.params, book.len(), samples, seed)
        }
    };
    let accused = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(TraceResult {
        scores,
        accused,
        threshold,
    })
}

/// Codeword-level coalition strategies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollusionStrategy {
    /// Bit held by most colluders; ties give 0.
    Majority,
    /// Bit held by fewest colluders; ties give 0.
    Minority,
    /// Bit of a colluder picked uniformly per detectable position.
    RandomChoice { seed: u64 },
    AllOnes,
    /// Erase every detectable position, plus up to `⌊δ·m⌋` undetectable ones.
    EraseDetectable { delta: f64, seed: u64 },
}

pub fn collude_codewords(
    rows: &[&[u8]],
    strategy: CollusionStrategy,
) -> Result<PiratedCodeword, CodeError> {
    let first = rows.first().ok_or(CodeError::EmptyCoalition)?;
    let m = first.len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(CodeError::RaggedCoalition);
    }
    let u = rows.len();
    let ones: Vec<usize> = (0..m)
        .map(|j| rows.iter().filter(|r| r[j] == 1).count())
        .collect();
    let detectable = |j: usize| ones[j] != 0 && ones[j] != u;
    let shared = |j: usize| PirateBit::from(first[j]);

    let mut out: Vec<PirateBit> = (0..m).map(shared).collect();
    match strategy {
        CollusionStrategy::Majority => {
            for j in (0..m).filter(|&j| detectable(j)) {
                out[j] = PirateBit::from(u8::from(2 * ones[j] > u));
            }
        }
        CollusionStrategy::Minority => {
            for j in (0..m).filter(|&j| detectable(j)) {
                out[j] = PirateBit::from(u8::from(2 * ones[j] < u));
            }
        }
        CollusionStrategy::RandomChoice { seed } => {
            let mut rng = rng::seeded(seed);
            for j in (0..m).filter(|&j| detectable(j)) {
                out[j] = PirateBit::from(rows[rng.gen_range(0..u)][j]);
            }
        }
        CollusionStrategy::AllOnes => {
            for j in (0..m).filter(|&j| detectable(j)) {
                out[j] = PirateBit::One;
            }
        }
        CollusionStrategy::EraseDetectable { delta, seed } => {
            if !(0.0..=1.0).contains(&delta) {
                return Err(CodeError::Delta(delta));
            }
            for j in (0..m).filter(|&j| detectable(j)) {
                out[j] = PirateBit::Erased;
            }
            let mut undetectable: Vec<usize> = (0..m).filter(|&j| !detectable(j)).collect();
            let budget = ((delta * m as f64).floor() as usize).min(undetectable.len());
            let mut rng = rng::seeded(seed);
            for k in 0..budget {
                let pick = rng.gen_range(k..undetectable.len());
                undetectable.swap(k, pick);
                out[undetectable[k]] = PirateBit::Erased;
            }
            return Ok(PiratedCodeword::relaxed(out));
        }
    }
    Ok(PiratedCodeword {
        symbols: out,
        relaxed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_length_examples() {
        assert_eq!(code_length(100, 0.001), Ok(159));
        assert_eq!(code_length(50, 0.01), Ok(118));
        assert_eq!(code_length(4, 0.1), Ok(51));
        assert_eq!(code_length(1, (-ALPHA0).exp()), Ok(1));
    }

    #[test]
    fn code_length_rejects_bad_epsilon() {
        assert!(matches!(code_length(10, 0.0), Err(CodeError::ErrorProbability(_))));
        assert!(matches!(code_length(10, 1.0), Err(CodeError::ErrorProbability(_))));
        assert!(matches!(code_length(10, -0.5), Err(CodeError::ErrorProbability(_))));
        assert!(matches!(code_length(10, f64::NAN), Err(CodeError::ErrorProbability(_))));
        assert_eq!(code_length(0, 0.1), Err(CodeError::NoUsers));
    }

    #[test]
    fn code_length_is_monotone() {
        let mut prev = 0;
        for n in 1..500 {
            let m = code_length(n, 0.01).unwrap();
            assert!(m >= prev);
            prev = m;
        }
        let mut prev = 0;
        for k in 1..200 {
            let eps = 0.5 / f64::from(k);
            let m = code_length(20, eps).unwrap();
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn generate_shape_and_determinism() {
        let params = CodeParams::new(4, 3, 0.1, 7);
        let a = generate_code(&params).unwrap();
        assert_eq!(a.len(), 51);
        assert_eq!(a.num_users(), 4);
        assert!(a.rows().iter().all(|r| r.len() == 51 && r.iter().all(|&b| b <= 1)));
        let t = 1.0 / 900.0;
        assert!(a.bias().iter().all(|&p| p >= t - 1e-15 && p <= 1.0 - t + 1e-15));
        assert_eq!(a, generate_code(&params).unwrap());
        let b = generate_code(&CodeParams::new(4, 3, 0.1, 8)).unwrap();
        assert_ne!(a.rows(), b.rows());
    }

    #[test]
    fn explicit_length_cannot_undercut_bound() {
        let p = CodeParams::new(50, 3, 0.01, 1).with_length(100);
        assert_eq!(
            p.validate(),
            Err(CodeError::LengthTooShort {
                requested: 100,
                minimum: 118
            })
        );
        assert_eq!(p.with_length(400).validate(), Ok(400));
    }

    #[test]
    fn single_user_is_traced() {
        let book = generate_code(&CodeParams::new(1, 1, 0.5, 3)).unwrap();
        let pc = PiratedCodeword::from_bits(book.codeword(0));
        let result = trace(&pc, &book, ThresholdPolicy::Fixed(0.0)).unwrap();
        assert_eq!(result.accused, vec![0]);
    }

    #[test]
    fn discrete_bias_only_uses_support() {
        let support = vec![0.2113248654051871, 0.7886751345948129];
        let dist = BiasDistribution::Discrete {
            support: support.clone(),
            weights: vec![1.0, 1.0],
        };
        let book = generate_code(&CodeParams::new(5, 3, 0.1, 11).with_bias(dist)).unwrap();
        assert!(book.bias().iter().all(|p| support.contains(p)));
    }

    #[test]
    fn discrete_bias_from_json() {
        let d = BiasDistribution::from_json(
            r#"{"kind":"discrete","support":[0.25,0.75],"weights":[1,1]}"#,
        )
        .unwrap();
        assert_eq!(d.range(3), (0.25, 0.75));
        assert!(BiasDistribution::from_json(
            r#"{"kind":"discrete","support":[1.5],"weights":[1]}"#
        )
        .is_err());
    }

    #[test]
    fn trace_rejects_length_mismatch_and_unrelaxed_erasures() {
        let book = generate_code(&CodeParams::new(3, 2, 0.1, 1)).unwrap();
        let short = PiratedCodeword::from_bits(&[0, 1]);
        assert!(matches!(
            trace(&short, &book, ThresholdPolicy::Fixed(0.0)),
            Err(CodeError::LengthMismatch { .. })
        ));
        assert_eq!(
            PiratedCodeword::new(vec![PirateBit::Erased]),
            Err(CodeError::ErasureNotAllowed)
        );
    }

    #[test]
    fn erased_positions_score_zero() {
        assert_eq!(position_score(PirateBit::Erased, 1, 0.3), 0.0);
        assert_eq!(position_score(PirateBit::Erased, 0, 0.3), 0.0);
    }

    #[test]
    fn majority_example() {
        let out = collude_codewords(&[&[0, 1, 0, 1], &[0, 1, 1, 0]], CollusionStrategy::Majority)
            .unwrap();
        assert_eq!(out.to_bits(), vec![0, 1, 0, 0]);
    }

    #[test]
    fn single_row_is_unchanged_for_every_strategy() {
        let row = [1u8, 0, 0, 1, 1];
        for s in all_strategies(0.0) {
            let out = collude_codewords(&[&row], s).unwrap();
            assert_eq!(out.to_bits(), row.to_vec(), "{s:?}");
            assert_eq!(out.erased_count(), 0);
        }
    }

    #[test]
    fn collude_errors() {
        assert_eq!(
            collude_codewords(&[], CollusionStrategy::Majority),
            Err(CodeError::EmptyCoalition)
        );
        assert_eq!(
            collude_codewords(&[&[0, 1], &[1]], CollusionStrategy::Majority),
            Err(CodeError::RaggedCoalition)
        );
    }

    #[test]
    fn erase_budget_bounded_by_delta() {
        let a = [0u8; 40];
        let b = [0u8; 40];
        let out = collude_codewords(
            &[&a, &b],
            CollusionStrategy::EraseDetectable { delta: 0.1, seed: 2 },
        )
        .unwrap();
        assert_eq!(out.erased_count(), 4);
        assert!(out.is_relaxed());
    }

    pub(crate) fn all_strategies(delta: f64) -> Vec<CollusionStrategy> {
        vec![
            CollusionStrategy::Majority,
            CollusionStrategy::Minority,
            CollusionStrategy::RandomChoice { seed: 5 },
            CollusionStrategy::AllOnes,
            CollusionStrategy::EraseDetectable { delta, seed: 5 },
        ]
    }

    #[test]
    fn marking_assumption_exhaustive() {
        // every coalition of up to 3 words over 4-bit columns, and a 16-bit
        // sweep built from them
        let words: Vec<Vec<u8>> = (0u8..16).map(|w| (0..4).map(|k| (w >> k) & 1).collect()).collect();
        for a in 0..16 {
            for b in a..16 {
                for c in b..16 {
                    let rows: [&[u8]; 3] = [&words[a], &words[b], &words[c]];
                    for s in all_strategies(0.0) {
                        let out = collude_codewords(&rows, s).unwrap();
                        for j in 0..4 {
                            let bit = rows[0][j];
                            if rows.iter().all(|r| r[j] == bit) {
                                assert_eq!(out.symbols()[j], PirateBit::from(bit));
                            }
                        }
                    }
                }
            }
        }
        let long: Vec<Vec<u8>> = (0u32..3)
            .map(|s| (0..16).map(|k| (((k * 7 + s * 5) >> 2) & 1) as u8).collect())
            .collect();
        let rows: Vec<&[u8]> = long.iter().map(|r| r.as_slice()).collect();
        for s in all_strategies(0.0) {
            let out = collude_codewords(&rows, s).unwrap();
            for j in 0..16 {
                if rows.iter().all(|r| r[j] == rows[0][j]) {
                    assert_eq!(out.symbols()[j], PirateBit::from(rows[0][j]));
                }
            }
        }
    }
}
