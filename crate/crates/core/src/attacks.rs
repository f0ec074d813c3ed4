//! Adversaries: coefficient-level collusion, signal processing distortions,
//! proxy coalitions against the permutation keys, and pseudonym
//! impersonation against the registration CA.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::CodeBook;
use crate::crypto::{
    sign, sym_decrypt, unpermute, Certificate, CryptoError, KeyPair, PermutationKey, Pseudonym,
    SessionKey,
};
use crate::protocol::entities::{anon_binding, Directory, RegistrationCa};
use crate::protocol::AnonRejection;
use crate::rng::{derive_seed, seeded};
use crate::transform::{Content, TransformError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("collusion needs at least two copies, got {0}")]
    TooFewCopies(usize),
    #[error("copies differ in shape")]
    ShapeMismatch,
    #[error("invalid attack parameter: {0}")]
    Parameter(String),
    #[error("{0} is not a signal attack")]
    NotSignal(&'static str),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn bad(msg: impl Into<String>) -> AttackError {
    AttackError::Parameter(msg.into())
}

/// Per-sample aggregate used by coefficient-level collusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentCollusion {
    Average,
    Min,
    Max,
    /// Lower median for an even number of copies.
    Median,
}

impl ContentCollusion {
    pub const ALL: [ContentCollusion; 4] = [Self::Average, Self::Min, Self::Max, Self::Median];

    pub fn name(self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Min => "min",
            Self::Max => "max",
            Self::Median => "median",
        }
    }

    fn aggregate(self, values: &mut [f64]) -> f64 {
        match self {
            Self::Average => {
                values.sort_by(f64::total_cmp);
                let base = values[0];
                base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
            }
            Self::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Self::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Self::Median => {
                values.sort_by(f64::total_cmp);
                values[(values.len() - 1) / 2]
            }
        }
    }
}

/// Element-wise aggregate over identically shaped copies.
pub fn collude_contents(copies: &[Content], kind: ContentCollusion) -> Result<Content, AttackError> {
    if copies.len() < 2 {
        return Err(AttackError::TooFewCopies(copies.len()));
    }
    let first = &copies[0];
    if copies.iter().any(|c| !first.same_shape(c)) {
        return Err(AttackError::ShapeMismatch);
    }
    let all: Vec<Vec<&[f64]>> = copies.iter().map(Content::buffers).collect();
    let mut column = vec![0.0; copies.len()];
    let buffers = (0..all[0].len())
        .map(|b| {
            (0..all[0][b].len())
                .map(|i| {
                    for (slot, copy) in column.iter_mut().zip(&all) {
                        *slot = copy[b][i];
                    }
                    kind.aggregate(&mut column)
                })
                .collect()
        })
        .collect();
    Ok(first.with_buffers(buffers)?)
}

/// Attack parameters. Frequencies are fractions of the Nyquist rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Additive white Gaussian noise at a target SNR over the whole signal.
    Awgn { snr_db: f64 },
    Scaling { factor: f64 },
    /// Round to a `bits`-bit grid on [-1, 1) and back.
    Requantize { bits: u32 },
    /// Resample to `up/down` of the rate and back, with linear interpolation.
    Resample { up: u32, down: u32 },
    LowPass {
        cutoff: f64,
        #[serde(default = "default_taps")]
        taps: usize,
    },
    HighPass {
        cutoff: f64,
        #[serde(default = "default_taps")]
        taps: usize,
    },
    Echo { delay: usize, decay: f64 },
    /// Coefficient-level collusion among the listed buyers.
    Collusion {
        colluders: Vec<usize>,
        strategy: ContentCollusion,
    },
}

fn default_taps() -> usize {
    101
}

impl AttackKind {
    pub fn name(&self) -> String {
        match self {
            Self::Awgn { snr_db } => format!("awgn_{snr_db}db"),
            Self::Scaling { factor } => format!("scaling_{factor}"),
            Self::Requantize { bits } => format!("requantize_{bits}bit"),
            Self::Resample { up, down } => format!("resample_{up}_{down}"),
            Self::LowPass { cutoff, .. } => format!("lowpass_{cutoff}"),
            Self::HighPass { cutoff, .. } => format!("highpass_{cutoff}"),
            Self::Echo { delay, decay } => format!("echo_{delay}_{decay}"),
            Self::Collusion { colluders, strategy } => format!("collusion_{}_{}", strategy.name(), colluders.len()),
        }
    }

    /// Parses the compact command-line form, e.g. `awgn:30`, `scaling:1.1`,
    /// `requantize:16`, `resample:1/2`, `lowpass:0.45`, `highpass:0.1`,
    /// `echo:100:0.3` or `collusion:median:0,1,2`.
    pub fn parse(text: &str) -> Result<Self, AttackError> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let num = |i: usize| -> Result<f64, AttackError> {
            parts
                .get(i)
                .ok_or_else(|| bad(format!("{text}: missing parameter")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("{text}: {e}")))
        };
        let int = |i: usize| -> Result<u64, AttackError> {
            parts
                .get(i)
                .ok_or_else(|| bad(format!("{text}: missing parameter")))?
                .parse::<u64>()
                .map_err(|e| bad(format!("{text}: {e}")))
        };
        let kind = match parts[0] {
            "awgn" => Self::Awgn { snr_db: num(1)? },
            "scaling" => Self::Scaling { factor: num(1)? },
            "requantize" => Self::Requantize { bits: int(1)? as u32 },
            "resample" => {
                let ratio = parts.get(1).ok_or_else(|| bad(format!("{text}: missing ratio")))?;
                let (up, down) = ratio.split_once('/').unwrap_or((ratio, "1"));
                let p = |s: &str| s.parse::<u32>().map_err(|e| bad(format!("{text}: {e}")));
                Self::Resample { up: p(up)?, down: p(down)? }
            }
            "lowpass" => Self::LowPass { cutoff: num(1)?, taps: default_taps() },
            "highpass" => Self::HighPass { cutoff: num(1)?, taps: default_taps() },
            "echo" => Self::Echo { delay: int(1)? as usize, decay: num(2)? },
            "collusion" => {
                let strategy = match parts.get(1).copied() {
                    Some("average") => ContentCollusion::Average,
                    Some("min") => ContentCollusion::Min,
                    Some("max") => ContentCollusion::Max,
                    Some("median") => ContentCollusion::Median,
                    _ => return Err(bad(format!("{text}: unknown collusion strategy"))),
                };
                let colluders = parts
                    .get(2)
                    .ok_or_else(|| bad(format!("{text}: missing colluders")))?
                    .split(',')
                    .map(|s| s.parse::<usize>().map_err(|e| bad(format!("{text}: {e}"))))
                    .collect::<Result<_, _>>()?;
                Self::Collusion { colluders, strategy }
            }
            other => return Err(bad(format!("unknown attack {other}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    /// Whether extraction should estimate and undo a gain change.
    pub fn needs_gain_normalisation(&self) -> bool {
        matches!(self, Self::Scaling { .. })
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let cutoff_ok = |c: f64| c > 0.0 && c < 1.0;
        match *self {
            Self::Awgn { snr_db } if !snr_db.is_finite() => Err(bad("SNR must be finite")),
            Self::Scaling { factor } if !(factor.is_finite() && factor > 0.0) => {
                Err(bad("scale factor must be positive"))
            }
            Self::Requantize { bits } if !(2..=32).contains(&bits) => Err(bad("quantiser bits must be in 2..=32")),
            Self::Resample { up, down } if up == 0 || down == 0 => Err(bad("resampling ratio must be positive")),
            Self::LowPass { cutoff, taps } | Self::HighPass { cutoff, taps } if !cutoff_ok(cutoff) || taps % 2 == 0 => {
                Err(bad("cutoff must lie in (0, 1) and the tap count must be odd"))
            }
            Self::Echo { decay, .. } if !(0.0..=1.0).contains(&decay) => Err(bad("echo decay must be in [0, 1]")),
            Self::Collusion { ref colluders, .. } if colluders.len() < 2 => {
                Err(bad("collusion needs at least two colluders"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// Applies one distortion to every channel or plane. Deterministic in
/// `spec.seed`.
pub fn apply_signal_attack(content: &Content, spec: &AttackSpec) -> Result<Content, AttackError> {
    spec.kind.validate()?;
    Ok(match spec.kind {
        AttackKind::Awgn { snr_db } => {
            let samples = content.samples();
            let power = samples.iter().map(|x| x * x).sum::<f64>() / samples.len().max(1) as f64;
            let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
            let normal = Normal::new(0.0, sigma).map_err(|e| bad(e.to_string()))?;
            let mut rng = seeded(derive_seed(spec.seed, "awgn", 0));
            content.map_buffers(|b| b.iter().map(|x| x + normal.sample(&mut rng)).collect())
        }
        AttackKind::Scaling { factor } => content.map_buffers(|b| b.iter().map(|x| x * factor).collect()),
        AttackKind::Requantize { bits } => {
            let q = f64::from(2u32.pow(bits - 1));
            let top = (q - 1.0) / q;
            content.map_buffers(|b| b.iter().map(|x| ((x * q).round() / q).clamp(-1.0, top)).collect())
        }
        AttackKind::Resample { up, down } => content.map_buffers(|b| resample_round_trip(b, up, down)),
        AttackKind::LowPass { cutoff, taps } => {
            let h = lowpass_kernel(cutoff, taps);
            content.map_buffers(|b| convolve_symmetric(b, &h))
        }
        AttackKind::HighPass { cutoff, taps } => {
            let mut h: Vec<f64> = lowpass_kernel(cutoff, taps).iter().map(|v| -v).collect();
            h[taps / 2] += 1.0;
            content.map_buffers(|b| convolve_symmetric(b, &h))
        }
        AttackKind::Echo { delay, decay } => content.map_buffers(|b| {
            (0..b.len())
                .map(|i| b[i] + if i >= delay { decay * b[i - delay] } else { 0.0 })
                .collect()
        }),
        AttackKind::Collusion { .. } => return Err(AttackError::NotSignal("collusion")),
    })
}

/// Linear interpolation of `x` at `len` evenly spaced points spanning it.
fn stretch(x: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() || len == 0 {
        return vec![0.0; len];
    }
    if x.len() == 1 || len == 1 {
        return vec![x[0]; len];
    }
    let step = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|j| {
            let t = j as f64 * step;
            let i = (t.floor() as usize).min(x.len() - 2);
            let frac = t - i as f64;
            x[i] * (1.0 - frac) + x[i + 1] * frac
        })
        .collect()
}

fn resample_round_trip(x: &[f64], up: u32, down: u32) -> Vec<f64> {
    let mid = ((x.len() as u64 * u64::from(up)) / u64::from(down)).max(2) as usize;
    stretch(&stretch(x, mid), x.len())
}

/// Hamming-windowed sinc, unit DC gain.
fn lowpass_kernel(cutoff: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff / 2.0;
    let mid = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let n = k as f64 - mid;
            let sinc = if n == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * n).sin() / (PI * n)
            };
            let w = if taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * k as f64 / (taps - 1) as f64).cos()
            };
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase filtering with a centred odd kernel; edges are mirrored.
fn convolve_symmetric(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    if n == 0 {
        return Vec::new();
    }
    let half = (h.len() / 2) as isize;
    let at = |mut i: isize| {
        let period = 2 * n;
        i = i.rem_euclid(period);
        if i >= n {
            i = period - 1 - i;
        }
        x[i as usize]
    };
    (0..n)
        .map(|i| {
            h.iter()
                .enumerate()
                .map(|(k, &w)| w * at(i + half - k as isize))
                .sum()
        })
        .collect()
}

// ---------------------------------------------------------------- proxy coalition

/// Everything the full proxy coalition of one transaction holds.
#[derive(Clone, Debug, Default)]
pub struct CoalitionView {
    /// Permuted segment `ps_j` per lane.
    pub segments: Vec<Vec<u8>>,
    /// Encrypted variant-0 and variant-1 blocks per lane.
    pub fragments: Vec<(Vec<Vec<u8>>, Vec<Vec<u8>>)>,
    /// Permutation keys leaked by a colluding merchant.
    pub leaked_permutations: Option<Vec<PermutationKey>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionReport {
    pub guesses: u64,
    /// Guesses equal to the buyer's actual key tuple.
    pub key_matches: u64,
    /// Guesses whose unpermuted codeword is some row of the book.
    pub codeword_matches: u64,
    pub success_fraction: f64,
    /// A book row reproduced by some guess.
    pub recovered: Option<Vec<u8>>,
    pub decrypt_attempts: u64,
    pub decrypt_failures: u64,
}

/// In-place lexicographic successor; `false` (and reset) after the last one.
fn next_permutation(p: &mut [u32]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        p.reverse();
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("a larger suffix element exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Guesses joint permutation keys for all lanes, up to `budget`, and counts
/// how often the unpermuted fingerprint is recovered. `truth` is the
/// buyer's real key tuple, used only to score. Every fragment is also tried
/// against a guessed session key, since the coalition never holds one.
pub fn proxy_coalition_attack(
    view: &CoalitionView,
    book: &CodeBook,
    truth: &[PermutationKey],
    budget: u64,
    seed: u64,
) -> Result<CoalitionReport, AttackError> {
    let rows: HashSet<&[u8]> = book.rows().iter().map(Vec::as_slice).collect();
    let mut report = CoalitionReport {
        guesses: 0,
        key_matches: 0,
        codeword_matches: 0,
        success_fraction: 0.0,
        recovered: None,
        decrypt_attempts: 0,
        decrypt_failures: 0,
    };
    let score = |guess: &[PermutationKey], report: &mut CoalitionReport| -> Result<(), AttackError> {
        report.guesses += 1;
        if guess == truth {
            report.key_matches += 1;
        }
        let mut candidate = Vec::new();
        for (seg, sigma) in view.segments.iter().zip(guess) {
            candidate.extend(unpermute(seg, sigma)?);
        }
        if rows.contains(candidate.as_slice()) {
            report.codeword_matches += 1;
            report.recovered.get_or_insert(candidate);
        }
        Ok(())
    };

    if let Some(leaked) = &view.leaked_permutations {
        if budget > 0 {
            score(leaked, &mut report)?;
        }
    } else {
        let mut state: Vec<Vec<u32>> = view.segments.iter().map(|s| (0..s.len() as u32).collect()).collect();
        'enumerate: while report.guesses < budget {
            let guess = state
                .iter()
                .map(|p| PermutationKey::from_vec(p.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            score(&guess, &mut report)?;
            for lane in state.iter_mut().rev() {
                if next_permutation(lane) {
                    continue 'enumerate;
                }
            }
            break;
        }
    }
    if report.guesses > 0 {
        report.success_fraction = report.key_matches as f64 / report.guesses as f64;
    }

    let mut rng = seeded(derive_seed(seed, "coalition-keys", 0));
    for (v0, v1) in &view.fragments {
        for block in v0.iter().chain(v1) {
            report.decrypt_attempts += 1;
            if sym_decrypt(block, &SessionKey::generate(&mut rng)).is_err() {
                report.decrypt_failures += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- impersonation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impersonation {
    /// Replays a captured certification request with the attacker's own
    /// anonymous key pair.
    ReplayCaptured,
    /// Uses the victim's pseudonym under the attacker's own identity,
    /// proving knowledge of `r` with a guess.
    GuessSecret,
    /// The attacker holds the victim's `r`.
    Insider,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpersonationOutcome {
    pub accepted: bool,
    pub rejection: Option<AnonRejection>,
}

fn test_directory(ca_r: &RegistrationCa, root: &KeyPair, rng: &mut impl RngCore) -> Directory {
    let other = KeyPair::generate(rng).public();
    Directory {
        root: root.public(),
        ca_r: ca_r.public(),
        merchant: other.clone(),
        monitor: other.clone(),
        judge: other,
        peers: BTreeMap::new(),
        expiry: u64::MAX / 2,
    }
}

/// Runs one certification attempt for the victim's pseudonym by someone
/// other than the victim.
pub fn impersonation_attack(mode: Impersonation, seed: u64) -> ImpersonationOutcome {
    let mut rng = seeded(derive_seed(seed, "impersonation", 0));
    let root = KeyPair::generate(&mut rng);
    let mut ca = RegistrationCa::new(KeyPair::generate(&mut rng), seeded(derive_seed(seed, "ca_r", 0)));
    let dir = test_directory(&ca, &root, &mut rng);
    let expiry = dir.expiry;

    let victim_identity = KeyPair::generate(&mut rng);
    let victim_cert = Certificate::issue(b"victim", victim_identity.public(), "root", expiry, &root);
    let (victim_p, victim_r) = ca.register(b"victim");
    let victim_anon = KeyPair::generate(&mut rng);
    let binding = anon_binding(&victim_anon.public(), &victim_p);
    let captured = (sign(&binding, &victim_identity), victim_r.bind(&binding));

    let attacker_identity = KeyPair::generate(&mut rng);
    let attacker_cert = Certificate::issue(b"attacker", attacker_identity.public(), "root", expiry, &root);
    let attacker_anon = KeyPair::generate(&mut rng).public();
    let attacker_binding = anon_binding(&attacker_anon, &victim_p);

    let result = match mode {
        Impersonation::ReplayCaptured => {
            ca.check_anon_request(&attacker_anon, &victim_p, &victim_cert, &captured.0, &captured.1, &dir, 0)
        }
        Impersonation::GuessSecret => {
            let guess = crate::crypto::PseudonymSecret::generate(&mut rng);
            let sig = sign(&attacker_binding, &attacker_identity);
            ca.check_anon_request(&attacker_anon, &victim_p, &attacker_cert, &sig, &guess.bind(&attacker_binding), &dir, 0)
        }
        Impersonation::Insider => {
            let sig = sign(&attacker_binding, &attacker_identity);
            let proof = victim_r.bind(&attacker_binding);
            ca.check_anon_request(&attacker_anon, &victim_p, &attacker_cert, &sig, &proof, &dir, 0)
        }
    };
    ImpersonationOutcome {
        accepted: result.is_ok(),
        rejection: result.err(),
    }
}

/// Draws `trials` uniformly random pseudonyms and counts how many are
/// registered with a CA that holds `registered` users.
pub fn pseudonym_guessing(registered: usize, trials: u64, seed: u64) -> u64 {
    let mut ca = RegistrationCa::new(
        KeyPair::generate(&mut seeded(seed)),
        seeded(derive_seed(seed, "ca_r", 0)),
    );
    for i in 0..registered {
        ca.register(format!("user-{i}").as_bytes());
    }
    let mut rng = seeded(derive_seed(seed, "guess", 0));
    let mut hits = 0;
    let mut p = [0u8; 32];
    for _ in 0..trials {
        rng.fill_bytes(&mut p);
        if ca.is_registered(&Pseudonym(p)) {
            hits += 1;
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{generate_code, CodeParams};
    use crate::crypto::permute;
    use crate::transform::AudioContent;

    fn mono(x: Vec<f64>) -> Content {
        Content::Audio(AudioContent::new(8000, vec![x]).unwrap())
    }

    fn samples(c: &Content) -> Vec<f64> {
        c.samples()
    }

    #[test]
    fn collusion_aggregates() {
        let a = mono(vec![1.0]);
        let b = mono(vec![3.0]);
        let c = mono(vec![2.0]);
        let avg = collude_contents(&[a.clone(), b.clone()], ContentCollusion::Average).unwrap();
        assert_eq!(samples(&avg), vec![2.0]);
        let three = [a.clone(), b.clone(), c.clone()];
        assert_eq!(samples(&collude_contents(&three, ContentCollusion::Median).unwrap()), vec![2.0]);
        assert_eq!(samples(&collude_contents(&three, ContentCollusion::Min).unwrap()), vec![1.0]);
        assert_eq!(samples(&collude_contents(&three, ContentCollusion::Max).unwrap()), vec![3.0]);
        let even = [a.clone(), b.clone(), c.clone(), mono(vec![4.0])];
        assert_eq!(samples(&collude_contents(&even, ContentCollusion::Median).unwrap()), vec![2.0]);
        assert!(collude_contents(&[a.clone()], ContentCollusion::Average).is_err());
        assert!(matches!(
            collude_contents(&[a, mono(vec![1.0, 2.0])], ContentCollusion::Max),
            Err(AttackError::ShapeMismatch)
        ));
    }

    #[test]
    fn collusion_is_idempotent_and_order_free() {
        let x = mono(vec![0.1, -0.4, 0.25]);
        let y = mono(vec![0.3, 0.2, -0.1]);
        let z = mono(vec![-0.2, 0.0, 0.5]);
        for kind in ContentCollusion::ALL {
            assert_eq!(collude_contents(&[x.clone(), x.clone(), x.clone()], kind).unwrap(), x);
            assert_eq!(
                collude_contents(&[x.clone(), y.clone(), z.clone()], kind).unwrap(),
                collude_contents(&[z.clone(), x.clone(), y.clone()], kind).unwrap()
            );
        }
    }

    fn tone(len: usize) -> Content {
        mono((0..len).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect())
    }

    #[test]
    fn identities() {
        let c = tone(500);
        let scale = AttackSpec::new(AttackKind::Scaling { factor: 1.0 }, 0);
        assert_eq!(apply_signal_attack(&c, &scale).unwrap(), c);
        let grid = mono((0..500).map(|i| f64::from((i * 37 % 2000) as i32 - 1000) / 32768.0).collect());
        let q = AttackSpec::new(AttackKind::Requantize { bits: 16 }, 0);
        assert_eq!(apply_signal_attack(&grid, &q).unwrap(), grid);
        let r = AttackSpec::new(AttackKind::Resample { up: 1, down: 1 }, 0);
        assert_eq!(apply_signal_attack(&c, &r).unwrap(), c);
    }

    #[test]
    fn awgn_hits_target_snr_and_is_seeded() {
        let c = tone(20_000);
        let spec = AttackSpec::new(AttackKind::Awgn { snr_db: 30.0 }, 5);
        let a = apply_signal_attack(&c, &spec).unwrap();
        assert_eq!(a, apply_signal_attack(&c, &spec).unwrap());
        let x = c.samples();
        let noise: f64 = a.samples().iter().zip(&x).map(|(y, x)| (y - x).powi(2)).sum();
        let signal: f64 = x.iter().map(|v| v * v).sum();
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 30.0).abs() < 0.2, "{snr}");
    }

    #[test]
    fn filters_split_the_spectrum() {
        // Away from the mirrored edges.
        let interior = |c: Content| c.samples()[60..1940].to_vec();
        let slow = tone(2000);
        let lp = AttackSpec::new(AttackKind::LowPass { cutoff: 0.45, taps: 101 }, 0);
        let hp = AttackSpec::new(AttackKind::HighPass { cutoff: 0.45, taps: 101 }, 0);
        let passed = interior(apply_signal_attack(&slow, &lp).unwrap());
        assert!(passed.iter().zip(interior(slow.clone())).all(|(x, y)| (x - y).abs() < 1e-3));
        assert!(interior(apply_signal_attack(&slow, &hp).unwrap()).iter().all(|v| v.abs() < 1e-3));
        let fast = mono((0..2000).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect());
        assert!(interior(apply_signal_attack(&fast, &lp).unwrap()).iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn compact_forms_parse() {
        assert_eq!(AttackKind::parse("awgn:30").unwrap(), AttackKind::Awgn { snr_db: 30.0 });
        assert_eq!(AttackKind::parse("resample:1/2").unwrap(), AttackKind::Resample { up: 1, down: 2 });
        assert_eq!(AttackKind::parse("echo:100:0.3").unwrap(), AttackKind::Echo { delay: 100, decay: 0.3 });
        assert_eq!(
            AttackKind::parse("collusion:median:0,2").unwrap(),
            AttackKind::Collusion {
                colluders: vec![0, 2],
                strategy: ContentCollusion::Median
            }
        );
        assert!(AttackKind::parse("lowpass:2").is_err());
        assert!(AttackKind::parse("rotate:5").is_err());
    }

    #[test]
    fn echo_adds_a_delayed_copy() {
        let c = mono(vec![1.0, 0.0, 0.0, 0.0]);
        let spec = AttackSpec::new(AttackKind::Echo { delay: 2, decay: 0.5 }, 0);
        assert_eq!(apply_signal_attack(&c, &spec).unwrap().samples(), vec![1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn parameters_are_checked() {
        let c = tone(10);
        for kind in [
            AttackKind::Scaling { factor: -1.0 },
            AttackKind::Requantize { bits: 1 },
            AttackKind::Resample { up: 0, down: 1 },
            AttackKind::LowPass { cutoff: 1.5, taps: 11 },
            AttackKind::HighPass { cutoff: 0.5, taps: 10 },
            AttackKind::Echo { delay: 1, decay: 2.0 },
        ] {
            assert!(apply_signal_attack(&c, &AttackSpec::new(kind, 0)).is_err());
        }
    }

    #[test]
    fn permutation_successor_cycles() {
        let mut p = vec![0, 1, 2];
        let mut n = 1;
        while next_permutation(&mut p) {
            n += 1;
        }
        assert_eq!(n, 6);
        assert_eq!(p, vec![0, 1, 2]);
    }

    fn small_view(seed: u64) -> (CoalitionView, CodeBook, Vec<PermutationKey>) {
        let book = generate_code(&CodeParams::new(2, 2, 0.9, seed)).unwrap();
        let f = book.codeword(0).to_vec();
        let mut rng = seeded(seed);
        let truth: Vec<PermutationKey> = [4, 4, 4].iter().map(|&l| PermutationKey::random(l, &mut rng)).collect();
        let mut segments = Vec::new();
        let mut at = 0;
        for sigma in &truth {
            segments.push(permute(&f[at..at + sigma.len()], sigma).unwrap());
            at += sigma.len();
        }
        (
            CoalitionView {
                segments,
                ..Default::default()
            },
            book,
            truth,
        )
    }

    #[test]
    fn coalition_enumeration() {
        let (view, book, truth) = small_view(4);
        assert_eq!(book.len(), 12);
        let full = proxy_coalition_attack(&view, &book, &truth, u64::MAX, 1).unwrap();
        assert_eq!(full.guesses, 24 * 24 * 24);
        assert_eq!(full.key_matches, 1);
        assert!(full.codeword_matches >= 1);
        assert!(full.recovered.is_some());
        let none = proxy_coalition_attack(&view, &book, &truth, 0, 1).unwrap();
        assert_eq!((none.guesses, none.success_fraction), (0, 0.0));
        let leaked = CoalitionView {
            leaked_permutations: Some(truth.clone()),
            ..view
        };
        let m = proxy_coalition_attack(&leaked, &book, &truth, 1, 1).unwrap();
        assert_eq!((m.guesses, m.key_matches), (1, 1));
        assert_eq!(m.recovered.as_deref(), Some(book.codeword(0)));
    }

    #[test]
    fn impersonation_outcomes() {
        let replay = impersonation_attack(Impersonation::ReplayCaptured, 1);
        assert_eq!((replay.accepted, replay.rejection), (false, Some(AnonRejection::Signature)));
        let guess = impersonation_attack(Impersonation::GuessSecret, 1);
        assert_eq!(guess.rejection, Some(AnonRejection::SecretProof));
        assert!(impersonation_attack(Impersonation::Insider, 1).accepted);
        assert_eq!(pseudonym_guessing(10, 10_000, 3), 0);
    }
}
