//! Entity state machines over a deterministic message bus.
//!
//! [`Simulation`] wires up the registration CA, merchant, monitor, buyers,
//! untrusted peers and judge. Entities only talk through [`bus::Bus`]; each
//! keeps its own state and its own seeded generator, so a run is reproducible
//! from the scenario seed alone.

pub mod bus;
pub(crate) mod entities;
mod onion;
mod sim;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::codes::{CodeError, ThresholdPolicy};
use crate::crypto::CryptoError;
use crate::transform::TransformError;
use crate::watermark::WatermarkError;

pub use bus::{Bus, Direction, EntityId, MessageEvent, Payload, PayloadClass, Transcript, TranscriptEntry};
pub use entities::{AnonRejection, ProxyView, TransactionRecord};
pub use sim::{
    content_digest, ArbitrationOutcome, BfRun, EvidenceTamper, PurchaseOutcome, PurchaseStatus, SfOutcome,
    Simulation, TraceOutcome, Verdict,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("cannot split {m} bits into {n} segments")]
    Segmentation { m: usize, n: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("{0} holds no anonymous certificate")]
    NoCertificate(EntityId),
    #[error("no pseudonym {0} in the ledger")]
    UnknownPseudonym(String),
    #[error("relay circuit failed: {0}")]
    Circuit(String),
    #[error("relay delivery failed on every path")]
    RelayFailure,
    #[error("event loop exceeded {0} events")]
    Runaway(usize),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
}

/// How an untrusted peer behaves when it proxies or relays.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerBehaviour {
    #[default]
    Honest,
    /// Silently discards everything it receives.
    Drop,
    /// Flips one byte of every ciphertext it forwards.
    Tamper,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuyerBehaviour {
    #[default]
    Honest,
    /// Presents an anonymous certificate signed by a CA other than CA_R.
    RogueCa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuyerSpec {
    pub real_id: String,
    #[serde(default)]
    pub start_tick: u64,
    #[serde(default = "one")]
    pub purchases: usize,
    /// Request a fresh pseudonym for every purchase.
    #[serde(default)]
    pub rotate_pseudonym: bool,
    #[serde(default)]
    pub behaviour: BuyerBehaviour,
}

fn one() -> usize {
    1
}

impl BuyerSpec {
    pub fn new(real_id: impl Into<String>) -> Self {
        Self {
            real_id: real_id.into(),
            start_tick: 0,
            purchases: 1,
            rotate_pseudonym: false,
            behaviour: BuyerBehaviour::Honest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seed: u64,
    /// Proxies per transaction.
    pub n_proxies: usize,
    /// Registered peers the monitor picks proxies from.
    pub pool_size: usize,
    /// Requests that release a batch window.
    pub batch_min: usize,
    pub tau_ticks: u64,
    /// Ticks the monitor waits for a proxy before reassigning its lane.
    pub lane_timeout: u64,
    /// NC needed for a guilty verdict.
    pub theta: f64,
    pub threshold: ThresholdPolicy,
    /// Transaction number → codeword index; `None` assigns in arrival order.
    pub codeword_order: Option<Vec<usize>>,
    pub peer_behaviour: BTreeMap<u32, PeerBehaviour>,
    /// Route proxy output through a monitor-chosen relay peer.
    pub relay_hardening: bool,
    pub content_id: String,
    /// Stop after this many events.
    pub max_events: usize,
}

impl ProtocolConfig {
    pub fn new(seed: u64, n_proxies: usize) -> Self {
        Self {
            seed,
            n_proxies,
            pool_size: n_proxies + 2,
            batch_min: 2,
            tau_ticks: 100,
            lane_timeout: 50,
            theta: 0.9,
            threshold: ThresholdPolicy::Calibrated {
                samples: 1000,
                seed: crate::rng::derive_seed(seed, "threshold", 0),
            },
            codeword_order: None,
            peer_behaviour: BTreeMap::new(),
            relay_hardening: false,
            content_id: "content".into(),
            max_events: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n_proxies == 0 {
            return Err(ProtocolError::Config("at least one proxy is required".into()));
        }
        let needed = self.n_proxies + usize::from(self.relay_hardening);
        if self.pool_size < needed {
            return Err(ProtocolError::Config(format!(
                "peer pool of {} cannot supply {needed} distinct peers",
                self.pool_size
            )));
        }
        if self.batch_min == 0 {
            return Err(ProtocolError::Config("batch_min must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(ProtocolError::Config(format!("theta {} outside [0, 1]", self.theta)));
        }
        Ok(())
    }
}

/// Segment lengths for an `m`-bit codeword over `n` lanes: `⌈m/n⌉` each, the
/// last one taking what remains.
pub fn segment_lengths(m: usize, n: usize) -> Result<Vec<usize>, ProtocolError> {
    if n == 0 || m < n {
        return Err(ProtocolError::Segmentation { m, n });
    }
    let l = m.div_ceil(n);
    let head = l * (n - 1);
    if head >= m {
        return Err(ProtocolError::Segmentation { m, n });
    }
    let mut out = vec![l; n - 1];
    out.push(m - head);
    Ok(out)
}

pub fn segment_fingerprint(f: &[u8], n: usize) -> Result<Vec<Vec<u8>>, ProtocolError> {
    let lengths = segment_lengths(f.len(), n)?;
    let mut rest = f;
    Ok(lengths
        .into_iter()
        .map(|l| {
            let (head, tail) = rest.split_at(l);
            rest = tail;
            head.to_vec()
        })
        .collect())
}

/// Per position, the variant-1 fragment when the permuted bit is 1 and the
/// variant-0 fragment otherwise. Works on ciphertext and never looks inside.
pub fn proxy_select_fragments<T: Clone>(ps: &[u8], variant0: &[T], variant1: &[T]) -> Result<Vec<T>, ProtocolError> {
    for v in [variant0, variant1] {
        if v.len() != ps.len() {
            return Err(ProtocolError::LengthMismatch {
                expected: ps.len(),
                got: v.len(),
            });
        }
    }
    Ok(ps
        .iter()
        .zip(variant0.iter().zip(variant1))
        .map(|(&b, (v0, v1))| if b == 1 { v1.clone() } else { v0.clone() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_examples() {
        assert_eq!(segment_lengths(10, 3).unwrap(), vec![4, 4, 2]);
        assert_eq!(segment_lengths(9, 3).unwrap(), vec![3, 3, 3]);
        assert_eq!(segment_lengths(5, 1).unwrap(), vec![5]);
        assert_eq!(segment_lengths(118, 3).unwrap(), vec![40, 40, 38]);
        assert!(segment_lengths(2, 3).is_err());
        assert!(segment_lengths(5, 4).is_err());
    }

    #[test]
    fn segments_concatenate_back() {
        let f: Vec<u8> = (0..10).map(|i| (i % 3 == 0) as u8).collect();
        let segs = segment_fingerprint(&f, 3).unwrap();
        assert_eq!(segs.concat(), f);
        assert_eq!(segs.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn selection_rule() {
        let v0 = ["a0", "b0", "c0"];
        let v1 = ["a1", "b1", "c1"];
        assert_eq!(proxy_select_fragments(&[0, 0, 0], &v0, &v1).unwrap(), v0);
        assert_eq!(proxy_select_fragments(&[1, 0, 1], &v0, &v1).unwrap(), vec!["a1", "b0", "c1"]);
        assert!(proxy_select_fragments(&[1, 0], &v0, &v1).is_err());
    }
}
