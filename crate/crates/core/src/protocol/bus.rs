//! Deterministic in-process transport.
//!
//! Every message gets a global sequence number and is delivered one tick
//! after it was sent; ties are broken by sequence number, so a run is a pure
//! function of its inputs. Both endpoints get a transcript entry at send time.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::crypto::{hex, sha256, AnonymousCert, Certificate, Pseudonym, PublicKeys, Signature};

/// Serialised as `"peer-3"` in human-readable formats and as a fixed-width
/// `(role, index)` pair on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityId {
    RegistrationCa,
    Merchant,
    Monitor,
    SuperPeer,
    Judge,
    Buyer(u32),
    /// Untrusted peer acting as a BF proxy or an SF relay.
    Peer(u32),
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::RegistrationCa => f.write_str("ca_r"),
            EntityId::Merchant => f.write_str("merchant"),
            EntityId::Monitor => f.write_str("monitor"),
            EntityId::SuperPeer => f.write_str("super_peer"),
            EntityId::Judge => f.write_str("judge"),
            EntityId::Buyer(i) => write!(f, "buyer-{i}"),
            EntityId::Peer(i) => write!(f, "peer-{i}"),
        }
    }
}

impl From<EntityId> for String {
    fn from(id: EntityId) -> Self {
        id.to_string()
    }
}

impl EntityId {
    fn wire(self) -> (u8, u32) {
        match self {
            EntityId::RegistrationCa => (0, 0),
            EntityId::Merchant => (1, 0),
            EntityId::Monitor => (2, 0),
            EntityId::SuperPeer => (3, 0),
            EntityId::Judge => (4, 0),
            EntityId::Buyer(i) => (5, i),
            EntityId::Peer(i) => (6, i),
        }
    }

    fn from_wire((role, i): (u8, u32)) -> Result<Self, String> {
        Ok(match role {
            0 => EntityId::RegistrationCa,
            1 => EntityId::Merchant,
            2 => EntityId::Monitor,
            3 => EntityId::SuperPeer,
            4 => EntityId::Judge,
            5 => EntityId::Buyer(i),
            6 => EntityId::Peer(i),
            r => return Err(format!("unknown entity role {r}")),
        })
    }
}

impl Serialize for EntityId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.collect_str(self)
        } else {
            self.wire().serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        if d.is_human_readable() {
            EntityId::try_from(String::deserialize(d)?).map_err(D::Error::custom)
        } else {
            EntityId::from_wire(<(u8, u32)>::deserialize(d)?).map_err(D::Error::custom)
        }
    }
}

impl TryFrom<String> for EntityId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Ok(match s.as_str() {
            "ca_r" => EntityId::RegistrationCa,
            "merchant" => EntityId::Merchant,
            "monitor" => EntityId::Monitor,
            "super_peer" => EntityId::SuperPeer,
            "judge" => EntityId::Judge,
            other => {
                let parse = |p: &str| p.parse::<u32>().map_err(|e| e.to_string());
                if let Some(n) = other.strip_prefix("buyer-") {
                    EntityId::Buyer(parse(n)?)
                } else if let Some(n) = other.strip_prefix("peer-") {
                    EntityId::Peer(parse(n)?)
                } else {
                    return Err(format!("unknown entity {other}"));
                }
            }
        })
    }
}

/// What a payload carries, for leakage assertions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadClass {
    FingerprintBits,
    PermutedSegment,
    ClearCoefficients,
    Ciphertext,
    SealedKeys,
    KeyMaterial,
    Certificate,
    Signature,
    Agreement,
    PirateEvidence,
    Identity,
    Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SealedLane {
    pub permutation: Vec<u8>,
    pub session_key: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    PseudonymRequest {
        identity: Certificate,
    },
    PseudonymSecret {
        secret: Vec<u8>,
    },
    Negotiate {
        pseudonym: Pseudonym,
        content_id: String,
    },
    AgreementOffer {
        agreement: Vec<u8>,
    },
    AnonCertRequest {
        anon_keys: PublicKeys,
        pseudonym: Pseudonym,
        identity: Certificate,
        signature: Signature,
        proof: [u8; 32],
    },
    AnonCertIssued {
        cert: AnonymousCert,
    },
    AnonCertRejected {
        reason: String,
    },
    PurchaseRequest {
        cert: AnonymousCert,
        agreement: Vec<u8>,
        signature: Signature,
        pseudonym: Pseudonym,
    },
    PurchaseAborted {
        reason: String,
    },
    FingerprintRequest {
        tid: u64,
        buyer: EntityId,
        buyer_cert: AnonymousCert,
        merchant_cert: Certificate,
        agreement: Vec<u8>,
        signature: Signature,
        pseudonym: Pseudonym,
    },
    KeyRequest {
        tid: u64,
        segment_lengths: Vec<usize>,
    },
    SealedKeys {
        tid: u64,
        lanes: Vec<Vec<u8>>,
    },
    KeyForward {
        tid: u64,
        lanes: Vec<SealedLane>,
        proxies: Vec<EntityId>,
    },
    LaneDirectory {
        tid: u64,
        proxies: Vec<EntityId>,
        degraded_privacy: bool,
    },
    SegmentAssignment {
        tid: u64,
        lane: usize,
        segment: Vec<u8>,
        buyer: EntityId,
        /// Relays between the proxy and the buyer, empty for a direct hop.
        route: Vec<EntityId>,
    },
    FragmentRequest {
        tid: u64,
        lane: usize,
    },
    FragmentDelivery {
        tid: u64,
        lane: usize,
        variant0: Vec<Vec<u8>>,
        variant1: Vec<Vec<u8>>,
    },
    SelectedFragments {
        tid: u64,
        lane: usize,
        blocks: Vec<Vec<u8>>,
        route: Vec<EntityId>,
        buyer: EntityId,
    },
    LaneComplete {
        tid: u64,
        lane: usize,
    },
    CircuitSetup {
        circuit: u64,
        onion: Vec<u8>,
    },
    CircuitData {
        circuit: u64,
        data: Vec<u8>,
    },
    PirateReport {
        content_digest: [u8; 32],
        pirated: Vec<u8>,
    },
    Accusation {
        pseudonyms: Vec<Pseudonym>,
    },
    MerchantEvidence {
        tid: u64,
        cert: AnonymousCert,
        agreement: Vec<u8>,
        signature: Signature,
    },
    MonitorEvidence {
        pseudonym: Pseudonym,
        pirated: Vec<u8>,
        sealed_codeword: Vec<u8>,
        content_digest: [u8; 32],
        signature: Signature,
    },
    IdentityRequest {
        pseudonym: Pseudonym,
    },
    IdentityDisclosure {
        pseudonym: Pseudonym,
        real_id: Vec<u8>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::PseudonymRequest { .. } => "pseudonym_request",
            Payload::PseudonymSecret { .. } => "pseudonym_secret",
            Payload::Negotiate { .. } => "negotiate",
            Payload::AgreementOffer { .. } => "agreement_offer",
            Payload::AnonCertRequest { .. } => "anon_cert_request",
            Payload::AnonCertIssued { .. } => "anon_cert_issued",
            Payload::AnonCertRejected { .. } => "anon_cert_rejected",
            Payload::PurchaseRequest { .. } => "purchase_request",
            Payload::PurchaseAborted { .. } => "purchase_aborted",
            Payload::FingerprintRequest { .. } => "fingerprint_request",
            Payload::KeyRequest { .. } => "key_request",
            Payload::SealedKeys { .. } => "sealed_keys",
            Payload::KeyForward { .. } => "key_forward",
            Payload::LaneDirectory { .. } => "lane_directory",
            Payload::SegmentAssignment { .. } => "segment_assignment",
            Payload::FragmentRequest { .. } => "fragment_request",
            Payload::FragmentDelivery { .. } => "fragment_delivery",
            Payload::SelectedFragments { .. } => "selected_fragments",
            Payload::LaneComplete { .. } => "lane_complete",
            Payload::CircuitSetup { .. } => "circuit_setup",
            Payload::CircuitData { .. } => "circuit_data",
            Payload::PirateReport { .. } => "pirate_report",
            Payload::Accusation { .. } => "accusation",
            Payload::MerchantEvidence { .. } => "merchant_evidence",
            Payload::MonitorEvidence { .. } => "monitor_evidence",
            Payload::IdentityRequest { .. } => "identity_request",
            Payload::IdentityDisclosure { .. } => "identity_disclosure",
        }
    }

    pub fn classes(&self) -> Vec<PayloadClass> {
        use PayloadClass::*;
        match self {
            Payload::PseudonymRequest { .. } => vec![Certificate],
            Payload::PseudonymSecret { .. } => vec![KeyMaterial],
            Payload::Negotiate { .. } => vec![Control],
            Payload::AgreementOffer { .. } => vec![Agreement],
            Payload::AnonCertRequest { .. } => vec![Certificate, Signature],
            Payload::AnonCertIssued { .. } => vec![Certificate],
            Payload::AnonCertRejected { .. } | Payload::PurchaseAborted { .. } => vec![Control],
            Payload::PurchaseRequest { .. } | Payload::FingerprintRequest { .. } => {
                vec![Certificate, Signature, Agreement]
            }
            Payload::KeyRequest { .. } | Payload::LaneDirectory { .. } => vec![Control],
            Payload::SealedKeys { .. } | Payload::KeyForward { .. } => vec![SealedKeys],
            Payload::SegmentAssignment { .. } => vec![FingerprintBits, PermutedSegment],
            Payload::FragmentRequest { .. } | Payload::LaneComplete { .. } => vec![Control],
            Payload::FragmentDelivery { .. } | Payload::SelectedFragments { .. } => vec![Ciphertext],
            Payload::CircuitSetup { .. } | Payload::CircuitData { .. } => vec![Ciphertext],
            Payload::PirateReport { .. } => vec![PirateEvidence],
            Payload::Accusation { .. } => vec![Control],
            Payload::MerchantEvidence { .. } => vec![Certificate, Signature, Agreement],
            Payload::MonitorEvidence { .. } => vec![PirateEvidence, Ciphertext, Signature],
            Payload::IdentityRequest { .. } => vec![Control],
            Payload::IdentityDisclosure { .. } => vec![Identity],
        }
    }

    /// Wire bytes: fixed-width integers and raw byte strings, so sizes do not
    /// depend on the values carried.
    fn encode(&self) -> Vec<u8> {
        bincode::serialize(self).expect("payloads always serialise")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub seq: u64,
    pub sent_at: u64,
    pub from: EntityId,
    pub to: EntityId,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub direction: Direction,
    pub peer: EntityId,
    pub kind: String,
    pub payload_digest: String,
    pub size: usize,
    pub classes: Vec<PayloadClass>,
}

/// Append-only per-entity log.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn contains_class(&self, class: PayloadClass) -> bool {
        self.entries.iter().any(|e| e.classes.contains(&class))
    }

    pub fn received_class(&self, class: PayloadClass) -> bool {
        self.entries
            .iter()
            .any(|e| e.direction == Direction::Received && e.classes.contains(&class))
    }

    /// Sorted multiset of `(direction, kind, size)`.
    pub fn shape(&self) -> Vec<(Direction, String, usize)> {
        let mut s: Vec<_> = self
            .entries
            .iter()
            .map(|e| (e.direction, e.kind.clone(), e.size))
            .collect();
        s.sort();
        s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One line of the exported message log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub seq: u64,
    pub tick: u64,
    pub from: EntityId,
    pub to: EntityId,
    pub kind: String,
    pub payload_digest: String,
    pub classes: Vec<PayloadClass>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    StartPurchase,
    BatchExpiry { window: u64 },
    LaneDeadline { tid: u64, lane: usize },
    RelayDeadline { circuit: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Message(Message),
    Timer { to: EntityId, timer: Timer },
}

#[derive(Debug, Default)]
pub struct Bus {
    now: u64,
    next_seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    transcripts: BTreeMap<EntityId, Transcript>,
    log: Vec<MessageEvent>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn bump(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    pub fn send(&mut self, from: EntityId, to: EntityId, payload: Payload) -> u64 {
        let seq = self.bump();
        let bytes = payload.encode();
        let digest = hex(&sha256(&bytes));
        let classes = payload.classes();
        let kind = payload.kind().to_string();
        for (who, direction, peer) in [(from, Direction::Sent, to), (to, Direction::Received, from)] {
            self.transcripts.entry(who).or_default().entries.push(TranscriptEntry {
                seq,
                direction,
                peer,
                kind: kind.clone(),
                payload_digest: digest.clone(),
                size: bytes.len(),
                classes: classes.clone(),
            });
        }
        self.log.push(MessageEvent {
            seq,
            tick: self.now,
            from,
            to,
            kind,
            payload_digest: digest,
            classes,
        });
        self.queue.insert(
            (self.now + 1, seq),
            Event::Message(Message {
                seq,
                sent_at: self.now,
                from,
                to,
                payload,
            }),
        );
        seq
    }

    pub fn schedule(&mut self, at: u64, to: EntityId, timer: Timer) {
        let seq = self.bump();
        self.queue.insert((at.max(self.now), seq), Event::Timer { to, timer });
    }

    /// Next event in `(tick, seq)` order; advances the clock.
    pub fn pop(&mut self) -> Option<Event> {
        let ((tick, _), event) = self.queue.pop_first()?;
        self.now = self.now.max(tick);
        Some(event)
    }

    pub fn transcript(&self, who: EntityId) -> Transcript {
        self.transcripts.get(&who).cloned().unwrap_or_default()
    }

    pub fn transcripts(&self) -> &BTreeMap<EntityId, Transcript> {
        &self.transcripts
    }

    pub fn log(&self) -> &[MessageEvent] {
        &self.log
    }

    /// SHA-256 over the whole message log.
    pub fn digest(&self) -> String {
        hex(&sha256(&serde_json::to_vec(&self.log).expect("log serialises")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_is_increasing_and_both_sides_log() {
        let mut bus = Bus::new();
        let a = bus.send(EntityId::Buyer(0), EntityId::Merchant, Payload::FragmentRequest { tid: 1, lane: 0 });
        let b = bus.send(EntityId::Merchant, EntityId::Peer(2), Payload::LaneComplete { tid: 1, lane: 0 });
        assert!(b > a);
        assert_eq!(bus.transcript(EntityId::Merchant).len(), 2);
        assert_eq!(bus.transcript(EntityId::Buyer(0)).entries()[0].direction, Direction::Sent);
        assert_eq!(bus.transcript(EntityId::Peer(2)).entries()[0].direction, Direction::Received);
        let Some(Event::Message(m)) = bus.pop() else { panic!() };
        assert_eq!(m.seq, a);
        assert_eq!(bus.now(), 1);
    }

    #[test]
    fn timers_fire_in_tick_order() {
        let mut bus = Bus::new();
        bus.schedule(10, EntityId::Monitor, Timer::BatchExpiry { window: 0 });
        bus.send(EntityId::Merchant, EntityId::Monitor, Payload::Accusation { pseudonyms: vec![] });
        assert!(matches!(bus.pop(), Some(Event::Message(_))));
        assert!(matches!(bus.pop(), Some(Event::Timer { .. })));
        assert_eq!(bus.now(), 10);
        assert!(bus.pop().is_none());
    }

    #[test]
    fn entity_ids_round_trip_through_strings() {
        for id in [EntityId::Merchant, EntityId::Buyer(12), EntityId::Peer(3), EntityId::RegistrationCa] {
            assert_eq!(EntityId::try_from(id.to_string()).unwrap(), id);
        }
        assert!(EntityId::try_from("nobody".to_string()).is_err());
    }
}
