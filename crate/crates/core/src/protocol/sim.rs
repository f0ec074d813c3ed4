//! Wiring of all entities around one bus, and the operations the harness
//! drives: BF distribution, SF relay distribution, tracing and arbitration.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::bus::{Bus, EntityId, Event, MessageEvent, Transcript};
use super::entities::{
    Buyer, CircuitState, Directory, Judge, Merchant, Monitor, MonitorSettings, Peer, ProxyView, RegistrationCa,
    TransactionRecord,
};
pub use super::entities::{PurchaseStatus, Verdict};
use super::{BuyerSpec, ProtocolConfig, ProtocolError};
use crate::codes::{CodeBook, TraceResult};
use crate::crypto::{f64s_to_bytes, hex, sha256, Certificate, KeyPair, PermutationKey, Pseudonym};
use crate::rng::{derive_seed, seeded};
use crate::transform::{reconstruct, BaseFile, Content, Partition, SupplementaryFile};

const EXPIRY: u64 = u64::MAX / 2;

/// Result of one purchase, as seen by its buyer plus the monitor's ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct PurchaseOutcome {
    pub buyer: u32,
    pub real_id: String,
    pub pseudonym: Option<Pseudonym>,
    pub tid: Option<u64>,
    pub codeword_index: Option<usize>,
    pub status: PurchaseStatus,
    /// Fingerprinted approximation stream the buyer assembled.
    pub approximation: Option<Vec<f64>>,
    pub degraded_privacy: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfRun {
    pub purchases: Vec<PurchaseOutcome>,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfOutcome {
    pub delivered: Vec<u8>,
    pub provider_digest: String,
    pub requester_digest: String,
    pub path: Vec<u32>,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceOutcome {
    pub pirated: Vec<u8>,
    pub result: TraceResult,
    pub pseudonyms: Vec<Pseudonym>,
}

/// Ways to corrupt the evidence handed to the judge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceTamper {
    #[default]
    None,
    ForgeAgreementSignature,
    AlterAgreement,
    ForgeMonitorSignature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationOutcome {
    pub verdict: Verdict,
    /// Whether any buyer sent or received a message during arbitration.
    pub buyer_contacted: bool,
}

pub struct Simulation {
    config: ProtocolConfig,
    bus: Bus,
    dir: Directory,
    ca: RegistrationCa,
    merchant: Merchant,
    monitor: Monitor,
    buyers: Vec<Buyer>,
    peers: BTreeMap<u32, Peer>,
    judge: Judge,
    supplementary: SupplementaryFile,
    next_circuit: u64,
    events: usize,
    started: bool,
}

impl Simulation {
    pub fn new(
        config: ProtocolConfig,
        book: CodeBook,
        partition: Partition,
        buyers: Vec<BuyerSpec>,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        if partition.base.blocks.blocks() != book.len() {
            return Err(ProtocolError::LengthMismatch {
                expected: book.len(),
                got: partition.base.blocks.blocks(),
            });
        }
        super::segment_lengths(book.len(), config.n_proxies)?;
        let seed = config.seed;
        let sub = |label: &str, i: u64| seeded(derive_seed(seed, label, i));
        let mut setup = sub("setup", 0);
        let root = KeyPair::generate(&mut setup);
        let mut ca = RegistrationCa::new(KeyPair::generate(&mut setup), sub("ca_r", 0));
        let merchant_keys = KeyPair::generate(&mut setup);
        let monitor_keys = KeyPair::generate(&mut setup);
        let judge = Judge::new(KeyPair::generate(&mut setup), config.theta);
        let merchant_cert = Certificate::issue(b"merchant", merchant_keys.public(), "root", EXPIRY, &root);

        let mut peers = BTreeMap::new();
        for i in 0..config.pool_size as u32 {
            let behaviour = config.peer_behaviour.get(&i).copied().unwrap_or_default();
            let mut peer = Peer::new(i, KeyPair::generate(&mut setup), sub("peer", i.into()), behaviour);
            let (p, _) = ca.register(format!("peer-{i}").as_bytes());
            peer.cert = Some(ca.issue(peer.public(), p, EXPIRY));
            peers.insert(i, peer);
        }
        let dir = Directory {
            root: root.public(),
            ca_r: ca.public(),
            merchant: merchant_keys.public(),
            monitor: monitor_keys.public(),
            judge: judge.public(),
            peers: peers.iter().map(|(&i, p)| (i, p.public())).collect(),
            expiry: EXPIRY,
        };
        let buyers = buyers
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let keys = KeyPair::generate(&mut setup);
                let cert = Certificate::issue(spec.real_id.as_bytes(), keys.public(), "root", EXPIRY, &root);
                Buyer::new(i as u32, spec, keys, cert, sub("buyer", i as u64))
            })
            .collect();
        let reference = partition.base.lattice_reference();
        let merchant = Merchant::new(
            merchant_keys,
            merchant_cert,
            sub("merchant", 0),
            partition.base,
            reference,
            config.content_id.clone(),
        );
        let monitor = Monitor::new(
            monitor_keys,
            sub("monitor", 0),
            book,
            MonitorSettings {
                n_proxies: config.n_proxies,
                pool: (0..config.pool_size as u32).collect(),
                batch_min: config.batch_min,
                tau: config.tau_ticks,
                lane_timeout: config.lane_timeout,
                codeword_order: config.codeword_order.clone(),
                relay_hardening: config.relay_hardening,
                threshold: config.threshold,
            },
        );
        Ok(Self {
            config,
            bus: Bus::new(),
            dir,
            ca,
            merchant,
            monitor,
            buyers,
            peers,
            judge,
            supplementary: partition.supplementary,
            next_circuit: 1,
            events: 0,
            started: false,
        })
    }

    fn run(&mut self) -> Result<(), ProtocolError> {
        let content_id = self.config.content_id.clone();
        while let Some(event) = self.bus.pop() {
            self.events += 1;
            if self.events > self.config.max_events {
                return Err(ProtocolError::Runaway(self.config.max_events));
            }
            let bus = &mut self.bus;
            let dir = &self.dir;
            match event {
                Event::Message(msg) => match msg.to {
                    EntityId::RegistrationCa => self.ca.handle(msg, bus, dir),
                    EntityId::Merchant => self.merchant.handle(msg, bus, dir)?,
                    EntityId::Monitor => self.monitor.handle(msg, bus, dir)?,
                    EntityId::Judge => self.judge.handle(msg, bus, dir),
                    EntityId::Buyer(i) => {
                        if let Some(b) = self.buyers.get_mut(i as usize) {
                            b.handle(msg, bus, dir, &content_id)?;
                        }
                    }
                    EntityId::Peer(i) => {
                        if let Some(p) = self.peers.get_mut(&i) {
                            p.handle(msg, bus, dir)?;
                        }
                    }
                    EntityId::SuperPeer => {}
                },
                Event::Timer { to, timer } => match to {
                    EntityId::Monitor => self.monitor.on_timer(timer, bus),
                    EntityId::Buyer(i) => {
                        if let Some(b) = self.buyers.get_mut(i as usize) {
                            b.on_timer(timer, bus, &content_id);
                        }
                    }
                    _ => {}
                },
            }
        }
        Ok(())
    }

    /// Runs every buyer's purchases to completion.
    pub fn run_bf_distribution(&mut self) -> Result<BfRun, ProtocolError> {
        if !self.started {
            self.started = true;
            for (i, b) in self.buyers.iter().enumerate() {
                self.bus
                    .schedule(b.spec().start_tick, EntityId::Buyer(i as u32), super::bus::Timer::StartPurchase);
            }
        }
        self.run()?;
        Ok(BfRun {
            purchases: self.purchases(),
            digest: self.bus.digest(),
        })
    }

    pub fn purchases(&self) -> Vec<PurchaseOutcome> {
        let mut out = Vec::new();
        for (i, b) in self.buyers.iter().enumerate() {
            for p in &b.purchases {
                let codeword_index = p
                    .tid
                    .and_then(|tid| self.monitor.ledger.iter().find(|r| r.tid == tid))
                    .map(|r| r.codeword_index);
                out.push(PurchaseOutcome {
                    buyer: i as u32,
                    real_id: b.spec().real_id.clone(),
                    pseudonym: p.pseudonym,
                    tid: p.tid,
                    codeword_index,
                    status: p.status.clone(),
                    approximation: p.approximation.clone(),
                    degraded_privacy: p.degraded_privacy,
                });
            }
        }
        out
    }

    /// Content a buyer obtains by recombining an approximation stream with
    /// the supplementary file.
    pub fn reconstruct(&self, approximation: &[f64]) -> Result<Content, ProtocolError> {
        Ok(reconstruct(approximation, &self.supplementary)?)
    }

    /// Hands `file` to `peer`, which then serves it over relay circuits.
    pub fn share_file(&mut self, peer: u32, file: Vec<u8>) -> Result<(), ProtocolError> {
        let p = self.peers.get_mut(&peer).ok_or(ProtocolError::UnknownEntity(EntityId::Peer(peer)))?;
        p.shared = Some(file);
        Ok(())
    }

    /// Fetches the file shared by `provider` over the first relay path that
    /// answers in time. A tampered reply aborts without retrying.
    pub fn run_sf_distribution(
        &mut self,
        provider: u32,
        requester: u32,
        paths: &[Vec<u32>],
    ) -> Result<SfOutcome, ProtocolError> {
        let provider_digest = {
            let p = self
                .peers
                .get(&provider)
                .ok_or(ProtocolError::UnknownEntity(EntityId::Peer(provider)))?;
            hex(&sha256(p.shared.as_deref().unwrap_or_default()))
        };
        if paths.is_empty() || paths.iter().any(Vec::is_empty) {
            return Err(ProtocolError::Config("every relay path needs at least one relay".into()));
        }
        for (attempt, path) in paths.iter().enumerate() {
            let circuit = self.next_circuit;
            self.next_circuit += 1;
            let timeout = 4 * (path.len() as u64 + 1) + 4;
            let buyer = self
                .buyers
                .get_mut(requester as usize)
                .ok_or(ProtocolError::UnknownEntity(EntityId::Buyer(requester)))?;
            buyer.open_circuit(circuit, provider, path, timeout, &mut self.bus, &self.dir)?;
            self.run()?;
            match self.buyers[requester as usize].circuit_state(circuit).cloned() {
                Some(CircuitState::Delivered(file)) => {
                    return Ok(SfOutcome {
                        requester_digest: hex(&sha256(&file)),
                        delivered: file,
                        provider_digest,
                        path: path.clone(),
                        attempts: attempt + 1,
                    })
                }
                Some(CircuitState::Failed(reason)) => return Err(ProtocolError::Circuit(reason)),
                _ => continue,
            }
        }
        Err(ProtocolError::RelayFailure)
    }

    /// Merchant-side extraction, then monitor-side tracing. Returns pseudonyms
    /// only.
    pub fn trace_traitor(&mut self, pirated: &Content, gain_normalisation: bool) -> Result<TraceOutcome, ProtocolError> {
        let pc = self.merchant.extract(pirated, gain_normalisation)?;
        self.trace_codeword(&pc, content_digest(pirated))
    }

    /// Tracing from an already extracted codeword.
    pub fn trace_codeword(&mut self, pc: &[u8], content_digest: [u8; 32]) -> Result<TraceOutcome, ProtocolError> {
        let before = self.merchant.accusations.len();
        self.merchant.report_piracy(pc, content_digest, &mut self.bus);
        self.run()?;
        let result = self
            .monitor
            .last_trace
            .clone()
            .ok_or_else(|| ProtocolError::Config("monitor produced no trace".into()))?;
        let pseudonyms = self.merchant.accusations.get(before).cloned().unwrap_or_default();
        Ok(TraceOutcome {
            pirated: pc.to_vec(),
            result,
            pseudonyms,
        })
    }

    pub fn arbitrate(
        &mut self,
        pseudonym: Pseudonym,
        pirated: &[u8],
        tamper: EvidenceTamper,
    ) -> Result<ArbitrationOutcome, ProtocolError> {
        let mut record = self
            .merchant
            .evidence(&pseudonym)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownPseudonym(pseudonym.to_string()))?;
        match tamper {
            EvidenceTamper::ForgeAgreementSignature => {
                if let Some(b) = record.signature.0.first_mut() {
                    *b ^= 0x01;
                }
            }
            EvidenceTamper::AlterAgreement => record.agreement.extend_from_slice(b"|price=0"),
            _ => {}
        }
        let log_start = self.bus.log().len();
        let verdicts = self.judge.verdicts.len();
        self.merchant.send_evidence(record, &mut self.bus);
        self.monitor.send_evidence(
            pseudonym,
            pirated.to_vec(),
            sha256(pirated),
            tamper == EvidenceTamper::ForgeMonitorSignature,
            &mut self.bus,
            &self.dir,
        )?;
        self.run()?;
        let verdict = self
            .judge
            .verdicts
            .get(verdicts)
            .cloned()
            .ok_or_else(|| ProtocolError::Config("judge reached no verdict".into()))?;
        let buyer_contacted = self.bus.log()[log_start..]
            .iter()
            .any(|e| matches!(e.from, EntityId::Buyer(_)) || matches!(e.to, EntityId::Buyer(_)));
        Ok(ArbitrationOutcome {
            verdict,
            buyer_contacted,
        })
    }

    pub fn transcript(&self, who: EntityId) -> Transcript {
        self.bus.transcript(who)
    }

    pub fn transcripts(&self) -> &BTreeMap<EntityId, Transcript> {
        self.bus.transcripts()
    }

    pub fn log(&self) -> &[MessageEvent] {
        self.bus.log()
    }

    pub fn digest(&self) -> String {
        self.bus.digest()
    }

    pub fn ledger(&self) -> &[TransactionRecord] {
        &self.monitor.ledger
    }

    pub fn book(&self) -> &CodeBook {
        self.monitor.book()
    }

    pub fn base_file(&self) -> &BaseFile {
        self.merchant.base()
    }

    pub fn supplementary(&self) -> &SupplementaryFile {
        &self.supplementary
    }

    pub fn peer_ids(&self) -> Vec<u32> {
        self.peers.keys().copied().collect()
    }

    /// What each peer saw while proxying.
    pub fn proxy_views(&self) -> BTreeMap<u32, ProxyView> {
        self.peers.iter().map(|(&i, p)| (i, p.view.clone())).collect()
    }

    /// The permutation keys the merchant opened for transaction `tid`.
    pub fn merchant_permutations(&self, tid: u64) -> Option<&[PermutationKey]> {
        self.merchant.permutations.get(&tid).map(Vec::as_slice)
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }
}

/// SHA-256 over the little-endian samples of `content`.
pub fn content_digest(content: &Content) -> [u8; 32] {
    sha256(&f64s_to_bytes(&content.samples()))
}
