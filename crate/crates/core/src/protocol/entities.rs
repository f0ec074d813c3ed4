//! Per-entity state and message handlers.
//!
//! A handler sees one event, its own state, the public [`Directory`] and the
//! bus. Nothing else is shared.

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::bus::{Bus, EntityId, Message, Payload, SealedLane, Timer};
use super::onion::{self, Opened};
use super::{segment_fingerprint, segment_lengths, BuyerBehaviour, BuyerSpec, PeerBehaviour, ProtocolError};
use crate::codes::{trace, CodeBook, PiratedCodeword, ThresholdPolicy, TraceResult};
use crate::crypto::{
    bytes_to_f64s, f64s_to_bytes, make_pseudonym, open, permute, seal, sha256, sym_decrypt, sym_encrypt, unpermute,
    verify, AnonymousCert, Certificate, CryptoError, KeyPair, PermutationKey, Pseudonym, PseudonymSecret, PublicKeys,
    SessionCipher, SessionKey, Signature, NONCE_LEN,
};
use crate::rng::DetRng;
use crate::transform::{analyze_content, BaseFile, Content};
use crate::watermark::{nc, normalize_gain, qim_extract};

pub(crate) const CA_R_NAME: &str = "ca_r";

/// Public keys and certificates everybody may look up.
#[derive(Clone, Debug)]
pub(crate) struct Directory {
    /// Issuer of identity certificates (outside the simulated system).
    pub root: PublicKeys,
    pub ca_r: PublicKeys,
    pub merchant: PublicKeys,
    pub monitor: PublicKeys,
    pub judge: PublicKeys,
    pub peers: BTreeMap<u32, PublicKeys>,
    pub expiry: u64,
}

fn nonce(rng: &mut impl RngCore) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut n);
    n
}

pub(crate) fn anon_binding(anon: &PublicKeys, pseudonym: &Pseudonym) -> Vec<u8> {
    let mut b = anon.to_bytes().to_vec();
    b.extend_from_slice(&pseudonym.0);
    b
}

fn flip_last_byte(data: &mut [u8]) {
    if let Some(b) = data.last_mut() {
        *b ^= 0x01;
    }
}

// ---------------------------------------------------------------- CA_R

pub(crate) struct RegistrationCa {
    keys: KeyPair,
    rng: DetRng,
    registry: BTreeMap<Pseudonym, (Vec<u8>, PseudonymSecret)>,
}

/// Why CA_R refused to certify an anonymous key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnonRejection {
    IdentityCertificate,
    Signature,
    UnknownPseudonym,
    SecretProof,
}

impl RegistrationCa {
    pub fn new(keys: KeyPair, rng: DetRng) -> Self {
        Self {
            keys,
            rng,
            registry: BTreeMap::new(),
        }
    }

    pub fn public(&self) -> PublicKeys {
        self.keys.public()
    }

    /// Registers `real_id` and returns the secret `r` shared with it.
    pub fn register(&mut self, real_id: &[u8]) -> (Pseudonym, PseudonymSecret) {
        let r = PseudonymSecret::generate(&mut self.rng);
        let p = make_pseudonym(real_id, &r).expect("generated secrets are non-empty");
        self.registry.insert(p, (real_id.to_vec(), r.clone()));
        (p, r)
    }

    pub fn is_registered(&self, p: &Pseudonym) -> bool {
        self.registry.contains_key(p)
    }

    pub fn check_anon_request(
        &self,
        anon_keys: &PublicKeys,
        pseudonym: &Pseudonym,
        identity: &Certificate,
        signature: &Signature,
        proof: &[u8; 32],
        dir: &Directory,
        now: u64,
    ) -> Result<(), AnonRejection> {
        if !identity.verify(&dir.root, now) {
            return Err(AnonRejection::IdentityCertificate);
        }
        let binding = anon_binding(anon_keys, pseudonym);
        if !verify(&binding, signature, &identity.keys) {
            return Err(AnonRejection::Signature);
        }
        let (_, r) = self.registry.get(pseudonym).ok_or(AnonRejection::UnknownPseudonym)?;
        if r.bind(&binding) != *proof {
            return Err(AnonRejection::SecretProof);
        }
        Ok(())
    }

    pub fn issue(&self, anon_keys: PublicKeys, pseudonym: Pseudonym, expiry: u64) -> AnonymousCert {
        AnonymousCert::issue(anon_keys, pseudonym, CA_R_NAME, expiry, &self.keys)
    }

    pub fn handle(&mut self, msg: Message, bus: &mut Bus, dir: &Directory) {
        let me = EntityId::RegistrationCa;
        match msg.payload {
            Payload::PseudonymRequest { identity } => {
                if !identity.verify(&dir.root, bus.now()) {
                    bus.send(
                        me,
                        msg.from,
                        Payload::AnonCertRejected {
                            reason: "identity certificate invalid".into(),
                        },
                    );
                    return;
                }
                let (_, r) = self.register(&identity.subject);
                bus.send(
                    me,
                    msg.from,
                    Payload::PseudonymSecret {
                        secret: r.as_bytes().to_vec(),
                    },
                );
            }
            Payload::AnonCertRequest {
                anon_keys,
                pseudonym,
                identity,
                signature,
                proof,
            } => {
                let reply = match self.check_anon_request(
                    &anon_keys, &pseudonym, &identity, &signature, &proof, dir, bus.now(),
                ) {
                    Ok(()) => Payload::AnonCertIssued {
                        cert: self.issue(anon_keys, pseudonym, dir.expiry),
                    },
                    Err(why) => Payload::AnonCertRejected {
                        reason: format!("{why:?}"),
                    },
                };
                bus.send(me, msg.from, reply);
            }
            Payload::IdentityRequest { pseudonym } if msg.from == EntityId::Judge => {
                if let Some((real_id, _)) = self.registry.get(&pseudonym) {
                    bus.send(
                        me,
                        msg.from,
                        Payload::IdentityDisclosure {
                            pseudonym,
                            real_id: real_id.clone(),
                        },
                    );
                }
            }
            _ => {}
        }
    }
}

// ---------------------------------------------------------------- merchant

#[derive(Clone, Debug)]
pub(crate) struct MerchantRecord {
    pub tid: u64,
    pub cert: AnonymousCert,
    pub agreement: Vec<u8>,
    pub signature: Signature,
}

type EncryptedLane = (Vec<Vec<u8>>, Vec<Vec<u8>>);

pub(crate) struct Merchant {
    keys: KeyPair,
    cert: Certificate,
    rng: DetRng,
    base: BaseFile,
    reference: Vec<f64>,
    content_id: String,
    next_tid: u64,
    offers: BTreeMap<Pseudonym, Vec<u8>>,
    pub records: BTreeMap<u64, MerchantRecord>,
    lanes: BTreeMap<(u64, usize), EncryptedLane>,
    /// σ_j per transaction, as opened from the monitor's forward.
    pub permutations: BTreeMap<u64, Vec<PermutationKey>>,
    waiting: Vec<(EntityId, u64, usize)>,
    pub accusations: Vec<Vec<Pseudonym>>,
}

impl Merchant {
    pub fn new(keys: KeyPair, cert: Certificate, rng: DetRng, base: BaseFile, reference: Vec<f64>, content_id: String) -> Self {
        Self {
            keys,
            cert,
            rng,
            base,
            reference,
            content_id,
            next_tid: 1,
            offers: BTreeMap::new(),
            records: BTreeMap::new(),
            lanes: BTreeMap::new(),
            permutations: BTreeMap::new(),
            waiting: Vec::new(),
            accusations: Vec::new(),
        }
    }

    pub fn base(&self) -> &BaseFile {
        &self.base
    }

    fn agreement(&mut self, pseudonym: &Pseudonym, content_id: &str) -> Vec<u8> {
        let mut n = [0u8; 16];
        self.rng.fill_bytes(&mut n);
        format!(
            "AGR|content={content_id}|pseudonym={pseudonym}|nonce={}|merchant={}",
            crate::crypto::hex(&n),
            self.cert.issuer
        )
        .into_bytes()
    }

    pub fn handle(&mut self, msg: Message, bus: &mut Bus, dir: &Directory) -> Result<(), ProtocolError> {
        let me = EntityId::Merchant;
        match msg.payload {
            Payload::Negotiate { pseudonym, content_id } => {
                if content_id != self.content_id {
                    bus.send(
                        me,
                        msg.from,
                        Payload::PurchaseAborted {
                            reason: format!("unknown content {content_id}"),
                        },
                    );
                    return Ok(());
                }
                let agreement = self.agreement(&pseudonym, &content_id);
                self.offers.insert(pseudonym, agreement.clone());
                bus.send(me, msg.from, Payload::AgreementOffer { agreement });
            }
            Payload::PurchaseRequest {
                cert,
                agreement,
                signature,
                pseudonym,
            } => {
                let valid = cert.verify(&dir.ca_r, bus.now())
                    && cert.pseudonym == pseudonym
                    && self.offers.get(&pseudonym) == Some(&agreement)
                    && verify(&agreement, &signature, &cert.anon_keys);
                if !valid {
                    bus.send(
                        me,
                        msg.from,
                        Payload::PurchaseAborted {
                            reason: "certificate or agreement signature invalid".into(),
                        },
                    );
                    return Ok(());
                }
                self.offers.remove(&pseudonym);
                let tid = self.next_tid;
                self.next_tid += 1;
                self.records.insert(
                    tid,
                    MerchantRecord {
                        tid,
                        cert: cert.clone(),
                        agreement: agreement.clone(),
                        signature: signature.clone(),
                    },
                );
                bus.send(
                    me,
                    EntityId::Monitor,
                    Payload::FingerprintRequest {
                        tid,
                        buyer: msg.from,
                        buyer_cert: cert,
                        merchant_cert: self.cert.clone(),
                        agreement,
                        signature,
                        pseudonym,
                    },
                );
            }
            Payload::KeyForward { tid, lanes, .. } if msg.from == EntityId::Monitor => {
                self.prepare_lanes(tid, &lanes)?;
                let (ready, later): (Vec<_>, Vec<_>) =
                    self.waiting.drain(..).partition(|(_, t, l)| self.lanes.contains_key(&(*t, *l)));
                self.waiting = later;
                for (proxy, t, l) in ready {
                    self.deliver(proxy, t, l, bus);
                }
            }
            Payload::FragmentRequest { tid, lane } => {
                if self.lanes.contains_key(&(tid, lane)) {
                    self.deliver(msg.from, tid, lane, bus);
                } else {
                    self.waiting.push((msg.from, tid, lane));
                }
            }
            Payload::Accusation { pseudonyms } if msg.from == EntityId::Monitor => {
                self.accusations.push(pseudonyms);
            }
            _ => {}
        }
        Ok(())
    }

    /// Opens σ_j and the session keys, permutes both variants block-wise and
    /// encrypts every block separately.
    fn prepare_lanes(&mut self, tid: u64, lanes: &[SealedLane]) -> Result<(), ProtocolError> {
        let mut start = 0;
        let mut sigmas = Vec::with_capacity(lanes.len());
        for (j, lane) in lanes.iter().enumerate() {
            let sigma = PermutationKey::from_bytes(&open(&lane.permutation, &self.keys)?)?;
            let key: [u8; 16] = open(&lane.session_key, &self.keys)?
                .try_into()
                .map_err(|_| CryptoError::Malformed("session key is not 16 bytes".into()))?;
            let blocks = start..start + sigma.len();
            if blocks.end > self.base.blocks.blocks() {
                return Err(ProtocolError::LengthMismatch {
                    expected: self.base.blocks.blocks(),
                    got: blocks.end,
                });
            }
            let v0: Vec<&[f64]> = blocks.clone().map(|k| self.base.fragment(0, k)).collect();
            let v1: Vec<&[f64]> = blocks.clone().map(|k| self.base.fragment(1, k)).collect();
            let mut cipher = SessionCipher::new(SessionKey::from_bytes(key));
            let mut enc = |v: Vec<&[f64]>| -> Result<Vec<Vec<u8>>, CryptoError> {
                permute(&v, &sigma)?
                    .into_iter()
                    .map(|block| {
                        let pt = f64s_to_bytes(block);
                        loop {
                            match cipher.encrypt(nonce(&mut self.rng), &pt) {
                                Err(CryptoError::NonceReuse) => continue,
                                other => return other,
                            }
                        }
                    })
                    .collect()
            };
            let e0 = enc(v0)?;
            let e1 = enc(v1)?;
            self.lanes.insert((tid, j), (e0, e1));
            sigmas.push(sigma);
            start = blocks.end;
        }
        self.permutations.insert(tid, sigmas);
        if start != self.base.blocks.blocks() {
            return Err(ProtocolError::LengthMismatch {
                expected: self.base.blocks.blocks(),
                got: start,
            });
        }
        Ok(())
    }

    fn deliver(&self, proxy: EntityId, tid: u64, lane: usize, bus: &mut Bus) {
        let (v0, v1) = &self.lanes[&(tid, lane)];
        bus.send(
            EntityId::Merchant,
            proxy,
            Payload::FragmentDelivery {
                tid,
                lane,
                variant0: v0.clone(),
                variant1: v1.clone(),
            },
        );
    }

    /// Blind extraction of the pirated codeword from a found copy.
    pub fn extract(&self, content: &Content, gain_normalisation: bool) -> Result<Vec<u8>, ProtocolError> {
        let mut coeffs = analyze_content(content, &self.base.meta)?;
        if gain_normalisation {
            coeffs = normalize_gain(&coeffs, &self.reference);
        }
        Ok(qim_extract(&coeffs, self.base.blocks.blocks(), &self.base.qim)?)
    }

    pub fn report_piracy(&self, pc: &[u8], content_digest: [u8; 32], bus: &mut Bus) {
        bus.send(
            EntityId::Merchant,
            EntityId::Monitor,
            Payload::PirateReport {
                content_digest,
                pirated: pc.to_vec(),
            },
        );
    }

    pub fn evidence(&self, pseudonym: &Pseudonym) -> Option<&MerchantRecord> {
        self.records.values().find(|r| r.cert.pseudonym == *pseudonym)
    }

    pub fn send_evidence(&self, record: MerchantRecord, bus: &mut Bus) {
        bus.send(
            EntityId::Merchant,
            EntityId::Judge,
            Payload::MerchantEvidence {
                tid: record.tid,
                cert: record.cert,
                agreement: record.agreement,
                signature: record.signature,
            },
        );
    }
}

// ---------------------------------------------------------------- monitor

/// What the monitor keeps about one purchase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub tid: u64,
    pub agreement: Vec<u8>,
    pub signature: Signature,
    pub pseudonym: Pseudonym,
    pub cert: AnonymousCert,
    pub codeword_index: usize,
    pub proxies: Vec<EntityId>,
    pub opened_at: u64,
    pub released_at: Option<u64>,
    pub completed_at: Option<u64>,
    /// Released alone after the batch window expired.
    pub degraded_privacy: bool,
}

struct MonitorTx {
    buyer: EntityId,
    lengths: Vec<usize>,
    ps: Vec<Vec<u8>>,
    sealed: Vec<SealedLane>,
    lane: usize,
    deadline: u64,
    used: BTreeSet<u32>,
    done: bool,
}

pub(crate) struct MonitorSettings {
    pub n_proxies: usize,
    pub pool: Vec<u32>,
    pub batch_min: usize,
    pub tau: u64,
    pub lane_timeout: u64,
    pub codeword_order: Option<Vec<usize>>,
    pub relay_hardening: bool,
    pub threshold: ThresholdPolicy,
}

pub(crate) struct Monitor {
    keys: KeyPair,
    rng: DetRng,
    book: CodeBook,
    settings: MonitorSettings,
    threshold: Option<f64>,
    transactions: usize,
    pub ledger: Vec<TransactionRecord>,
    active: BTreeMap<u64, MonitorTx>,
    pending: Vec<u64>,
    window: u64,
    pub last_trace: Option<TraceResult>,
}

impl Monitor {
    pub fn new(keys: KeyPair, rng: DetRng, book: CodeBook, settings: MonitorSettings) -> Self {
        Self {
            keys,
            rng,
            book,
            settings,
            threshold: None,
            transactions: 0,
            ledger: Vec::new(),
            active: BTreeMap::new(),
            pending: Vec::new(),
            window: 0,
            last_trace: None,
        }
    }

    pub fn book(&self) -> &CodeBook {
        &self.book
    }

    fn record_mut(&mut self, tid: u64) -> &mut TransactionRecord {
        self.ledger.iter_mut().find(|r| r.tid == tid).expect("ledger holds every active tid")
    }

    pub fn record_by_pseudonym(&self, p: &Pseudonym) -> Option<&TransactionRecord> {
        self.ledger.iter().find(|r| r.pseudonym == *p)
    }

    fn abort(&self, buyer: EntityId, reason: &str, bus: &mut Bus) {
        for to in [EntityId::Merchant, buyer] {
            bus.send(
                EntityId::Monitor,
                to,
                Payload::PurchaseAborted {
                    reason: reason.to_string(),
                },
            );
        }
    }

    pub fn handle(&mut self, msg: Message, bus: &mut Bus, dir: &Directory) -> Result<(), ProtocolError> {
        let me = EntityId::Monitor;
        match msg.payload {
            Payload::FingerprintRequest {
                tid,
                buyer,
                buyer_cert,
                merchant_cert,
                agreement,
                signature,
                pseudonym,
            } if msg.from == EntityId::Merchant => {
                let now = bus.now();
                let valid = merchant_cert.verify(&dir.root, now)
                    && merchant_cert.keys == dir.merchant
                    && buyer_cert.verify(&dir.ca_r, now)
                    && buyer_cert.pseudonym == pseudonym
                    && verify(&agreement, &signature, &buyer_cert.anon_keys);
                if !valid {
                    self.abort(buyer, "monitor rejected the certificates", bus);
                    return Ok(());
                }
                let index = match &self.settings.codeword_order {
                    Some(order) => order.get(self.transactions).copied(),
                    None => Some(self.transactions),
                };
                let Some(index) = index.filter(|&i| i < self.book.num_users()) else {
                    self.abort(buyer, "no codeword left for this transaction", bus);
                    return Ok(());
                };
                self.transactions += 1;
                let n = self.settings.n_proxies;
                let lengths = segment_lengths(self.book.len(), n)?;
                let pool = &self.settings.pool;
                let proxies: Vec<u32> = sample(&mut self.rng, pool.len(), n).iter().map(|i| pool[i]).collect();
                self.ledger.push(TransactionRecord {
                    tid,
                    agreement,
                    signature,
                    pseudonym,
                    cert: buyer_cert,
                    codeword_index: index,
                    proxies: proxies.iter().map(|&p| EntityId::Peer(p)).collect(),
                    opened_at: now,
                    released_at: None,
                    completed_at: None,
                    degraded_privacy: false,
                });
                self.active.insert(
                    tid,
                    MonitorTx {
                        buyer,
                        lengths: lengths.clone(),
                        ps: Vec::new(),
                        sealed: Vec::new(),
                        lane: 0,
                        deadline: 0,
                        used: proxies.iter().copied().collect(),
                        done: false,
                    },
                );
                bus.send(
                    me,
                    buyer,
                    Payload::KeyRequest {
                        tid,
                        segment_lengths: lengths,
                    },
                );
            }
            Payload::SealedKeys { tid, lanes } => {
                let Some(tx) = self.active.get(&tid) else {
                    return Ok(());
                };
                if msg.from != tx.buyer || lanes.len() != tx.lengths.len() || !tx.ps.is_empty() {
                    return Ok(());
                }
                let lengths = tx.lengths.clone();
                let index = self.record_mut(tid).codeword_index;
                let segments = segment_fingerprint(self.book.codeword(index), lengths.len())?;
                let mut ps = Vec::with_capacity(lanes.len());
                let mut sealed = Vec::with_capacity(lanes.len());
                for ((ct, seg), &len) in lanes.iter().zip(&segments).zip(&lengths) {
                    let pt = open(ct, &self.keys)?;
                    if pt.len() < 4 {
                        return Err(CryptoError::Malformed("lane payload truncated".into()).into());
                    }
                    let sigma_len = u32::from_le_bytes(pt[..4].try_into().expect("4 bytes")) as usize;
                    let split = 4 + sigma_len;
                    if pt.len() < split {
                        return Err(CryptoError::Malformed("lane payload truncated".into()).into());
                    }
                    let sigma = PermutationKey::from_bytes(&pt[4..split])?;
                    if sigma.len() != len {
                        return Err(ProtocolError::LengthMismatch {
                            expected: len,
                            got: sigma.len(),
                        });
                    }
                    ps.push(permute(seg, &sigma)?);
                    sealed.push(SealedLane {
                        permutation: seal(&sigma.to_bytes(), &dir.merchant, &mut self.rng)?,
                        session_key: pt[split..].to_vec(),
                    });
                }
                let tx = self.active.get_mut(&tid).expect("checked above");
                tx.ps = ps;
                tx.sealed = sealed;
                self.pending.push(tid);
                if self.pending.len() >= self.settings.batch_min {
                    self.release(false, bus);
                } else if self.pending.len() == 1 {
                    self.window += 1;
                    bus.schedule(
                        bus.now() + self.settings.tau,
                        me,
                        Timer::BatchExpiry { window: self.window },
                    );
                }
            }
            Payload::LaneComplete { tid, lane } => {
                let Some(tx) = self.active.get(&tid) else {
                    return Ok(());
                };
                if tx.done || lane != tx.lane || msg.from != EntityId::Peer(self.ledger_proxy(tid, lane)) {
                    return Ok(());
                }
                let tx = self.active.get_mut(&tid).expect("present");
                tx.lane += 1;
                if tx.lane < tx.lengths.len() {
                    self.assign(tid, bus);
                } else {
                    tx.done = true;
                    self.record_mut(tid).completed_at = Some(bus.now());
                }
            }
            Payload::PirateReport { pirated, .. } if msg.from == EntityId::Merchant => {
                let pc = PiratedCodeword::from_bits(&pirated);
                let policy = match self.threshold {
                    Some(z) => ThresholdPolicy::Fixed(z),
                    None => self.settings.threshold,
                };
                let result = trace(&pc, &self.book, policy)?;
                self.threshold = Some(result.threshold);
                let pseudonyms = result
                    .accused
                    .iter()
                    .flat_map(|&i| self.ledger.iter().filter(move |r| r.codeword_index == i))
                    .map(|r| r.pseudonym)
                    .collect();
                self.last_trace = Some(result);
                bus.send(me, EntityId::Merchant, Payload::Accusation { pseudonyms });
            }
            _ => {}
        }
        Ok(())
    }

    fn ledger_proxy(&self, tid: u64, lane: usize) -> u32 {
        let rec = self.ledger.iter().find(|r| r.tid == tid).expect("ledger holds every active tid");
        match rec.proxies[lane] {
            EntityId::Peer(p) => p,
            _ => unreachable!("proxies are peers"),
        }
    }

    pub fn on_timer(&mut self, timer: Timer, bus: &mut Bus) {
        match timer {
            Timer::BatchExpiry { window } if window == self.window && !self.pending.is_empty() => {
                let degraded = self.pending.len() < self.settings.batch_min;
                self.release(degraded, bus);
            }
            Timer::LaneDeadline { tid, lane } => {
                let now = bus.now();
                let Some(tx) = self.active.get(&tid) else { return };
                if tx.done || tx.lane != lane || now < tx.deadline {
                    return;
                }
                let spare: Vec<u32> = self
                    .settings
                    .pool
                    .iter()
                    .copied()
                    .filter(|p| !tx.used.contains(p))
                    .collect();
                if spare.is_empty() {
                    let buyer = tx.buyer;
                    self.active.get_mut(&tid).expect("present").done = true;
                    self.abort(buyer, "no proxy left to carry a lane", bus);
                    return;
                }
                let pick = spare[self.rng.gen_range(0..spare.len())];
                self.active.get_mut(&tid).expect("present").used.insert(pick);
                self.record_mut(tid).proxies[lane] = EntityId::Peer(pick);
                self.assign(tid, bus);
            }
            _ => {}
        }
    }

    /// Forwards the keys of every pending transaction to the merchant and
    /// starts its first lane.
    fn release(&mut self, degraded: bool, bus: &mut Bus) {
        let now = bus.now();
        for tid in std::mem::take(&mut self.pending) {
            let rec = self.record_mut(tid);
            rec.released_at = Some(now);
            rec.degraded_privacy = degraded;
            let proxies = rec.proxies.clone();
            let tx = &self.active[&tid];
            bus.send(
                EntityId::Monitor,
                EntityId::Merchant,
                Payload::KeyForward {
                    tid,
                    lanes: tx.sealed.clone(),
                    proxies: proxies.clone(),
                },
            );
            bus.send(
                EntityId::Monitor,
                tx.buyer,
                Payload::LaneDirectory {
                    tid,
                    proxies,
                    degraded_privacy: degraded,
                },
            );
            self.assign(tid, bus);
        }
    }

    fn assign(&mut self, tid: u64, bus: &mut Bus) {
        let lane = self.active[&tid].lane;
        let proxy = self.ledger_proxy(tid, lane);
        let route = if self.settings.relay_hardening {
            let used = &self.active[&tid].used;
            let free: Vec<u32> = self.settings.pool.iter().copied().filter(|p| !used.contains(p)).collect();
            if free.is_empty() {
                Vec::new()
            } else {
                vec![EntityId::Peer(free[self.rng.gen_range(0..free.len())])]
            }
        } else {
            Vec::new()
        };
        let deadline = bus.now() + self.settings.lane_timeout;
        let tx = self.active.get_mut(&tid).expect("present");
        tx.deadline = deadline;
        bus.send(
            EntityId::Monitor,
            EntityId::Peer(proxy),
            Payload::SegmentAssignment {
                tid,
                lane,
                segment: tx.ps[lane].clone(),
                buyer: tx.buyer,
                route,
            },
        );
        bus.schedule(deadline, EntityId::Monitor, Timer::LaneDeadline { tid, lane });
    }

    /// Seals the accused buyer's codeword to the judge and signs the bundle.
    pub fn send_evidence(
        &mut self,
        pseudonym: Pseudonym,
        pirated: Vec<u8>,
        content_digest: [u8; 32],
        forge_signature: bool,
        bus: &mut Bus,
        dir: &Directory,
    ) -> Result<(), ProtocolError> {
        let rec = self
            .record_by_pseudonym(&pseudonym)
            .ok_or_else(|| ProtocolError::UnknownPseudonym(pseudonym.to_string()))?;
        let codeword = self.book.codeword(rec.codeword_index).to_vec();
        let sealed_codeword = seal(&codeword, &dir.judge, &mut self.rng)?;
        let body = monitor_evidence_body(&pseudonym, &pirated, &sealed_codeword, &content_digest);
        let mut signature = self.keys.sign(&body);
        if forge_signature {
            flip_last_byte(&mut signature.0);
        }
        bus.send(
            EntityId::Monitor,
            EntityId::Judge,
            Payload::MonitorEvidence {
                pseudonym,
                pirated,
                sealed_codeword,
                content_digest,
                signature,
            },
        );
        Ok(())
    }
}

pub(crate) fn monitor_evidence_body(p: &Pseudonym, pirated: &[u8], sealed: &[u8], digest: &[u8; 32]) -> Vec<u8> {
    let mut b = b"psum-evidence".to_vec();
    b.extend_from_slice(&p.0);
    b.extend_from_slice(&sha256(pirated));
    b.extend_from_slice(&sha256(sealed));
    b.extend_from_slice(digest);
    b
}

// ---------------------------------------------------------------- buyer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PurchaseStatus {
    InProgress,
    Delivered,
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BuyerPurchase {
    pub pseudonym: Option<Pseudonym>,
    pub tid: Option<u64>,
    pub status: PurchaseStatus,
    pub approximation: Option<Vec<f64>>,
    pub degraded_privacy: bool,
}

struct Lanes {
    tid: u64,
    sigmas: Vec<PermutationKey>,
    keys: Vec<SessionKey>,
    received: BTreeMap<usize, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum CircuitState {
    Waiting,
    Delivered(Vec<u8>),
    Failed(String),
    TimedOut,
}

struct Circuit {
    hop_keys: Vec<SessionKey>,
    session_key: SessionKey,
    state: CircuitState,
}

pub(crate) struct Buyer {
    id: u32,
    spec: BuyerSpec,
    identity_keys: KeyPair,
    identity_cert: Certificate,
    rng: DetRng,
    secret: Option<PseudonymSecret>,
    pseudonym: Option<Pseudonym>,
    anon_keys: Option<KeyPair>,
    pub anon_cert: Option<AnonymousCert>,
    agreement: Option<Vec<u8>>,
    lanes: Option<Lanes>,
    started: usize,
    pub purchases: Vec<BuyerPurchase>,
    circuits: BTreeMap<u64, Circuit>,
}

impl Buyer {
    pub fn new(id: u32, spec: BuyerSpec, identity_keys: KeyPair, identity_cert: Certificate, rng: DetRng) -> Self {
        Self {
            id,
            spec,
            identity_keys,
            identity_cert,
            rng,
            secret: None,
            pseudonym: None,
            anon_keys: None,
            anon_cert: None,
            agreement: None,
            lanes: None,
            started: 0,
            purchases: Vec::new(),
            circuits: BTreeMap::new(),
        }
    }

    fn me(&self) -> EntityId {
        EntityId::Buyer(self.id)
    }

    pub fn spec(&self) -> &BuyerSpec {
        &self.spec
    }

    fn current(&mut self) -> &mut BuyerPurchase {
        self.purchases.last_mut().expect("a purchase is running")
    }

    fn finish(&mut self, status: PurchaseStatus, bus: &mut Bus) {
        if self.purchases.last().map(|p| &p.status) != Some(&PurchaseStatus::InProgress) {
            return;
        }
        self.current().status = status;
        self.lanes = None;
        if self.started < self.spec.purchases {
            bus.schedule(bus.now() + 1, self.me(), Timer::StartPurchase);
        }
    }

    pub fn on_timer(&mut self, timer: Timer, bus: &mut Bus, content_id: &str) {
        match timer {
            Timer::StartPurchase => {
                if self.started >= self.spec.purchases {
                    return;
                }
                self.started += 1;
                self.purchases.push(BuyerPurchase {
                    pseudonym: None,
                    tid: None,
                    status: PurchaseStatus::InProgress,
                    approximation: None,
                    degraded_privacy: false,
                });
                match self.pseudonym {
                    Some(p) if !self.spec.rotate_pseudonym => {
                        self.current().pseudonym = Some(p);
                        bus.send(
                            self.me(),
                            EntityId::Merchant,
                            Payload::Negotiate {
                                pseudonym: p,
                                content_id: content_id.to_string(),
                            },
                        );
                    }
                    _ => {
                        bus.send(
                            self.me(),
                            EntityId::RegistrationCa,
                            Payload::PseudonymRequest {
                                identity: self.identity_cert.clone(),
                            },
                        );
                    }
                }
            }
            Timer::RelayDeadline { circuit } => {
                if let Some(c) = self.circuits.get_mut(&circuit) {
                    if c.state == CircuitState::Waiting {
                        c.state = CircuitState::TimedOut;
                    }
                }
            }
            _ => {}
        }
    }

    pub fn handle(&mut self, msg: Message, bus: &mut Bus, dir: &Directory, content_id: &str) -> Result<(), ProtocolError> {
        let me = self.me();
        match msg.payload {
            Payload::PseudonymSecret { secret } if msg.from == EntityId::RegistrationCa => {
                let r = PseudonymSecret::from_bytes(secret);
                let p = make_pseudonym(self.spec.real_id.as_bytes(), &r)?;
                self.secret = Some(r);
                self.pseudonym = Some(p);
                self.current().pseudonym = Some(p);
                bus.send(
                    me,
                    EntityId::Merchant,
                    Payload::Negotiate {
                        pseudonym: p,
                        content_id: content_id.to_string(),
                    },
                );
            }
            Payload::AgreementOffer { agreement } => {
                let p = self.pseudonym.expect("negotiation follows registration");
                let anon = KeyPair::generate(&mut self.rng);
                self.agreement = Some(agreement);
                match self.spec.behaviour {
                    BuyerBehaviour::RogueCa => {
                        let rogue = KeyPair::generate(&mut self.rng);
                        let cert = AnonymousCert::issue(anon.public(), p, CA_R_NAME, dir.expiry, &rogue);
                        self.anon_keys = Some(anon);
                        self.send_purchase(cert, bus);
                    }
                    BuyerBehaviour::Honest => {
                        let binding = anon_binding(&anon.public(), &p);
                        let r = self.secret.as_ref().expect("registered");
                        bus.send(
                            me,
                            EntityId::RegistrationCa,
                            Payload::AnonCertRequest {
                                anon_keys: anon.public(),
                                pseudonym: p,
                                identity: self.identity_cert.clone(),
                                signature: self.identity_keys.sign(&binding),
                                proof: r.bind(&binding),
                            },
                        );
                        self.anon_keys = Some(anon);
                    }
                }
            }
            Payload::AnonCertIssued { cert } if msg.from == EntityId::RegistrationCa => {
                self.send_purchase(cert, bus);
            }
            Payload::AnonCertRejected { reason } => {
                self.finish(PurchaseStatus::Aborted { reason }, bus);
            }
            Payload::PurchaseAborted { reason } => {
                self.finish(PurchaseStatus::Aborted { reason }, bus);
            }
            Payload::KeyRequest { tid, segment_lengths } if msg.from == EntityId::Monitor => {
                let mut sigmas = Vec::with_capacity(segment_lengths.len());
                let mut keys = Vec::with_capacity(segment_lengths.len());
                let mut sealed = Vec::with_capacity(segment_lengths.len());
                for &l in &segment_lengths {
                    let sigma = PermutationKey::random(l, &mut self.rng);
                    let key = SessionKey::generate(&mut self.rng);
                    let for_merchant = seal(&key.to_bytes(), &dir.merchant, &mut self.rng)?;
                    let sb = sigma.to_bytes();
                    let mut lane = (sb.len() as u32).to_le_bytes().to_vec();
                    lane.extend(sb);
                    lane.extend(for_merchant);
                    sealed.push(seal(&lane, &dir.monitor, &mut self.rng)?);
                    sigmas.push(sigma);
                    keys.push(key);
                }
                self.current().tid = Some(tid);
                self.lanes = Some(Lanes {
                    tid,
                    sigmas,
                    keys,
                    received: BTreeMap::new(),
                });
                bus.send(me, EntityId::Monitor, Payload::SealedKeys { tid, lanes: sealed });
            }
            Payload::LaneDirectory {
                degraded_privacy, ..
            } if msg.from == EntityId::Monitor => {
                self.current().degraded_privacy = degraded_privacy;
            }
            Payload::SelectedFragments { tid, lane, blocks, .. } => {
                let Some(lanes) = self.lanes.as_mut() else {
                    return Ok(());
                };
                if lanes.tid != tid || lane >= lanes.sigmas.len() || lanes.received.contains_key(&lane) {
                    return Ok(());
                }
                let decoded = unpermute(&blocks, &lanes.sigmas[lane]).map_err(ProtocolError::from).and_then(|ordered| {
                    let mut coeffs = Vec::new();
                    for block in ordered {
                        coeffs.extend(bytes_to_f64s(&sym_decrypt(&block, &lanes.keys[lane])?)?);
                    }
                    Ok(coeffs)
                });
                match decoded {
                    Ok(coeffs) => {
                        lanes.received.insert(lane, coeffs);
                        if lanes.received.len() == lanes.sigmas.len() {
                            let approx: Vec<f64> = std::mem::take(&mut lanes.received).into_values().flatten().collect();
                            self.current().approximation = Some(approx);
                            self.finish(PurchaseStatus::Delivered, bus);
                        }
                    }
                    Err(e) => {
                        self.finish(
                            PurchaseStatus::Aborted {
                                reason: format!("lane {lane}: {e}"),
                            },
                            bus,
                        );
                    }
                }
            }
            Payload::CircuitData { circuit, data } => {
                let Some(c) = self.circuits.get_mut(&circuit) else {
                    return Ok(());
                };
                if c.state != CircuitState::Waiting {
                    return Ok(());
                }
                let peeled = c
                    .hop_keys
                    .iter()
                    .try_fold(data, |d, k| sym_decrypt(&d, k))
                    .and_then(|d| sym_decrypt(&d, &c.session_key))
                    .and_then(|pt| onion::split_reply(&pt));
                c.state = match peeled {
                    Ok((cert, file)) if cert.verify(&dir.ca_r, bus.now()) => CircuitState::Delivered(file),
                    Ok(_) => CircuitState::Failed("provider certificate invalid".into()),
                    Err(e) => CircuitState::Failed(e.to_string()),
                };
            }
            _ => {}
        }
        Ok(())
    }

    fn send_purchase(&mut self, cert: AnonymousCert, bus: &mut Bus) {
        let agreement = self.agreement.clone().expect("offer received");
        let keys = self.anon_keys.as_ref().expect("anonymous key generated");
        let signature = keys.sign(&agreement);
        let pseudonym = cert.pseudonym;
        self.anon_cert = Some(cert.clone());
        bus.send(
            self.me(),
            EntityId::Merchant,
            Payload::PurchaseRequest {
                cert,
                agreement,
                signature,
                pseudonym,
            },
        );
    }

    /// Builds the setup onion for `path` and sends it to the first relay.
    pub fn open_circuit(
        &mut self,
        circuit: u64,
        provider: u32,
        path: &[u32],
        timeout: u64,
        bus: &mut Bus,
        dir: &Directory,
    ) -> Result<(), ProtocolError> {
        let cert = self.anon_cert.clone().ok_or(ProtocolError::NoCertificate(self.me()))?;
        let key_of = |p: u32| dir.peers.get(&p).copied().ok_or(ProtocolError::UnknownEntity(EntityId::Peer(p)));
        let session_key = SessionKey::generate(&mut self.rng);
        let mut onion_bytes = onion::seal_core(
            &onion::Core {
                session_key: session_key.clone(),
                cert,
            },
            &key_of(provider)?,
            &mut self.rng,
        )?;
        let hop_keys: Vec<SessionKey> = path.iter().map(|_| SessionKey::generate(&mut self.rng)).collect();
        let mut next = EntityId::Peer(provider);
        for (&relay, key) in path.iter().zip(&hop_keys).rev() {
            onion_bytes = onion::seal_layer(
                &onion::Layer {
                    next,
                    hop_key: key.clone(),
                    inner: onion_bytes,
                },
                &key_of(relay)?,
                &mut self.rng,
            )?;
            next = EntityId::Peer(relay);
        }
        self.circuits.insert(
            circuit,
            Circuit {
                hop_keys,
                session_key,
                state: CircuitState::Waiting,
            },
        );
        bus.send(
            self.me(),
            next,
            Payload::CircuitSetup {
                circuit,
                onion: onion_bytes,
            },
        );
        bus.schedule(bus.now() + timeout, self.me(), Timer::RelayDeadline { circuit });
        Ok(())
    }

    pub fn circuit_state(&self, circuit: u64) -> Option<&CircuitState> {
        self.circuits.get(&circuit).map(|c| &c.state)
    }
}

// ---------------------------------------------------------------- peers

/// Everything a peer saw while acting as a proxy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProxyView {
    /// `(tid, lane, ps_j)`
    pub segments: Vec<(u64, usize, Vec<u8>)>,
    /// `(tid, lane, encrypted variant 0 blocks, encrypted variant 1 blocks)`
    pub fragments: Vec<(u64, usize, Vec<Vec<u8>>, Vec<Vec<u8>>)>,
}

struct Relay {
    prev: EntityId,
    hop_key: SessionKey,
}

pub(crate) struct Peer {
    id: u32,
    keys: KeyPair,
    rng: DetRng,
    behaviour: PeerBehaviour,
    assignments: BTreeMap<(u64, usize), (Vec<u8>, EntityId, Vec<EntityId>)>,
    pub view: ProxyView,
    relays: BTreeMap<u64, Relay>,
    pub cert: Option<AnonymousCert>,
    pub shared: Option<Vec<u8>>,
}

impl Peer {
    pub fn new(id: u32, keys: KeyPair, rng: DetRng, behaviour: PeerBehaviour) -> Self {
        Self {
            id,
            keys,
            rng,
            behaviour,
            assignments: BTreeMap::new(),
            view: ProxyView::default(),
            relays: BTreeMap::new(),
            cert: None,
            shared: None,
        }
    }

    pub fn public(&self) -> PublicKeys {
        self.keys.public()
    }

    fn forward_fragments(&mut self, payload: Payload, bus: &mut Bus) {
        let Payload::SelectedFragments {
            tid,
            lane,
            mut blocks,
            mut route,
            buyer,
        } = payload
        else {
            return;
        };
        if self.behaviour == PeerBehaviour::Tamper {
            if let Some(b) = blocks.first_mut() {
                flip_last_byte(b);
            }
        }
        let next = if route.is_empty() { buyer } else { route.remove(0) };
        bus.send(
            EntityId::Peer(self.id),
            next,
            Payload::SelectedFragments {
                tid,
                lane,
                blocks,
                route,
                buyer,
            },
        );
    }

    pub fn handle(&mut self, msg: Message, bus: &mut Bus, dir: &Directory) -> Result<(), ProtocolError> {
        if self.behaviour == PeerBehaviour::Drop {
            return Ok(());
        }
        let me = EntityId::Peer(self.id);
        match msg.payload {
            Payload::SegmentAssignment {
                tid,
                lane,
                segment,
                buyer,
                route,
            } if msg.from == EntityId::Monitor => {
                self.view.segments.push((tid, lane, segment.clone()));
                self.assignments.insert((tid, lane), (segment, buyer, route));
                bus.send(me, EntityId::Merchant, Payload::FragmentRequest { tid, lane });
            }
            Payload::FragmentDelivery {
                tid,
                lane,
                variant0,
                variant1,
            } if msg.from == EntityId::Merchant => {
                self.view.fragments.push((tid, lane, variant0.clone(), variant1.clone()));
                let Some((ps, buyer, route)) = self.assignments.remove(&(tid, lane)) else {
                    return Ok(());
                };
                let blocks = super::proxy_select_fragments(&ps, &variant0, &variant1)?;
                self.forward_fragments(
                    Payload::SelectedFragments {
                        tid,
                        lane,
                        blocks,
                        route,
                        buyer,
                    },
                    bus,
                );
                bus.send(me, EntityId::Monitor, Payload::LaneComplete { tid, lane });
            }
            p @ Payload::SelectedFragments { .. } => self.forward_fragments(p, bus),
            Payload::CircuitSetup { circuit, onion: bytes } => match onion::open_circuit(&bytes, &self.keys) {
                Ok(Opened::Layer(layer)) => {
                    self.relays.insert(
                        circuit,
                        Relay {
                            prev: msg.from,
                            hop_key: layer.hop_key,
                        },
                    );
                    bus.send(
                        me,
                        layer.next,
                        Payload::CircuitSetup {
                            circuit,
                            onion: layer.inner,
                        },
                    );
                }
                Ok(Opened::Core(core)) => {
                    let (Some(cert), Some(file)) = (&self.cert, &self.shared) else {
                        return Ok(());
                    };
                    if !core.cert.verify(&dir.ca_r, bus.now()) {
                        return Ok(());
                    }
                    let pt = onion::reply_plaintext(cert, file);
                    let data = sym_encrypt(&pt, &core.session_key, nonce(&mut self.rng))?;
                    bus.send(me, msg.from, Payload::CircuitData { circuit, data });
                }
                Err(_) => {}
            },
            Payload::CircuitData { circuit, data } => {
                let Some(relay) = self.relays.get(&circuit) else {
                    return Ok(());
                };
                let mut wrapped = sym_encrypt(&data, &relay.hop_key, nonce(&mut self.rng))?;
                if self.behaviour == PeerBehaviour::Tamper {
                    flip_last_byte(&mut wrapped);
                }
                bus.send(me, relay.prev, Payload::CircuitData { circuit, data: wrapped });
            }
            _ => {}
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- judge

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Guilty { real_id: String, nc: f64 },
    Innocent { nc: f64 },
    RejectedEvidence { reason: String },
}

struct MerchantBundle {
    cert: AnonymousCert,
    agreement: Vec<u8>,
    signature: Signature,
}

struct MonitorBundle {
    pseudonym: Pseudonym,
    pirated: Vec<u8>,
    sealed_codeword: Vec<u8>,
    content_digest: [u8; 32],
    signature: Signature,
}

pub(crate) struct Judge {
    keys: KeyPair,
    theta: f64,
    merchant: Option<MerchantBundle>,
    monitor: Option<MonitorBundle>,
    awaiting: Option<(Pseudonym, f64)>,
    pub verdicts: Vec<Verdict>,
}

impl Judge {
    pub fn new(keys: KeyPair, theta: f64) -> Self {
        Self {
            keys,
            theta,
            merchant: None,
            monitor: None,
            awaiting: None,
            verdicts: Vec::new(),
        }
    }

    pub fn public(&self) -> PublicKeys {
        self.keys.public()
    }

    pub fn handle(&mut self, msg: Message, bus: &mut Bus, dir: &Directory) {
        match msg.payload {
            Payload::MerchantEvidence {
                cert,
                agreement,
                signature,
                ..
            } if msg.from == EntityId::Merchant => {
                self.merchant = Some(MerchantBundle {
                    cert,
                    agreement,
                    signature,
                });
            }
            Payload::MonitorEvidence {
                pseudonym,
                pirated,
                sealed_codeword,
                content_digest,
                signature,
            } if msg.from == EntityId::Monitor => {
                self.monitor = Some(MonitorBundle {
                    pseudonym,
                    pirated,
                    sealed_codeword,
                    content_digest,
                    signature,
                });
            }
            Payload::IdentityDisclosure { pseudonym, real_id } if msg.from == EntityId::RegistrationCa => {
                if let Some((p, score)) = self.awaiting.take() {
                    if p == pseudonym {
                        self.verdicts.push(Verdict::Guilty {
                            real_id: String::from_utf8_lossy(&real_id).into_owned(),
                            nc: score,
                        });
                    }
                }
                return;
            }
            _ => return,
        }
        if self.merchant.is_some() && self.monitor.is_some() {
            let m = self.merchant.take().expect("checked");
            let mo = self.monitor.take().expect("checked");
            match self.decide(&m, &mo, dir, bus.now()) {
                Ok(score) if score >= self.theta => {
                    self.awaiting = Some((mo.pseudonym, score));
                    bus.send(
                        EntityId::Judge,
                        EntityId::RegistrationCa,
                        Payload::IdentityRequest {
                            pseudonym: mo.pseudonym,
                        },
                    );
                }
                Ok(score) => self.verdicts.push(Verdict::Innocent { nc: score }),
                Err(reason) => self.verdicts.push(Verdict::RejectedEvidence { reason }),
            }
        }
    }

    /// Checks every certificate and signature, then correlates `pc` with the
    /// codeword the monitor sealed.
    fn decide(&self, m: &MerchantBundle, mo: &MonitorBundle, dir: &Directory, now: u64) -> Result<f64, String> {
        if !m.cert.verify(&dir.ca_r, now) {
            return Err("anonymous certificate invalid".into());
        }
        if m.cert.pseudonym != mo.pseudonym {
            return Err("evidence bundles name different pseudonyms".into());
        }
        if !verify(&m.agreement, &m.signature, &m.cert.anon_keys) {
            return Err("agreement signature invalid".into());
        }
        let body = monitor_evidence_body(&mo.pseudonym, &mo.pirated, &mo.sealed_codeword, &mo.content_digest);
        if !verify(&body, &mo.signature, &dir.monitor) {
            return Err("monitor signature invalid".into());
        }
        let f = open(&mo.sealed_codeword, &self.keys).map_err(|e| e.to_string())?;
        nc(&mo.pirated, &f).map_err(|e| e.to_string())
    }
}
