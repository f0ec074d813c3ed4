//! Scenario runner, synthetic content, metrics and the direct-embedding
//! oracle.
//!
//! A scenario is a JSON document. [`run_scenario`] generates the code,
//! partitions the content, runs the distribution protocol for every buyer,
//! applies the declared attacks, traces, arbitrates and collects the results
//! into a [`ScenarioReport`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{apply_signal_attack, collude_contents, AttackError, AttackKind, AttackSpec};
use crate::codes::{generate_code, CodeBook, CodeError, CodeParams};
use crate::crypto::{hex, sha256};
use crate::io::{self, IoError};
use crate::protocol::{
    BuyerSpec, EntityId, EvidenceTamper, PayloadClass, ProtocolConfig, ProtocolError, PurchaseStatus, Simulation,
    Verdict,
};
use crate::rng::{derive_seed, seeded};
use crate::transform::{
    analyze_content, dwt_forward, dwt_inverse, make_base_file, select_keyframes, AudioContent, Content, Dwt2,
    Frame, FrameContent, PartitionParams, TransformError, Wavelet,
};
use crate::watermark::{
    ber, nc, normalize_gain, psnr, psnr_bound, qim_embed, qim_extract, BlockLayout, QimParams, WatermarkError,
};

pub const REPORT_SCHEMA: &str = "psum-report/1";

#[derive(Debug, Error)]
pub enum HarnessError {
    /// The scenario document is malformed or inconsistent.
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

// ---------------------------------------------------------------- synthetic content

/// Seeded test audio in [-1, 1): a few sinusoids plus white noise.
pub fn synthetic_audio(seed: u64, sample_rate: u32, seconds: f64, channels: usize) -> AudioContent {
    let len = (f64::from(sample_rate) * seconds).round() as usize;
    let mut rng = seeded(derive_seed(seed, "synthetic-audio", 0));
    let noise = Normal::new(0.0, 0.02).expect("valid deviation");
    let data = (0..channels.max(1))
        .map(|_| {
            let tones: Vec<(f64, f64, f64)> = (0..5)
                .map(|_| {
                    (
                        rng.gen_range(50.0..4000.0),
                        rng.gen_range(0.04..0.12),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            (0..len)
                .map(|i| {
                    let t = i as f64 / f64::from(sample_rate);
                    let s: f64 = tones
                        .iter()
                        .map(|(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
                        .sum();
                    (s + noise.sample(&mut rng)).clamp(-1.0, 32767.0 / 32768.0)
                })
                .collect()
        })
        .collect();
    AudioContent::new(sample_rate, data).expect("one or two equal channels")
}

/// Two scenes of seeded textures on a 0–255 scale, cut half way, with
/// small per-frame noise.
pub fn synthetic_frames(seed: u64, width: usize, height: usize, count: usize) -> FrameContent {
    let mut rng = seeded(derive_seed(seed, "synthetic-frames", 0));
    let noise = Normal::new(0.0, 1.0).expect("valid deviation");
    let scene = |rng: &mut crate::rng::DetRng| -> [f64; 4] {
        [rng.gen_range(60.0..190.0), rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4), rng.gen_range(10.0..50.0)]
    };
    let scenes = [scene(&mut rng), scene(&mut rng)];
    let frames = (0..count.max(1))
        .map(|k| {
            let [base, fx, fy, amp] = scenes[usize::from(2 * k >= count)];
            let mut plane = |offset: f64, gain: f64| -> Vec<f64> {
                (0..width * height)
                    .map(|i| {
                        let (x, y) = ((i % width) as f64, (i / width) as f64);
                        let v = offset + gain * amp * ((fx * x).sin() + (fy * y).cos()) + noise.sample(&mut rng);
                        v.clamp(0.0, 255.0)
                    })
                    .collect()
            };
            Frame {
                luma: plane(base, 1.0),
                chroma_u: plane(128.0, 0.3),
                chroma_v: plane(128.0, -0.3),
            }
        })
        .collect();
    FrameContent::new(width, height, 25.0, frames).expect("consistent planes")
}

// ---------------------------------------------------------------- oracle

/// Embeds `f` straight into the approximation band, one pass, no protocol.
/// Returns the embedded approximation stream.
pub fn oracle_embed_coefficients(
    content: &Content,
    f: &[u8],
    qim: &QimParams,
    levels: u8,
    wavelet: Wavelet,
    keyframe_threshold: f64,
) -> Result<Vec<f64>, HarnessError> {
    let approx = oracle_approximation(content, levels, wavelet, keyframe_threshold)?;
    let layout = BlockLayout::new(approx.len(), f.len())?;
    Ok(qim_embed(&approx, &layout, f, qim)?)
}

fn oracle_approximation(
    content: &Content,
    levels: u8,
    wavelet: Wavelet,
    keyframe_threshold: f64,
) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::new();
    match content {
        Content::Audio(a) => {
            for c in &a.channels {
                out.extend(dwt_forward(c, levels, wavelet)?.approx);
            }
        }
        Content::Frames(v) => {
            for k in select_keyframes(v, keyframe_threshold) {
                out.extend(Dwt2::forward(&v.frames[k].luma, v.width, v.height, levels, wavelet)?.approx());
            }
        }
    }
    Ok(out)
}

/// [`oracle_embed_coefficients`] followed by synthesis back to content.
pub fn oracle_direct_embed(content: &Content, f: &[u8], step: f64, levels: u8) -> Result<Content, HarnessError> {
    let wavelet = Wavelet::default();
    let qim = QimParams::new(step);
    let embedded = oracle_embed_coefficients(content, f, &qim, levels, wavelet, 1.0)?;
    let mut at = 0;
    Ok(match content {
        Content::Audio(a) => {
            let mut channels = Vec::with_capacity(a.channels.len());
            for c in &a.channels {
                let mut p = dwt_forward(c, levels, wavelet)?;
                let n = p.approx.len();
                p.approx.copy_from_slice(&embedded[at..at + n]);
                at += n;
                channels.push(dwt_inverse(&p)?);
            }
            Content::Audio(AudioContent::new(a.sample_rate, channels)?)
        }
        Content::Frames(v) => {
            let mut frames = v.frames.clone();
            for k in select_keyframes(v, 1.0) {
                let mut t = Dwt2::forward(&v.frames[k].luma, v.width, v.height, levels, wavelet)?;
                let n = t.approx().len();
                t.set_approx(&embedded[at..at + n])?;
                at += n;
                frames[k].luma = t.inverse();
            }
            Content::Frames(FrameContent::new(v.width, v.height, v.fps, frames)?)
        }
    })
}

// ---------------------------------------------------------------- scenario config

fn default_tau() -> u64 {
    100
}
fn default_delta() -> f64 {
    0.25
}
fn default_levels() -> u8 {
    4
}
fn default_theta() -> f64 {
    0.9
}
fn default_keyframe_threshold() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BuyersConfig {
    /// `buyer-0` … `buyer-{k-1}`, one purchase each.
    Count(usize),
    List(Vec<BuyerSpec>),
}

impl BuyersConfig {
    pub fn specs(&self) -> Vec<BuyerSpec> {
        match self {
            BuyersConfig::Count(k) => (0..*k).map(|i| BuyerSpec::new(format!("buyer-{i}"))).collect(),
            BuyersConfig::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticContent {
    Audio {
        #[serde(default = "one_second")]
        seconds: f64,
        #[serde(default = "cd_rate")]
        sample_rate: u32,
        #[serde(default = "stereo")]
        channels: usize,
    },
    Frames {
        width: usize,
        height: usize,
        count: usize,
    },
}

fn one_second() -> f64 {
    1.0
}
fn cd_rate() -> u32 {
    44_100
}
fn stereo() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContentConfig {
    /// A WAV file or a frame directory, relative to the config file.
    Path { path: PathBuf },
    Synthetic { synthetic: SyntheticContent },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(rename = "N")]
    pub num_users: u32,
    pub c: u16,
    pub epsilon: f64,
    pub n_proxies: usize,
    #[serde(default = "default_tau")]
    pub tau_ticks: u64,
    pub buyers: BuyersConfig,
    pub content: ContentConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_levels")]
    pub levels: u8,
    #[serde(default)]
    pub wavelet: Wavelet,
    /// Carriers per block; absent means the whole block.
    #[serde(default)]
    pub repetition: Option<usize>,
    /// Code length override; must not be below the bound.
    #[serde(default)]
    pub code_length: Option<usize>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub relay_hardening: bool,
    #[serde(default = "default_keyframe_threshold")]
    pub keyframe_threshold: f64,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.num_users == 0 {
            return fail("N must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if self.n_proxies == 0 {
            return fail("n_proxies must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return fail(format!("delta {} must be positive", self.delta));
        }
        let purchases: usize = self.buyers.specs().iter().map(|b| b.purchases).sum();
        if purchases == 0 {
            return fail("at least one buyer is required".into());
        }
        if purchases > self.num_users as usize {
            return fail(format!("{purchases} purchases exceed the {} codewords", self.num_users));
        }
        for a in &self.attacks {
            a.kind.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if let AttackKind::Collusion { colluders, .. } = &a.kind {
                if let Some(bad) = colluders.iter().find(|&&i| i >= purchases) {
                    return fail(format!("colluder {bad} is not a purchase"));
                }
            }
        }
        Ok(())
    }

    pub fn load_content(&self, base_dir: &Path) -> Result<Content, HarnessError> {
        Ok(match &self.content {
            ContentConfig::Synthetic {
                synthetic: SyntheticContent::Audio {
                    seconds,
                    sample_rate,
                    channels,
                },
            } => Content::Audio(synthetic_audio(
                derive_seed(self.seed, "content", 0),
                *sample_rate,
                *seconds,
                *channels,
            )),
            ContentConfig::Synthetic {
                synthetic: SyntheticContent::Frames { width, height, count },
            } => Content::Frames(synthetic_frames(derive_seed(self.seed, "content", 0), *width, *height, *count)),
            ContentConfig::Path { path } => {
                let path = base_dir.join(path);
                if path.is_dir() {
                    Content::Frames(io::read_frame_dir(&path)?)
                } else {
                    Content::Audio(io::read_wav(&path)?)
                }
            }
        })
    }

    pub fn code_params(&self) -> CodeParams {
        let mut p = CodeParams::new(self.num_users, self.c, self.epsilon, derive_seed(self.seed, "code", 0));
        p.length = self.code_length;
        p
    }

    pub fn qim(&self) -> QimParams {
        QimParams {
            step: self.delta,
            repetition: self.repetition,
        }
    }

    pub fn partition_params(&self, bits: usize) -> PartitionParams {
        PartitionParams {
            levels: self.levels,
            wavelet: self.wavelet,
            qim: self.qim(),
            bits,
            keyframe_threshold: self.keyframe_threshold,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let mut p = ProtocolConfig::new(self.seed, self.n_proxies);
        p.tau_ticks = self.tau_ticks;
        p.theta = self.theta;
        p.relay_hardening = self.relay_hardening;
        p
    }
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuyerResult {
    pub purchase: usize,
    pub buyer: u32,
    pub real_id: String,
    pub pseudonym: Option<String>,
    pub codeword_index: Option<usize>,
    pub status: PurchaseStatus,
    pub ber: Option<f64>,
    pub nc: Option<f64>,
    /// Sample-domain PSNR of the fingerprinted copy against the original.
    pub psnr: Option<f64>,
    pub max_coefficient_change: Option<f64>,
    /// Largest gap between the delivered stream and the direct-embedding oracle.
    pub oracle_max_abs_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub buyer: String,
    pub attack: String,
    pub ber: f64,
    pub nc: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracingResult {
    pub attack: String,
    /// Purchases whose copies went into the pirate copy.
    pub sources: Vec<usize>,
    /// Purchases whose pseudonyms were accused.
    pub accused: Vec<usize>,
    pub innocent_accused: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationResult {
    pub purchase: usize,
    pub verdict: Verdict,
    pub correct_identity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub seed: u64,
    #[serde(rename = "N")]
    pub num_users: u32,
    pub c: u16,
    pub epsilon: f64,
    pub code_length: usize,
    pub n_proxies: usize,
    pub delta: f64,
    pub levels: u8,
    pub wavelet: Wavelet,
    pub psnr_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema: String,
    pub scenario: ScenarioSummary,
    pub buyers: Vec<BuyerResult>,
    pub metrics: Vec<MetricRow>,
    pub tracing: Vec<TracingResult>,
    pub arbitration: Vec<ArbitrationResult>,
    pub checks: Vec<Check>,
    /// Attacks that exist in the literature but are not modelled here.
    pub not_run: Vec<String>,
    pub transcript_digest: String,
    /// SHA-256 of this report with `timing_ms` removed.
    pub determinism_digest: String,
    /// Wall-clock timing; informational, absent in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<u64>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn seal_digest(&mut self) {
        let timing = self.timing_ms.take();
        self.determinism_digest.clear();
        let bytes = serde_json::to_vec(self).expect("reports serialise");
        self.determinism_digest = hex(&sha256(&bytes));
        self.timing_ms = timing;
    }
}

/// `buyer,attack,ber,nc,psnr` with a header line.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("buyer,attack,ber,nc,psnr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.buyer, r.attack, r.ber, r.nc, r.psnr));
    }
    out
}

/// One JSON object per message event.
pub fn transcripts_jsonl(sim: &Simulation) -> String {
    let mut out = String::new();
    for e in sim.log() {
        #[derive(Serialize)]
        struct Line<'a> {
            seq: u64,
            from: EntityId,
            to: EntityId,
            kind: &'a str,
            payload_digest: &'a str,
            classes: &'a [PayloadClass],
        }
        let line = Line {
            seq: e.seq,
            from: e.from,
            to: e.to,
            kind: &e.kind,
            payload_digest: &e.payload_digest,
            classes: &e.classes,
        };
        out.push_str(&serde_json::to_string(&line).expect("events serialise"));
        out.push('\n');
    }
    out
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub transcripts: String,
    pub simulation: Simulation,
    pub book: CodeBook,
}

fn peak_of(content: &Content) -> f64 {
    match content {
        Content::Audio(_) => 1.0,
        Content::Frames(_) => 255.0,
    }
}

fn extract_bits(sim: &Simulation, content: &Content, gain_normalisation: bool) -> Result<Vec<u8>, HarnessError> {
    let bf = sim.base_file();
    let mut coeffs = analyze_content(content, &bf.meta)?;
    if gain_normalisation {
        coeffs = normalize_gain(&coeffs, &bf.lattice_reference());
    }
    Ok(qim_extract(&coeffs, bf.blocks.blocks(), &bf.qim)?)
}

fn check(name: &str, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

/// Wall clock, absent in the browser where `Instant` is unsupported.
fn clock() -> Option<std::time::Instant> {
    (!cfg!(target_arch = "wasm32")).then(std::time::Instant::now)
}

/// Runs a full scenario. `base_dir` resolves a relative content path;
/// `attack_filter` keeps only attacks whose name starts with one of its
/// entries.
pub fn run_scenario(
    config: &ScenarioConfig,
    base_dir: &Path,
    attack_filter: Option<&[String]>,
) -> Result<ScenarioRun, HarnessError> {
    config.validate()?;
    let started = clock();
    let content = config.load_content(base_dir)?;
    let book = generate_code(&config.code_params())?;
    let m = book.len();
    let partition = make_base_file(&content, &config.partition_params(m))?;
    let reference = partition.approximation.clone();
    let peak = peak_of(&content);
    let bound = psnr_bound(peak, config.delta);

    let mut sim = Simulation::new(config.protocol_config(), book.clone(), partition, config.buyers.specs())?;
    let run = sim.run_bf_distribution()?;

    let mut checks = Vec::new();
    let mut buyers = Vec::new();
    let mut metrics = Vec::new();
    let mut copies: Vec<Option<Content>> = Vec::new();
    for (k, p) in run.purchases.iter().enumerate() {
        let mut r = BuyerResult {
            purchase: k,
            buyer: p.buyer,
            real_id: p.real_id.clone(),
            pseudonym: p.pseudonym.map(|x| x.to_string()),
            codeword_index: p.codeword_index,
            status: p.status.clone(),
            ber: None,
            nc: None,
            psnr: None,
            max_coefficient_change: None,
            oracle_max_abs_diff: None,
        };
        let mut copy = None;
        if let (Some(approx), Some(idx)) = (&p.approximation, p.codeword_index) {
            let row = book.codeword(idx);
            let c = sim.reconstruct(approx)?;
            let bits = extract_bits(&sim, &c, false)?;
            let oracle = oracle_embed_coefficients(
                &content,
                row,
                &config.qim(),
                config.levels,
                config.wavelet,
                config.keyframe_threshold,
            )?;
            r.ber = Some(ber(row, &bits)?);
            r.nc = Some(nc(row, &bits)?);
            r.psnr = Some(psnr(&content.samples(), &c.samples(), peak)?);
            r.max_coefficient_change =
                Some(approx.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            r.oracle_max_abs_diff = Some(approx.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            metrics.push(MetricRow {
                buyer: p.real_id.clone(),
                attack: "none".into(),
                ber: r.ber.unwrap_or(1.0),
                nc: r.nc.unwrap_or(0.0),
                psnr: r.psnr.unwrap_or(0.0),
            });
            copy = Some(c);
        }
        copies.push(copy);
        buyers.push(r);
    }

    let delivered = buyers.iter().filter(|b| b.status == PurchaseStatus::Delivered).count();
    checks.push(check(
        "purchases_delivered",
        delivered == buyers.len(),
        format!("{delivered}/{} purchases delivered", buyers.len()),
    ));
    let worst_ber = buyers.iter().filter_map(|b| b.ber).fold(0.0, f64::max);
    checks.push(check(
        "extraction_ber_zero",
        delivered > 0 && worst_ber == 0.0,
        format!("worst BER {worst_ber}"),
    ));
    let worst_oracle = buyers.iter().filter_map(|b| b.oracle_max_abs_diff).fold(0.0, f64::max);
    checks.push(check(
        "oracle_equivalence",
        worst_oracle == 0.0,
        format!("max abs difference {worst_oracle}"),
    ));
    let worst_change = buyers.iter().filter_map(|b| b.max_coefficient_change).fold(0.0, f64::max);
    let worst_psnr = buyers.iter().filter_map(|b| b.psnr).fold(f64::INFINITY, f64::min);
    checks.push(check(
        "distortion_bound",
        worst_change <= config.delta / 2.0 && worst_psnr >= bound,
        format!("max change {worst_change}, min PSNR {worst_psnr:.2} dB, bound {bound:.2} dB"),
    ));

    let merchant_clean = !sim.transcript(EntityId::Merchant).contains_class(PayloadClass::FingerprintBits);
    let mut intermediaries = vec![EntityId::Monitor];
    intermediaries.extend(sim.peer_ids().into_iter().map(EntityId::Peer));
    let intermediaries_clean = intermediaries
        .iter()
        .all(|&e| !sim.transcript(e).contains_class(PayloadClass::ClearCoefficients));
    checks.push(check(
        "transcript_leakage",
        merchant_clean && intermediaries_clean,
        format!("merchant free of fingerprint bits: {merchant_clean}; monitor and peers free of clear coefficients: {intermediaries_clean}"),
    ));

    // Attacks, tracing and arbitration.
    let mut tracing = Vec::new();
    let mut pirate_copies: Vec<(String, Vec<usize>, Content, bool)> = Vec::new();
    let selected = |a: &AttackSpec| {
        attack_filter.map_or(true, |f| f.iter().any(|n| a.kind.name().starts_with(n.as_str())))
    };
    for attack in config.attacks.iter().filter(|a| selected(a)) {
        let name = attack.kind.name();
        match &attack.kind {
            AttackKind::Collusion { colluders, strategy } => {
                let inputs: Vec<Content> = colluders.iter().filter_map(|&i| copies[i].clone()).collect();
                if inputs.len() != colluders.len() {
                    checks.push(check(&format!("attack:{name}"), false, "a colluder holds no copy"));
                    continue;
                }
                let colluded = collude_contents(&inputs, *strategy)?;
                for &i in colluders {
                    let row = book.codeword(buyers[i].codeword_index.expect("delivered"));
                    let bits = extract_bits(&sim, &colluded, false)?;
                    metrics.push(MetricRow {
                        buyer: buyers[i].real_id.clone(),
                        attack: name.clone(),
                        ber: ber(row, &bits)?,
                        nc: nc(row, &bits)?,
                        psnr: psnr(&content.samples(), &colluded.samples(), peak)?,
                    });
                }
                pirate_copies.push((name, colluders.clone(), colluded, false));
            }
            _ => {
                let gain = attack.kind.needs_gain_normalisation();
                for (i, c) in copies.iter().enumerate() {
                    let Some(c) = c else { continue };
                    let attacked = apply_signal_attack(c, attack)?;
                    let row = book.codeword(buyers[i].codeword_index.expect("delivered"));
                    let bits = extract_bits(&sim, &attacked, gain)?;
                    metrics.push(MetricRow {
                        buyer: buyers[i].real_id.clone(),
                        attack: name.clone(),
                        ber: ber(row, &bits)?,
                        nc: nc(row, &bits)?,
                        psnr: psnr(&content.samples(), &attacked.samples(), peak)?,
                    });
                    if i == 0 {
                        pirate_copies.push((name.clone(), vec![0], attacked, gain));
                    }
                }
            }
        }
    }
    if pirate_copies.is_empty() {
        if let Some(c) = copies.first().cloned().flatten() {
            pirate_copies.push(("none".into(), vec![0], c, false));
        }
    }

    let pseudonym_of: Vec<Option<String>> = buyers.iter().map(|b| b.pseudonym.clone()).collect();
    let mut arbitration = Vec::new();
    let mut tracing_ok = true;
    for (name, sources, pirate, gain) in &pirate_copies {
        let outcome = sim.trace_traitor(pirate, *gain)?;
        let accused: Vec<usize> = outcome
            .pseudonyms
            .iter()
            .filter_map(|p| pseudonym_of.iter().position(|q| q.as_deref() == Some(p.to_string().as_str())))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let innocent_accused = accused.iter().filter(|a| !sources.contains(a)).count();
        // Robustness rows only need to avoid framing; collusion and the
        // unattacked copy must also catch someone.
        let must_catch = name == "none" || name.starts_with("collusion");
        let ok = innocent_accused == 0 && (!must_catch || accused.iter().any(|a| sources.contains(a)));
        tracing_ok &= ok;
        tracing.push(TracingResult {
            attack: name.clone(),
            sources: sources.clone(),
            accused: accused.clone(),
            innocent_accused,
            threshold: outcome.result.threshold,
        });
        if arbitration.is_empty() {
            for &a in &accused {
                let Some(p) = outcome
                    .pseudonyms
                    .iter()
                    .find(|p| pseudonym_of[a].as_deref() == Some(p.to_string().as_str()))
                else {
                    continue;
                };
                let verdict = sim.arbitrate(*p, &outcome.pirated, EvidenceTamper::None)?.verdict;
                let correct_identity =
                    matches!(&verdict, Verdict::Guilty { real_id, .. } if *real_id == buyers[a].real_id);
                arbitration.push(ArbitrationResult {
                    purchase: a,
                    verdict,
                    correct_identity,
                });
            }
        }
    }
    checks.push(check(
        "tracing",
        tracing_ok && !tracing.is_empty(),
        format!("{} pirate copies traced", tracing.len()),
    ));
    let guilty = arbitration.iter().filter(|a| a.correct_identity).count();
    checks.push(check(
        "arbitration",
        !arbitration.is_empty() && guilty == arbitration.len(),
        format!("{guilty}/{} verdicts name the right buyer", arbitration.len()),
    ));

    let deterministic = std::env::var("PSUM_DETERMINISTIC").is_ok_and(|v| v == "1");
    let mut report = ScenarioReport {
        schema: REPORT_SCHEMA.into(),
        scenario: ScenarioSummary {
            seed: config.seed,
            num_users: config.num_users,
            c: config.c,
            epsilon: config.epsilon,
            code_length: m,
            n_proxies: config.n_proxies,
            delta: config.delta,
            levels: config.levels,
            wavelet: config.wavelet,
            psnr_bound: bound,
        },
        buyers,
        metrics,
        tracing,
        arbitration,
        checks,
        not_run: vec![
            "mp3_compression".into(),
            "h264_compression".into(),
            "frame_rotation".into(),
        ],
        transcript_digest: sim.digest(),
        determinism_digest: String::new(),
        timing_ms: started.filter(|_| !deterministic).map(|t| t.elapsed().as_millis() as u64),
    };
    report.seal_digest();
    let transcripts = transcripts_jsonl(&sim);
    Ok(ScenarioRun {
        report,
        transcripts,
        simulation: sim,
        book,
    })
}

/// Writes `report.json`, `metrics.csv` and `transcripts.jsonl` into `out`.
pub fn write_outputs(run: &ScenarioRun, out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(IoError::from)?;
    let json = serde_json::to_string_pretty(&run.report).map_err(IoError::from)?;
    std::fs::write(out.join("report.json"), json + "\n").map_err(IoError::from)?;
    std::fs::write(out.join("metrics.csv"), metrics_csv(&run.report.metrics)).map_err(IoError::from)?;
    std::fs::write(out.join("transcripts.jsonl"), &run.transcripts).map_err(IoError::from)?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<ScenarioReport, HarnessError> {
    let bytes = std::fs::read(dir.join("report.json")).map_err(IoError::from)?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Config(format!("report.json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_content_is_seeded() {
        assert_eq!(synthetic_audio(1, 8000, 0.1, 2), synthetic_audio(1, 8000, 0.1, 2));
        assert_ne!(synthetic_audio(1, 8000, 0.1, 2), synthetic_audio(2, 8000, 0.1, 2));
        let a = synthetic_audio(3, 8000, 0.5, 1);
        assert_eq!(a.len(), 4000);
        assert!(a.channels[0].iter().all(|v| (-1.0..1.0).contains(v)));
        let v = synthetic_frames(4, 32, 16, 6);
        assert_eq!(v.frames.len(), 6);
        assert_eq!(select_keyframes(&v, 1.0), vec![0, 3]);
    }

    #[test]
    fn oracle_extremes_match_the_variants() {
        let content = Content::Audio(synthetic_audio(5, 8000, 0.25, 2));
        let params = PartitionParams::new(10, 0.25);
        let p = make_base_file(&content, &params).unwrap();
        let zeros = oracle_embed_coefficients(&content, &[0; 10], &params.qim, 4, Wavelet::default(), 1.0).unwrap();
        let ones = oracle_embed_coefficients(&content, &[1; 10], &params.qim, 4, Wavelet::default(), 1.0).unwrap();
        assert_eq!(zeros, p.base.variant0);
        assert_eq!(ones, p.base.variant1);
        let f = [1, 0, 1, 1, 0, 0, 1, 0, 1, 1];
        let direct = oracle_direct_embed(&content, &f, 0.25, 4).unwrap();
        let bits = qim_extract(&analyze_content(&direct, &p.base.meta).unwrap(), 10, &params.qim).unwrap();
        assert_eq!(bits, f);
    }

    #[test]
    fn frame_oracle_round_trips() {
        let content = Content::Frames(synthetic_frames(6, 32, 32, 4));
        let params = PartitionParams::new(4, 2.0);
        let p = make_base_file(&content, &params).unwrap();
        let f = [1, 1, 0, 1];
        let direct = oracle_direct_embed(&content, &f, 2.0, 4).unwrap();
        let bits = qim_extract(&analyze_content(&direct, &p.base.meta).unwrap(), 4, &params.qim).unwrap();
        assert_eq!(bits, f);
    }

    #[test]
    fn config_requires_seed() {
        let ok = r#"{"seed": 1, "N": 4, "c": 2, "epsilon": 0.1, "n_proxies": 2, "buyers": 2,
                     "content": {"synthetic": {"kind": "audio", "seconds": 0.2, "sample_rate": 8000}}}"#;
        let cfg = ScenarioConfig::from_json(ok).unwrap();
        assert_eq!(cfg.delta, 0.25);
        assert_eq!(cfg.buyers.specs().len(), 2);
        let missing = ok.replace("\"seed\": 1,", "");
        assert!(ScenarioConfig::from_json(&missing).unwrap_err().is_config());
        let too_many = ok.replace("\"buyers\": 2", "\"buyers\": 5");
        assert!(ScenarioConfig::from_json(&too_many).is_err());
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let rows = vec![MetricRow {
            buyer: "b".into(),
            attack: "none".into(),
            ber: 0.0,
            nc: 1.0,
            psnr: 40.0,
        }];
        assert_eq!(metrics_csv(&rows), "buyer,attack,ber,nc,psnr\nb,none,0,1,40\n");
    }
}
