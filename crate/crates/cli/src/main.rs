//! `psum`: command-line front end for the fingerprinting simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use psum_core::attacks::{apply_signal_attack, AttackKind, AttackSpec};
use psum_core::codes::{generate_code, trace, CodeBook, PiratedCodeword, ThresholdPolicy};
use psum_core::harness::{self, HarnessError, ScenarioConfig};
use psum_core::io;
use psum_core::rng::derive_seed;
use psum_core::transform::{analyze_content, make_base_file, reconstruct, BaseFile, Content};
use psum_core::watermark::qim_extract;

const CODEBOOK_FILE: &str = "codebook.psumcb";
const BASE_FILE: &str = "base.psumbf";
const SF_ARCHIVE: &str = "supplementary.zip";
const SF_WAV: &str = "supplementary.wav";

#[derive(Parser)]
#[command(name = "psum", version, about = "Fingerprinted P2P distribution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output (and working) directory.
    #[arg(long, global = true, default_value = "psum-out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated attacks, e.g. `awgn:30,scaling:1.1,lowpass:0.45`.
    #[arg(long, global = true, value_delimiter = ',')]
    attacks: Option<Vec<String>>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the code book.
    GenCode,
    /// Split the scenario content into base and supplementary files.
    Partition,
    /// Build the copy for codeword `index` from the partition outputs.
    Embed { index: usize },
    /// Blindly extract the codeword from a WAV file or frame directory.
    Extract { input: PathBuf },
    /// Apply the `--attacks` list to a WAV file or frame directory.
    Attack { input: PathBuf },
    /// Trace a pirate copy, or a text file of 0/1 characters.
    Trace { input: PathBuf },
    /// Run a whole scenario and write report.json, metrics.csv and transcripts.jsonl.
    RunScenario,
    /// Print metrics.csv for a finished run directory.
    Report,
}

/// Failure classes map onto exit codes.
enum Failure {
    /// Bad configuration or usage.
    Config(anyhow::Error),
    /// The run finished but a declared check failed.
    Checks,
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("psum: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("psum: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn load_config(cli: &Cli) -> Result<(ScenarioConfig, PathBuf), Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config(anyhow!("--config is required")))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Config)?;
    if let (Some(seed), Some(obj)) = (cli.seed, doc.as_object_mut()) {
        obj.insert("seed".into(), seed.into());
    }
    let mut config = ScenarioConfig::from_json(&doc.to_string())?;
    if let Some(list) = &cli.attacks {
        config.attacks = parse_attacks(list, config.seed)?;
        config.validate()?;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn parse_attacks(list: &[String], seed: u64) -> Result<Vec<AttackSpec>, Failure> {
    list.iter()
        .enumerate()
        .map(|(i, a)| {
            AttackKind::parse(a)
                .map(|kind| AttackSpec::new(kind, derive_seed(seed, "attack", i as u64)))
                .map_err(|e| Failure::Config(e.into()))
        })
        .collect()
}

fn read_content(path: &Path) -> anyhow::Result<Content> {
    Ok(if path.is_dir() {
        Content::Frames(io::read_frame_dir(path)?)
    } else {
        Content::Audio(io::read_wav(path)?)
    })
}

/// Float WAV for audio (no clipping), frame directory otherwise.
fn write_content(content: &Content, path: &Path) -> anyhow::Result<PathBuf> {
    Ok(match content {
        Content::Audio(a) => {
            let p = path.with_extension("wav");
            io::write_wav_f32(&p, a.sample_rate, &a.channels)?;
            p
        }
        Content::Frames(v) => {
            io::write_frame_dir(path, v)?;
            path.to_path_buf()
        }
    })
}

fn read_book(out: &Path) -> anyhow::Result<CodeBook> {
    let p = out.join(CODEBOOK_FILE);
    let bytes = std::fs::read(&p).with_context(|| format!("reading {} (run gen-code first)", p.display()))?;
    Ok(io::decode_codebook(&bytes)?)
}

fn read_base(out: &Path) -> anyhow::Result<BaseFile> {
    let p = out.join(BASE_FILE);
    let bytes = std::fs::read(&p).with_context(|| format!("reading {} (run partition first)", p.display()))?;
    Ok(io::decode_base_file(&bytes)?)
}

fn bits_string(bits: &[u8]) -> String {
    bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let out = &cli.out;
    match &cli.command {
        Command::GenCode => {
            let (config, _) = load_config(cli)?;
            let book = generate_code(&config.code_params()).map_err(|e| Failure::Config(e.into()))?;
            std::fs::create_dir_all(out).context("creating output directory")?;
            std::fs::write(out.join(CODEBOOK_FILE), io::encode_codebook(&book)).context("writing code book")?;
            println!("N={} m={} -> {}", book.num_users(), book.len(), out.join(CODEBOOK_FILE).display());
        }
        Command::Partition => {
            let (config, base_dir) = load_config(cli)?;
            let content = config.load_content(&base_dir)?;
            let m = config.code_params().validate().map_err(|e| Failure::Config(e.into()))?;
            let p = make_base_file(&content, &config.partition_params(m)).context("partitioning")?;
            std::fs::create_dir_all(out).context("creating output directory")?;
            std::fs::write(out.join(BASE_FILE), io::encode_base_file(&p.base).context("encoding base file")?)
                .context("writing base file")?;
            std::fs::write(out.join(SF_ARCHIVE), io::encode_supplementary(&p.supplementary).context("encoding")?)
                .context("writing supplementary archive")?;
            if let Content::Audio(_) = content {
                io::write_supplementary_wav(&out.join(SF_WAV), &p.supplementary).context("writing SF WAV")?;
            }
            println!(
                "{} approximation coefficients in {} blocks of {}",
                p.base.variant0.len(),
                p.base.blocks.blocks(),
                p.base.block_size()
            );
        }
        Command::Embed { index } => {
            let book = read_book(out)?;
            let bf = read_base(out)?;
            if *index >= book.num_users() {
                return Err(Failure::Config(anyhow!("codeword {index} out of range 0..{}", book.num_users())));
            }
            let sf_bytes = std::fs::read(out.join(SF_ARCHIVE)).context("reading supplementary archive")?;
            let sf = io::decode_supplementary(&sf_bytes).context("decoding supplementary archive")?;
            let approx = bf.select(book.codeword(*index)).context("selecting fragments")?;
            let content = reconstruct(&approx, &sf).context("recombining")?;
            let path = write_content(&content, &out.join(format!("fingerprinted-{index}")))?;
            println!("{}", path.display());
        }
        Command::Extract { input } => {
            let bf = read_base(out)?;
            let content = read_content(input)?;
            let coeffs = analyze_content(&content, &bf.meta).context("analysing content")?;
            let bits = qim_extract(&coeffs, bf.blocks.blocks(), &bf.qim).context("extracting")?;
            let s = bits_string(&bits);
            std::fs::create_dir_all(out).context("creating output directory")?;
            std::fs::write(out.join("extracted.txt"), format!("{s}\n")).context("writing extracted.txt")?;
            println!("{s}");
        }
        Command::Attack { input } => {
            let list = cli
                .attacks
                .as_ref()
                .ok_or_else(|| Failure::Config(anyhow!("--attacks is required")))?;
            let mut content = read_content(input)?;
            for spec in parse_attacks(list, cli.seed.unwrap_or(0))? {
                log(cli, format!("applying {}", spec.kind.name()));
                content = apply_signal_attack(&content, &spec).map_err(|e| Failure::Config(e.into()))?;
            }
            std::fs::create_dir_all(out).context("creating output directory")?;
            let path = write_content(&content, &out.join("attacked"))?;
            println!("{}", path.display());
        }
        Command::Trace { input } => {
            let book = read_book(out)?;
            let bits: Vec<u8> = if input.extension().is_some_and(|e| e == "txt") {
                std::fs::read_to_string(input)
                    .context("reading codeword")?
                    .trim()
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        other => Err(Failure::Config(anyhow!("unexpected character {other:?} in codeword"))),
                    })
                    .collect::<Result<_, _>>()?
            } else {
                let bf = read_base(out)?;
                let content = read_content(input)?;
                let coeffs = analyze_content(&content, &bf.meta).context("analysing content")?;
                qim_extract(&coeffs, bf.blocks.blocks(), &bf.qim).context("extracting")?
            };
            let policy = ThresholdPolicy::Calibrated {
                samples: 1000,
                seed: derive_seed(book.params.seed, "threshold", 0),
            };
            let result = trace(&PiratedCodeword::from_bits(&bits), &book, policy).context("tracing")?;
            println!("{}", serde_json::to_string_pretty(&result).context("serialising")?);
        }
        Command::RunScenario => {
            let (config, base_dir) = load_config(cli)?;
            log(cli, format!("running scenario with seed {}", config.seed));
            let run = harness::run_scenario(&config, &base_dir, None)?;
            harness::write_outputs(&run, out)?;
            for c in &run.report.checks {
                log(cli, format!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            println!("{}", out.join("report.json").display());
            if !run.report.passed() {
                return Err(Failure::Checks);
            }
        }
        Command::Report => {
            let report = harness::read_report(out)?;
            let csv = harness::metrics_csv(&report.metrics);
            std::fs::write(out.join("metrics.csv"), &csv).context("writing metrics.csv")?;
            print!("{csv}");
        }
    }
    Ok(())
}
