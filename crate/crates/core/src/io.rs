//! On-disk formats: WAV audio, frame directories, the code book and base
//! file containers, and the supplementary file archive.
//!
//! All binary containers are little-endian.

use std::fs;
use std::io::{Cursor, Read, Seek, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::{BiasDistribution, CodeBook, CodeError, CodeParams};
use crate::transform::{
    AudioContent, BaseFile, Frame, FrameContent, PartitionMeta, SupplementaryBody, SupplementaryFile,
    TransformError, Wavelet,
};
use crate::watermark::{BlockLayout, QimParams, WatermarkError};

pub const CODEBOOK_MAGIC: &[u8; 8] = b"PSUMCB1\0";
pub const BASEFILE_MAGIC: &[u8; 8] = b"PSUMBF1\0";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("zip: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed container: {0}")]
    Format(String),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
}

fn malformed(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Cursor over a byte slice with bounds-checked little-endian reads.
struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("unexpected end of data"))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.at == self.bytes.len() {
            Ok(())
        } else {
            Err(malformed(format!("{} trailing bytes", self.bytes.len() - self.at)))
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

// ---------------------------------------------------------------- WAV

fn audio_from_wav<R: Read>(reader: hound::WavReader<R>) -> Result<AudioContent, IoError> {
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &s) in frame.iter().enumerate() {
            out[c].push(s);
        }
    }
    Ok(AudioContent::new(spec.sample_rate, out)?)
}

/// Reads integer PCM (scaled to [-1, 1)) or 32-bit float WAV.
pub fn read_wav(path: &Path) -> Result<AudioContent, IoError> {
    audio_from_wav(hound::WavReader::open(path)?)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioContent, IoError> {
    audio_from_wav(hound::WavReader::new(Cursor::new(bytes))?)
}

fn write_interleaved<W: Write + Seek>(
    writer: W,
    spec: hound::WavSpec,
    channels: &[Vec<f64>],
) -> Result<(), IoError> {
    let mut w = hound::WavWriter::new(writer, spec)?;
    let len = channels.first().map_or(0, Vec::len);
    for i in 0..len {
        for c in channels {
            match spec.sample_format {
                hound::SampleFormat::Float => w.write_sample(c[i] as f32)?,
                hound::SampleFormat::Int => {
                    let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v)?
                }
            }
        }
    }
    w.finalize()?;
    Ok(())
}

fn wav_spec(channels: usize, sample_rate: u32, float: bool) -> hound::WavSpec {
    hound::WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: if float { 32 } else { 16 },
        sample_format: if float {
            hound::SampleFormat::Float
        } else {
            hound::SampleFormat::Int
        },
    }
}

/// 16-bit PCM; samples are clipped to the representable range.
pub fn write_wav_pcm16(path: &Path, audio: &AudioContent) -> Result<(), IoError> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    write_interleaved(file, wav_spec(audio.channels.len(), audio.sample_rate, false), &audio.channels)
}

pub fn wav_pcm16_bytes(audio: &AudioContent) -> Result<Vec<u8>, IoError> {
    let mut buf = Cursor::new(Vec::new());
    write_interleaved(&mut buf, wav_spec(audio.channels.len(), audio.sample_rate, false), &audio.channels)?;
    Ok(buf.into_inner())
}

pub fn write_wav_f32(path: &Path, sample_rate: u32, channels: &[Vec<f64>]) -> Result<(), IoError> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    write_interleaved(file, wav_spec(channels.len(), sample_rate, true), channels)
}

// ---------------------------------------------------------------- frames

#[derive(Serialize, Deserialize)]
struct FrameHeader {
    width: usize,
    height: usize,
    fps: f64,
    frame_count: usize,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.yuv")
}

fn frame_bytes(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::new();
    for plane in [&frame.luma, &frame.chroma_u, &frame.chroma_v] {
        put_f64s(&mut out, plane);
    }
    out
}

fn frame_from_bytes(bytes: &[u8], plane: usize) -> Result<Frame, IoError> {
    let mut r = Reader::new(bytes);
    let frame = Frame {
        luma: r.f64s(plane)?,
        chroma_u: r.f64s(plane)?,
        chroma_v: r.f64s(plane)?,
    };
    r.finish()?;
    Ok(frame)
}

/// Writes `header.json` plus one planar Y'UV file (f64 LE) per frame.
pub fn write_frame_dir(dir: &Path, video: &FrameContent) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    let header = FrameHeader {
        width: video.width,
        height: video.height,
        fps: video.fps,
        frame_count: video.frames.len(),
    };
    fs::write(dir.join("header.json"), serde_json::to_vec_pretty(&header)?)?;
    for (i, f) in video.frames.iter().enumerate() {
        fs::write(dir.join(frame_name(i)), frame_bytes(f))?;
    }
    Ok(())
}

pub fn read_frame_dir(dir: &Path) -> Result<FrameContent, IoError> {
    let header: FrameHeader = serde_json::from_slice(&fs::read(dir.join("header.json"))?)?;
    let plane = header.width * header.height;
    let frames = (0..header.frame_count)
        .map(|i| frame_from_bytes(&fs::read(dir.join(frame_name(i)))?, plane))
        .collect::<Result<_, _>>()?;
    Ok(FrameContent::new(header.width, header.height, header.fps, frames)?)
}

// ---------------------------------------------------------------- code book

/// Serialises the book: magic, `N u32, m u32, c u16, seed u64, ε f64`, the
/// `m` biases, then each row bit-packed MSB first and padded to a byte.
///
/// The bias distribution and an explicit length are not part of the format;
/// a reader gets the default distribution and `length = Some(m)`.
pub fn encode_codebook(book: &CodeBook) -> Vec<u8> {
    let m = book.len();
    let mut out = CODEBOOK_MAGIC.to_vec();
    out.extend_from_slice(&(book.num_users() as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&book.params.coalition_bound.to_le_bytes());
    out.extend_from_slice(&book.params.seed.to_le_bytes());
    out.extend_from_slice(&book.params.error_prob.to_le_bytes());
    put_f64s(&mut out, book.bias());
    for row in book.rows() {
        for chunk in row.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, &b)| acc | ((b & 1) << (7 - k)));
            out.push(byte);
        }
    }
    out
}

pub fn decode_codebook(bytes: &[u8]) -> Result<CodeBook, IoError> {
    let mut r = Reader::new(bytes);
    if &r.array::<8>()? != CODEBOOK_MAGIC {
        return Err(malformed("not a code book container"));
    }
    let n = r.u32()?;
    let m = r.u32()? as usize;
    let c = r.u16()?;
    let seed = r.u64()?;
    let eps = r.f64()?;
    let bias = r.f64s(m)?;
    let row_bytes = m.div_ceil(8);
    let rows = (0..n)
        .map(|_| {
            let packed = r.take(row_bytes)?;
            Ok((0..m).map(|k| (packed[k / 8] >> (7 - k % 8)) & 1).collect())
        })
        .collect::<Result<Vec<Vec<u8>>, IoError>>()?;
    r.finish()?;
    let params = CodeParams {
        num_users: n,
        coalition_bound: c,
        error_prob: eps,
        seed,
        length: Some(m),
        bias: BiasDistribution::default(),
    };
    Ok(CodeBook::from_parts(params, bias, rows)?)
}

// ---------------------------------------------------------------- base file

/// Trailer after the two variant streams: what the fixed header cannot
/// express (block count, repetition, content layout).
#[derive(Serialize, Deserialize)]
struct BaseTrailer {
    blocks: usize,
    repetition: Option<usize>,
    meta: PartitionMeta,
}

/// Magic, `L u8, wavelet u8, channels u8, block_size u32, count u64, Δ f64,
/// padding u32`, then variant 0 and variant 1 as `count` f64 each, then a
/// length-prefixed JSON trailer.
pub fn encode_base_file(bf: &BaseFile) -> Result<Vec<u8>, IoError> {
    let units = bf.meta.units();
    let mut out = BASEFILE_MAGIC.to_vec();
    out.push(bf.meta.levels);
    out.push(bf.meta.wavelet.id());
    out.push(u8::try_from(units).map_err(|_| malformed("too many channels or key frames"))?);
    out.extend_from_slice(&(bf.block_size() as u32).to_le_bytes());
    out.extend_from_slice(&(bf.variant0.len() as u64).to_le_bytes());
    out.extend_from_slice(&bf.qim.step.to_le_bytes());
    out.extend_from_slice(&(bf.meta.padding() as u32).to_le_bytes());
    put_f64s(&mut out, &bf.variant0);
    put_f64s(&mut out, &bf.variant1);
    let trailer = serde_json::to_vec(&BaseTrailer {
        blocks: bf.blocks.blocks(),
        repetition: bf.qim.repetition,
        meta: bf.meta.clone(),
    })?;
    out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
    out.extend(trailer);
    Ok(out)
}

pub fn decode_base_file(bytes: &[u8]) -> Result<BaseFile, IoError> {
    let mut r = Reader::new(bytes);
    if &r.array::<8>()? != BASEFILE_MAGIC {
        return Err(malformed("not a base file container"));
    }
    let levels = r.u8()?;
    let wavelet = Wavelet::from_id(r.u8()?).ok_or_else(|| malformed("unknown wavelet id"))?;
    let _units = r.u8()?;
    let block_size = r.u32()? as usize;
    let count = usize::try_from(r.u64()?).map_err(|_| malformed("count overflow"))?;
    let step = r.f64()?;
    let padding = r.u32()? as usize;
    let variant0 = r.f64s(count)?;
    let variant1 = r.f64s(count)?;
    let len = r.u32()? as usize;
    let trailer: BaseTrailer = serde_json::from_slice(r.take(len)?)?;
    r.finish()?;
    let blocks = BlockLayout::new(count, trailer.blocks)?;
    if blocks.block_size() != block_size
        || trailer.meta.levels != levels
        || trailer.meta.wavelet != wavelet
        || trailer.meta.padding() != padding
        || trailer.meta.total_coefficients() != count
    {
        return Err(malformed("header disagrees with trailer"));
    }
    Ok(BaseFile {
        variant0,
        variant1,
        blocks,
        qim: QimParams {
            step,
            repetition: trailer.repetition,
        },
        meta: trailer.meta,
    })
}

// ---------------------------------------------------------------- supplementary file

/// Archive of the supplementary file: `meta.json` plus f64 planes, so that
/// recombination is exact.
pub fn encode_supplementary(sf: &SupplementaryFile) -> Result<Vec<u8>, IoError> {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    zip.start_file("meta.json", opts)?;
    zip.write_all(&serde_json::to_vec(&sf.meta)?)?;
    match &sf.body {
        SupplementaryBody::Audio { channels } => {
            for (i, c) in channels.iter().enumerate() {
                zip.start_file(format!("channel_{i}.f64"), opts)?;
                let mut buf = Vec::new();
                put_f64s(&mut buf, c);
                zip.write_all(&buf)?;
            }
        }
        SupplementaryBody::Frames {
            frames,
            key_luma_details,
        } => {
            for (i, f) in frames.iter().enumerate() {
                zip.start_file(format!("frames/{}", frame_name(i)), opts)?;
                zip.write_all(&(f.luma.len() as u64).to_le_bytes())?;
                zip.write_all(&(f.chroma_u.len() as u64).to_le_bytes())?;
                zip.write_all(&frame_bytes(f))?;
            }
            for (i, d) in key_luma_details.iter().enumerate() {
                zip.start_file(format!("key_luma/{i:05}.f64"), opts)?;
                let mut buf = Vec::new();
                put_f64s(&mut buf, d);
                zip.write_all(&buf)?;
            }
        }
    }
    Ok(zip.finish()?.into_inner())
}

fn zip_entry<R: Read + Seek>(zip: &mut zip::ZipArchive<R>, name: &str) -> Result<Vec<u8>, IoError> {
    let mut entry = zip.by_name(name)?;
    let mut out = Vec::with_capacity(entry.size() as usize);
    entry.read_to_end(&mut out)?;
    Ok(out)
}

fn f64_entry<R: Read + Seek>(zip: &mut zip::ZipArchive<R>, name: &str) -> Result<Vec<f64>, IoError> {
    let raw = zip_entry(zip, name)?;
    if raw.len() % 8 != 0 {
        return Err(malformed(format!("{name} is not a whole number of f64")));
    }
    Reader::new(&raw).f64s(raw.len() / 8)
}

pub fn decode_supplementary(bytes: &[u8]) -> Result<SupplementaryFile, IoError> {
    use crate::transform::ContentLayout;

    let mut zip = zip::ZipArchive::new(Cursor::new(bytes))?;
    let meta: PartitionMeta = serde_json::from_slice(&zip_entry(&mut zip, "meta.json")?)?;
    let body = match &meta.layout {
        ContentLayout::Audio { channels, .. } => SupplementaryBody::Audio {
            channels: (0..*channels)
                .map(|i| f64_entry(&mut zip, &format!("channel_{i}.f64")))
                .collect::<Result<_, _>>()?,
        },
        ContentLayout::Frames {
            frame_count,
            keyframes,
            ..
        } => {
            let frames = (0..*frame_count)
                .map(|i| {
                    let raw = zip_entry(&mut zip, &format!("frames/{}", frame_name(i)))?;
                    let mut r = Reader::new(&raw);
                    let luma = r.u64()? as usize;
                    let chroma = r.u64()? as usize;
                    let frame = Frame {
                        luma: r.f64s(luma)?,
                        chroma_u: r.f64s(chroma)?,
                        chroma_v: r.f64s(chroma)?,
                    };
                    r.finish()?;
                    Ok(frame)
                })
                .collect::<Result<_, IoError>>()?;
            let key_luma_details = (0..keyframes.len())
                .map(|i| f64_entry(&mut zip, &format!("key_luma/{i:05}.f64")))
                .collect::<Result<_, _>>()?;
            SupplementaryBody::Frames {
                frames,
                key_luma_details,
            }
        }
    };
    Ok(SupplementaryFile { meta, body })
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Audio supplementary file as 32-bit float WAV at padded length, with the
/// partition layout in a `.json` file next to it. Precision drops to f32.
pub fn write_supplementary_wav(path: &Path, sf: &SupplementaryFile) -> Result<(), IoError> {
    let SupplementaryBody::Audio { channels } = &sf.body else {
        return Err(malformed("frame supplementary files are stored as archives"));
    };
    let crate::transform::ContentLayout::Audio { sample_rate, .. } = sf.meta.layout else {
        return Err(malformed("layout is not audio"));
    };
    write_wav_f32(path, sample_rate, channels)?;
    fs::write(sidecar(path), serde_json::to_vec_pretty(&sf.meta)?)?;
    Ok(())
}

pub fn read_supplementary_wav(path: &Path) -> Result<SupplementaryFile, IoError> {
    let meta: PartitionMeta = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let audio = read_wav(path)?;
    Ok(SupplementaryFile {
        meta,
        body: SupplementaryBody::Audio {
            channels: audio.channels,
        },
    })
}

/// Names the container type from its leading bytes.
pub fn sniff_magic(bytes: &[u8]) -> Option<&'static str> {
    let head = bytes.get(..8)?;
    if head == CODEBOOK_MAGIC {
        Some("codebook")
    } else if head == BASEFILE_MAGIC {
        Some("basefile")
    } else if head.starts_with(b"RIFF") {
        Some("wav")
    } else if head.starts_with(b"PK") {
        Some("zip")
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::generate_code;
    use crate::transform::{make_base_file, reconstruct, Content, PartitionParams};

    fn audio(len: usize) -> AudioContent {
        let ch = |k: f64| (0..len).map(|i| ((i as f64) * k).sin() * 0.5).collect();
        AudioContent::new(8000, vec![ch(0.01), ch(0.023)]).unwrap()
    }

    #[test]
    fn codebook_round_trip() {
        let book = generate_code(&CodeParams::new(7, 2, 0.05, 11)).unwrap();
        let bytes = encode_codebook(&book);
        assert_eq!(&bytes[..8], CODEBOOK_MAGIC);
        let m = book.len();
        assert_eq!(bytes.len(), 8 + 4 + 4 + 2 + 8 + 8 + 8 * m + 7 * m.div_ceil(8));
        let back = decode_codebook(&bytes).unwrap();
        assert_eq!(back.rows(), book.rows());
        assert_eq!(back.bias(), book.bias());
        assert_eq!(back.params.seed, 11);
        assert!(decode_codebook(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn base_file_round_trip() {
        let p = make_base_file(&Content::Audio(audio(1000)), &PartitionParams::new(9, 0.25)).unwrap();
        let bytes = encode_base_file(&p.base).unwrap();
        assert_eq!(bytes[8], 4);
        assert_eq!(decode_base_file(&bytes).unwrap(), p.base);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_base_file(&bad).is_err());
    }

    #[test]
    fn supplementary_archive_is_exact() {
        let content = Content::Audio(audio(777));
        let p = make_base_file(&content, &PartitionParams::new(5, 0.25)).unwrap();
        let sf = decode_supplementary(&encode_supplementary(&p.supplementary).unwrap()).unwrap();
        assert_eq!(sf, p.supplementary);
        assert_eq!(reconstruct(&p.approximation, &sf).unwrap().samples().len(), 2 * 777);
    }

    #[test]
    fn wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let a = audio(300);
        let path = dir.path().join("a.wav");
        write_wav_pcm16(&path, &a).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.channels.len(), 2);
        for (x, y) in a.channels[0].iter().zip(&back.channels[0]) {
            assert!((x - y).abs() <= 0.5 / 32768.0 + 1e-12);
        }
        assert_eq!(read_wav_bytes(&wav_pcm16_bytes(&a).unwrap()).unwrap(), back);

        let p = make_base_file(&Content::Audio(a), &PartitionParams::new(4, 0.25)).unwrap();
        let sf_path = dir.path().join("sf.wav");
        write_supplementary_wav(&sf_path, &p.supplementary).unwrap();
        let sf = read_supplementary_wav(&sf_path).unwrap();
        assert_eq!(sf.meta, p.supplementary.meta);
        let (SupplementaryBody::Audio { channels: x }, SupplementaryBody::Audio { channels: y }) =
            (&sf.body, &p.supplementary.body)
        else {
            unreachable!()
        };
        assert_eq!(x[0].len(), y[0].len());
        assert!(x[0].iter().zip(&y[0]).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn frame_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plane = |k: f64| (0..12).map(|i| i as f64 * k).collect::<Vec<_>>();
        let v = FrameContent::new(
            4,
            3,
            25.0,
            vec![Frame {
                luma: plane(1.0),
                chroma_u: plane(0.5),
                chroma_v: plane(-0.5),
            }],
        )
        .unwrap();
        write_frame_dir(dir.path(), &v).unwrap();
        assert_eq!(read_frame_dir(dir.path()).unwrap(), v);
    }
}
