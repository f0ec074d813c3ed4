//! Base file / supplementary file construction and recombination.
//!
//! The base file holds the level-L approximation band twice, once embedded
//! with all zeros and once with all ones. The supplementary file is the
//! synthesis of the detail bands alone, kept at padded length so that its own
//! approximation band is exactly empty.

use serde::{Deserialize, Serialize};

use super::dwt::{dwt_forward, dwt_inverse_padded, Dwt2, DwtPyramid, Wavelet};
use super::{select_keyframes, AudioContent, Content, Frame, FrameContent, TransformError};
use crate::watermark::{qim_embed, BlockLayout, QimParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub levels: u8,
    pub wavelet: Wavelet,
    pub qim: QimParams,
    /// Fingerprint length `m`; the approximation stream is cut into `m` blocks.
    pub bits: usize,
    /// Factor for [`select_keyframes`] on frame content.
    pub keyframe_threshold: f64,
}

impl PartitionParams {
    pub fn new(bits: usize, step: f64) -> Self {
        Self {
            levels: 4,
            wavelet: Wavelet::Daubechies4,
            qim: QimParams::new(step),
            bits,
            keyframe_threshold: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentLayout {
    Audio {
        channels: usize,
        sample_rate: u32,
        original_len: usize,
        padded_len: usize,
    },
    Frames {
        width: usize,
        height: usize,
        padded_width: usize,
        padded_height: usize,
        fps: f64,
        frame_count: usize,
        keyframes: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMeta {
    pub levels: u8,
    pub wavelet: Wavelet,
    pub layout: ContentLayout,
}

impl PartitionMeta {
    /// Approximation coefficients per channel (audio) or per key frame.
    pub fn approx_per_unit(&self) -> usize {
        match &self.layout {
            ContentLayout::Audio { padded_len, .. } => padded_len >> self.levels,
            ContentLayout::Frames {
                padded_width,
                padded_height,
                ..
            } => (padded_width >> self.levels) * (padded_height >> self.levels),
        }
    }

    pub fn units(&self) -> usize {
        match &self.layout {
            ContentLayout::Audio { channels, .. } => *channels,
            ContentLayout::Frames { keyframes, .. } => keyframes.len(),
        }
    }

    pub fn total_coefficients(&self) -> usize {
        self.approx_per_unit() * self.units()
    }

    /// Samples appended by symmetric extension (per channel, or per row for frames).
    pub fn padding(&self) -> usize {
        match &self.layout {
            ContentLayout::Audio {
                original_len,
                padded_len,
                ..
            } => padded_len - original_len,
            ContentLayout::Frames {
                width,
                padded_width,
                ..
            } => padded_width - width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseFile {
    pub variant0: Vec<f64>,
    pub variant1: Vec<f64>,
    pub blocks: BlockLayout,
    pub qim: QimParams,
    pub meta: PartitionMeta,
}

impl BaseFile {
    pub fn block_size(&self) -> usize {
        self.blocks.block_size()
    }

    /// Coefficients of `block` in the variant that carries `bit`.
    pub fn fragment(&self, bit: u8, block: usize) -> &[f64] {
        let range = self.blocks.range(block);
        if bit == 0 {
            &self.variant0[range]
        } else {
            &self.variant1[range]
        }
    }

    /// Both variants back to back: every lattice value a delivered copy can
    /// hold, used as the reference for gain estimation.
    pub fn lattice_reference(&self) -> Vec<f64> {
        self.variant0.iter().chain(&self.variant1).copied().collect()
    }

    /// Assembles the stream for a codeword by per-block variant selection.
    pub fn select(&self, bits: &[u8]) -> Result<Vec<f64>, TransformError> {
        if bits.len() != self.blocks.blocks() {
            return Err(TransformError::Shape(format!(
                "codeword has {} bits, base file has {} blocks",
                bits.len(),
                self.blocks.blocks()
            )));
        }
        Ok(bits
            .iter()
            .enumerate()
            .flat_map(|(k, &b)| self.fragment(b, k).iter().copied())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SupplementaryBody {
    /// Detail-only synthesis per channel, at padded length.
    Audio { channels: Vec<Vec<f64>> },
    /// Non-key frames unchanged; key frames keep chroma but carry an empty
    /// luma, whose detail-only synthesis (padded size) sits in
    /// `key_luma_details` in key-frame order.
    Frames {
        frames: Vec<Frame>,
        key_luma_details: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplementaryFile {
    pub meta: PartitionMeta,
    pub body: SupplementaryBody,
}

/// Output of [`make_base_file`]. `approximation` is the unembedded band the
/// merchant keeps for itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub base: BaseFile,
    pub supplementary: SupplementaryFile,
    pub approximation: Vec<f64>,
}

pub fn make_base_file(content: &Content, params: &PartitionParams) -> Result<Partition, TransformError> {
    params.qim.validate()?;
    let (meta, approximation, body) = match content {
        Content::Audio(audio) => split_audio(audio, params)?,
        Content::Frames(video) => split_frames(video, params)?,
    };
    if approximation.len() < params.bits || params.bits == 0 {
        return Err(TransformError::TooShort {
            coefficients: approximation.len(),
            bits: params.bits,
        });
    }
    let blocks = BlockLayout::new(approximation.len(), params.bits)?;
    let variant0 = qim_embed(&approximation, &blocks, &vec![0; params.bits], &params.qim)?;
    let variant1 = qim_embed(&approximation, &blocks, &vec![1; params.bits], &params.qim)?;
    Ok(Partition {
        base: BaseFile {
            variant0,
            variant1,
            blocks,
            qim: params.qim,
            meta: meta.clone(),
        },
        supplementary: SupplementaryFile { meta, body },
        approximation,
    })
}

type Split = (PartitionMeta, Vec<f64>, SupplementaryBody);

fn split_audio(audio: &AudioContent, params: &PartitionParams) -> Result<Split, TransformError> {
    let mut approx = Vec::new();
    let mut details = Vec::with_capacity(audio.channels.len());
    let mut padded_len = 0;
    for channel in &audio.channels {
        let p = dwt_forward(channel, params.levels, params.wavelet)?;
        padded_len = p.padded_len();
        approx.extend_from_slice(&p.approx);
        details.push(dwt_inverse_padded(&p.details_only())?);
    }
    let meta = PartitionMeta {
        levels: params.levels,
        wavelet: params.wavelet,
        layout: ContentLayout::Audio {
            channels: audio.channels.len(),
            sample_rate: audio.sample_rate,
            original_len: audio.len(),
            padded_len,
        },
    };
    Ok((meta, approx, SupplementaryBody::Audio { channels: details }))
}

fn split_frames(video: &FrameContent, params: &PartitionParams) -> Result<Split, TransformError> {
    let keyframes = select_keyframes(video, params.keyframe_threshold);
    let mut approx = Vec::new();
    let mut key_luma_details = Vec::with_capacity(keyframes.len());
    let mut frames = video.frames.clone();
    let (mut pw, mut ph) = (video.width, video.height);
    for &k in &keyframes {
        let mut t = Dwt2::forward(&video.frames[k].luma, video.width, video.height, params.levels, params.wavelet)?;
        pw = t.padded_width;
        ph = t.padded_height;
        let band = t.approx();
        approx.extend_from_slice(&band);
        t.set_approx(&vec![0.0; band.len()])?;
        key_luma_details.push(t.inverse_padded());
        frames[k].luma.clear();
    }
    let meta = PartitionMeta {
        levels: params.levels,
        wavelet: params.wavelet,
        layout: ContentLayout::Frames {
            width: video.width,
            height: video.height,
            padded_width: pw,
            padded_height: ph,
            fps: video.fps,
            frame_count: video.frames.len(),
            keyframes,
        },
    };
    Ok((meta, approx, SupplementaryBody::Frames { frames, key_luma_details }))
}

/// Approximation stream of `content` under an existing partition layout.
/// This is what blind extraction runs on.
pub fn analyze_content(content: &Content, meta: &PartitionMeta) -> Result<Vec<f64>, TransformError> {
    match (content, &meta.layout) {
        (
            Content::Audio(audio),
            ContentLayout::Audio {
                channels,
                original_len,
                ..
            },
        ) => {
            if audio.channels.len() != *channels || audio.len() != *original_len {
                return Err(TransformError::Shape(format!(
                    "expected {channels} channel(s) of {original_len} samples, got {} of {}",
                    audio.channels.len(),
                    audio.len()
                )));
            }
            let mut out = Vec::with_capacity(meta.total_coefficients());
            for channel in &audio.channels {
                out.extend(dwt_forward(channel, meta.levels, meta.wavelet)?.approx);
            }
            Ok(out)
        }
        (
            Content::Frames(video),
            ContentLayout::Frames {
                width,
                height,
                frame_count,
                keyframes,
                ..
            },
        ) => {
            if video.width != *width || video.height != *height || video.frames.len() != *frame_count {
                return Err(TransformError::Shape("frame geometry differs from the base file".into()));
            }
            let mut out = Vec::with_capacity(meta.total_coefficients());
            for &k in keyframes {
                let t = Dwt2::forward(&video.frames[k].luma, *width, *height, meta.levels, meta.wavelet)?;
                out.extend(t.approx());
            }
            Ok(out)
        }
        _ => Err(TransformError::Shape("content type differs from the base file".into())),
    }
}

/// Recombines an approximation stream (e.g. a fingerprinted base file) with
/// the supplementary file.
pub fn reconstruct(approx: &[f64], sf: &SupplementaryFile) -> Result<Content, TransformError> {
    let meta = &sf.meta;
    if approx.len() != meta.total_coefficients() {
        return Err(TransformError::Shape(format!(
            "approximation stream has {} coefficients, expected {}",
            approx.len(),
            meta.total_coefficients()
        )));
    }
    let per_unit = meta.approx_per_unit();
    match (&sf.body, &meta.layout) {
        (
            SupplementaryBody::Audio { channels },
            ContentLayout::Audio {
                sample_rate,
                original_len,
                padded_len,
                ..
            },
        ) => {
            if channels.len() != meta.units() || channels.iter().any(|c| c.len() != *padded_len) {
                return Err(TransformError::Shape("supplementary channels do not match metadata".into()));
            }
            let mut out = Vec::with_capacity(channels.len());
            for (band, detail) in approx.chunks(per_unit).zip(channels) {
                let pyramid = DwtPyramid {
                    approx: band.to_vec(),
                    details: (1..=meta.levels).map(|l| vec![0.0; padded_len >> l]).collect(),
                    wavelet: meta.wavelet,
                    original_len: *original_len,
                };
                let mut signal = dwt_inverse_padded(&pyramid)?;
                for (s, d) in signal.iter_mut().zip(detail) {
                    *s += d;
                }
                signal.truncate(*original_len);
                out.push(signal);
            }
            Ok(Content::Audio(AudioContent::new(*sample_rate, out)?))
        }
        (
            SupplementaryBody::Frames {
                frames,
                key_luma_details,
            },
            ContentLayout::Frames {
                width,
                height,
                padded_width,
                padded_height,
                fps,
                keyframes,
                ..
            },
        ) => {
            if key_luma_details.len() != keyframes.len() {
                return Err(TransformError::Shape("key frame count differs from metadata".into()));
            }
            let mut frames = frames.clone();
            for ((band, detail), &k) in approx.chunks(per_unit).zip(key_luma_details).zip(keyframes) {
                let mut t = Dwt2 {
                    width: *width,
                    height: *height,
                    padded_width: *padded_width,
                    padded_height: *padded_height,
                    levels: meta.levels,
                    wavelet: meta.wavelet,
                    coeffs: vec![0.0; padded_width * padded_height],
                };
                t.set_approx(band)?;
                let mut full = t.inverse_padded();
                if detail.len() != full.len() {
                    return Err(TransformError::Shape("key frame detail plane has the wrong size".into()));
                }
                for (s, d) in full.iter_mut().zip(detail) {
                    *s += d;
                }
                frames[k].luma = (0..*height)
                    .flat_map(|y| full[y * padded_width..y * padded_width + width].iter().copied())
                    .collect();
            }
            Ok(Content::Frames(FrameContent::new(*width, *height, *fps, frames)?))
        }
        _ => Err(TransformError::Shape("supplementary body does not match its layout".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::watermark::qim_extract;
    use rand::Rng;

    fn noise_audio(seed: u64, channels: usize, len: usize) -> Content {
        let mut rng = crate::rng::seeded(seed);
        let ch = (0..channels)
            .map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        Content::Audio(AudioContent::new(44_100, ch).unwrap())
    }

    fn max_abs_diff(a: &Content, b: &Content) -> f64 {
        a.samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_second_mono_coefficient_count() {
        let content = noise_audio(1, 1, 88_200);
        let part = make_base_file(&content, &PartitionParams::new(100, 0.25)).unwrap();
        // 88200 pads to 88208 = 16 · 5513
        assert_eq!(part.base.meta.approx_per_unit(), 5513);
        assert_eq!(part.base.meta.padding(), 8);
        assert_eq!(part.base.variant0.len(), 5513);
        assert_eq!(part.base.block_size(), 55);
    }

    #[test]
    fn variants_extract_to_constant_words() {
        let content = noise_audio(2, 2, 20_000);
        let params = PartitionParams::new(40, 0.25);
        let part = make_base_file(&content, &params).unwrap();
        for (bit, variant) in [(0u8, &part.base.variant0), (1, &part.base.variant1)] {
            let y = reconstruct(variant, &part.supplementary).unwrap();
            let stream = analyze_content(&y, &part.base.meta).unwrap();
            assert_eq!(qim_extract(&stream, 40, &params.qim).unwrap(), vec![bit; 40]);
        }
        for (a, b) in part.base.variant0.iter().zip(&part.base.variant1) {
            assert!((a - b).abs() <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn original_band_restores_content() {
        let content = noise_audio(3, 2, 12_345);
        let part = make_base_file(&content, &PartitionParams::new(30, 0.25)).unwrap();
        let back = reconstruct(&part.approximation, &part.supplementary).unwrap();
        assert!(max_abs_diff(&back, &content) <= 1e-9);
    }

    #[test]
    fn zero_band_gives_detail_only_signal() {
        let content = noise_audio(4, 1, 4_000);
        let part = make_base_file(&content, &PartitionParams::new(10, 0.25)).unwrap();
        let zero = vec![0.0; part.approximation.len()];
        let Content::Audio(y) = reconstruct(&zero, &part.supplementary).unwrap() else {
            panic!("audio expected")
        };
        let SupplementaryBody::Audio { channels } = &part.supplementary.body else {
            panic!("audio expected")
        };
        assert_eq!(y.channels[0], channels[0][..4_000].to_vec());
    }

    #[test]
    fn supplementary_signal_has_empty_approximation() {
        let content = noise_audio(5, 2, 5_000);
        let part = make_base_file(&content, &PartitionParams::new(10, 0.25)).unwrap();
        let SupplementaryBody::Audio { channels } = &part.supplementary.body else {
            panic!("audio expected")
        };
        let sf = Content::Audio(AudioContent::new(44_100, channels.clone()).unwrap());
        let again = make_base_file(&sf, &PartitionParams::new(10, 0.25)).unwrap();
        assert!(again.approximation.iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn rejects_zero_step_and_short_content() {
        let content = noise_audio(6, 1, 64);
        assert!(matches!(
            make_base_file(&content, &PartitionParams::new(2, 0.0)),
            Err(TransformError::Watermark(_))
        ));
        assert!(matches!(
            make_base_file(&content, &PartitionParams::new(5, 0.25)),
            Err(TransformError::TooShort { .. })
        ));
    }

    #[test]
    fn reconstruct_is_linear_in_the_band() {
        let content = noise_audio(7, 1, 3_000);
        let part = make_base_file(&content, &PartitionParams::new(10, 0.25)).unwrap();
        let mut rng = crate::rng::seeded(70);
        let n = part.approximation.len();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let zero = vec![0.0; n];
        let r = |band: &[f64]| reconstruct(band, &part.supplementary).unwrap().samples();
        let (rs, ra, rb, rz) = (r(&sum), r(&a), r(&b), r(&zero));
        for i in 0..rs.len() {
            assert!((rs[i] - (ra[i] + rb[i] - rz[i])).abs() < 1e-9);
        }
    }

    fn two_scene_video() -> Content {
        let (w, h) = (40, 24);
        let mut rng = crate::rng::seeded(8);
        let scene = |rng: &mut crate::rng::DetRng, base: f64| -> Vec<f64> {
            (0..w * h).map(|_| base + rng.gen_range(0.0..30.0)).collect()
        };
        let a = scene(&mut rng, 40.0);
        let b = scene(&mut rng, 160.0);
        let frames = (0..8)
            .map(|k| Frame {
                luma: if k < 4 { a.clone() } else { b.clone() },
                chroma_u: vec![128.0 + k as f64; w * h],
                chroma_v: vec![100.0; w * h],
            })
            .collect();
        Content::Frames(FrameContent::new(w, h, 25.0, frames).unwrap())
    }

    #[test]
    fn frame_partition_round_trip() {
        let content = two_scene_video();
        let mut params = PartitionParams::new(12, 4.0);
        params.levels = 3;
        let part = make_base_file(&content, &params).unwrap();
        let ContentLayout::Frames { keyframes, .. } = &part.base.meta.layout else {
            panic!("frames expected")
        };
        assert_eq!(keyframes, &vec![0, 4]);
        // 40×24 pads to 40×24 at L=3: 5×3 approximation per key frame
        assert_eq!(part.base.meta.total_coefficients(), 30);
        let back = reconstruct(&part.approximation, &part.supplementary).unwrap();
        assert!(max_abs_diff(&back, &content) <= 1e-9);
        let marked = reconstruct(&part.base.variant1, &part.supplementary).unwrap();
        let stream = analyze_content(&marked, &part.base.meta).unwrap();
        assert_eq!(qim_extract(&stream, 12, &params.qim).unwrap(), vec![1; 12]);
    }
}
