//! Content model, wavelet decomposition and the base / supplementary split.

mod dwt;
mod keyframes;
mod partition;

pub use dwt::{dwt_forward, dwt_inverse, dwt_inverse_padded, pad_symmetric, Dwt2, DwtPyramid, Wavelet};
pub use keyframes::select_keyframes;
pub use partition::{
    analyze_content, make_base_file, reconstruct, BaseFile, ContentLayout, Partition,
    PartitionMeta, PartitionParams, SupplementaryBody, SupplementaryFile,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::watermark::WatermarkError;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("cannot apply {levels} decomposition levels to a signal of length {len}")]
    Levels { levels: u8, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid content: {0}")]
    Content(String),
    #[error("{coefficients} approximation coefficients cannot carry {bits} bits")]
    TooShort { coefficients: usize, bits: usize },
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioContent {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl AudioContent {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self, TransformError> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(TransformError::Content(format!(
                "audio needs 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(TransformError::Content("channels differ in length".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One frame in planar Y'UV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub luma: Vec<f64>,
    pub chroma_u: Vec<f64>,
    pub chroma_v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameContent {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl FrameContent {
    pub fn new(width: usize, height: usize, fps: f64, frames: Vec<Frame>) -> Result<Self, TransformError> {
        let plane = width * height;
        if frames.is_empty() {
            return Err(TransformError::Content("no frames".into()));
        }
        if frames
            .iter()
            .any(|f| f.luma.len() != plane || f.chroma_u.len() != plane || f.chroma_v.len() != plane)
        {
            return Err(TransformError::Content(format!(
                "every plane must hold {width}×{height} samples"
            )));
        }
        Ok(Self {
            width,
            height,
            fps,
            frames,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Content {
    Audio(AudioContent),
    Frames(FrameContent),
}

impl Content {
    /// Every sample, in a fixed order (channels, or frames with Y', U, V).
    pub fn samples(&self) -> Vec<f64> {
        match self {
            Content::Audio(a) => a.channels.concat(),
            Content::Frames(v) => v
                .frames
                .iter()
                .flat_map(|f| f.luma.iter().chain(&f.chroma_u).chain(&f.chroma_v).copied())
                .collect(),
        }
    }

    /// Applies `f` to every sample buffer (channel or plane).
    pub fn map_buffers(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Content {
        match self {
            Content::Audio(a) => Content::Audio(AudioContent {
                sample_rate: a.sample_rate,
                channels: a.channels.iter().map(|c| f(c)).collect(),
            }),
            Content::Frames(v) => Content::Frames(FrameContent {
                frames: v
                    .frames
                    .iter()
                    .map(|fr| Frame {
                        luma: f(&fr.luma),
                        chroma_u: f(&fr.chroma_u),
                        chroma_v: f(&fr.chroma_v),
                    })
                    .collect(),
                ..v.clone()
            }),
        }
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Content::Audio(a) => a.channels.iter().map(Vec::as_slice).collect(),
            Content::Frames(v) => v
                .frames
                .iter()
                .flat_map(|f| [f.luma.as_slice(), f.chroma_u.as_slice(), f.chroma_v.as_slice()])
                .collect(),
        }
    }

    /// Rebuilds content of the same shape from per-buffer data in
    /// [`Content::buffers`] order.
    pub fn with_buffers(&self, buffers: Vec<Vec<f64>>) -> Result<Content, TransformError> {
        let shape: Vec<usize> = self.buffers().iter().map(|b| b.len()).collect();
        if shape != buffers.iter().map(Vec::len).collect::<Vec<_>>() {
            return Err(TransformError::Shape("buffer layout differs".into()));
        }
        let mut it = buffers.into_iter();
        Ok(self.map_buffers(|_| it.next().unwrap_or_default()))
    }

    pub fn same_shape(&self, other: &Content) -> bool {
        let a: Vec<usize> = self.buffers().iter().map(|b| b.len()).collect();
        let b: Vec<usize> = other.buffers().iter().map(|b| b.len()).collect();
        a == b && std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}
