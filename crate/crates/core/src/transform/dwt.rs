//! Orthonormal periodised wavelet transforms (1-D and separable 2-D).
//!
//! Inputs are symmetrically extended to a multiple of `2^L` before analysis;
//! the extension is recorded and trimmed again on synthesis.

use serde::{Deserialize, Serialize};

use super::TransformError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavelet {
    Haar,
    /// Four-tap Daubechies filter (two vanishing moments).
    Daubechies4,
}

impl Default for Wavelet {
    fn default() -> Self {
        Wavelet::Daubechies4
    }
}

impl Wavelet {
    pub fn id(self) -> u8 {
        match self {
            Wavelet::Haar => 0,
            Wavelet::Daubechies4 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Wavelet::Haar),
            1 => Some(Wavelet::Daubechies4),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Daubechies4 => "db4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "haar" => Some(Wavelet::Haar),
            "db4" | "d4" | "daubechies4" => Some(Wavelet::Daubechies4),
            _ => None,
        }
    }

    /// Analysis low-pass and high-pass filters.
    fn filters(self) -> (Vec<f64>, Vec<f64>) {
        let lo = match self {
            Wavelet::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            Wavelet::Daubechies4 => {
                let s3 = 3f64.sqrt();
                let n = 4.0 * 2f64.sqrt();
                vec![(1.0 + s3) / n, (3.0 + s3) / n, (3.0 - s3) / n, (1.0 - s3) / n]
            }
        };
        let k = lo.len();
        let hi = (0..k)
            .map(|i| if i % 2 == 0 { lo[k - 1 - i] } else { -lo[k - 1 - i] })
            .collect();
        (lo, hi)
    }
}

/// Single analysis step on a periodic signal of even length.
fn analyze(x: &[f64], lo: &[f64], hi: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    let n = x.len();
    for i in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * i + k) % n];
            a += l * v;
            d += h * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
}

fn synthesize(approx: &[f64], detail: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n / 2 {
        for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            out[(2 * i + k) % n] += l * approx[i] + h * detail[i];
        }
    }
}

/// Half-sample symmetric extension of `x` to the next multiple of `multiple`.
/// Returns the number of appended samples. Requires `x.len() ≥ multiple − 1`
/// whenever padding is needed.
pub fn pad_symmetric(x: &[f64], multiple: usize) -> (Vec<f64>, usize) {
    let n = x.len();
    let padded = n.div_ceil(multiple) * multiple;
    let pad = padded - n;
    let mut out = Vec::with_capacity(padded);
    out.extend_from_slice(x);
    out.extend((0..pad).map(|k| x[n - 1 - k]));
    (out, pad)
}

fn check_levels(len: usize, levels: u8) -> Result<usize, TransformError> {
    if levels == 0 || levels > 30 {
        return Err(TransformError::Levels { levels, len });
    }
    let unit = 1usize << levels;
    if len < unit {
        return Err(TransformError::Levels { levels, len });
    }
    Ok(unit)
}

/// Multi-level 1-D decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwtPyramid {
    pub approx: Vec<f64>,
    /// `details[0]` is the finest level.
    pub details: Vec<Vec<f64>>,
    pub wavelet: Wavelet,
    /// Length before symmetric extension.
    pub original_len: usize,
}

impl DwtPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn padded_len(&self) -> usize {
        self.approx.len() << self.details.len()
    }

    /// Same shape with every detail band zeroed.
    pub fn approx_only(&self) -> Self {
        Self {
            details: self.details.iter().map(|d| vec![0.0; d.len()]).collect(),
            ..self.clone()
        }
    }

    /// Same shape with the approximation band zeroed.
    pub fn details_only(&self) -> Self {
        Self {
            approx: vec![0.0; self.approx.len()],
            ..self.clone()
        }
    }
}

pub fn dwt_forward(signal: &[f64], levels: u8, wavelet: Wavelet) -> Result<DwtPyramid, TransformError> {
    let unit = check_levels(signal.len(), levels)?;
    let (mut current, _) = pad_symmetric(signal, unit);
    let (lo, hi) = wavelet.filters();
    let mut details = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let half = current.len() / 2;
        let mut a = vec![0.0; half];
        let mut d = vec![0.0; half];
        analyze(&current, &lo, &hi, &mut a, &mut d);
        details.push(d);
        current = a;
    }
    Ok(DwtPyramid {
        approx: current,
        details,
        wavelet,
        original_len: signal.len(),
    })
}

/// Full-length (padded) synthesis, before trimming.
pub fn dwt_inverse_padded(p: &DwtPyramid) -> Result<Vec<f64>, TransformError> {
    let padded = p.padded_len();
    if p.details.is_empty() || padded < p.original_len {
        return Err(TransformError::Shape("pyramid has no levels or is too short".into()));
    }
    for (level, d) in p.details.iter().enumerate() {
        if d.len() != padded >> (level + 1) {
            return Err(TransformError::Shape(format!(
                "detail level {} has {} coefficients, expected {}",
                level + 1,
                d.len(),
                padded >> (level + 1)
            )));
        }
    }
    let (lo, hi) = p.wavelet.filters();
    let mut current = p.approx.clone();
    for d in p.details.iter().rev() {
        let mut out = vec![0.0; current.len() * 2];
        synthesize(&current, d, &lo, &hi, &mut out);
        current = out;
    }
    Ok(current)
}

pub fn dwt_inverse(p: &DwtPyramid) -> Result<Vec<f64>, TransformError> {
    let mut x = dwt_inverse_padded(p)?;
    x.truncate(p.original_len);
    Ok(x)
}

/// Separable 2-D decomposition in Mallat layout: after `L` levels the top-left
/// `(W'/2^L) × (H'/2^L)` corner of `coeffs` is the approximation band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dwt2 {
    pub width: usize,
    pub height: usize,
    pub padded_width: usize,
    pub padded_height: usize,
    pub levels: u8,
    pub wavelet: Wavelet,
    pub coeffs: Vec<f64>,
}

/// Symmetric extension of a row-major plane in both directions.
pub fn pad_plane(plane: &[f64], width: usize, height: usize, unit: usize) -> (Vec<f64>, usize, usize) {
    let pw = width.div_ceil(unit) * unit;
    let ph = height.div_ceil(unit) * unit;
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = if y < height { y } else { 2 * height - 1 - y };
        let row = &plane[sy * width..(sy + 1) * width];
        out.extend_from_slice(&pad_symmetric(row, unit).0);
    }
    (out, pw, ph)
}

impl Dwt2 {
    pub fn forward(
        plane: &[f64],
        width: usize,
        height: usize,
        levels: u8,
        wavelet: Wavelet,
    ) -> Result<Self, TransformError> {
        if plane.len() != width * height {
            return Err(TransformError::Shape(format!(
                "plane has {} samples, expected {width}×{height}",
                plane.len()
            )));
        }
        let unit = check_levels(width.min(height), levels)?;
        let (mut coeffs, pw, ph) = pad_plane(plane, width, height, unit);
        let (lo, hi) = wavelet.filters();
        let (mut w, mut h) = (pw, ph);
        let mut buf = Vec::new();
        let mut a = Vec::new();
        let mut d = Vec::new();
        for _ in 0..levels {
            for y in 0..h {
                buf.clear();
                buf.extend_from_slice(&coeffs[y * pw..y * pw + w]);
                a.resize(w / 2, 0.0);
                d.resize(w / 2, 0.0);
                analyze(&buf, &lo, &hi, &mut a, &mut d);
                coeffs[y * pw..y * pw + w / 2].copy_from_slice(&a);
                coeffs[y * pw + w / 2..y * pw + w].copy_from_slice(&d);
            }
            for x in 0..w {
                buf.clear();
                buf.extend((0..h).map(|y| coeffs[y * pw + x]));
                a.resize(h / 2, 0.0);
                d.resize(h / 2, 0.0);
                analyze(&buf, &lo, &hi, &mut a, &mut d);
                for y in 0..h / 2 {
                    coeffs[y * pw + x] = a[y];
                    coeffs[(y + h / 2) * pw + x] = d[y];
                }
            }
            w /= 2;
            h /= 2;
        }
        Ok(Self {
            width,
            height,
            padded_width: pw,
            padded_height: ph,
            levels,
            wavelet,
            coeffs,
        })
    }

    pub fn approx_dims(&self) -> (usize, usize) {
        (self.padded_width >> self.levels, self.padded_height >> self.levels)
    }

    /// Approximation band, row-major.
    pub fn approx(&self) -> Vec<f64> {
        let (aw, ah) = self.approx_dims();
        (0..ah)
            .flat_map(|y| self.coeffs[y * self.padded_width..y * self.padded_width + aw].iter().copied())
            .collect()
    }

    pub fn set_approx(&mut self, band: &[f64]) -> Result<(), TransformError> {
        let (aw, ah) = self.approx_dims();
        if band.len() != aw * ah {
            return Err(TransformError::Shape(format!(
                "approximation band has {} values, expected {aw}×{ah}",
                band.len()
            )));
        }
        for y in 0..ah {
            let row = y * self.padded_width;
            self.coeffs[row..row + aw].copy_from_slice(&band[y * aw..(y + 1) * aw]);
        }
        Ok(())
    }

    /// Synthesis at padded size.
    pub fn inverse_padded(&self) -> Vec<f64> {
        let pw = self.padded_width;
        let mut coeffs = self.coeffs.clone();
        let (lo, hi) = self.wavelet.filters();
        let mut buf = Vec::new();
        for level in (0..self.levels).rev() {
            let w = pw >> level;
            let h = self.padded_height >> level;
            for x in 0..w {
                let a: Vec<f64> = (0..h / 2).map(|y| coeffs[y * pw + x]).collect();
                let d: Vec<f64> = (h / 2..h).map(|y| coeffs[y * pw + x]).collect();
                buf.resize(h, 0.0);
                synthesize(&a, &d, &lo, &hi, &mut buf);
                for y in 0..h {
                    coeffs[y * pw + x] = buf[y];
                }
            }
            for y in 0..h {
                let row = &coeffs[y * pw..y * pw + w];
                let (a, d) = row.split_at(w / 2);
                buf.resize(w, 0.0);
                synthesize(a, d, &lo, &hi, &mut buf);
                coeffs[y * pw..y * pw + w].copy_from_slice(&buf);
            }
        }
        coeffs
    }

    /// Synthesis trimmed to the original `width × height`.
    pub fn inverse(&self) -> Vec<f64> {
        let full = self.inverse_padded();
        (0..self.height)
            .flat_map(|y| full[y * self.padded_width..y * self.padded_width + self.width].iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn haar_butterfly_example() {
        let p = dwt_forward(&[1.0, 1.0, 1.0, 1.0], 1, Wavelet::Haar).unwrap();
        let r2 = 2f64.sqrt();
        assert!(max_abs_diff(&p.approx, &[r2, r2]) < 1e-15);
        assert_eq!(p.details, vec![vec![0.0, 0.0]]);
        let back = dwt_inverse(&p).unwrap();
        assert!(max_abs_diff(&back, &[1.0; 4]) < 1e-15);
    }

    #[test]
    fn hand_synthesis_example() {
        let r2 = 2f64.sqrt();
        let p = DwtPyramid {
            approx: vec![r2, r2],
            details: vec![vec![0.0, 0.0]],
            wavelet: Wavelet::Haar,
            original_len: 4,
        };
        assert!(max_abs_diff(&dwt_inverse(&p).unwrap(), &[1.0; 4]) < 1e-15);
    }

    #[test]
    fn zero_pyramid_gives_zero_signal() {
        let p = DwtPyramid {
            approx: vec![0.0; 4],
            details: vec![vec![0.0; 8], vec![0.0; 4]],
            wavelet: Wavelet::Daubechies4,
            original_len: 16,
        };
        assert_eq!(dwt_inverse(&p).unwrap(), vec![0.0; 16]);
    }

    #[test]
    fn constants_have_no_details() {
        for w in [Wavelet::Haar, Wavelet::Daubechies4] {
            for levels in 1..=5 {
                let p = dwt_forward(&[0.7; 64], levels, w).unwrap();
                for d in &p.details {
                    assert!(d.iter().all(|v| v.abs() < 1e-12), "{w:?} L={levels}");
                }
            }
        }
    }

    #[test]
    fn level_errors() {
        assert!(matches!(dwt_forward(&[1.0; 8], 0, Wavelet::Haar), Err(TransformError::Levels { .. })));
        assert!(matches!(dwt_forward(&[1.0; 8], 4, Wavelet::Haar), Err(TransformError::Levels { .. })));
        assert!(dwt_forward(&[1.0; 8], 3, Wavelet::Haar).is_ok());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = dwt_forward(&[1.0; 32], 2, Wavelet::Haar).unwrap();
        p.details[1].pop();
        assert!(matches!(dwt_inverse(&p), Err(TransformError::Shape(_))));
    }

    #[test]
    fn random_1024_round_trip() {
        let mut rng = crate::rng::seeded(99);
        let x: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for w in [Wavelet::Haar, Wavelet::Daubechies4] {
            let p = dwt_forward(&x, 4, w).unwrap();
            assert!(max_abs_diff(&dwt_inverse(&p).unwrap(), &x) < 1e-9);
        }
    }

    #[test]
    fn zeroed_approximation_reanalyses_to_zero() {
        let mut rng = crate::rng::seeded(4);
        let x: Vec<f64> = (0..777).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = dwt_forward(&x, 4, Wavelet::Daubechies4).unwrap();
        let sf = dwt_inverse_padded(&p.details_only()).unwrap();
        let again = dwt_forward(&sf, 4, Wavelet::Daubechies4).unwrap();
        assert!(again.approx.iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn plane_round_trip() {
        let mut rng = crate::rng::seeded(5);
        let (w, h) = (37, 29);
        let plane: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..255.0)).collect();
        for wav in [Wavelet::Haar, Wavelet::Daubechies4] {
            let t = Dwt2::forward(&plane, w, h, 3, wav).unwrap();
            assert_eq!(t.approx_dims(), (5, 4));
            assert!(max_abs_diff(&t.inverse(), &plane) < 1e-9);
        }
    }

    #[test]
    fn plane_energy_preserved_and_constant_in_approx() {
        let plane = vec![3.0; 32 * 16];
        let t = Dwt2::forward(&plane, 32, 16, 2, Wavelet::Daubechies4).unwrap();
        let energy: f64 = t.coeffs.iter().map(|v| v * v).sum();
        let approx_energy: f64 = t.approx().iter().map(|v| v * v).sum();
        assert!((energy - 9.0 * 512.0).abs() < 1e-8);
        assert!((approx_energy - energy).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn perfect_reconstruction_and_energy(
            x in proptest::collection::vec(-10.0f64..10.0, 16..400),
            levels in 1u8..5,
            haar in any::<bool>(),
        ) {
            let w = if haar { Wavelet::Haar } else { Wavelet::Daubechies4 };
            let p = dwt_forward(&x, levels, w).unwrap();
            let back = dwt_inverse(&p).unwrap();
            prop_assert!(max_abs_diff(&back, &x) < 1e-9);
            let (padded, _) = pad_symmetric(&x, 1 << levels);
            let e_in: f64 = padded.iter().map(|v| v * v).sum();
            let e_out: f64 = p.approx.iter().chain(p.details.iter().flatten()).map(|v| v * v).sum();
            prop_assert!((e_in - e_out).abs() <= 1e-9 * e_in.max(1e-300));
        }
    }
}
