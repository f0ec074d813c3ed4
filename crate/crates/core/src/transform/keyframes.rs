use super::FrameContent;

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Key frames by luminance frame difference: frame 0 always, and frame `k`
/// when its mean absolute difference to frame `k − 1` exceeds
/// `threshold_factor` times the mean of all such differences.
pub fn select_keyframes(content: &FrameContent, threshold_factor: f64) -> Vec<usize> {
    let diffs: Vec<f64> = content
        .frames
        .windows(2)
        .map(|w| mean_abs_diff(&w[1].luma, &w[0].luma))
        .collect();
    let mut keys = vec![0];
    if diffs.is_empty() {
        return keys;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let threshold = threshold_factor * mean;
    keys.extend(
        diffs
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > threshold)
            .map(|(k, _)| k + 1),
    );
    keys
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Frame;

    fn flat(value: f64) -> Frame {
        Frame {
            luma: vec![value; 16],
            chroma_u: vec![0.0; 16],
            chroma_v: vec![0.0; 16],
        }
    }

    fn video(values: &[f64]) -> FrameContent {
        FrameContent::new(4, 4, 25.0, values.iter().map(|&v| flat(v)).collect()).unwrap()
    }

    #[test]
    fn identical_frames_select_only_first() {
        assert_eq!(select_keyframes(&video(&[5.0; 6]), 1.0), vec![0]);
    }

    #[test]
    fn single_frame() {
        assert_eq!(select_keyframes(&video(&[1.0]), 1.0), vec![0]);
    }

    #[test]
    fn scene_cut_is_detected() {
        let mut v = vec![10.0; 5];
        v.extend([200.0; 5]);
        let content = video(&v);
        assert_eq!(select_keyframes(&content, 1.0), vec![0, 5]);
        assert_eq!(select_keyframes(&content, 1.0), select_keyframes(&content, 1.0));
    }
}
