use std::f64::consts::PI;

use super::AudioSegment;
use crate::error::{Error, Result};

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Split a segment into frames of `frame_length_ms` every `frame_shift_ms`.
/// Samples after the last full frame are discarded.
pub fn frame_signal(
    segment: &AudioSegment,
    frame_length_ms: f64,
    frame_shift_ms: f64,
) -> Result<Vec<&[f64]>> {
    let len = ms_to_samples(frame_length_ms, segment.sample_rate_hz);
    let shift = ms_to_samples(frame_shift_ms, segment.sample_rate_hz);
    if len == 0 || shift == 0 {
        return Err(Error::Config(format!(
            "frame length {frame_length_ms} ms and shift {frame_shift_ms} ms must both be at least one sample"
        )));
    }
    let n = segment.samples.len();
    if n < len {
        return Err(Error::EmptyInput(format!(
            "segment {}#{} has {n} samples, shorter than one {len}-sample frame",
            segment.source_id, segment.segment_index
        )));
    }
    let count = (n - len) / shift + 1;
    Ok((0..count)
        .map(|i| &segment.samples[i * shift..i * shift + len])
        .collect())
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(n: usize) -> AudioSegment {
        AudioSegment::new(vec![0.0; n], "s", 0)
    }

    #[test]
    fn one_second_at_100_50_gives_19_frames() {
        assert_eq!(frame_signal(&seg(16_000), 100.0, 50.0).unwrap().len(), 19);
    }

    #[test]
    fn exact_frame_and_short_input() {
        assert_eq!(frame_signal(&seg(1600), 100.0, 50.0).unwrap().len(), 1);
        assert!(matches!(
            frame_signal(&seg(1599), 100.0, 50.0),
            Err(Error::EmptyInput(_))
        ));
    }

    proptest! {
        #[test]
        fn frame_count_formula(n in 1usize..5000, len_ms in 1u32..100, shift_ms in 1u32..100) {
            let l = len_ms as usize * 16;
            let s = shift_ms as usize * 16;
            let segment = seg(n);
            let r = frame_signal(&segment, len_ms as f64, shift_ms as f64);
            if n >= l {
                prop_assert_eq!(r.unwrap().len(), (n - l) / s + 1);
            } else {
                prop_assert!(r.is_err());
            }
        }
    }
}
