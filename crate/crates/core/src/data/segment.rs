use serde::{Deserialize, Serialize};

use crate::dsp::AudioSegment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub length_s: f64,
    pub hop_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            length_s: 30.0,
            hop_s: 15.0,
        }
    }
}

impl SegmentConfig {
    pub fn lengths(&self, rate: u32) -> Result<(usize, usize)> {
        let len = (self.length_s * rate as f64).round() as usize;
        let hop = (self.hop_s * rate as f64).round() as usize;
        if len == 0 || hop == 0 {
            return Err(Error::Config(format!(
                "segment length {} s and hop {} s must both be at least one sample",
                self.length_s, self.hop_s
            )));
        }
        Ok((len, hop))
    }
}

/// Number of windows of `len` every `hop` samples that fit in `n` samples.
pub fn segment_count(n: usize, len: usize, hop: usize) -> usize {
    if n < len {
        0
    } else {
        (n - len) / hop + 1
    }
}

/// Cut a 16 kHz recording into overlapping fixed-length segments. A
/// recording shorter than one segment yields nothing (with a warning).
pub fn segment_audio(
    samples: &[f64],
    source_id: &str,
    sample_rate_hz: u32,
    cfg: &SegmentConfig,
) -> Result<Vec<AudioSegment>> {
    let (len, hop) = cfg.lengths(sample_rate_hz)?;
    let count = segment_count(samples.len(), len, hop);
    if count == 0 {
        log::warn!(
            "recording {source_id} lasts {:.2} s, shorter than one {} s segment; skipped",
            samples.len() as f64 / sample_rate_hz as f64,
            cfg.length_s
        );
    }
    Ok((0..count)
        .map(|i| AudioSegment {
            samples: samples[i * hop..i * hop + len].to_vec(),
            sample_rate_hz,
            source_id: source_id.to_string(),
            segment_index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seconds(s: f64) -> Vec<f64> {
        vec![0.0; (s * 100.0) as usize]
    }

    fn cut(s: f64) -> Vec<AudioSegment> {
        segment_audio(&seconds(s), "r", 100, &SegmentConfig::default()).unwrap()
    }

    #[test]
    fn default_protocol_counts() {
        assert_eq!(cut(60.0).len(), 3);
        assert_eq!(cut(30.0).len(), 1);
        assert_eq!(cut(29.0).len(), 0);
        let segs = cut(60.0);
        assert_eq!(segs[1].segment_index, 1);
        assert_eq!(segs[2].samples.len(), 3000);
    }

    proptest! {
        #[test]
        fn count_formula_for_any_duration(d in 0u32..400) {
            let n = cut(d as f64).len();
            let want = if d >= 30 { (d as usize - 30) / 15 + 1 } else { 0 };
            prop_assert_eq!(n, want);
        }
    }
}
