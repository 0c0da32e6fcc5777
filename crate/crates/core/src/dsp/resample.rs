use std::f64::consts::PI;

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side.
const ZERO_CROSSINGS: f64 = 16.0;
/// Low-pass cutoff as a fraction of the output Nyquist frequency.
const CUTOFF: f64 = 0.9;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resample to 16 kHz with a Blackman-windowed sinc low-pass at 90% of the
/// output Nyquist. Each output tap set is normalized to unit sum, so DC
/// passes unchanged. Only downsampling (or identity) is supported.
pub fn resample_to_16k(samples: &[f64], src_rate_hz: u32) -> Result<Vec<f64>> {
    if src_rate_hz < SAMPLE_RATE {
        return Err(Error::UnsupportedRate(src_rate_hz));
    }
    if src_rate_hz == SAMPLE_RATE {
        return Ok(samples.to_vec());
    }
    let ratio = src_rate_hz as f64 / SAMPLE_RATE as f64;
    let out_len = (samples.len() as u64 * SAMPLE_RATE as u64 / src_rate_hz as u64) as usize;
    // cutoff in cycles per input sample
    let fc = CUTOFF * 0.5 / ratio;
    let half = ZERO_CROSSINGS / (2.0 * fc);
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let centre = j as f64 * ratio;
        let lo = (centre - half).ceil().max(0.0) as usize;
        let hi = ((centre + half).floor() as usize).min(samples.len().saturating_sub(1));
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (k, x) in samples.iter().enumerate().take(hi + 1).skip(lo) {
            let d = k as f64 - centre;
            let win = 0.42 + 0.5 * (PI * d / half).cos() + 0.08 * (2.0 * PI * d / half).cos();
            let w = sinc(2.0 * fc * d) * win;
            acc += w * x;
            wsum += w;
        }
        out.push(if wsum != 0.0 { acc / wsum } else { 0.0 });
    }
    Ok(out)
}
