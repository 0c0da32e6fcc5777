use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::frame::{frame_signal, hann_window};
use super::{AudioSegment, Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 100.0,
            frame_shift_ms: 50.0,
        }
    }
}

/// Magnitude STFT with the default 100 ms / 50 ms framing.
pub fn stft_spectrogram(segment: &AudioSegment) -> Result<Spectrogram> {
    stft_with(segment, &StftConfig::default())
}

fn power_or_magnitude(
    segment: &AudioSegment,
    cfg: &StftConfig,
    power: bool,
) -> Result<Spectrogram> {
    let frames = frame_signal(segment, cfg.frame_length_ms, cfg.frame_shift_ms)?;
    let len = frames[0].len();
    let fft_size = len.next_power_of_two();
    let bins = fft_size / 2 + 1;
    let window = hann_window(len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let mut grid = Vec::with_capacity(frames.len() * bins);
    for frame in &frames {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, (x, w)) in frame.iter().zip(&window).enumerate() {
            buf[i].re = x * w;
        }
        fft.process(&mut buf);
        grid.extend(
            buf[..bins]
                .iter()
                .map(|c| if power { c.norm_sqr() } else { c.norm() }),
        );
    }
    let rate = segment.sample_rate_hz as f64;
    Ok(Spectrogram {
        grid,
        frames: frames.len(),
        bins,
        kind: SpectrogramKind::Stft,
        frame_length_ms: cfg.frame_length_ms,
        frame_shift_ms: cfg.frame_shift_ms,
        bin_values: (0..bins)
            .map(|k| k as f64 * rate / fft_size as f64)
            .collect(),
    })
}

/// Hann-windowed magnitude STFT; frames run along the first axis and the
/// FFT size is the frame length rounded up to a power of two.
pub fn stft_with(segment: &AudioSegment, cfg: &StftConfig) -> Result<Spectrogram> {
    power_or_magnitude(segment, cfg, false)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale between 0 Hz and
/// Nyquist, evaluated at FFT bin centre frequencies. Returns an
/// `n_mels x (fft_size/2 + 1)` row-major matrix.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    if n_mels == 0 || n_mels > bins {
        return Err(Error::Config(format!(
            "n_mels must be in 1..={bins} for FFT size {fft_size}, got {n_mels}"
        )));
    }
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut m = vec![0.0; n_mels * bins];
    for j in 0..n_mels {
        let (lo, c, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
            if w > 0.0 {
                m[j * bins + k] = w;
            }
        }
        if m[j * bins..(j + 1) * bins].iter().all(|w| *w == 0.0) {
            // narrower than a bin: give the whole weight to the nearest bin
            let k = ((c / bin_hz).round() as usize).min(bins - 1);
            m[j * bins + k] = 1.0;
        }
    }
    Ok(m)
}

/// STFT power projected through `n_mels` triangular mel filters.
pub fn mel_spectrogram(segment: &AudioSegment, n_mels: usize) -> Result<Spectrogram> {
    mel_with(segment, n_mels, &StftConfig::default())
}

pub(crate) fn mel_with(
    segment: &AudioSegment,
    n_mels: usize,
    cfg: &StftConfig,
) -> Result<Spectrogram> {
    let power = power_or_magnitude(segment, cfg, true)?;
    let fft_size = (power.bins - 1) * 2;
    let filters = mel_filterbank(n_mels, fft_size, segment.sample_rate_hz)?;
    let mut grid = vec![0.0; power.frames * n_mels];
    for t in 0..power.frames {
        let row = power.frame(t);
        for j in 0..n_mels {
            let f = &filters[j * power.bins..(j + 1) * power.bins];
            grid[t * n_mels + j] = f.iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }
    let top = hz_to_mel(segment.sample_rate_hz as f64 / 2.0);
    Ok(Spectrogram {
        grid,
        frames: power.frames,
        bins: n_mels,
        kind: SpectrogramKind::Mel,
        frame_length_ms: cfg.frame_length_ms,
        frame_shift_ms: cfg.frame_shift_ms,
        bin_values: (1..=n_mels)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn tone(freq: f64, n: usize) -> AudioSegment {
        AudioSegment::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            "tone",
            0,
        )
    }

    #[test]
    fn sine_peaks_at_its_bin() {
        let s = stft_spectrogram(&tone(1000.0, 16_000)).unwrap();
        assert_eq!(s.frames, 19);
        assert_eq!(s.bins, 1025);
        let width = 16_000.0 / 2048.0;
        for t in 0..s.frames {
            let row = s.frame(t);
            let k = (0..s.bins)
                .max_by(|a, b| row[*a].total_cmp(&row[*b]))
                .unwrap();
            assert!(
                (s.bin_values[k] - 1000.0).abs() <= width,
                "frame {t}: bin {k}"
            );
        }
    }

    #[test]
    fn dc_lands_in_bin_zero() {
        let seg = AudioSegment::new(vec![0.25; 4000], "dc", 0);
        let s = stft_spectrogram(&seg).unwrap();
        for t in 0..s.frames {
            let row = s.frame(t);
            let k = (0..s.bins)
                .max_by(|a, b| row[*a].total_cmp(&row[*b]))
                .unwrap();
            assert_eq!(k, 0);
        }
    }

    #[test]
    fn silence_is_zero() {
        let seg = AudioSegment::new(vec![0.0; 4000], "z", 0);
        assert!(stft_spectrogram(&seg)
            .unwrap()
            .grid
            .iter()
            .all(|v| *v == 0.0));
        assert!(mel_spectrogram(&seg, 300)
            .unwrap()
            .grid
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn mel_filters_are_positive_and_contiguous() {
        let m = mel_filterbank(300, 2048, 16_000).unwrap();
        let bins = 1025;
        for j in 0..300 {
            let row = &m[j * bins..(j + 1) * bins];
            assert!(row.iter().sum::<f64>() > 0.0, "filter {j} empty");
            let nz: Vec<usize> = (0..bins).filter(|k| row[*k] > 0.0).collect();
            assert_eq!(
                nz.last().unwrap() - nz[0] + 1,
                nz.len(),
                "filter {j} has gaps"
            );
        }
    }

    #[test]
    fn mel_rejects_too_many_filters() {
        assert!(matches!(
            mel_filterbank(1026, 2048, 16_000),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            mel_filterbank(0, 2048, 16_000),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mel_default_shape() {
        let s = mel_spectrogram(&tone(440.0, 8000), 300).unwrap();
        assert_eq!(s.bins, 300);
        assert_eq!(s.kind, SpectrogramKind::Mel);
        assert!(s.is_finite() && s.grid.iter().all(|v| *v >= 0.0));
    }
}
