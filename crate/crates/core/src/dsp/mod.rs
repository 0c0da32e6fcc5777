//! Time-frequency front ends: framing, STFT, Mel filter banks, the learnable
//! complex frequency B-spline wavelet transform, resampling and WAV I/O.

mod frame;
mod resample;
mod stft;
mod wav;
pub mod wavelet;

use serde::{Deserialize, Serialize};

pub use frame::{frame_signal, hann_window};
pub use resample::resample_to_16k;
pub(crate) use stft::mel_with;
pub use stft::{mel_filterbank, mel_spectrogram, stft_spectrogram, stft_with, StftConfig};
pub use wav::{read_wav_mono, write_wav_pcm16};
pub use wavelet::{
    fbsp_kernel, wavelet_spectrogram, FbspParams, ScaleGrid, WaveletConfig, WaveletParams,
};

/// Rate every segment is brought to before feature extraction.
pub const SAMPLE_RATE: u32 = 16_000;

/// A fixed-length mono window cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
    pub segment_index: usize,
}

impl AudioSegment {
    pub fn new(samples: Vec<f64>, source_id: impl Into<String>, segment_index: usize) -> Self {
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE,
            source_id: source_id.into(),
            segment_index,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrogramKind {
    Stft,
    Mel,
    Wavelet,
}

/// A `frames x bins` grid, row-major. For wavelet grids the bins are scales in
/// ascending order and `bin_values` holds their pseudo-frequencies (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub grid: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub kind: SpectrogramKind,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub bin_values: Vec<f64>,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.grid[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.grid[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn is_finite(&self) -> bool {
        self.grid.iter().all(|v| v.is_finite())
    }

    /// Element-wise `ln(v + eps)`.
    pub fn to_log(&self, eps: f64) -> Spectrogram {
        Spectrogram {
            grid: self.grid.iter().map(|v| (v + eps).ln()).collect(),
            ..self.clone()
        }
    }
}
