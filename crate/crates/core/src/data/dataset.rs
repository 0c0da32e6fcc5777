use std::collections::BTreeSet;
use std::path::Path;

use super::manifest::DatasetManifest;
use super::segment::{segment_audio, SegmentConfig};
use super::synth::SynthRecording;
use crate::dsp::{read_wav_mono, resample_to_16k, AudioSegment, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::text::{AnnotationRecord, TemplateSpec};

/// A 16 kHz segment with the annotation of its recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub segment: AudioSegment,
    pub annotation: AnnotationRecord,
}

impl Example {
    pub fn label(&self) -> &str {
        &self.annotation.vessel_type
    }

    pub fn source_id(&self) -> &str {
        &self.segment.source_id
    }

    /// Render under `template`; clauses with no annotation are dropped.
    pub fn sentence(&self, template: &TemplateSpec) -> Result<String> {
        template.render(&self.annotation)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Distinct source ids with their vessel type, first-seen order.
    pub fn sources(&self) -> Vec<(String, String)> {
        let mut seen = BTreeSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.source_id().to_string()))
            .map(|e| (e.source_id().to_string(), e.label().to_string()))
            .collect()
    }

    /// Vessel types in first-seen order.
    pub fn labels(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.label().to_string()))
            .map(|e| e.label().to_string())
            .collect()
    }

    pub fn filter(&self, keep: impl Fn(&Example) -> bool) -> Dataset {
        Dataset {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn from_sources(&self, sources: &BTreeSet<String>) -> Dataset {
        self.filter(|e| sources.contains(e.source_id()))
    }

    /// Rendered sentence of every example.
    pub fn sentences(&self, template: &TemplateSpec) -> Result<Vec<String>> {
        self.examples.iter().map(|e| e.sentence(template)).collect()
    }

    /// Build from in-memory recordings (already at 16 kHz or resampled here).
    pub fn from_recordings(recs: &[SynthRecording], seg: &SegmentConfig) -> Result<Dataset> {
        let mut examples = Vec::new();
        for r in recs {
            let samples = to_16k(&r.samples, r.sample_rate_hz)?;
            for segment in segment_audio(&samples, &r.source_id, SAMPLE_RATE, seg)? {
                examples.push(Example {
                    segment,
                    annotation: r.annotation.clone(),
                });
            }
        }
        Ok(Dataset { examples })
    }
}

fn to_16k(samples: &[f64], rate: u32) -> Result<Vec<f64>> {
    if rate == SAMPLE_RATE {
        Ok(samples.to_vec())
    } else {
        resample_to_16k(samples, rate)
    }
}

/// Read every WAV of `manifest`, resample to 16 kHz and segment.
pub fn ingest_manifest(manifest: &DatasetManifest, seg: &SegmentConfig) -> Result<Dataset> {
    let mut examples = Vec::new();
    for row in &manifest.rows {
        let path = manifest.resolve(row);
        let (samples, rate) = read_wav_mono(&path)?;
        if let Some(declared) = row.sample_rate_hz {
            if declared != rate {
                return Err(Error::data(
                    &path,
                    format!("manifest declares {declared} Hz but the file is {rate} Hz"),
                ));
            }
        }
        let samples = to_16k(&samples, rate).map_err(|e| match e {
            Error::UnsupportedRate(r) => {
                Error::data(&path, format!("unsupported sample rate {r} Hz"))
            }
            other => other,
        })?;
        let annotation = row.annotation();
        for segment in segment_audio(&samples, &row.source_id, SAMPLE_RATE, seg)? {
            examples.push(Example {
                segment,
                annotation: annotation.clone(),
            });
        }
    }
    Ok(Dataset { examples })
}

pub fn ingest(manifest_path: &Path, seg: &SegmentConfig) -> Result<Dataset> {
    ingest_manifest(&DatasetManifest::load(manifest_path)?, seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{write_synth_dataset, MissingRates, SynthSpec};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            recordings_per_class: 4,
            duration_s: 0.5,
            missing: MissingRates {
                wind: 0.25,
                ..MissingRates::default()
            },
            ..SynthSpec::default()
        }
    }

    fn half_second() -> SegmentConfig {
        SegmentConfig {
            length_s: 0.25,
            hop_s: 0.125,
        }
    }

    #[test]
    fn ingest_written_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_synth_dataset(&small_spec(), dir.path()).unwrap();
        let ds = ingest(&dir.path().join("manifest.jsonl"), &half_second()).unwrap();
        assert_eq!(ds.len(), 12 * 3);
        assert_eq!(ds.sources().len(), 12);
        assert_eq!(ds.labels().len(), 3);
        let template = TemplateSpec::default_training();
        let no_wind = ds
            .examples
            .iter()
            .find(|e| e.annotation.wind.is_none())
            .unwrap();
        let s = no_wind.sentence(&template).unwrap();
        assert!(s.starts_with("The sound belongs to"));
        assert!(!s.contains("wind"));
        let with_wind = ds
            .examples
            .iter()
            .find(|e| e.annotation.wind.is_some())
            .unwrap();
        assert!(with_wind.sentence(&template).unwrap().contains("wind"));
    }

    #[test]
    fn synthetic_wavs_are_byte_identical_across_runs() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = write_synth_dataset(&small_spec(), a.path()).unwrap();
        write_synth_dataset(&small_spec(), b.path()).unwrap();
        for row in &m.rows {
            let x = std::fs::read(a.path().join(&row.audio_path)).unwrap();
            let y = std::fs::read(b.path().join(&row.audio_path)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.jsonl")).unwrap(),
            std::fs::read(b.path().join("manifest.jsonl")).unwrap()
        );
    }

    #[test]
    fn stereo_is_rejected_with_the_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("two.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&wav, spec).unwrap();
        for _ in 0..16_000 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let manifest = dir.path().join("m.jsonl");
        std::fs::write(
            &manifest,
            "{\"audio_path\":\"two.wav\",\"source_id\":\"s\",\"vessel_type\":\"RORO\"}\n",
        )
        .unwrap();
        let err = ingest(&manifest, &half_second()).unwrap_err().to_string();
        assert!(err.contains("two.wav"), "{err}");
    }

    #[test]
    fn resampled_input_is_segmented_at_16k() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        let tone: Vec<f64> = (0..32_000).map(|i| 0.1 * (i as f64 * 0.05).sin()).collect();
        crate::dsp::write_wav_pcm16(&wav, &tone, 32_000).unwrap();
        let manifest = dir.path().join("m.jsonl");
        std::fs::write(
            &manifest,
            "{\"audio_path\":\"a.wav\",\"source_id\":\"s\",\"vessel_type\":\"RORO\",\"sample_rate_hz\":32000}\n",
        )
        .unwrap();
        let ds = ingest(
            &manifest,
            &SegmentConfig {
                length_s: 0.5,
                hop_s: 0.25,
            },
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.examples.iter().all(|e| e.segment.samples.len() == 8000));
    }
}
