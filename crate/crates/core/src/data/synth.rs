//! Seeded generator of harmonic "vessel" recordings with auxiliary tags.
//!
//! Each class is a harmonic series with its own fundamental and harmonic
//! profile, optionally amplitude modulated. Tags change the waveform:
//! `far` attenuates and low-passes the harmonics, `deep` tilts the harmonic
//! profile downwards and adds a slow fade, and the wind level scales the
//! ambient noise. Tags are
//! drawn independently of the class; annotations can then be withheld at a
//! configurable rate per field without changing the audio.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRow};
use crate::dsp::write_wav_pcm16;
use crate::error::{Error, Result};
use crate::text::AnnotationRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub name: String,
    pub f0_hz: f64,
    /// Relative amplitude of harmonics 1, 2, 3, ...
    pub harmonics: Vec<f64>,
    #[serde(default)]
    pub am_rate_hz: f64,
    #[serde(default)]
    pub am_depth: f64,
}

impl ClassSignature {
    pub fn new(name: &str, f0_hz: f64, harmonics: &[f64]) -> Self {
        Self {
            name: name.into(),
            f0_hz,
            harmonics: harmonics.to_vec(),
            am_rate_hz: 0.0,
            am_depth: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuxEffects {
    /// Amplitude factor of a distant source.
    pub far_gain: f64,
    /// Corner of the two-pole low-pass a distant source goes through.
    pub far_cutoff_hz: f64,
    /// Harmonic `k` of a deep-channel recording is scaled by `k^-deep_tilt`.
    pub deep_tilt: f64,
    /// Slow fading of a deep-channel recording: rate and depth of the
    /// amplitude modulation.
    pub deep_fade_hz: f64,
    pub deep_fade_depth: f64,
    /// Ambient noise multiplier per wind value.
    pub wind_noise: BTreeMap<String, f64>,
}

impl Default for AuxEffects {
    fn default() -> Self {
        Self {
            far_gain: 0.3,
            far_cutoff_hz: 700.0,
            deep_tilt: 1.0,
            deep_fade_hz: 4.0,
            deep_fade_depth: 0.6,
            wind_noise: [("calm", 1.0), ("breezy", 2.0), ("windy", 4.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

/// Fraction of recordings whose annotation omits each field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MissingRates {
    pub distance: f64,
    pub depth: f64,
    pub location: f64,
    pub wind: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: Vec<ClassSignature>,
    pub recordings_per_class: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    /// Standard deviation of calm-weather ambient noise.
    pub noise_level: f64,
    /// Relative spread of each recording's fundamental; also enables random
    /// harmonic phases when positive.
    pub variability: f64,
    /// RMS of a close, shallow recording before noise.
    pub signal_rms: f64,
    pub distances: Vec<String>,
    pub depths: Vec<String>,
    pub locations: Vec<String>,
    pub winds: Vec<String>,
    pub effects: AuxEffects,
    pub missing: MissingRates,
    pub seed: u64,
    /// Prepended to every source id, to keep separately generated sets apart.
    pub source_prefix: String,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                ClassSignature::new("Fishboat", 180.0, &[1.0, 0.6, 0.4, 0.25, 0.15, 0.1]),
                ClassSignature::new("Motorboat", 310.0, &[1.0, 0.3, 0.8, 0.2, 0.5]),
                ClassSignature::new(
                    "Passengers",
                    115.0,
                    &[0.5, 1.0, 0.3, 0.7, 0.2, 0.4, 0.1, 0.2],
                ),
            ],
            recordings_per_class: 20,
            duration_s: 1.0,
            sample_rate_hz: 16_000,
            noise_level: 0.02,
            variability: 0.03,
            signal_rms: 0.1,
            distances: strings(&["close", "far"]),
            depths: strings(&["shallow", "deep"]),
            locations: strings(&["harbour", "estuary"]),
            winds: strings(&["calm", "breezy", "windy"]),
            effects: AuxEffects::default(),
            missing: MissingRates::default(),
            seed: 0,
            source_prefix: String::new(),
        }
    }
}

impl SynthSpec {
    /// Two classes on one fundamental whose harmonic slopes differ by a
    /// factor `1/k`, exactly the tilt the `deep` tag applies: a bright
    /// source in deep water looks like a dull one in shallow water.
    pub fn confusable() -> Self {
        let bright = [1.0, 0.8, 0.6, 0.5, 0.4, 0.3];
        let dull: Vec<f64> = bright
            .iter()
            .enumerate()
            .map(|(k, h)| h / (k + 1) as f64)
            .collect();
        Self {
            classes: vec![
                ClassSignature::new("Pbright", 200.0, &bright),
                ClassSignature::new("Qdull", 200.0, &dull),
            ],
            recordings_per_class: 24,
            ..Self::default()
        }
    }

    /// Nine vessel types between 90 and 500 Hz, a broader corpus to pretrain
    /// on before transferring to unseen types.
    pub fn nine_class() -> Self {
        let types: [(&str, f64, &[f64]); 9] = [
            ("Dredger", 90.0, &[1.0, 0.9, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2]),
            ("Fishboat", 180.0, &[1.0, 0.6, 0.3, 0.15]),
            ("Motorboat", 310.0, &[1.0, 0.8, 0.5]),
            ("Musselboat", 130.0, &[0.5, 1.0, 0.3, 0.6, 0.2]),
            ("Naturalnoise", 500.0, &[0.3]),
            ("Oceanliner", 110.0, &[1.0, 0.3, 0.7, 0.2, 0.5, 0.1]),
            ("Passengers", 115.0, &[1.0, 0.8, 0.6, 0.5, 0.4, 0.3]),
            ("RORO", 200.0, &[0.4, 0.6, 1.0, 0.5, 0.3]),
            ("Sailboat", 260.0, &[1.0, 0.2, 0.6, 0.1]),
        ];
        Self {
            classes: types
                .iter()
                .map(|(n, f, h)| ClassSignature::new(n, *f, h))
                .collect(),
            recordings_per_class: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.recordings_per_class == 0 {
            return Err(Error::Config(
                "synthetic spec needs classes and recordings".into(),
            ));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) || c.name.trim().is_empty() {
                return Err(Error::Config(format!(
                    "class name `{}` empty or repeated",
                    c.name
                )));
            }
            if !(c.f0_hz > 0.0) || c.harmonics.is_empty() || c.harmonics.iter().all(|h| *h == 0.0) {
                return Err(Error::Config(format!(
                    "class `{}` has no harmonic content",
                    c.name
                )));
            }
            if c.f0_hz * c.harmonics.len() as f64 * (1.0 + 3.0 * self.variability) >= nyquist {
                return Err(Error::Config(format!(
                    "class `{}` has harmonics above the Nyquist frequency",
                    c.name
                )));
            }
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.f0_hz == b.f0_hz && a.harmonics == b.harmonics && a.am_rate_hz == b.am_rate_hz
                {
                    return Err(Error::Config(format!(
                        "classes `{}` and `{}` share one signature",
                        a.name, b.name
                    )));
                }
            }
        }
        for (what, v) in [
            ("distances", &self.distances),
            ("depths", &self.depths),
            ("locations", &self.locations),
            ("winds", &self.winds),
        ] {
            if v.is_empty() {
                return Err(Error::Config(format!("no {what} to draw from")));
            }
        }
        for w in &self.winds {
            if !self.effects.wind_noise.contains_key(w) {
                return Err(Error::Config(format!(
                    "wind value `{w}` has no noise multiplier"
                )));
            }
        }
        let m = &self.missing;
        if [m.distance, m.depth, m.location, m.wind]
            .iter()
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Config("missing rates must lie in [0, 1]".into()));
        }
        if !(self.duration_s > 0.0) || self.sample_rate_hz == 0 || self.noise_level < 0.0 {
            return Err(Error::Config(
                "duration, rate and noise level out of range".into(),
            ));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.classes.len() * self.recordings_per_class
    }
}

/// One generated recording: its audio, the tags that shaped it and the
/// (possibly incomplete) annotation that is published.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    pub source_id: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub truth: AnnotationRecord,
    pub annotation: AnnotationRecord,
}

/// Magnitude of a two-pole low-pass at `f`.
fn low_pass(f: f64, corner: f64) -> f64 {
    1.0 / (1.0 + (f / corner).powi(2))
}

fn render(
    spec: &SynthSpec,
    class: &ClassSignature,
    tags: &AnnotationRecord,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let rate = spec.sample_rate_hz as f64;
    let n = (spec.duration_s * rate).round() as usize;
    let fx = &spec.effects;
    let far = tags.distance.as_deref() == Some("far");
    let deep = tags.depth.as_deref() == Some("deep");
    let f0 = if spec.variability > 0.0 {
        let jitter = Normal::new(0.0, spec.variability).expect("positive std");
        class.f0_hz * (1.0 + jitter.sample(rng)).max(0.5)
    } else {
        class.f0_hz
    };
    let base_power: f64 = class.harmonics.iter().map(|h| h * h / 2.0).sum();
    let gain = spec.signal_rms / base_power.sqrt();
    let amps: Vec<f64> = class
        .harmonics
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let k = (i + 1) as f64;
            let mut a = h * gain;
            if deep {
                a *= k.powf(-fx.deep_tilt);
            }
            if far {
                a *= fx.far_gain * low_pass(k * f0, fx.far_cutoff_hz);
            }
            a
        })
        .collect();
    let random_phase = spec.variability > 0.0;
    let phases: Vec<f64> = amps
        .iter()
        .map(|_| {
            if random_phase {
                rng.random_range(0.0..TAU)
            } else {
                0.0
            }
        })
        .collect();
    let am_phase = if random_phase {
        rng.random_range(0.0..TAU)
    } else {
        0.0
    };
    let fade_phase = if random_phase {
        rng.random_range(0.0..TAU)
    } else {
        0.0
    };
    let fade_depth = if deep { fx.deep_fade_depth } else { 0.0 };
    let wind = tags
        .wind
        .as_deref()
        .and_then(|w| fx.wind_noise.get(w))
        .copied()
        .unwrap_or(1.0);
    let noise_std = spec.noise_level * wind;
    let noise = (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("positive std"));
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let tone: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, p))| a * (TAU * (k + 1) as f64 * f0 * t + p).sin())
                .sum();
            let am = 1.0 + class.am_depth * (TAU * class.am_rate_hz * t + am_phase).sin();
            let fade = 1.0 + fade_depth * (TAU * fx.deep_fade_hz * t + fade_phase).sin();
            tone * am * fade + noise.as_ref().map_or(0.0, |d| d.sample(rng))
        })
        .collect()
}

/// Indices (out of `n`) whose annotation drops a field: exactly
/// `round(rate * n)` of them.
fn missing_set(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate((rate * n as f64).round() as usize);
    idx.into_iter().collect()
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SynthRecording>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.total());
    for class in &spec.classes {
        for i in 0..spec.recordings_per_class {
            let pick = |v: &[String], rng: &mut ChaCha8Rng| {
                v.choose(rng).expect("validated non-empty").clone()
            };
            let truth = AnnotationRecord::new(class.name.clone())
                .with("distance", pick(&spec.distances, &mut rng))
                .with("depth", pick(&spec.depths, &mut rng))
                .with("location", pick(&spec.locations, &mut rng))
                .with("wind", pick(&spec.winds, &mut rng));
            let samples = render(spec, class, &truth, &mut rng);
            out.push(SynthRecording {
                source_id: format!(
                    "{}{}-{:03}",
                    spec.source_prefix,
                    class.name.to_lowercase(),
                    i
                ),
                samples,
                sample_rate_hz: spec.sample_rate_hz,
                annotation: truth.clone(),
                truth,
            });
        }
    }
    let n = out.len();
    let m = spec.missing;
    for (field, rate) in [
        ("distance", m.distance),
        ("depth", m.depth),
        ("location", m.location),
        ("wind", m.wind),
    ] {
        for i in missing_set(n, rate, &mut rng) {
            out[i].annotation = out[i].annotation.clone().without(field);
        }
    }
    Ok(out)
}

/// Manifest row describing `rec` stored at `audio_path`.
pub fn manifest_row(rec: &SynthRecording, audio_path: PathBuf) -> ManifestRow {
    let a = &rec.annotation;
    ManifestRow {
        audio_path,
        source_id: rec.source_id.clone(),
        vessel_type: a.vessel_type.clone(),
        distance: a.distance.clone(),
        depth: a.depth.clone(),
        location: a.location.clone(),
        wind: a.wind.clone(),
        sample_rate_hz: Some(rec.sample_rate_hz),
        extra: a.extra.clone(),
    }
}

/// Generate and write `<source_id>.wav` files plus `manifest.jsonl` into
/// `out_dir`.
pub fn write_synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let recs = synth_generate(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::with_capacity(recs.len());
    for rec in &recs {
        let name = PathBuf::from(format!("{}.wav", rec.source_id));
        write_wav_pcm16(&out_dir.join(&name), &rec.samples, rec.sample_rate_hz)?;
        rows.push(manifest_row(rec, name));
    }
    let manifest = DatasetManifest {
        dir: out_dir.to_path_buf(),
        rows,
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_missing_rate() {
        let spec = SynthSpec {
            missing: MissingRates {
                wind: 0.15,
                ..MissingRates::default()
            },
            duration_s: 0.05,
            ..SynthSpec::default()
        };
        let recs = synth_generate(&spec).unwrap();
        assert_eq!(recs.len(), 60);
        assert_eq!(
            recs.iter().filter(|r| r.annotation.wind.is_none()).count(),
            9
        );
        assert!(recs
            .iter()
            .all(|r| r.truth.wind.is_some() && r.annotation.distance.is_some()));
        let ids: BTreeSet<_> = recs.iter().map(|r| &r.source_id).collect();
        assert_eq!(ids.len(), 60);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec {
            duration_s: 0.1,
            ..SynthSpec::default()
        };
        assert_eq!(
            synth_generate(&spec).unwrap(),
            synth_generate(&spec).unwrap()
        );
        let other = SynthSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            synth_generate(&spec).unwrap(),
            synth_generate(&other).unwrap()
        );
    }

    #[test]
    fn noiseless_same_tags_give_identical_waveforms() {
        let spec = SynthSpec {
            noise_level: 0.0,
            variability: 0.0,
            duration_s: 0.1,
            recordings_per_class: 30,
            ..SynthSpec::default()
        };
        let recs = synth_generate(&spec).unwrap();
        let key = |r: &SynthRecording| {
            let t = &r.truth;
            (t.vessel_type.clone(), t.distance.clone(), t.depth.clone())
        };
        let mut found = false;
        for (i, a) in recs.iter().enumerate() {
            for b in &recs[i + 1..] {
                if key(a) == key(b) {
                    assert_eq!(a.samples, b.samples);
                    found = true;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn far_is_quieter_and_duller() {
        let spec = SynthSpec {
            noise_level: 0.0,
            variability: 0.0,
            duration_s: 0.2,
            ..SynthSpec::default()
        };
        let class = &spec.classes[1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let close = render(
            &spec,
            class,
            &AnnotationRecord::new("x").with("distance", "close"),
            &mut rng,
        );
        let far = render(
            &spec,
            class,
            &AnnotationRecord::new("x").with("distance", "far"),
            &mut rng,
        );
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms(&close) - 0.1).abs() < 0.01);
        assert!(rms(&far) < 0.3 * rms(&close));
    }

    #[test]
    fn deep_bright_mimics_shallow_dull() {
        let mut spec = SynthSpec {
            noise_level: 0.0,
            variability: 0.0,
            duration_s: 0.05,
            ..SynthSpec::confusable()
        };
        spec.effects.deep_fade_depth = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tags = |depth| AnnotationRecord::new("x").with("depth", depth);
        let p = render(&spec, &spec.classes[0], &tags("deep"), &mut rng);
        let q = render(&spec, &spec.classes[1], &tags("shallow"), &mut rng);
        let ratio = p[37] / q[37];
        assert!(p.iter().zip(&q).all(|(a, b)| (a - ratio * b).abs() < 1e-12));
    }

    #[test]
    fn invalid_specs() {
        let mut s = SynthSpec::default();
        s.classes[1] = s.classes[0].clone();
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.classes[0].f0_hz = 3000.0;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.missing.wind = 1.5;
        assert!(s.validate().is_err());
    }
}
