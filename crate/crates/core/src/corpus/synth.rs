//! Deterministic speech-like corpus.
//!
//! Speakers differ in slowly-varying traits (three formant resonators, base
//! pitch, glottal tilt, and the direction in which the formants sweep within
//! each syllable); classes differ in time-varying traits (syllable rate,
//! pitch contour, vibrato). Speakers come in pairs sharing one vocal tract
//! and differing only in sweep direction, which order-free summary
//! statistics cannot see. Every clip is a resonator-filtered pulse train plus
//! a little colored background noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{Manifest, ManifestEntry};
use super::wav::{write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub clips_per_speaker: usize,
    pub clip_seconds: f64,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            clips_per_speaker: 20,
            clip_seconds: 2.0,
            n_classes: 4,
            seed: 13,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.clips_per_speaker == 0 || self.n_classes == 0 {
            return Err(Error::Config("synth counts must all be at least 1".into()));
        }
        if !(self.clip_seconds >= 1.0) || !self.clip_seconds.is_finite() {
            return Err(Error::Config(format!(
                "clip_seconds must be >= 1.0, got {}",
                self.clip_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Voice {
    pitch_hz: f64,
    /// Relative formant excursion across a syllable; the sign is the direction.
    sweep: f64,
    formants: [(f64, f64); 3],
    tilt: f64,
}

#[derive(Clone, Debug)]
struct Pattern {
    syllable_hz: f64,
    glide: f64,
    vibrato_hz: f64,
    vibrato_depth: f64,
    duty: f64,
}

const SWEEP: f64 = 0.25;
const MAX_NOISE: f64 = 0.1;
/// Samples between formant updates during a sweep.
const SWEEP_UPDATE: usize = 32;

fn voices(spec: &SynthSpec) -> Vec<Voice> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tracts: Vec<Voice> = (0..spec.n_speakers.div_ceil(2))
        .map(|_| Voice {
            pitch_hz: rng.random_range(90.0..240.0),
            sweep: SWEEP,
            formants: [
                (rng.random_range(300.0..850.0), rng.random_range(60.0..140.0)),
                (rng.random_range(900.0..2300.0), rng.random_range(80.0..180.0)),
                (rng.random_range(2400.0..3600.0), rng.random_range(100.0..240.0)),
            ],
            tilt: rng.random_range(0.5..0.95),
        })
        .collect();
    (0..spec.n_speakers)
        .map(|i| Voice {
            sweep: if i % 2 == 0 { SWEEP } else { -SWEEP },
            ..tracts[i / 2].clone()
        })
        .collect()
}

fn patterns(spec: &SynthSpec) -> Vec<Pattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_C1A5_5E5);
    let n = spec.n_classes as f64;
    (0..spec.n_classes)
        .map(|k| {
            // spread syllable rates so classes never coincide
            let slot = (k as f64 + rng.random_range(0.2..0.8)) / n;
            Pattern {
                syllable_hz: 1.5 + 5.0 * slot,
                glide: if k % 2 == 0 { 1.0 } else { -1.0 } * rng.random_range(0.15..0.35),
                vibrato_hz: rng.random_range(3.0..8.0),
                vibrato_depth: rng.random_range(0.0..0.06),
                duty: rng.random_range(0.55..0.9),
            }
        })
        .collect()
}

/// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let r = (-PI * bandwidth / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt(),
            y1: 0.0,
            y2: 0.0,
        }
    }

    /// Moves the resonance while keeping the filter state.
    fn retune(&mut self, freq: f64, bandwidth: f64, rate: f64) {
        let fresh = Self::new(freq, bandwidth, rate);
        self.a1 = fresh.a1;
        self.a2 = fresh.a2;
        self.gain = fresh.gain;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn render(voice: &Voice, pattern: &Pattern, seconds: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let rate = SAMPLE_RATE as f64;
    let n = (seconds * rate).round() as usize;
    let pitch = voice.pitch_hz * (1.0 + rng.random_range(-0.04..0.04));
    let syl_phase0: f64 = rng.random_range(0.0..1.0);
    let vib_phase0: f64 = rng.random_range(0.0..2.0 * PI);
    let breath = Normal::new(0.0, 0.05).expect("valid sigma");
    let mut resonators: Vec<Resonator> = voice
        .formants
        .iter()
        .map(|&(f, b)| Resonator::new(f, b, rate))
        .collect();

    let noise_level = rng.random_range(0.0..MAX_NOISE);
    let noise_color: f64 = rng.random_range(-0.9..0.9);

    let mut glottal = 0.0;
    let mut phase = 0.0;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let syl = (t * pattern.syllable_hz + syl_phase0).fract();
        if i % SWEEP_UPDATE == 0 {
            let k = 1.0 + voice.sweep * ((syl / pattern.duty).min(1.0) - 0.5);
            for (r, &(f, b)) in resonators.iter_mut().zip(&voice.formants) {
                r.retune(f * k, b, rate);
            }
        }
        let env = if syl < pattern.duty {
            (PI * syl / pattern.duty).sin().powi(2)
        } else {
            0.0
        };
        let f0 = pitch
            * (1.0
                + pattern.glide * (syl - 0.5)
                + pattern.vibrato_depth * (2.0 * PI * pattern.vibrato_hz * t + vib_phase0).sin());
        phase += f0 / rate;
        let mut excitation = breath.sample(rng) * env;
        if phase >= 1.0 {
            phase -= 1.0;
            excitation += env;
        }
        glottal = voice.tilt * glottal + (1.0 - voice.tilt) * excitation;
        let mut y = glottal;
        for r in resonators.iter_mut() {
            y = r.step(y);
        }
        raw.push(y);
    }

    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let unit = Normal::new(0.0, 1.0).expect("valid sigma");
    let noise = Normal::new(0.0, 0.002).expect("valid sigma");
    let mut background = 0.0;
    raw.iter()
        .map(|v| {
            background = noise_color * background + unit.sample(rng);
            let bg = noise_level * (1.0 - noise_color.abs()) * background;
            ((0.6 * v / peak) + bg + noise.sample(rng)).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Clip `clip` of speaker `speaker`, with its class index.
pub fn synth_clip(spec: &SynthSpec, speaker: usize, clip: usize) -> Result<(Waveform, usize)> {
    spec.validate()?;
    if speaker >= spec.n_speakers || clip >= spec.clips_per_speaker {
        return Err(Error::Config(format!(
            "clip ({}, {}) outside a {}x{} corpus",
            speaker, clip, spec.n_speakers, spec.clips_per_speaker
        )));
    }
    let class = clip % spec.n_classes;
    let voice = &voices(spec)[speaker];
    let pattern = &patterns(spec)[class];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((speaker * spec.clips_per_speaker + clip) as u64 + 1);
    let samples = render(voice, pattern, spec.clip_seconds, &mut rng);
    Ok((Waveform::new(samples, SAMPLE_RATE)?, class))
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{:02}", i)
}

pub fn class_name(k: usize) -> String {
    format!("class{}", k)
}

/// Renders the whole corpus into `out_dir/wav/` and writes
/// `out_dir/manifest.csv` (labels are class names).
pub fn synth_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let voices = voices(spec);
    let patterns = patterns(spec);
    let mut entries = Vec::with_capacity(spec.n_speakers * spec.clips_per_speaker);
    for (s, voice) in voices.iter().enumerate() {
        for c in 0..spec.clips_per_speaker {
            let class = c % spec.n_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream((s * spec.clips_per_speaker + c) as u64 + 1);
            let samples = render(voice, &patterns[class], spec.clip_seconds, &mut rng);
            let wave = Waveform::new(samples, SAMPLE_RATE)?;
            let clip_id = format!("{}_{:03}", speaker_name(s), c);
            let path: PathBuf = wav_dir.join(format!("{}.wav", clip_id));
            write_wav(&path, &wave)?;
            entries.push(ManifestEntry {
                clip_id,
                path,
                speaker_id: speaker_name(s),
                label: class_name(class),
            });
        }
    }
    let manifest = Manifest::new("manifest", entries)?;
    manifest.write(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_manifest, read_wav};

    fn small() -> SynthSpec {
        SynthSpec {
            n_speakers: 2,
            clips_per_speaker: 3,
            clip_seconds: 1.0,
            n_classes: 2,
            seed: 7,
        }
    }

    #[test]
    fn counts_match_spec() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(&small(), dir.path()).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.speakers().len(), 2);
        let loaded = load_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.len(), 6);
        assert_eq!(loaded, m);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&small(), a.path()).unwrap();
        synth_corpus(&small(), b.path()).unwrap();
        let read = |d: &Path, n: &str| std::fs::read(d.join(n)).unwrap();
        assert_eq!(read(a.path(), "manifest.csv"), read(b.path(), "manifest.csv"));
        for e in &ma.entries {
            let name = e.path.strip_prefix(a.path()).unwrap();
            assert_eq!(read(a.path(), name.to_str().unwrap()), read(b.path(), name.to_str().unwrap()));
        }
    }

    #[test]
    fn wav_round_trip_matches_renderer() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(&small(), dir.path()).unwrap();
        let (direct, class) = synth_clip(&small(), 1, 2).unwrap();
        assert_eq!(class, 0);
        let back = read_wav(&m.entries[5].path).unwrap();
        assert_eq!(back.len(), direct.len());
        for (a, b) in back.samples.iter().zip(&direct.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.clip_seconds = 0.5;
        assert!(s.validate().is_err());
        let mut s = small();
        s.n_classes = 0;
        assert!(s.validate().is_err());
    }
}
