use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trill::corpus::{Waveform, SAMPLE_RATE};
use trill::frontend::{Frontend, FrontendConfig};

/// Direct O(N²) power spectrum of one windowed frame, zero-padded to `n`.
fn naive_power(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in frame.iter().enumerate() {
                let phase = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * phase.cos();
                im += x * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// HTK triangles written from the textbook definition.
fn triangle_bank(n_mels: usize, n_fft: usize, sr: f64, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| inv(mel(fmin) + i as f64 * (mel(fmax) - mel(fmin)) / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            (0..=n_fft / 2)
                .map(|k| {
                    let f = k as f64 * sr / n_fft as f64;
                    let up = (f - pts[m]) / (pts[m + 1] - pts[m]);
                    let down = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn oracle_logmel(samples: &[f32]) -> Vec<Vec<f64>> {
    let (win, hop, n_fft) = (400, 160, 512);
    let hann: Vec<f64> = (0..win).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos()).collect();
    let bank = triangle_bank(64, n_fft, SAMPLE_RATE as f64, 125.0, 7500.0);
    let mut out = Vec::new();
    let mut start = 0;
    while start + win <= samples.len() {
        let frame: Vec<f64> = (0..win).map(|i| samples[start + i] as f64 * hann[i]).collect();
        let p = naive_power(&frame, n_fft);
        out.push(
            bank.iter()
                .map(|w| (w.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() + 0.01).ln())
                .collect(),
        );
        start += hop;
    }
    out
}

#[test]
fn logmel_matches_naive_dft_and_triangle_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<f32> = (0..2400)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            (0.3 * (2.0 * PI * 440.0 * t).sin() + 0.2 * (2.0 * PI * 2500.0 * t).sin() + rng.random_range(-0.1..0.1)) as f32
        })
        .collect();
    let fe = Frontend::new(FrontendConfig::default()).unwrap();
    let got = fe.stft_logmel(&Waveform::new(samples.clone(), SAMPLE_RATE).unwrap(), "x").unwrap();
    let want = oracle_logmel(&samples);
    assert_eq!(got.n_frames, want.len());
    for (t, row) in want.iter().enumerate() {
        for (m, v) in row.iter().enumerate() {
            let g = got.frame(t)[m];
            assert!((g - v).abs() < 1e-9, "frame {t} band {m}: {g} vs {v}");
        }
    }
}

#[test]
fn filterbank_matches_triangle_oracle() {
    let fe = Frontend::new(FrontendConfig::default()).unwrap();
    let oracle = triangle_bank(64, 512, SAMPLE_RATE as f64, 125.0, 7500.0);
    for (m, row) in oracle.iter().enumerate() {
        for (k, w) in row.iter().enumerate() {
            assert!((fe.filterbank().filter(m)[k] - w).abs() < 1e-9, "band {m} bin {k}");
        }
    }
}

#[test]
fn tones_peak_in_the_band_nearest_their_frequency() {
    let fe = Frontend::new(FrontendConfig::default()).unwrap();
    let centers = fe.filterbank().centers_hz().to_vec();
    for hz in [300.0, 1000.0, 3000.0, 6000.0] {
        let samples: Vec<f32> = (0..8000)
            .map(|i| (0.5 * (2.0 * PI * hz * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect();
        let f = fe.stft_logmel(&Waveform::new(samples, SAMPLE_RATE).unwrap(), "t").unwrap();
        let mid = f.frame(f.n_frames / 2);
        let peak = (0..64).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
        let nearest = (0..64)
            .min_by(|&a, &b| (centers[a] - hz).abs().total_cmp(&(centers[b] - hz).abs()))
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "{hz} Hz peaks in {peak}, nearest center {nearest}");
    }
}
