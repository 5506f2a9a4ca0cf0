/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `fft_size / 2 + 1` power bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_mels + 2` band edges in Hz; filter `m` rises over `[edges[m], edges[m+1]]`
    /// and falls over `[edges[m+1], edges[m+2]]`.
    pub edges_hz: Vec<f64>,
    /// Row-major `n_mels × n_bins` weights.
    pub weights: Vec<f64>,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Self {
        let n_bins = fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate / fft_size as f64;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        Self {
            edges_hz,
            weights,
            n_bins,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.edges_hz.len() - 2
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Applies every filter to one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, slot) in out.iter_mut().enumerate() {
            *slot = self
                .filter(m)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> MelFilterbank {
        MelFilterbank::new(64, 512, 16_000.0, 125.0, 7500.0)
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 125.0, 1000.0, 7500.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 999.985_6).abs() < 1e-3);
    }

    #[test]
    fn filters_are_nonnegative_unimodal_and_local() {
        let b = bank();
        for m in 0..b.n_mels() {
            let f = b.filter(m);
            assert!(f.iter().all(|&w| w >= 0.0));
            let peak = f
                .iter()
                .enumerate()
                .fold(0, |best, (i, &w)| if w > f[best] { i } else { best });
            assert!(f[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(f[peak..].windows(2).all(|w| w[0] >= w[1]));
            for (k, &w) in f.iter().enumerate() {
                let hz = k as f64 * 16_000.0 / 512.0;
                if hz <= b.edges_hz[m] || hz >= b.edges_hz[m + 2] {
                    assert_eq!(w, 0.0);
                }
            }
            assert!(f.iter().any(|&w| w > 0.0), "filter {m} is empty");
        }
    }

    #[test]
    fn centers_strictly_increase_and_bins_are_covered() {
        let b = bank();
        assert!(b.centers_hz().windows(2).all(|w| w[0] < w[1]));
        let (first, last) = (b.centers_hz()[0], *b.centers_hz().last().unwrap());
        for k in 0..b.n_bins {
            let hz = k as f64 * 16_000.0 / 512.0;
            if hz >= first && hz <= last {
                assert!((0..b.n_mels()).any(|m| b.filter(m)[k] > 0.0), "bin {k} uncovered");
            }
        }
    }
}
