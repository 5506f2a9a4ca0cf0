use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        stem_channels: 4,
        blocks: vec![BlockSpec::new(8, 2, true), BlockSpec::new(16, 2, true)],
        embedding_dim: 32,
        l2_normalize_output: true,
        seed: 3,
    }
}

fn random_windows(n: usize, seed: u64) -> Vec<ContextWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| ContextWindow {
            clip_id: format!("c{}", i),
            start_frame: 0,
            n_mels: 16,
            n_frames: 24,
            values: (0..16 * 24).map(|_| rng.random_range(-4.0..4.0)).collect(),
        })
        .collect()
}

#[test]
fn same_seed_same_parameters() {
    let a = build_encoder(&small_config()).unwrap();
    let b = build_encoder(&small_config()).unwrap();
    assert_eq!(a, b);
    let mut other = small_config();
    other.seed = 4;
    assert_ne!(a, build_encoder(&other).unwrap());
}

#[test]
fn final_width_follows_config() {
    let m = build_encoder(&small_config()).unwrap();
    let e = m.embed(&random_windows(3, 1), FINAL_TAP).unwrap();
    assert_eq!(e.dim, 32);
    assert_eq!(e.rows.len(), 3 * 32);
}

#[test]
fn parameter_count_matches_shape_walk() {
    // independent walk over the architecture description
    fn count(c: &EncoderConfig) -> usize {
        let mut total = 9 * c.stem_channels + c.stem_channels;
        let mut cin = c.stem_channels;
        for b in &c.blocks {
            total += 9 * cin * b.channels + b.channels;
            total += (b.n_conv_layers - 1) * (9 * b.channels * b.channels + b.channels);
            if b.downsample || cin != b.channels {
                total += cin * b.channels + b.channels;
            }
            cin = b.channels;
        }
        total + cin * c.embedding_dim + c.embedding_dim
    }
    for cfg in [small_config(), EncoderConfig::default(), EncoderConfig::default().narrowed(2)] {
        assert_eq!(build_encoder(&cfg).unwrap().parameter_count(), count(&cfg));
    }
}

#[test]
fn invalid_configs_fail() {
    let mut c = small_config();
    c.blocks.clear();
    assert!(build_encoder(&c).is_err());
    let mut c = small_config();
    c.embedding_dim = 0;
    assert!(build_encoder(&c).is_err());
}

#[test]
fn final_rows_are_unit_norm_and_distances_bounded() {
    let m = build_encoder(&small_config()).unwrap();
    let e = m.embed(&random_windows(6, 2), FINAL_TAP).unwrap();
    for i in 0..e.len() {
        let n: f64 = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
    let d = crate::autodiff::sqdist_matrix(&e.rows, e.len(), e.dim);
    assert!(d.iter().all(|&v| (0.0..=4.0).contains(&v)));
}

#[test]
fn duplicate_windows_embed_identically() {
    let m = build_encoder(&small_config()).unwrap();
    let mut w = random_windows(2, 5);
    w.push(w[0].clone());
    let e = m.embed(&w, FINAL_TAP).unwrap();
    assert_eq!(e.row(0), e.row(2));
}

#[test]
fn intermediate_taps_have_block_widths() {
    let cfg = small_config();
    let m = build_encoder(&cfg).unwrap();
    assert_eq!(m.tap_names(), vec!["block1", "block2", "final"]);
    for (tap, width) in [("block1", 8), ("block2", 16)] {
        let e = m.embed(&random_windows(2, 6), tap).unwrap();
        assert_eq!(e.dim, width);
        assert_eq!(e.dim, cfg.blocks[tap[5..].parse::<usize>().unwrap() - 1].channels);
    }
}

#[test]
fn unknown_tap_lists_valid_ones() {
    let m = build_encoder(&small_config()).unwrap();
    match m.embed(&random_windows(1, 7), "layer19") {
        Err(Error::UnknownTap { valid, .. }) => assert_eq!(valid, m.tap_names()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn embedding_is_batch_size_invariant() {
    let m = build_encoder(&small_config()).unwrap();
    let w = random_windows(20, 8);
    let all = m.embed(&w, FINAL_TAP).unwrap();
    for i in [0, 7, 19] {
        let one = m.embed(&w[i..i + 1], FINAL_TAP).unwrap();
        assert_eq!(one.row(0), all.row(i));
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_encoder(&small_config()).unwrap();
    let p1 = dir.path().join("a.trlm");
    let p2 = dir.path().join("b.trlm");
    save_checkpoint(&m, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.config, m.config);
    for ((_, a), (_, b)) in m.params.iter().zip(&loaded.params) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            assert_eq!(*y, *x as f32 as f64);
        }
    }
    let w = random_windows(4, 9);
    let (ea, eb) = (m.embed(&w, FINAL_TAP).unwrap(), loaded.embed(&w, FINAL_TAP).unwrap());
    for i in 0..ea.len() {
        let diff: f64 = ea.row(i).iter().zip(eb.row(i)).map(|(x, y)| (x - y) * (x - y)).sum();
        let norm: f64 = ea.row(i).iter().map(|x| x * x).sum();
        assert!((diff / norm).sqrt() <= 1e-6, "row {i}: {}", (diff / norm).sqrt());
    }
}

#[test]
fn checkpoint_errors() {
    let m = build_encoder(&small_config()).unwrap();
    let bytes = m.to_container().to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(_))));
    let cut = bytes.len() - 10;
    match Container::from_bytes(&bytes[..cut]) {
        Err(Error::Corruption { offset, .. }) => assert_eq!(offset, cut as u64),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Container::from_bytes(&bytes[..7]), Err(Error::Corruption { .. })));
}

#[test]
fn header_is_key_value_lines() {
    let m = build_encoder(&small_config()).unwrap();
    let bytes = m.to_container().to_bytes();
    assert_eq!(&bytes[..4], b"TRLM");
    assert_eq!(bytes[4], 1);
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[9..9 + len]).unwrap();
    assert!(header.contains("blocks=8:2:down,16:2:down\n"));
    assert!(header.contains("tensor=stem.w 4,1,3,3\n"));
    assert_eq!(bytes.len(), 9 + len + 4 * m.parameter_count());
}
