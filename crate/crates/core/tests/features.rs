use gaitcontour::contour_pose::*;
use gaitcontour::features::*;
use gaitcontour::numeric::Tensor;
use gaitcontour::synth::{generate_walker, WalkerIdentity, DEFAULT_FRAME_SIZE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn walker_sequence(frames: usize) -> ContourPoseSequence {
    let walker = generate_walker(&WalkerIdentity::default(), frames, DEFAULT_FRAME_SIZE, 0).unwrap();
    let poses = walker.pose_frames().unwrap();
    extract_sequence(&walker.silhouettes, &poses, &ExtractOptions::default(), None, None).unwrap()
}

fn sequence_from(frames: Vec<Vec<[f64; 2]>>) -> ContourPoseSequence {
    ContourPoseSequence {
        frames: frames
            .into_iter()
            .map(|points| ContourPoseFrame {
                points,
                edges: contour_pose_edges(),
                contour_indices: Vec::new(),
            })
            .collect(),
        kind: GraphKind::ContourPose,
        ordering: Ordering::Clockwise,
        subject_id: None,
        view_id: None,
    }
}

fn channel(t: &Tensor, ti: usize, p: usize, c: usize) -> f64 {
    let s = t.shape();
    t.data()[(ti * s[1] + p) * s[2] + c]
}

#[test]
fn static_sequence_has_zero_velocity() {
    let one = walker_sequence(1);
    let mut seq = one.clone();
    seq.frames = vec![one.frames[0].clone(); 4];
    let f = expand_channels(&seq).unwrap();
    assert_eq!(f.shape(), &[4, CONTOUR_POSE_POINTS, RAW_CHANNELS]);
    for t in 0..4 {
        for p in 0..CONTOUR_POSE_POINTS {
            assert_eq!(channel(&f, t, p, 6), 0.0);
            assert_eq!(channel(&f, t, p, 7), 0.0);
        }
    }
}

#[test]
fn nose_relative_group_is_zero_at_nose() {
    let seq = walker_sequence(6);
    let f = expand_channels(&seq).unwrap();
    for t in 0..seq.len() {
        let nose = kp::NOSE * GROUP_SIZE;
        assert_eq!(channel(&f, t, nose, 2), 0.0);
        assert_eq!(channel(&f, t, nose, 3), 0.0);
    }
}

#[test]
fn unit_shift_gives_unit_velocity() {
    let base = walker_sequence(1).frames[0].points.clone();
    let shifted: Vec<[f64; 2]> = base.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
    let f = expand_channels(&sequence_from(vec![base, shifted])).unwrap();
    for p in 0..CONTOUR_POSE_POINTS {
        assert!((channel(&f, 1, p, 6) - 1.0).abs() < 1e-12);
        assert_eq!(channel(&f, 1, p, 7), 0.0);
        assert_eq!(channel(&f, 0, p, 6), 0.0);
    }
}

#[test]
fn edge_and_neighbor_groups_follow_layout() {
    let seq = walker_sequence(2);
    let f = expand_channels(&seq).unwrap();
    let pts = &seq.frames[1].points;
    for k in 0..NUM_KEYPOINTS {
        let a = k * GROUP_SIZE;
        assert_eq!([channel(&f, 1, a, 4), channel(&f, 1, a, 5)], [0.0, 0.0]);
        let to_first = [pts[a + 1][0] - pts[a][0], pts[a + 1][1] - pts[a][1]];
        assert_eq!([channel(&f, 1, a, 8), channel(&f, 1, a, 9)], to_first);
        let last = a + 10;
        let wrap = [pts[a + 1][0] - pts[last][0], pts[a + 1][1] - pts[last][1]];
        assert_eq!([channel(&f, 1, last, 8), channel(&f, 1, last, 9)], wrap);
        let edge = [pts[a + 3][0] - pts[a][0], pts[a + 3][1] - pts[a][1]];
        assert_eq!([channel(&f, 1, a + 3, 4), channel(&f, 1, a + 3, 5)], edge);
    }
}

#[test]
fn embedded_features_are_bounded_forty_channels() {
    let seq = walker_sequence(3);
    let e = sequence_features(&seq, &ChannelSpec::default()).unwrap();
    assert_eq!(e.shape(), &[3, CONTOUR_POSE_POINTS, 40]);
    assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn disabled_augmentation_is_identity() {
    let seq = walker_sequence(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let out = augment(&seq, &AugmentConfig::disabled(), &mut rng).unwrap();
        assert_eq!(out, seq);
    }
}

#[test]
fn double_flip_restores_layout() {
    let seq = walker_sequence(5);
    let once = hflip(&seq);
    assert_ne!(once.frames[0].points, seq.frames[0].points);
    let twice = hflip(&once);
    for (a, b) in twice.frames.iter().zip(&seq.frames) {
        assert_eq!(a.points, b.points);
    }
}

#[test]
fn flip_swaps_sides_and_keeps_groups_clockwise() {
    let seq = walker_sequence(1);
    let flipped = hflip(&seq);
    let (src, dst) = (&seq.frames[0].points, &flipped.frames[0].points);
    for k in 0..NUM_KEYPOINTS {
        let m = MIRROR[k] * GROUP_SIZE;
        let a = k * GROUP_SIZE;
        assert_eq!(dst[a], [-src[m][0], src[m][1]]);
        let mut expected: Vec<[f64; 2]> = src[m + 1..m + GROUP_SIZE].iter().map(|p| [-p[0], p[1]]).collect();
        let mut got = dst[a + 1..a + GROUP_SIZE].to_vec();
        expected.sort_by(|p, q| p.partial_cmp(q).unwrap());
        got.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert_eq!(got, expected);
        let angles: Vec<f64> = dst[a + 1..a + GROUP_SIZE]
            .iter()
            .map(|&c| clockwise_angle(dst[a], c))
            .collect();
        assert!(angles.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn noise_matches_configured_std() {
    let base = walker_sequence(1).frames[0].points.clone();
    let seq = sequence_from(vec![base; 40]);
    let cfg = AugmentConfig {
        noise_prob: 1.0,
        hflip_prob: 0.0,
        ..AugmentConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let out = augment(&seq, &cfg, &mut rng).unwrap();
    let diffs: Vec<f64> = out
        .frames
        .iter()
        .zip(&seq.frames)
        .flat_map(|(a, b)| {
            a.points
                .iter()
                .zip(&b.points)
                .flat_map(|(p, q)| [p[0] - q[0], p[1] - q[1]])
        })
        .collect();
    assert!(diffs.len() >= 10_000);
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 0.25).abs() <= 0.025, "sample std {std}");
}

#[test]
fn noise_is_drawn_once_per_sequence() {
    let seq = walker_sequence(4);
    let cfg = AugmentConfig {
        noise_prob: 0.5,
        hflip_prob: 0.0,
        ..AugmentConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut noisy = 0;
    for _ in 0..200 {
        let out = augment(&seq, &cfg, &mut rng).unwrap();
        let changed: Vec<bool> = out
            .frames
            .iter()
            .zip(&seq.frames)
            .map(|(a, b)| a.points != b.points)
            .collect();
        assert!(changed.iter().all(|&c| c == changed[0]));
        noisy += changed[0] as usize;
    }
    assert!((70..=130).contains(&noisy), "{noisy} noisy draws of 200");
}

#[test]
fn augmentation_is_deterministic_under_seed() {
    let seq = walker_sequence(3);
    let cfg = AugmentConfig {
        noise_prob: 1.0,
        hflip_prob: 0.5,
        ..AugmentConfig::default()
    };
    let a = augment(&seq, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = augment(&seq, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_augment_config_rejected() {
    let seq = walker_sequence(1);
    let cfg = AugmentConfig {
        hflip_prob: 1.5,
        ..AugmentConfig::default()
    };
    assert!(augment(&seq, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn groups_after_position_are_translation_invariant(
        pts in prop::collection::vec(prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), CONTOUR_POSE_POINTS), 1..4),
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
    ) {
        let frames: Vec<Vec<[f64; 2]>> = pts.iter().map(|f| f.iter().map(|&(x, y)| [x, y]).collect()).collect();
        let moved: Vec<Vec<[f64; 2]>> = frames.iter().map(|f| f.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).collect();
        let a = expand_channels(&sequence_from(frames)).unwrap();
        let b = expand_channels(&sequence_from(moved)).unwrap();
        for (i, (u, v)) in a.data().iter().zip(b.data()).enumerate() {
            match i % RAW_CHANNELS {
                0 => prop_assert!((v - u - dx).abs() < 1e-9),
                1 => prop_assert!((v - u - dy).abs() < 1e-9),
                _ => prop_assert!((v - u).abs() < 1e-9),
            }
        }
    }

    #[test]
    fn embedding_is_bounded_and_periodic(v in -100.0f64..100.0) {
        let x = Tensor::new(&[1, 1, 1], vec![v]).unwrap();
        let y = Tensor::new(&[1, 1, 1], vec![v + 2.0]).unwrap();
        let (ex, ey) = (sinusoidal_embed(&x, 2).unwrap(), sinusoidal_embed(&y, 2).unwrap());
        prop_assert_eq!(ex.shape(), &[1, 1, 4]);
        for (a, b) in ex.data().iter().zip(ey.data()) {
            prop_assert!(a.abs() <= 1.0);
            prop_assert!((a - b).abs() < 1e-9);
        }
        let pi = std::f64::consts::PI;
        let oracle = [(pi * v).sin(), (pi * v).cos(), (2.0 * pi * v).sin(), (2.0 * pi * v).cos()];
        for (a, b) in ex.data().iter().zip(oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
