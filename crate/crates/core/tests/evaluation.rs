use gaitcontour::contour_pose::*;
use gaitcontour::evaluation::*;
use gaitcontour::features::ChannelSpec;
use gaitcontour::model::{GaitContour, ModelConfig};
use gaitcontour::synth::{generate_walker, WalkerIdentity, DEFAULT_FRAME_SIZE};
use gaitcontour::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn set(role: Role, rows: &[(&str, Vec<f64>)]) -> EmbeddingSet {
    EmbeddingSet::from_pairs(role, rows.iter().map(|(s, e)| (s.to_string(), e.clone())))
}

fn random_split(rng: &mut ChaCha8Rng, subjects: usize, dim: usize) -> (EmbeddingSet, EmbeddingSet) {
    let mut gallery = Vec::new();
    let mut probe = Vec::new();
    for s in 0..subjects {
        for _ in 0..rng.random_range(1..=3) {
            gallery.push((format!("s{s}"), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()));
        }
        for _ in 0..rng.random_range(1..=2) {
            probe.push((format!("s{s}"), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()));
        }
    }
    (
        EmbeddingSet::from_pairs(Role::Gallery, gallery),
        EmbeddingSet::from_pairs(Role::Probe, probe),
    )
}

/// Naive oracle: count gallery entries strictly closer than the nearest
/// genuine entry (or equally close with a lower index).
fn brute_force_rank(g: &EmbeddingSet, p: &EmbeddingSet, k: usize) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut hits = 0;
    let mut ranked = 0;
    for pe in &p.entries {
        if !g.entries.iter().any(|ge| ge.subject_id == pe.subject_id) {
            continue;
        }
        ranked += 1;
        let dists: Vec<f64> = g.entries.iter().map(|ge| d(&pe.embedding, &ge.embedding)).collect();
        let hit = (0..g.len()).any(|i| {
            g.entries[i].subject_id == pe.subject_id
                && (0..g.len())
                    .filter(|&j| dists[j] < dists[i] || (dists[j] == dists[i] && j < i))
                    .count()
                    < k
        });
        if hit {
            hits += 1;
        }
    }
    hits as f64 / ranked as f64
}

#[test]
fn identical_probes_are_rank_one() {
    let g = set(
        Role::Gallery,
        &[("a", vec![0.0, 1.0]), ("b", vec![2.0, -1.0]), ("c", vec![5.0, 5.0])],
    );
    let p = set(Role::Probe, &[("c", vec![5.0, 5.0]), ("a", vec![0.0, 1.0])]);
    assert_eq!(rank_retrieval(&g, &p, 1).unwrap(), 1.0);
}

#[test]
fn orthogonal_gallery_with_tiny_noise_is_rank_one() {
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let basis = |i: usize| (0..dim).map(|j| f64::from(u8::from(i == j))).collect::<Vec<f64>>();
    let g = EmbeddingSet::from_pairs(Role::Gallery, (0..dim).map(|i| (format!("s{i}"), basis(i))));
    let p = EmbeddingSet::from_pairs(
        Role::Probe,
        (0..dim).map(|i| {
            let e = basis(i)
                .into_iter()
                .map(|v| v + 1e-6 * rng.random_range(-1.0..1.0))
                .collect();
            (format!("s{i}"), e)
        }),
    );
    assert_eq!(rank_retrieval(&g, &p, 1).unwrap(), 1.0);
}

#[test]
fn rank_matches_brute_force_on_random_splits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (g, p) = random_split(&mut rng, 20, 8);
        for k in [1, 5, 10] {
            assert_eq!(rank_retrieval(&g, &p, k).unwrap(), brute_force_rank(&g, &p, k));
        }
    }
}

#[test]
fn ties_break_by_gallery_index() {
    let g = set(Role::Gallery, &[("a", vec![1.0]), ("b", vec![-1.0])]);
    let p = set(Role::Probe, &[("b", vec![0.0])]);
    assert_eq!(rank_retrieval(&g, &p, 1).unwrap(), 0.0);
    assert_eq!(rank_retrieval(&g, &p, 2).unwrap(), 1.0);
}

#[test]
fn distractor_probes_skip_rank_but_count_in_verification() {
    let g = set(Role::Gallery, &[("a", vec![0.0]), ("b", vec![10.0])]);
    let p = set(Role::Probe, &[("a", vec![0.1]), ("x", vec![5.0])]);
    assert_eq!(rank_retrieval(&g, &p, 1).unwrap(), 1.0);
    let report = evaluate(&g, &p, &EvalOptions::default()).unwrap();
    assert_eq!(
        (report.ranked_probes, report.genuine_pairs, report.impostor_pairs),
        (1, 1, 3)
    );
    let only_distractors = set(Role::Probe, &[("x", vec![5.0])]);
    assert!(matches!(
        rank_retrieval(&g, &only_distractors, 1),
        Err(Error::EmptySet(_))
    ));
}

#[test]
fn empty_sets_are_rejected() {
    let g = set(Role::Gallery, &[("a", vec![0.0])]);
    let empty = EmbeddingSet::new(Role::Probe, vec![]);
    assert!(matches!(rank_retrieval(&g, &empty, 1), Err(Error::EmptySet(_))));
    assert!(matches!(
        tar_at_far(&EmbeddingSet::new(Role::Gallery, vec![]), &g, &[0.1]),
        Err(Error::EmptySet(_))
    ));
}

#[test]
fn single_subject_has_no_impostors() {
    let g = set(Role::Gallery, &[("a", vec![0.0]), ("a", vec![1.0])]);
    let p = set(Role::Probe, &[("a", vec![0.5])]);
    assert!(matches!(tar_at_far(&g, &p, &[0.1]), Err(Error::NoImpostors)));
}

#[test]
fn separated_scores_accept_every_genuine_pair() {
    let g = set(
        Role::Gallery,
        &[("a", vec![0.0]), ("b", vec![100.0]), ("c", vec![200.0])],
    );
    let p = set(Role::Probe, &[("a", vec![0.5]), ("b", vec![100.5]), ("c", vec![199.5])]);
    for (_, tar) in tar_at_far(&g, &p, &[0.0, 1e-2, 1e-1, 0.5]).unwrap() {
        assert_eq!(tar, 1.0);
    }
}

#[test]
fn far_one_accepts_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, p) = random_split(&mut rng, 5, 4);
    assert_eq!(tar_at_far(&g, &p, &[1.0]).unwrap(), vec![(1.0, 1.0)]);
}

#[test]
fn identically_distributed_scores_give_tar_near_far() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 20_000;
    let genuine: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let impostor: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scores = PairScores { genuine, impostor };
    let curve = roc_curve(&scores).unwrap();
    for far in [0.01, 0.1, 0.5] {
        let &(_, tar) = curve.iter().find(|(f, _)| *f >= far).unwrap();
        let sigma = (far * (1.0 - far) / n as f64).sqrt();
        assert!((tar - far).abs() < 5.0 * sigma + 1e-3, "far {far} tar {tar}");
    }
}

#[test]
fn roc_is_monotone_and_ends_at_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (g, p) = random_split(&mut rng, 10, 3);
    let dist = distance_matrix(&g, &p).unwrap();
    let curve = roc_curve(&pair_scores(&g, &p, &dist)).unwrap();
    assert_eq!(*curve.last().unwrap(), (1.0, 1.0));
    assert!(curve.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
}

#[test]
fn subject_templates_average_gallery_entries() {
    let g = set(
        Role::Gallery,
        &[("b", vec![0.0, 2.0]), ("a", vec![1.0, 1.0]), ("b", vec![2.0, 0.0])],
    );
    let t = subject_templates(&g);
    let rows: Vec<(&str, &[f64])> = t
        .entries
        .iter()
        .map(|e| (e.subject_id.as_str(), e.embedding.as_slice()))
        .collect();
    assert_eq!(rows, vec![("b", &[1.0, 1.0][..]), ("a", &[1.0, 1.0][..])]);
    let p = set(Role::Probe, &[("a", vec![1.0, 1.0]), ("b", vec![0.0, 2.0])]);
    let opts = EvalOptions {
        aggregation: Aggregation::Subject,
        ..EvalOptions::default()
    };
    let report = evaluate(&g, &p, &opts).unwrap();
    assert_eq!((report.gallery_size, report.impostor_pairs), (2, 2));
}

#[test]
fn report_has_requested_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (g, p) = random_split(&mut rng, 12, 4);
    let r = evaluate(&g, &p, &EvalOptions::default()).unwrap();
    assert_eq!(r.rank_k.keys().collect::<Vec<_>>(), ["1", "10", "5"]);
    assert_eq!(r.tar_at_far.keys().collect::<Vec<_>>(), ["0.01", "0.1"]);
    assert!(r.tar_at_far["0.01"] <= r.tar_at_far["0.1"]);
    assert_eq!(r.rank(1).unwrap(), rank_retrieval(&g, &p, 1).unwrap());
}

#[test]
fn score_csv_and_roc_svg_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (g, p) = random_split(&mut rng, 4, 3);
    let csv = dir.path().join("scores.csv");
    write_score_csv(&csv, &g, &p).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + g.len() * p.len());
    assert!(text.starts_with("probe,gallery,probe_subject,gallery_subject,score\n"));
    let svg = dir.path().join("roc.svg");
    write_roc_svg(&svg, &g, &p).unwrap();
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    assert!(text.contains("<polyline"));
}

fn walker_sequence(frames: usize, subject: &str) -> ContourPoseSequence {
    let w = generate_walker(&WalkerIdentity::default(), frames, DEFAULT_FRAME_SIZE, 0).unwrap();
    let mut seq = extract_sequence(
        &w.silhouettes,
        &w.pose_frames().unwrap(),
        &ExtractOptions::default(),
        None,
        None,
    )
    .unwrap();
    seq.subject_id = Some(subject.to_string());
    seq
}

fn tiny_model() -> GaitContour {
    GaitContour::new(ModelConfig {
        local_channels: vec![8, 8, 8],
        global_channels: vec![8],
        heads: 2,
        embed_dim: 8,
        ..ModelConfig::default()
    })
    .unwrap()
}

#[test]
fn embed_dataset_is_deterministic_and_clips_to_length() {
    let model = tiny_model();
    let channels = ChannelSpec::default();
    let long = walker_sequence(7, "a");
    let short = walker_sequence(2, "b");
    let a = embed_dataset(&[long.clone(), short.clone()], &model, &channels, 3, Role::Gallery).unwrap();
    let b = embed_dataset(&[long.clone(), short.clone()], &model, &channels, 3, Role::Gallery).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.entries[0].embedding.len(), 8);

    let centered = model.embed(&long.window(2, 3), &channels).unwrap();
    assert_eq!(a.entries[0].embedding, centered);
    let mut padded = short.clone();
    padded.frames.push(short.frames[0].clone());
    assert_eq!(a.entries[1].embedding, model.embed(&padded, &channels).unwrap());
}

#[test]
fn embed_dataset_needs_subject_ids() {
    let mut seq = walker_sequence(2, "a");
    seq.subject_id = None;
    assert!(embed_dataset(&[seq], &tiny_model(), &ChannelSpec::default(), 2, Role::Probe).is_err());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gct");
    let model = tiny_model();
    model.save(&path).unwrap();
    let loaded = GaitContour::load(model.config().clone(), &path).unwrap();
    let seq = walker_sequence(2, "a");
    let channels = ChannelSpec::default();
    assert_eq!(
        model.embed(&seq, &channels).unwrap(),
        loaded.embed(&seq, &channels).unwrap()
    );

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        GaitContour::load(model.config().clone(), &path),
        Err(Error::ChecksumMismatch)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rank_is_invariant_to_isometries(seed in any::<u64>(), shift in -5.0f64..5.0, angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, p) = random_split(&mut rng, 8, 2);
        let (c, s) = (angle.cos(), angle.sin());
        let map = |set: &EmbeddingSet| {
            let mut out = set.clone();
            for e in &mut out.entries {
                let (x, y) = (e.embedding[0], e.embedding[1]);
                e.embedding = vec![c * x - s * y + shift, s * x + c * y - shift];
            }
            out
        };
        let (g2, p2) = (map(&g), map(&p));
        for k in [1, 3] {
            let before = rank_retrieval(&g, &p, k).unwrap();
            let after = rank_retrieval(&g2, &p2, k).unwrap();
            prop_assert!(before == after || has_near_tie(&g, &p));
        }
    }

    #[test]
    fn rank_is_monotone_in_k(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, p) = random_split(&mut rng, 10, 3);
        let ranks: Vec<f64> = (1..=g.len()).map(|k| rank_retrieval(&g, &p, k).unwrap()).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*ranks.last().unwrap(), 1.0);
    }

    #[test]
    fn tar_is_monotone_in_far(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, p) = random_split(&mut rng, 10, 3);
        let fars = [0.0, 0.01, 0.05, 0.1, 0.3, 0.7, 1.0];
        let tars: Vec<f64> = tar_at_far(&g, &p, &fars).unwrap().into_iter().map(|(_, t)| t).collect();
        prop_assert!(tars.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(tars.iter().all(|t| (0.0..=1.0).contains(t)));
        prop_assert_eq!(tars[fars.len() - 1], 1.0);
    }
}

/// Whether some probe has two gallery distances within rounding of each other.
fn has_near_tie(g: &EmbeddingSet, p: &EmbeddingSet) -> bool {
    let dist = distance_matrix(g, p).unwrap();
    dist.iter().any(|row| {
        let mut r = row.clone();
        r.sort_by(f64::total_cmp);
        r.windows(2).any(|w| w[1] - w[0] < 1e-9)
    })
}
