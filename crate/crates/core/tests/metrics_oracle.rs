mod support;

use entroseg::metrics::{self, AlignOptions, AlignmentDenominator, BoundaryTimeOptions};
use entroseg::segmenter;
use entroseg::{Segmentation, Tier};
use support::{fixtures, oracles};

#[test]
fn alignment_matches_nearest_neighbor_oracle() {
    for seed in 0..100 {
        let (segm, reference) = fixtures::alignment_instance(seed);
        let pred = metrics::boundary_times(&segm, 50.0, BoundaryTimeOptions::default());
        for window in [20.0, 50.0] {
            let opts = AlignOptions {
                window_ms: window,
                ..Default::default()
            };
            let score = metrics::evaluate_alignment(&pred, &reference, &opts).unwrap();
            let words = oracles::reference_times(&reference, Tier::Word);
            let phones = oracles::reference_times(&reference, Tier::Phoneme);
            let (wba, _) = oracles::nearest_neighbor_score(&pred, &words, window);
            let (pba, _) = oracles::nearest_neighbor_score(&pred, &phones, window);
            let mut pooled = words.clone();
            pooled.extend(&phones);
            let (_, mtd) = oracles::nearest_neighbor_score(&pred, &pooled, window);
            assert!((score.wba_pct - wba).abs() < 1e-9, "seed {seed}");
            assert!((score.pba_pct - pba).abs() < 1e-9, "seed {seed}");
            match (score.mtd_ms, mtd) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn recall_style_matches_oracle_with_roles_swapped() {
    for seed in 0..30 {
        let (segm, reference) = fixtures::alignment_instance(seed);
        let pred = metrics::boundary_times(&segm, 50.0, BoundaryTimeOptions::default());
        if pred.is_empty() {
            continue;
        }
        let opts = AlignOptions {
            window_ms: 50.0,
            denominator: AlignmentDenominator::Reference,
        };
        let s = metrics::align_score(&pred, &reference, Tier::Word, &opts).unwrap();
        let words = oracles::reference_times(&reference, Tier::Word);
        let (want, _) = oracles::nearest_neighbor_score(&words, &pred, 50.0);
        assert!((s.alignment_pct - want).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn self_scoring_is_perfect() {
    for seed in 0..20 {
        let (_, reference) = fixtures::alignment_instance(seed);
        let mut pred = reference.boundaries(Tier::Word);
        pred.extend(reference.boundaries(Tier::Phoneme));
        pred.sort_by(f64::total_cmp);
        pred.dedup();
        let s = metrics::evaluate_alignment(&pred, &reference, &AlignOptions::default()).unwrap();
        assert_eq!(s.mtd_ms, Some(0.0));
        let w = metrics::align_score(
            &reference.boundaries(Tier::Word),
            &reference,
            Tier::Word,
            &AlignOptions::default(),
        )
        .unwrap();
        assert_eq!(w.alignment_pct, 100.0);
        assert_eq!(w.mtd_ms, Some(0.0));
    }
}

#[test]
fn wider_windows_never_lower_the_score() {
    for seed in 0..30 {
        let (segm, reference) = fixtures::alignment_instance(seed);
        let pred = metrics::boundary_times(&segm, 50.0, BoundaryTimeOptions::default());
        let mut last = -1.0;
        for w in [0.0, 10.0, 20.0, 50.0, 100.0, 1000.0] {
            let opts = AlignOptions {
                window_ms: w,
                ..Default::default()
            };
            let s = metrics::align_score(&pred, &reference, Tier::Phoneme, &opts).unwrap();
            assert!(s.alignment_pct >= last);
            last = s.alignment_pct;
        }
    }
}

#[test]
fn compression_stats_identities() {
    for seed in 0..50 {
        let (segm, _) = fixtures::alignment_instance(seed);
        let s = metrics::compression_stats(&segm, 50.0);
        assert!((s.token_rate_hz * s.avg_span_ms - 1000.0).abs() < 1e-9);
        assert_eq!(s.histogram.iter().map(|(k, v)| k * v).sum::<usize>(), s.tokens);
    }
    let identity = metrics::compression_stats(&Segmentation::identity(100), 50.0);
    assert_eq!(identity.token_rate_hz, 50.0);
    assert!((identity.avg_span_ms - 20.0).abs() < 1e-12);
    let fifteen = Segmentation::from_boundaries((0..=30).map(|j| j * 10 / 3).collect()).unwrap();
    let s = metrics::compression_stats(&fifteen, 50.0);
    assert!((s.token_rate_hz - 15.0).abs() < 1e-12);
    assert!((s.avg_span_ms - 1000.0 / 15.0).abs() < 1e-9);
    assert_eq!(s.avg_span_ms.round(), 67.0);
}

#[test]
fn baseline_rates() {
    let fixed2 = segmenter::fixed_pool_segment(100, 2).unwrap();
    let fixed4 = segmenter::fixed_pool_segment(100, 4).unwrap();
    assert_eq!(segmenter::token_rate(&fixed2, 50.0), 25.0);
    assert_eq!(segmenter::token_rate(&fixed4, 50.0), 12.5);
}
