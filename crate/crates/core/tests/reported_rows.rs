use ctma_core::loss_metrics::f1_score;

/// Two LEVIR-CD rows of the reported comparison table whose F1 is not the
/// harmonic mean of their own precision and recall.
#[test]
fn levir_rows_are_not_harmonic_means() {
    for (p, r, printed) in [(92.86, 90.26, 91.15), (93.20, 89.73, 91.14)] {
        let f1 = f1_score(p, r);
        assert!((f1 - printed).abs() > 0.25, "{p}/{r}: {f1} vs {printed}");
    }
}

#[test]
fn consistent_rows_round_to_their_printed_f1() {
    for (p, r, printed) in [(95.32, 91.99, 93.62), (98.67, 98.45, 98.56), (89.90, 86.82, 88.33)] {
        assert!((f1_score(p, r) - printed).abs() < 0.05);
    }
}
