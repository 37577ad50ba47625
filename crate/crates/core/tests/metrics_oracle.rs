use edukg::evaluation::{
    average_precision_at_k, mean_average_precision, mrr, precision_at_k, reciprocal_rank, JudgedRanking,
};

/// Every relevance pattern of every length 1..=8, as bool vectors.
fn all_patterns() -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    for len in 1..=8usize {
        for bits in 0u32..(1 << len) {
            out.push((0..len).map(|i| bits & (1 << i) != 0).collect());
        }
    }
    out
}

fn oracle_precision(flags: &[bool], k: usize) -> f64 {
    flags[..k].iter().filter(|&&r| r).count() as f64 / k as f64
}

fn oracle_rr(flags: &[bool]) -> f64 {
    for (i, &r) in flags.iter().enumerate() {
        if r {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn oracle_ap(flags: &[bool], k: usize) -> f64 {
    let top = &flags[..k.min(flags.len())];
    let relevant = top.iter().filter(|&&r| r).count();
    if relevant == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..top.len() {
        if top[i] {
            sum += oracle_precision(top, i + 1);
        }
    }
    sum / relevant as f64
}

#[test]
fn single_ranking_metrics_match_brute_force() {
    for flags in all_patterns() {
        let r = JudgedRanking::from_flags(&flags).unwrap();
        for k in 1..=flags.len() {
            assert_eq!(
                precision_at_k(&r, k).unwrap(),
                oracle_precision(&flags, k),
                "{flags:?} k={k}"
            );
        }
        for k in 1..=10 {
            assert_eq!(
                average_precision_at_k(&r, k).unwrap(),
                oracle_ap(&flags, k),
                "{flags:?} k={k}"
            );
        }
        assert_eq!(reciprocal_rank(&r), oracle_rr(&flags));
    }
}

#[test]
fn means_over_rankings_match_brute_force() {
    let patterns = all_patterns();
    for len in 1..=8usize {
        let group: Vec<&Vec<bool>> = patterns.iter().filter(|p| p.len() == len).collect();
        let rankings: Vec<JudgedRanking> = group.iter().map(|f| JudgedRanking::from_flags(f).unwrap()).collect();
        let n = group.len() as f64;
        let expected_mrr = group.iter().map(|f| oracle_rr(f)).sum::<f64>() / n;
        assert_eq!(mrr(&rankings).unwrap(), expected_mrr);
        for k in 1..=len {
            let expected_map = group.iter().map(|f| oracle_ap(f, k)).sum::<f64>() / n;
            assert_eq!(mean_average_precision(&rankings, k).unwrap(), expected_map);
        }
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let r = JudgedRanking::from_flags(&[true, false]).unwrap();
    assert!(precision_at_k(&r, 0).is_err());
    assert!(precision_at_k(&r, 3).is_err());
    assert!(mrr(&[]).is_err());
    assert!(JudgedRanking::from_flags(&[]).is_err());
}
