//! Pair-counting AUC by exhaustive comparison.

use rand::Rng as _;

use super::rng;

/// `(2·#{s⁺ > s⁻} + #{s⁺ = s⁻}) / (2·P·N)` over every positive/negative pair.
pub fn brute_force_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &l) in labels.iter().enumerate() {
        if l != 1 {
            continue;
        }
        for (j, &m) in labels.iter().enumerate() {
            if m != 0 {
                continue;
            }
            pairs += 1;
            twice += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Random instance with `n ≤ 200` and scores on a coarse grid so ties are common.
pub fn tied_instance(r: &mut super::Rng) -> (Vec<f64>, Vec<usize>) {
    let n = r.random_range(2..=200);
    let levels = r.random_range(1..=12);
    let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
    let mut labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    labels[0] = 0;
    labels[n - 1] = 1;
    (scores, labels)
}

/// Instances on which `auc_roc` differs from the brute-force count in any bit.
pub fn auc_mismatches(instances: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..instances)
        .filter(|_| {
            let (s, l) = tied_instance(&mut r);
            attnbench::train::auc_roc(&s, &l).unwrap().to_bits() != brute_force_auc(&s, &l).to_bits()
        })
        .count()
}
