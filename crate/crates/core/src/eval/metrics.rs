//! Ranking metrics and their closed-form random baselines.

/// 1-based rank of `label` when `scores` are sorted in descending order.
/// Equal scores are ordered by index, so a tie with a lower index ranks first.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Indices of `scores` in descending order; ties keep ascending index order.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Fraction of 1-based ranks that are `<= k`.
pub fn hit_rate(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Expected top-k accuracy of a uniformly random ranking of `n` classes.
pub fn random_topk(k: usize, n: usize) -> f64 {
    k.min(n) as f64 / n as f64
}

/// Probability that a uniformly random ranking of a gallery of `gallery`
/// items, `relevant` of which match, has at least one match in its top `k`:
/// `1 − C(G−K, k) / C(G, k)`.
pub fn random_cmc(k: usize, gallery: usize, relevant: usize) -> f64 {
    let k = k.min(gallery);
    if relevant == 0 {
        return 0.0;
    }
    if relevant + k > gallery {
        return 1.0;
    }
    // C(G−K, k) / C(G, k) = Π_{i<k} (G−K−i) / (G−i)
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (gallery - relevant - i) as f64 / (gallery - i) as f64;
    }
    1.0 - miss
}
