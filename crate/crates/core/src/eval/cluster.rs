//! k-means, adjusted Rand index and Spearman correlation.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid after each assignment step.
    pub objective: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (c, cen) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: the first centre uniformly, each further centre with
/// probability proportional to its squared distance from the nearest centre.
fn seed_centroids<R: Rng>(points: &[Vec<f64>], k: usize, r: &mut R) -> Vec<Vec<f64>> {
    let mut chosen = vec![r.random_range(0..points.len())];
    while chosen.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(p, &points[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = r.random_range(0.0..total);
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            // every point coincides with a centre already; take the first unused index
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
    }
    chosen.iter().map(|&i| points[i].clone()).collect()
}

/// Lloyd's algorithm with k-means++ seeding, deterministic given `seed`.
///
/// A centroid left without points is moved onto the point farthest from its
/// own centroid (lowest index on ties). Stops when assignments no longer
/// change or after `max_iters` assignment steps; `converged` tells which.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if k < 2 || k > points.len() {
        return Err(Error::Precondition(format!(
            "k-means needs 2 <= k <= n points, got k = {} with {} points",
            k,
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans", "points have different dimensions"));
    }
    let mut r = rng::stream(seed, &[0xC1u64]);
    let mut centroids = seed_centroids(points, k, &mut r);
    let mut labels: Vec<usize> = Vec::new();
    let mut objective = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let assigned: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        objective.push(assigned.iter().map(|a| a.1).sum());
        if new_labels == labels {
            converged = true;
            break;
        }
        labels = new_labels;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .map(|i| (i, sq_dist(&points[i], &centroids[labels[i]])))
                    .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                centroids[c] = points[far].clone();
            }
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        objective,
        converged,
    })
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Pair-counting adjusted Rand index between two labelings of the same points.
///
/// When both labelings are trivially identical partitions (the chance-expected
/// index equals its maximum) the result is 1.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "ari",
            format!("labelings have lengths {} and {}", a.len(), b.len()),
        ));
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len());
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` with fewer than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_hand_values() {
        assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() <= 1e-12);
        assert_eq!(ari(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert!(ari(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn kmeans_finds_separated_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 10.0], vec![10.0, 10.1]];
        for seed in 0..20 {
            let km = kmeans(&pts, 2, seed, 100).unwrap();
            assert!(km.converged);
            assert_eq!(ari(&km.labels, &[0, 0, 1, 1]).unwrap(), 1.0);
        }
    }

    #[test]
    fn kmeans_handles_duplicate_points() {
        let pts = vec![vec![1.0]; 5];
        let km = kmeans(&pts, 2, 0, 10).unwrap();
        assert_eq!(km.labels.len(), 5);
        assert!(kmeans(&pts, 6, 0, 10).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 4]).is_none());
    }
}
