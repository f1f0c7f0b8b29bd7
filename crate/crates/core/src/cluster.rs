//! k-means, k-medoids, elbow selection and cluster mean shapes.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::shape_data::{CorrespondenceEnsemble, PointSet, ShapeVector};

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub k: usize,
    pub labels: Vec<usize>,
    /// Cluster means (k-means) or medoid vectors (k-medoids).
    pub centers: Vec<ShapeVector>,
    /// Input indices of the medoids; `None` for k-means.
    pub medoids: Option<Vec<usize>>,
    /// Sum of squared distances to the assigned center.
    pub wcss: f64,
    pub tss: f64,
    /// 1 − WCSS/TSS; 0 when all vectors coincide.
    pub variance_explained: f64,
    /// WCSS after each Lloyd iteration of the winning restart.
    pub wcss_trace: Vec<f64>,
}

fn check_inputs(vectors: &[ShapeVector], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("cluster count must be at least 1"));
    }
    if k > vectors.len() {
        return Err(Error::invalid(format!(
            "cluster count {k} exceeds the number of shapes {}",
            vectors.len()
        )));
    }
    let len = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: v.len(),
        });
    }
    Ok(())
}

fn mean_of<'a>(it: impl Iterator<Item = &'a ShapeVector>, len: usize) -> ShapeVector {
    let mut sum = DVector::zeros(len);
    let mut n = 0usize;
    for v in it {
        sum += v;
        n += 1;
    }
    if n > 0 {
        sum /= n as f64;
    }
    sum
}

fn total_ss(vectors: &[ShapeVector]) -> f64 {
    let mean = mean_of(vectors.iter(), vectors[0].len());
    vectors.iter().map(|v| (v - &mean).norm_squared()).sum()
}

fn explained(wcss: f64, tss: f64) -> f64 {
    if tss > 0.0 {
        (1.0 - wcss / tss).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(v: &ShapeVector, centers: &[ShapeVector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = (v - center).norm_squared();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding over a precomputed squared-distance function.
fn plus_plus_seeds<R: Rng>(n: usize, k: usize, d2: impl Fn(usize, usize) -> f64, rng: &mut R) -> Vec<usize> {
    let mut seeds = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n).map(|i| d2(i, seeds[0])).collect();
    while seeds.len() < k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &c) in closest.iter().enumerate() {
                if c > 0.0 {
                    if u < c {
                        pick = Some(i);
                        break;
                    }
                    u -= c;
                }
            }
            pick.unwrap_or_else(|| closest.iter().rposition(|&c| c > 0.0).unwrap())
        } else {
            // all remaining points coincide with a seed
            (0..n).find(|i| !seeds.contains(i)).unwrap()
        };
        seeds.push(pick);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(d2(i, pick));
        }
    }
    seeds
}

fn restart_seeds<R: RngCore>(rng: &mut R, restarts: usize) -> Result<Vec<u64>> {
    if restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    Ok((0..restarts).map(|_| rng.next_u64()).collect())
}

fn pick_best(runs: Vec<ClusterResult>) -> ClusterResult {
    runs.into_iter()
        .reduce(|best, r| if r.wcss < best.wcss { r } else { best })
        .unwrap()
}

fn lloyd(vectors: &[ShapeVector], k: usize, seed: u64, tss: f64) -> ClusterResult {
    let n = vectors.len();
    let len = vectors[0].len();
    let mut rng = rng_from_seed(seed);
    let seeds = plus_plus_seeds(n, k, |i, j| (&vectors[i] - &vectors[j]).norm_squared(), &mut rng);
    let mut centers: Vec<ShapeVector> = seeds.iter().map(|&i| vectors[i].clone()).collect();
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut dist = vec![0.0; n];
        let mut new_labels = vec![0; n];
        for (i, v) in vectors.iter().enumerate() {
            let (c, d) = nearest(v, &centers);
            new_labels[i] = c;
            dist[i] = d;
        }
        // Repair empty clusters with the point farthest from its center,
        // taken from a cluster that keeps at least one member.
        loop {
            let mut counts = vec![0usize; k];
            new_labels.iter().for_each(|&l| counts[l] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..n)
                .filter(|&i| counts[new_labels[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("k <= N guarantees a donor cluster");
            new_labels[far] = empty;
            dist[far] = 0.0;
            centers[empty] = vectors[far].clone();
        }
        let changed = new_labels != labels;
        labels = new_labels;
        for (c, center) in centers.iter_mut().enumerate() {
            *center = mean_of(
                vectors.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(v, _)| v),
                len,
            );
        }
        let wcss: f64 = vectors
            .iter()
            .zip(&labels)
            .map(|(v, &l)| (v - &centers[l]).norm_squared())
            .sum();
        trace.push(wcss);
        if !changed {
            break;
        }
    }
    let wcss = *trace.last().unwrap();
    ClusterResult {
        k,
        labels,
        centers,
        medoids: None,
        wcss,
        tss,
        variance_explained: explained(wcss, tss),
        wcss_trace: trace,
    }
}

/// Best of `restarts` k-means++-seeded Lloyd runs. Restart seeds are drawn
/// from `rng` up front; the restarts then run concurrently.
pub fn kmeans<R: RngCore>(vectors: &[ShapeVector], k: usize, rng: &mut R, restarts: usize) -> Result<ClusterResult> {
    if vectors.is_empty() {
        return Err(Error::invalid("no shapes to cluster"));
    }
    check_inputs(vectors, k)?;
    let seeds = restart_seeds(rng, restarts)?;
    let tss = total_ss(vectors);
    let runs: Vec<ClusterResult> = seeds.par_iter().map(|&s| lloyd(vectors, k, s, tss)).collect();
    Ok(pick_best(runs))
}

fn pam(vectors: &[ShapeVector], dist: &[Vec<f64>], k: usize, seed: u64, tss: f64) -> ClusterResult {
    let n = vectors.len();
    let mut rng = rng_from_seed(seed);
    let mut medoids = plus_plus_seeds(n, k, |i, j| dist[i][j] * dist[i][j], &mut rng);
    let assign = |medoids: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (c, &m) in medoids.iter().enumerate() {
                    if dist[i][m] < best.1 {
                        best = (c, dist[i][m]);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut labels = assign(&medoids);
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut next = medoids.clone();
        for (c, m) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let cost = |cand: usize| members.iter().map(|&i| dist[cand][i]).sum::<f64>();
            let mut best = (*m, cost(*m));
            for &cand in &members {
                let c = cost(cand);
                if c < best.1 {
                    best = (cand, c);
                }
            }
            *m = best.0;
        }
        let next_labels = assign(&next);
        let total: f64 = (0..n).map(|i| dist[i][next[next_labels[i]]]).sum();
        trace.push(total);
        let done = next == medoids;
        medoids = next;
        labels = next_labels;
        if done {
            break;
        }
    }
    let centers: Vec<ShapeVector> = medoids.iter().map(|&m| vectors[m].clone()).collect();
    let wcss = (0..n).map(|i| dist[i][medoids[labels[i]]].powi(2)).sum();
    ClusterResult {
        k,
        labels,
        centers,
        medoids: Some(medoids),
        wcss,
        tss,
        variance_explained: explained(wcss, tss),
        wcss_trace: trace,
    }
}

/// k-medoids by alternating assignment and per-cluster medoid update,
/// minimizing the sum of Euclidean distances to the medoids. The returned
/// `wcss` is still the sum of squared distances; `wcss_trace` holds the
/// absolute-distance objective per iteration.
pub fn kmedoids<R: RngCore>(vectors: &[ShapeVector], k: usize, rng: &mut R, restarts: usize) -> Result<ClusterResult> {
    if vectors.is_empty() {
        return Err(Error::invalid("no shapes to cluster"));
    }
    check_inputs(vectors, k)?;
    let seeds = restart_seeds(rng, restarts)?;
    let n = vectors.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (&vectors[i] - &vectors[j]).norm()).collect())
        .collect();
    let tss = total_ss(vectors);
    let runs: Vec<ClusterResult> = seeds.par_iter().map(|&s| pam(vectors, &dist, k, s, tss)).collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| {
            if r.wcss_trace.last() < best.wcss_trace.last() {
                r
            } else {
                best
            }
        })
        .unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    pub k_star: usize,
    /// variance explained for k = 1..=k_max (index 0 is k = 1).
    pub curve: Vec<f64>,
    pub results: Vec<ClusterResult>,
}

/// Elbow of the variance-explained curve. With x = (k−1)/(k_max−1), k* is
/// the point lying farthest above the chord joining the curve's endpoints;
/// ties go to the smaller k, and a curve with no point above the chord
/// yields k* = 1.
pub fn elbow_point(curve: &[f64]) -> usize {
    let n = curve.len();
    if n < 3 {
        return 1;
    }
    let (y0, y1) = (curve[0], curve[n - 1]);
    let dx = 1.0;
    let dy = y1 - y0;
    let norm = (dx * dx + dy * dy).sqrt();
    let mut best = (1, 1e-12);
    for (i, &y) in curve.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        // signed distance, positive above the chord
        let d = (dx * (y - y0) - dy * x) / norm;
        if d > best.1 {
            best = (i + 1, d);
        }
    }
    best.0
}

pub fn elbow<R: RngCore>(vectors: &[ShapeVector], k_max: usize, rng: &mut R, restarts: usize) -> Result<ElbowResult> {
    if k_max < 2 {
        return Err(Error::invalid(format!("elbow needs k_max >= 2, got {k_max}")));
    }
    if k_max > vectors.len() {
        return Err(Error::invalid(format!(
            "k_max {k_max} exceeds the number of shapes {}",
            vectors.len()
        )));
    }
    let results = (1..=k_max)
        .map(|k| kmeans(vectors, k, rng, restarts))
        .collect::<Result<Vec<_>>>()?;
    let curve: Vec<f64> = results.iter().map(|r| r.variance_explained).collect();
    Ok(ElbowResult {
        k_star: elbow_point(&curve),
        curve,
        results,
    })
}

/// Per-cluster arithmetic mean of the correspondences; cluster c collects
/// the shapes with label c, for c in 0..=max(label).
pub fn cluster_mean_shapes(ens: &CorrespondenceEnsemble, labels: &[usize]) -> Result<Vec<PointSet>> {
    if labels.len() != ens.len() {
        return Err(Error::DimensionMismatch {
            expected: ens.len(),
            got: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                return Err(Error::invalid(format!("cluster {c} is empty")));
            }
            Ok(ens.subset(&idx)?.mean_shape())
        })
        .collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        // both labelings trivial (all singletons or one cluster)
        return Ok(if a_eq_up_to_perm(a, b) { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max - expected))
}

fn a_eq_up_to_perm(a: &[usize], b: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    let mut inv = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *map.entry(x).or_insert(y) == y && *inv.entry(y).or_insert(x) == x)
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("shape,label\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

pub fn elbow_csv(curve: &[f64]) -> String {
    let mut out = String::from("k,variance_explained\n");
    for (i, v) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{v}", i + 1);
    }
    out
}
