//! Streaming K-means: reservoir sample, K-means++ seeding, then mini-batch
//! refinement passes over the full stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A replayable sequence of equal-length samples.
///
/// Each `replay` must visit the same samples in the same order; streams larger
/// than memory re-read their source on every pass.
pub trait SampleStream {
    fn replay(&mut self, sink: &mut dyn FnMut(&[f32]) -> Result<()>) -> Result<()>;
}

impl SampleStream for [Vec<f32>] {
    fn replay(&mut self, sink: &mut dyn FnMut(&[f32]) -> Result<()>) -> Result<()> {
        self.iter().try_for_each(|s| sink(s))
    }
}

impl SampleStream for Vec<Vec<f32>> {
    fn replay(&mut self, sink: &mut dyn FnMut(&[f32]) -> Result<()>) -> Result<()> {
        self.as_mut_slice().replay(sink)
    }
}

/// Adapts a closure that regenerates the samples on each call.
pub struct FnStream<F>(pub F);

impl<F> SampleStream for FnStream<F>
where
    F: FnMut(&mut dyn FnMut(&[f32]) -> Result<()>) -> Result<()>,
{
    fn replay(&mut self, sink: &mut dyn FnMut(&[f32]) -> Result<()>) -> Result<()> {
        (self.0)(sink)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub k: usize,
    /// Clusters with fewer final members are dropped.
    pub min_cluster: usize,
    pub seed: u64,
    pub chunk_size: usize,
    /// Samples kept for K-means++ seeding.
    pub reservoir_size: usize,
    /// Mini-batch refinement passes over the stream.
    pub passes: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 2000,
            min_cluster: 5,
            seed: 0,
            chunk_size: 10_000,
            reservoir_size: 20_000,
            passes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Means of the retained clusters.
    pub representatives: Vec<Vec<f64>>,
    /// Member count of each retained cluster.
    pub counts: Vec<usize>,
    /// Number of clusters before the `min_cluster` filter.
    pub clusters_before_filter: usize,
    /// Mean squared distance to the nearest center at the end of refinement.
    pub inertia: f64,
    pub samples: usize,
}

#[inline]
fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

/// Nearest center index and squared distance; ties go to the lowest index.
pub fn nearest(sample: &[f32], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(sample, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// K-means++ seeding. Stops early once every sample coincides with a center.
pub fn kmeans_plus_plus(samples: &[Vec<f32>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if samples.is_empty() || k == 0 {
        return Vec::new();
    }
    let to64 = |s: &Vec<f32>| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let mut centers = vec![to64(&samples[rng.random_range(0..samples.len())])];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        let c = to64(&samples[pick]);
        for (i, s) in samples.iter().enumerate() {
            let d = sq_dist(s, &c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        centers.push(c);
    }
    centers
}

struct Accumulator {
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
    cost: f64,
}

impl Accumulator {
    fn new(k: usize, dim: usize) -> Self {
        Self {
            sums: vec![vec![0.0; dim]; k],
            counts: vec![0; k],
            cost: 0.0,
        }
    }

    fn add(&mut self, sample: &[f32], centers: &[Vec<f64>]) {
        let (j, d) = nearest(sample, centers);
        self.counts[j] += 1;
        self.cost += d;
        for (s, &x) in self.sums[j].iter_mut().zip(sample) {
            *s += x as f64;
        }
    }

    fn reset(&mut self) {
        self.sums.iter_mut().for_each(|s| s.iter_mut().for_each(|v| *v = 0.0));
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.cost = 0.0;
    }
}

/// Clusters a stream that need not fit in memory.
///
/// Pass 1 fills a uniform reservoir and seeds `k` centers with K-means++.
/// Each refinement pass assigns chunk by chunk and folds the chunk means into
/// the centers with per-pass running counts; when the whole stream is one
/// chunk a pass is exactly one Lloyd step. A last pass computes the cluster
/// means that become the representatives.
pub fn streaming_kmeans<S: SampleStream + ?Sized>(stream: &mut S, params: &KMeansParams) -> Result<KMeansResult> {
    if params.k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if params.chunk_size == 0 || params.reservoir_size == 0 {
        return Err(Error::invalid("chunk_size and reservoir_size must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut reservoir: Vec<Vec<f32>> = Vec::new();
    let mut seen = 0usize;
    let mut dim = None;
    stream.replay(&mut |s| {
        match dim {
            None => dim = Some(s.len()),
            Some(d) if d != s.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                })
            }
            _ => {}
        }
        seen += 1;
        if reservoir.len() < params.reservoir_size {
            reservoir.push(s.to_vec());
        } else {
            let j = rng.random_range(0..seen);
            if j < params.reservoir_size {
                reservoir[j] = s.to_vec();
            }
        }
        Ok(())
    })?;
    let dim = dim.ok_or_else(|| Error::EmptyInput("sample stream is empty".into()))?;

    let mut centers = kmeans_plus_plus(&reservoir, params.k, &mut rng);
    drop(reservoir);
    let k = centers.len();
    let mut acc = Accumulator::new(k, dim);

    for _ in 0..params.passes {
        let mut running = vec![0usize; k];
        let mut chunk: Vec<Vec<f32>> = Vec::with_capacity(params.chunk_size.min(seen));
        let mut fold = |chunk: &mut Vec<Vec<f32>>, centers: &mut Vec<Vec<f64>>, running: &mut Vec<usize>| {
            acc.reset();
            for s in chunk.iter() {
                acc.add(s, centers);
            }
            for j in 0..k {
                let n = acc.counts[j];
                if n == 0 {
                    continue;
                }
                let total = (running[j] + n) as f64;
                let keep = running[j] as f64 / total;
                for (c, &s) in centers[j].iter_mut().zip(&acc.sums[j]) {
                    *c = *c * keep + s / total;
                }
                running[j] += n;
            }
            chunk.clear();
        };
        stream.replay(&mut |s| {
            chunk.push(s.to_vec());
            if chunk.len() == params.chunk_size {
                fold(&mut chunk, &mut centers, &mut running);
            }
            Ok(())
        })?;
        if !chunk.is_empty() {
            fold(&mut chunk, &mut centers, &mut running);
        }
    }

    let mut acc = Accumulator::new(k, dim);
    stream.replay(&mut |s| {
        acc.add(s, &centers);
        Ok(())
    })?;
    let inertia = acc.cost / seen as f64;

    let mut representatives = Vec::new();
    let mut counts = Vec::new();
    for (sum, &n) in acc.sums.iter().zip(&acc.counts) {
        if n >= params.min_cluster.max(1) {
            representatives.push(sum.iter().map(|v| v / n as f64).collect());
            counts.push(n);
        }
    }
    Ok(KMeansResult {
        representatives,
        counts,
        clusters_before_filter: k,
        inertia,
        samples: seen,
    })
}

/// Mean squared distance of samples to their nearest center.
pub fn kmeans_cost(samples: &[Vec<f32>], centers: &[Vec<f64>]) -> f64 {
    samples.iter().map(|s| nearest(s, centers).1).sum::<f64>() / samples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, centers: &[[f32; 2]], spread: f64, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        (0..n)
            .map(|i| {
                let c = centers[i % centers.len()];
                vec![
                    c[0] + noise.sample(&mut rng) as f32,
                    c[1] + noise.sample(&mut rng) as f32,
                ]
            })
            .collect()
    }

    fn lloyd(samples: &[Vec<f32>], mut centers: Vec<Vec<f64>>, iters: usize) -> Vec<Vec<f64>> {
        for _ in 0..iters {
            let mut sums = vec![vec![0.0; 2]; centers.len()];
            let mut counts = vec![0usize; centers.len()];
            for s in samples {
                let (j, _) = nearest(s, &centers);
                counts[j] += 1;
                sums[j][0] += s[0] as f64;
                sums[j][1] += s[1] as f64;
            }
            for j in 0..centers.len() {
                if counts[j] > 0 {
                    centers[j] = sums[j].iter().map(|v| v / counts[j] as f64).collect();
                }
            }
        }
        centers
    }

    #[test]
    fn empty_stream_errors() {
        let mut s: Vec<Vec<f32>> = Vec::new();
        assert!(streaming_kmeans(&mut s, &KMeansParams::default()).is_err());
    }

    #[test]
    fn fewer_points_than_clusters() {
        let mut s: Vec<Vec<f32>> = vec![vec![0.0, 1.0], vec![3.0, 4.0], vec![-2.0, 7.5]];
        let params = KMeansParams {
            k: 10,
            min_cluster: 1,
            ..Default::default()
        };
        let res = streaming_kmeans(&mut s, &params).unwrap();
        assert_eq!(res.representatives.len(), 3);
        let mut got: Vec<Vec<f64>> = res.representatives.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f64>> = s.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert!(res.inertia == 0.0);
    }

    #[test]
    fn tiny_instance_close_to_multi_restart_lloyd() {
        let mut pts = blobs(20, &[[0.0, 0.0], [5.0, 5.0], [9.0, -1.0]], 1.0, 5);
        let params = KMeansParams {
            k: 3,
            min_cluster: 1,
            chunk_size: 100,
            passes: 20,
            seed: 1,
            ..Default::default()
        };
        let res = streaming_kmeans(&mut pts, &params).unwrap();
        let ours = kmeans_cost(&pts, &res.representatives);

        // oracle: Lloyd from every triple of distinct starting points
        let mut best = f64::INFINITY;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                for c in b + 1..pts.len() {
                    let init: Vec<Vec<f64>> = [a, b, c]
                        .iter()
                        .map(|&i| pts[i].iter().map(|&x| x as f64).collect())
                        .collect();
                    let cost = kmeans_cost(&pts, &lloyd(&pts, init, 30));
                    best = best.min(cost);
                }
            }
        }
        assert!(ours <= best * 1.05, "ours {ours} oracle {best}");
    }

    #[test]
    fn full_batch_passes_never_increase_cost() {
        let pts = blobs(300, &[[0.0, 0.0], [4.0, 4.0], [8.0, 0.0], [4.0, -4.0]], 1.5, 9);
        let mut prev = f64::INFINITY;
        for passes in 0..8 {
            let mut s = pts.clone();
            let params = KMeansParams {
                k: 6,
                min_cluster: 1,
                chunk_size: 10_000,
                passes,
                seed: 4,
                ..Default::default()
            };
            let res = streaming_kmeans(&mut s, &params).unwrap();
            assert!(res.inertia <= prev + 1e-12, "pass {passes}: {} > {prev}", res.inertia);
            prev = res.inertia;
        }
    }

    #[test]
    fn small_clusters_are_dropped_and_seed_is_deterministic() {
        let mut pts = blobs(200, &[[0.0, 0.0], [10.0, 10.0]], 0.5, 2);
        pts.push(vec![100.0, 100.0]);
        let params = KMeansParams {
            k: 3,
            min_cluster: 5,
            seed: 8,
            chunk_size: 64,
            ..Default::default()
        };
        let a = streaming_kmeans(&mut pts, &params).unwrap();
        let b = streaming_kmeans(&mut pts, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clusters_before_filter, 3);
        assert_eq!(a.representatives.len(), 2);
        assert!(a.counts.iter().all(|&n| n >= 5));
    }

    #[test]
    fn fn_stream_matches_vec_stream() {
        let pts = blobs(500, &[[0.0, 0.0], [3.0, 3.0]], 1.0, 3);
        let params = KMeansParams {
            k: 4,
            min_cluster: 1,
            chunk_size: 50,
            ..Default::default()
        };
        let mut v = pts.clone();
        let a = streaming_kmeans(&mut v, &params).unwrap();
        let mut f = FnStream(|sink: &mut dyn FnMut(&[f32]) -> Result<()>| {
            for p in &pts {
                sink(p)?;
            }
            Ok(())
        });
        let b = streaming_kmeans(&mut f, &params).unwrap();
        assert_eq!(a, b);
    }
}
