//! Synthetic locally stationary streams: a schedule of stationarity
//! intervals, each answered by one linear generator from a small pool.
//!
//! Every random draw is keyed by `(seed, purpose, step)` so any step can be
//! regenerated on its own and streams do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::Observation;
use crate::loss::OutcomeRange;

const DOMAIN_SCHEDULE: u64 = 0x5343_4845_4455_4c45;
const DOMAIN_POOL: u64 = 0x504f_4f4c_5645_4354;
const DOMAIN_SAMPLE: u64 = 0x5341_4d50_4c45_5854;

fn keyed_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Distribution of each signal coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalLaw {
    /// Uniform on `[-1, 1]`.
    #[default]
    Uniform,
    /// Standard normal.
    Gaussian,
}

impl SignalLaw {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Uniform => rng.random_range(-1.0..=1.0),
            Self::Gaussian => rng.sample(StandardNormal),
        }
    }
}

/// Linear response generators `y = a_s . x + noise_std * eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorPool {
    weight_vectors: Vec<Vec<f64>>,
    noise_std: f64,
    signal: SignalLaw,
}

impl GeneratorPool {
    pub fn new(weight_vectors: Vec<Vec<f64>>, noise_std: f64, signal: SignalLaw) -> Result<Self> {
        let Some(first) = weight_vectors.first() else {
            return Err(Error::Config("generator pool must hold at least one generator".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::Config("signal dimension must be at least 1".into()));
        }
        if let Some(v) = weight_vectors.iter().find(|v| v.len() != n) {
            return Err(Error::Dimension {
                what: "generator weight vector",
                got: v.len(),
                expected: n,
            });
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std = {noise_std} must be finite and >= 0")));
        }
        Ok(Self {
            weight_vectors,
            noise_std,
            signal,
        })
    }

    /// `size` generators with coordinates drawn uniformly from `[-1, 1]`.
    pub fn random(size: usize, dim: usize, noise_std: f64, signal: SignalLaw, seed: u64) -> Result<Self> {
        let mut rng = keyed_rng(seed, DOMAIN_POOL, 0);
        let vectors = (0..size)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        Self::new(vectors, noise_std, signal)
    }

    pub fn weight_vectors(&self) -> &[Vec<f64>] {
        &self.weight_vectors
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn signal(&self) -> SignalLaw {
        self.signal
    }

    pub fn dim(&self) -> usize {
        self.weight_vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.weight_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight_vectors.is_empty()
    }

    /// `[-M, M]` with `M = max_s |a_s|_1 + 4 noise_std`, which bounds every
    /// noiseless response for uniform signals.
    pub fn default_range(&self) -> Result<OutcomeRange> {
        let l1 = self
            .weight_vectors
            .iter()
            .map(|v| v.iter().map(|c| c.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let m = l1 + 4.0 * self.noise_std;
        if m > 0.0 {
            OutcomeRange::new(-m, m)
        } else {
            OutcomeRange::new(-1.0, 1.0)
        }
    }
}

/// A partition of `[1, T]` into stationarity intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentSchedule {
    /// `1 = t_0 < t_1 < ... < t_k = T + 1`.
    boundaries: Vec<usize>,
    generator_ids: Vec<usize>,
}

impl SegmentSchedule {
    pub fn new(boundaries: Vec<usize>, generator_ids: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 1 {
            return Err(Error::Config("schedule boundaries must start at step 1 and hold at least one segment".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("schedule boundaries must be strictly increasing".into()));
        }
        if generator_ids.len() + 1 != boundaries.len() {
            return Err(Error::Config("one generator id per segment is required".into()));
        }
        Ok(Self {
            boundaries,
            generator_ids,
        })
    }

    /// Equal-length segments over `[1, horizon]`, all answered by generator 0.
    pub fn equal_split(horizon: usize, segments: usize) -> Result<Self> {
        let boundaries = equal_boundaries(horizon, segments)?;
        Self::new(boundaries, vec![0; segments])
    }

    pub fn horizon(&self) -> usize {
        self.boundaries[self.boundaries.len() - 1] - 1
    }

    pub fn num_segments(&self) -> usize {
        self.generator_ids.len()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn generator_ids(&self) -> &[usize] {
        &self.generator_ids
    }

    /// Segments as `(first step, one past last step, generator id)`.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.boundaries
            .windows(2)
            .zip(&self.generator_ids)
            .map(|(w, &g)| (w[0], w[1], g))
    }

    /// Number of adjacent segments answered by different generators.
    pub fn switches(&self) -> usize {
        self.generator_ids.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Index of the segment containing step `t`.
    pub fn segment_of(&self, t: usize) -> Option<usize> {
        if t < 1 || t > self.horizon() {
            return None;
        }
        Some(self.boundaries.partition_point(|&b| b <= t) - 1)
    }

    pub fn generator_at(&self, t: usize) -> Option<usize> {
        self.segment_of(t).map(|s| self.generator_ids[s])
    }
}

fn equal_boundaries(horizon: usize, segments: usize) -> Result<Vec<usize>> {
    if segments == 0 {
        return Err(Error::Config("at least one segment is required".into()));
    }
    if segments > horizon {
        return Err(Error::Config(format!(
            "cannot split {horizon} steps into {segments} segments"
        )));
    }
    let base = horizon / segments;
    let extra = horizon % segments;
    let mut boundaries = Vec::with_capacity(segments + 1);
    let mut at = 1;
    boundaries.push(at);
    for j in 0..segments {
        at += base + usize::from(j < extra);
        boundaries.push(at);
    }
    Ok(boundaries)
}

/// Equal-length segments (remainder on the first ones) with generator ids
/// drawn from `seed`; adjacent segments differ whenever `pool_size > 1`.
pub fn make_schedule(horizon: usize, segments: usize, pool_size: usize, seed: u64) -> Result<SegmentSchedule> {
    if pool_size == 0 {
        return Err(Error::Config("pool_size must be at least 1".into()));
    }
    let boundaries = equal_boundaries(horizon, segments)?;
    let mut rng = keyed_rng(seed, DOMAIN_SCHEDULE, 0);
    let mut ids: Vec<usize> = Vec::with_capacity(segments);
    for _ in 0..segments {
        let id = match ids.last() {
            Some(&prev) if pool_size > 1 => {
                let k = rng.random_range(0..pool_size - 1);
                if k >= prev {
                    k + 1
                } else {
                    k
                }
            }
            _ => rng.random_range(0..pool_size),
        };
        ids.push(id);
    }
    SegmentSchedule::new(boundaries, ids)
}

/// The pair observed at step `t`, a pure function of `(seed, t)`.
pub fn sample_pair(pool: &GeneratorPool, schedule: &SegmentSchedule, t: usize, seed: u64) -> Result<Observation> {
    let generator = schedule
        .generator_at(t)
        .ok_or_else(|| Error::Domain(format!("step {t} lies outside the schedule [1, {}]", schedule.horizon())))?;
    let a = pool.weight_vectors.get(generator).ok_or_else(|| {
        Error::Config(format!("schedule uses generator {generator} but the pool has {}", pool.len()))
    })?;
    let mut rng = keyed_rng(seed, DOMAIN_SAMPLE, t as u64);
    let x: Vec<f64> = (0..pool.dim()).map(|_| pool.signal.draw(&mut rng)).collect();
    let eps: f64 = rng.sample(StandardNormal);
    let y = a.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>() + pool.noise_std * eps;
    Ok(Observation::new(x, y))
}

/// Steps `1..=T` of the stream.
pub fn generate_stream(pool: &GeneratorPool, schedule: &SegmentSchedule, seed: u64) -> Result<Vec<Observation>> {
    (1..=schedule.horizon()).map(|t| sample_pair(pool, schedule, t, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_split_boundaries() {
        let s = make_schedule(100, 10, 4, 7).unwrap();
        assert_eq!(s.boundaries(), &[1, 11, 21, 31, 41, 51, 61, 71, 81, 91, 101]);
        assert_eq!(s.switches(), 9);
        let s = make_schedule(23, 4, 2, 7).unwrap();
        assert_eq!(s.boundaries(), &[1, 7, 13, 19, 24]);
    }

    #[test]
    fn single_segment() {
        let s = make_schedule(50, 1, 4, 3).unwrap();
        assert_eq!(s.num_segments(), 1);
        assert_eq!(s.switches(), 0);
        assert_eq!(s.horizon(), 50);
    }

    #[test]
    fn schedule_is_seeded() {
        assert_eq!(make_schedule(1000, 10, 4, 11).unwrap(), make_schedule(1000, 10, 4, 11).unwrap());
        let ids: Vec<_> = (0..20).map(|s| make_schedule(1000, 10, 4, s).unwrap().generator_ids().to_vec()).collect();
        assert!(ids.iter().any(|v| v != &ids[0]));
    }

    #[test]
    fn adjacent_generators_differ() {
        for seed in 0..50 {
            let s = make_schedule(300, 10, 4, seed).unwrap();
            assert_eq!(s.switches(), 9);
            assert!(s.generator_ids().iter().all(|&g| g < 4));
        }
        let s = make_schedule(30, 3, 1, 0).unwrap();
        assert_eq!(s.generator_ids(), &[0, 0, 0]);
    }

    #[test]
    fn schedule_validation() {
        assert!(matches!(make_schedule(5, 6, 2, 0), Err(Error::Config(_))));
        assert!(make_schedule(5, 0, 2, 0).is_err());
        assert!(make_schedule(5, 1, 0, 0).is_err());
        assert!(SegmentSchedule::new(vec![1, 5, 5], vec![0, 1]).is_err());
    }

    #[test]
    fn segment_lookup() {
        let s = make_schedule(100, 10, 4, 7).unwrap();
        assert_eq!(s.segment_of(1), Some(0));
        assert_eq!(s.segment_of(10), Some(0));
        assert_eq!(s.segment_of(11), Some(1));
        assert_eq!(s.segment_of(100), Some(9));
        assert_eq!(s.segment_of(0), None);
        assert_eq!(s.segment_of(101), None);
    }

    #[test]
    fn noiseless_projection() {
        let pool = GeneratorPool::new(vec![vec![1.0, 0.0, 0.0]], 0.0, SignalLaw::Uniform).unwrap();
        let sched = make_schedule(20, 1, 1, 0).unwrap();
        for t in 1..=20 {
            let o = sample_pair(&pool, &sched, t, 5).unwrap();
            assert_eq!(o.y, o.x[0]);
            assert!(o.x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn random_access_equals_sequential() {
        let pool = GeneratorPool::random(4, 3, 1.0, SignalLaw::Uniform, 2).unwrap();
        let sched = make_schedule(200, 10, 4, 2).unwrap();
        let stream = generate_stream(&pool, &sched, 2).unwrap();
        for t in [200, 1, 77, 150, 3] {
            assert_eq!(sample_pair(&pool, &sched, t, 2).unwrap(), stream[t - 1]);
        }
        assert_eq!(stream, generate_stream(&pool, &sched, 2).unwrap());
    }

    #[test]
    fn noise_moments() {
        let pool = GeneratorPool::random(4, 3, 1.0, SignalLaw::Uniform, 8).unwrap();
        let n = 100_000;
        let sched = make_schedule(n, 10, 4, 8).unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        for t in 1..=n {
            let o = sample_pair(&pool, &sched, t, 8).unwrap();
            let a = &pool.weight_vectors()[sched.generator_at(t).unwrap()];
            let r = o.y - a.iter().zip(&o.x).map(|(c, v)| c * v).sum::<f64>();
            sum += r;
            sq += r * r;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn default_range_covers_noiseless_responses() {
        let pool = GeneratorPool::random(4, 5, 0.0, SignalLaw::Uniform, 1).unwrap();
        let r = pool.default_range().unwrap();
        let sched = make_schedule(500, 5, 4, 1).unwrap();
        for o in generate_stream(&pool, &sched, 1).unwrap() {
            assert!(r.contains(o.y));
        }
    }

    #[test]
    fn pool_validation() {
        assert!(GeneratorPool::new(vec![], 0.0, SignalLaw::Uniform).is_err());
        assert!(GeneratorPool::new(vec![vec![1.0], vec![1.0, 2.0]], 0.0, SignalLaw::Uniform).is_err());
        assert!(GeneratorPool::new(vec![vec![1.0]], -1.0, SignalLaw::Uniform).is_err());
    }
}
