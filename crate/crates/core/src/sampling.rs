//! Minibatch index schedules and the exact pair-probability oracle.

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{streams, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    /// Shuffle once per epoch and cut the permutation into consecutive batches.
    EpochWithoutReplacement,
    /// Every batch is `S` independent uniform draws; duplicates allowed.
    IidWithReplacement,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::EpochWithoutReplacement => "epoch",
            SamplingMode::IidWithReplacement => "iid",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" | "epoch_without_replacement" => Ok(SamplingMode::EpochWithoutReplacement),
            "iid" | "iid_with_replacement" => Ok(SamplingMode::IidWithReplacement),
            other => Err(Error::InvalidInput(format!("unknown sampling mode `{other}`"))),
        }
    }
}

/// Stateful batch generator. Fully determined by `(mode, N, S, stream)`.
///
/// In epoch mode a fresh permutation is drawn at every epoch boundary; when
/// `S` does not divide `N` the last batch of each epoch holds the remainder.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    mode: SamplingMode,
    num_examples: usize,
    batch_size: usize,
    stream: StreamId,
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    pos: usize,
    buf: Vec<usize>,
    batches_drawn: u64,
}

impl BatchSchedule {
    pub fn new(mode: SamplingMode, num_examples: usize, batch_size: usize, stream: StreamId) -> Result<Self> {
        if batch_size == 0 || batch_size > num_examples {
            return Err(Error::InvalidHyperparams(format!(
                "batch size {batch_size} must lie in 1..={num_examples}"
            )));
        }
        Ok(Self {
            mode,
            num_examples,
            batch_size,
            stream,
            rng: stream.rng(),
            perm: (0..num_examples).collect(),
            pos: num_examples,
            buf: Vec::with_capacity(batch_size),
            batches_drawn: 0,
        })
    }

    /// Schedule on the conventional schedule stream of `seed`.
    pub fn from_seed(mode: SamplingMode, num_examples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::new(mode, num_examples, batch_size, StreamId::new(seed, streams::SCHEDULE))
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_drawn(&self) -> u64 {
        self.batches_drawn
    }

    /// True when the next call to [`next_batch`](Self::next_batch) starts a new epoch.
    pub fn at_epoch_boundary(&self) -> bool {
        self.pos >= self.num_examples
    }

    /// `(mode, N, S, stream)` as logged in output headers.
    pub fn describe(&self) -> String {
        format!(
            "mode={} N={} S={} rng={}",
            self.mode.as_str(),
            self.num_examples,
            self.batch_size,
            self.stream
        )
    }

    /// Indices (0-based) of the next minibatch.
    pub fn next_batch(&mut self) -> &[usize] {
        self.batches_drawn += 1;
        match self.mode {
            SamplingMode::EpochWithoutReplacement => {
                if self.pos >= self.num_examples {
                    self.perm.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let end = (self.pos + self.batch_size).min(self.num_examples);
                let batch = &self.perm[self.pos..end];
                self.pos = end;
                batch
            }
            SamplingMode::IidWithReplacement => {
                self.buf.clear();
                for _ in 0..self.batch_size {
                    let i = self.rng.random_range(0..self.num_examples);
                    self.buf.push(i);
                }
                &self.buf
            }
        }
    }
}

pub type Rational = Ratio<i64>;

/// Exact lag-`h` joint inclusion probabilities under epoch sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProbability {
    /// `E[s_k^n s_{k+h}^ñ]` given both batches lie in the same epoch
    /// (`None` when `h ≥ M`, where that cannot happen).
    pub same_epoch: Option<Rational>,
    /// The same expectation across an epoch boundary (`None` for `h = 0`).
    pub cross_epoch: Option<Rational>,
    /// Fraction of positions `k` within an epoch for which `k + h` is in the same epoch.
    pub same_epoch_probability: Rational,
    /// Expectation averaged over the position of `k` within its epoch.
    pub expectation: Rational,
}

/// Largest dataset the enumeration oracle accepts.
pub const ORACLE_MAX_N: usize = 12;

/// Enumerates every permutation of one epoch to get `E[s_k^n s_{k+h}^ñ]`,
/// with `s_k^n` the indicator that example `n` is in batch `k`.
///
/// Batches in different epochs come from independent permutations, so the
/// cross-epoch value is the product of per-epoch marginals, each of which is
/// itself obtained by enumeration.
pub fn pair_probability_oracle(n: usize, s: usize, h: usize, same_example: bool) -> Result<PairProbability> {
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidInput(format!("oracle enumerates N! permutations; N = {n} exceeds {ORACLE_MAX_N}")));
    }
    if s == 0 || s > n || n % s != 0 {
        return Err(Error::InvalidInput(format!("oracle needs S | N, got N = {n}, S = {s}")));
    }
    if !same_example && n < 2 {
        return Err(Error::InvalidInput("distinct examples need N >= 2".into()));
    }
    let m = n / s;
    if h > 2 * m {
        return Err(Error::InvalidInput(format!("lag {h} exceeds 2M = {}", 2 * m)));
    }
    let (a, b) = (0usize, if same_example { 0 } else { 1 });

    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0i64;
    // joint[p] counts permutations with a in batch p and b in batch p + h
    let mut joint = vec![0i64; m];
    let mut marginal_a = vec![0i64; m];
    let mut marginal_b = vec![0i64; m];
    let mut slot = vec![0usize; n];
    loop {
        total += 1;
        for (pos, &x) in perm.iter().enumerate() {
            slot[x] = pos / s;
        }
        let (ba, bb) = (slot[a], slot[b]);
        marginal_a[ba] += 1;
        marginal_b[bb] += 1;
        if h < m && ba + h == bb {
            joint[ba] += 1;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }

    let same_positions = m.saturating_sub(h);
    let same_epoch = (h < m).then(|| {
        let hits: i64 = joint[..same_positions].iter().sum();
        Rational::new(hits, total * same_positions as i64)
    });
    let cross_epoch = (h > 0).then(|| {
        // average the product of marginals over the positions that straddle a boundary
        let mut acc = Rational::from_integer(0);
        let mut count = 0i64;
        for p in 0..m {
            if p + h >= m {
                let q = (p + h) % m;
                acc += Rational::new(marginal_a[p], total) * Rational::new(marginal_b[q], total);
                count += 1;
            }
        }
        acc / Rational::from_integer(count)
    });
    let same_epoch_probability = Rational::new(same_positions as i64, m as i64);
    let expectation = same_epoch.unwrap_or_default() * same_epoch_probability
        + cross_epoch.unwrap_or_default() * (Rational::from_integer(1) - same_epoch_probability);
    Ok(PairProbability { same_epoch, cross_epoch, same_epoch_probability, expectation })
}

/// Lexicographic successor; returns false after the last permutation.
fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Normalized noise autocorrelation at lag `h` implied by the oracle:
/// `(E_same - E_distinct) · N(N-1) / (S(N-S))`.
pub fn oracle_weight(n: usize, s: usize, h: usize) -> Result<Rational> {
    if s == n {
        return Err(Error::DegenerateEpoch { batches: 1 });
    }
    let same = pair_probability_oracle(n, s, h, true)?.expectation;
    let diff = pair_probability_oracle(n, s, h, false)?.expectation;
    let (n, s) = (n as i64, s as i64);
    Ok((same - diff) * Rational::new(n * (n - 1), s * (n - s)))
}

/// Noise autocorrelation weight at lag `h` for `M` batches per epoch:
/// `δ_{h,0} − 1_{1..M}(|h|)(M−|h|)/(M(M−1))`.
pub fn autocorr_weight(h: i64, m: usize) -> Result<f64> {
    let r = autocorr_weight_exact(h, m)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

pub fn autocorr_weight_exact(h: i64, m: usize) -> Result<Rational> {
    if m < 2 {
        return Err(Error::DegenerateEpoch { batches: m });
    }
    let m = m as i64;
    let a = h.unsigned_abs() as i64;
    Ok(if a == 0 {
        Rational::from_integer(1)
    } else if a <= m {
        -Rational::new(m - a, m * (m - 1))
    } else {
        Rational::from_integer(0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_epoch_partitions() {
        let mut sched = BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, 4, 2, 1).unwrap();
        let mut seen = Vec::new();
        seen.extend_from_slice(sched.next_batch());
        seen.extend_from_slice(sched.next_batch());
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!(sched.at_epoch_boundary());
    }

    #[test]
    fn ragged_last_batch() {
        let mut sched = BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, 7, 3, 1).unwrap();
        let sizes: Vec<usize> = (0..6).map(|_| sched.next_batch().len()).collect();
        assert_eq!(sizes, vec![3, 3, 1, 3, 3, 1]);
    }

    #[test]
    fn inclusion_frequency() {
        let mut sched = BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, 4, 2, 2).unwrap();
        let draws = 100_000usize;
        let hits = (0..draws).filter(|_| sched.next_batch().contains(&0)).count();
        let p = hits as f64 / draws as f64;
        let sd = (0.25 / draws as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sd, "p = {p}");
    }

    #[test]
    fn iid_duplicate_rate() {
        let mut sched = BatchSchedule::from_seed(SamplingMode::IidWithReplacement, 4, 2, 3).unwrap();
        let draws = 100_000usize;
        let dup = (0..draws)
            .filter(|_| {
                let b = sched.next_batch();
                b[0] == b[1]
            })
            .count();
        let p = dup as f64 / draws as f64;
        let sd = (0.25 * 0.75 / draws as f64).sqrt();
        assert!((p - 0.25).abs() < 3.0 * sd, "p = {p}");
    }

    #[test]
    fn schedule_is_reproducible() {
        let mut a = BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, 10, 3, 4).unwrap();
        let mut b = BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, 10, 3, 4).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch().to_vec(), b.next_batch().to_vec());
        }
    }

    #[test]
    fn oracle_examples() {
        let r = |a, b| Rational::new(a, b);
        let p = pair_probability_oracle(4, 2, 0, true).unwrap();
        assert_eq!(p.expectation, r(1, 2));
        let p = pair_probability_oracle(4, 2, 1, true).unwrap();
        assert_eq!(p.same_epoch, Some(r(0, 1)));
        let p = pair_probability_oracle(4, 2, 1, false).unwrap();
        assert_eq!(p.same_epoch, Some(r(1, 3)));
        assert_eq!(p.cross_epoch, Some(r(1, 4)));
        assert!(pair_probability_oracle(13, 1, 0, true).is_err());
        assert!(pair_probability_oracle(6, 4, 0, true).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(autocorr_weight(0, 7).unwrap(), 1.0);
        assert_eq!(autocorr_weight(1, 2).unwrap(), -0.5);
        assert_eq!(autocorr_weight(2, 2).unwrap(), 0.0);
        assert_eq!(autocorr_weight(-1, 2).unwrap(), -0.5);
        for (h, want) in [(1, Rational::new(-1, 3)), (2, Rational::new(-1, 6)), (3, Rational::new(0, 1))] {
            assert_eq!(autocorr_weight_exact(h, 3).unwrap(), want);
            assert_eq!(oracle_weight(6, 2, h as usize).unwrap(), want);
        }
        assert!(autocorr_weight(0, 1).is_err());
    }

    #[test]
    fn batch_covariance_by_enumeration() {
        // all C(6, 2) batches of a 1-d ensemble: Var(batch mean) = (1/S)(1 - S/N) C₀
        let eps = [1.5, -0.5, 2.0, -1.0, -3.0, 1.0];
        let n = eps.len();
        let c0 = eps.iter().map(|x| x * x).sum::<f64>() / (n as f64 - 1.0);
        let mut acc = 0.0;
        let mut count = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let m = (eps[i] + eps[j]) / 2.0;
                acc += m * m;
                count += 1.0;
            }
        }
        let want = 0.5 * (1.0 - 2.0 / 6.0) * c0;
        assert!((acc / count - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_sum_to_zero(m in 2usize..200) {
            let total: Rational = (-(m as i64)..=(m as i64))
                .map(|h| autocorr_weight_exact(h, m).unwrap())
                .sum();
            prop_assert_eq!(total, Rational::from_integer(0));
        }

        #[test]
        fn epoch_is_partition(n in 2usize..40, s_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let s = 1 + ((n - 1) as f64 * s_frac) as usize;
            let mut sched = BatchSchedule::from_seed(SamplingMode::EpochWithoutReplacement, n, s, seed).unwrap();
            for _ in 0..3 {
                let mut seen = Vec::new();
                loop {
                    seen.extend_from_slice(sched.next_batch());
                    if sched.at_epoch_boundary() { break; }
                }
                seen.sort();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn iid_batches_in_range(n in 1usize..50, seed in any::<u64>()) {
            let mut sched = BatchSchedule::from_seed(SamplingMode::IidWithReplacement, n, 1.max(n / 2), seed).unwrap();
            for _ in 0..10 {
                let b = sched.next_batch();
                prop_assert_eq!(b.len(), 1.max(n / 2));
                prop_assert!(b.iter().all(|&i| i < n));
            }
        }
    }
}
