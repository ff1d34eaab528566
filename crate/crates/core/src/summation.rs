//! Pairwise (tree) summation.
//!
//! Every reduction in the crate goes through these helpers so that results
//! depend only on the order of the inputs and never on how work was split
//! across threads.

const BLOCK: usize = 128;

/// Pairwise sum of a slice. Error grows like O(log n) rather than O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        // eight independent lanes keep the base case vectorizable
        let mut lanes = [0.0f64; 8];
        let chunks = xs.chunks_exact(8);
        let rem = chunks.remainder();
        for c in chunks {
            for (l, v) in lanes.iter_mut().zip(c) {
                *l += *v;
            }
        }
        let mut s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
        for v in rem {
            s += *v;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Streaming pairwise summation for values produced one at a time.
///
/// Values are buffered in blocks; full blocks are reduced and merged like a
/// binary counter, so the summation tree only depends on the push order.
#[derive(Debug, Clone, Default)]
pub struct PairwiseAccumulator {
    buf: Vec<f64>,
    // levels[k] holds the sum of 2^k full blocks, if present
    levels: Vec<Option<f64>>,
}

impl PairwiseAccumulator {
    pub fn new() -> Self {
        Self { buf: Vec::with_capacity(BLOCK), levels: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.buf.push(v);
        if self.buf.len() == BLOCK {
            let mut carry = pairwise_sum(&self.buf);
            self.buf.clear();
            for slot in self.levels.iter_mut() {
                match slot.take() {
                    Some(s) => carry += s,
                    None => {
                        *slot = Some(carry);
                        return;
                    }
                }
            }
            self.levels.push(Some(carry));
        }
    }

    pub fn sum(&self) -> f64 {
        let mut total = pairwise_sum(&self.buf);
        for s in self.levels.iter().flatten() {
            total += *s;
        }
        total
    }
}

/// Running prefix sums with Neumaier compensation.
pub fn compensated_prefix_sums(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        out.push(sum + comp);
    }
    out
}

/// Mean of a slice via pairwise summation; NaN for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let xs: Vec<f64> = (1..=10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 50_005_000.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn pairwise_beats_naive_on_ill_conditioned_input() {
        let n = 1 << 20;
        let xs = vec![0.1f64; n];
        let exact = 0.1 * n as f64;
        let naive: f64 = xs.iter().sum();
        let pw = pairwise_sum(&xs);
        assert!((pw - exact).abs() <= (naive - exact).abs());
        assert!((pw - exact).abs() / exact < 1e-13);
    }

    #[test]
    fn accumulator_agrees_with_slice_sum() {
        let xs: Vec<f64> = (0..5_000).map(|i| ((i * 37) % 101) as f64 * 0.37 - 11.0).collect();
        let mut acc = PairwiseAccumulator::new();
        for &x in &xs {
            acc.push(x);
        }
        let a = acc.sum();
        let b = pairwise_sum(&xs);
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn prefix_sums_end_at_total() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let p = compensated_prefix_sums(&xs);
        assert_eq!(p.len(), xs.len());
        assert!((p[999] - pairwise_sum(&xs)).abs() < 1e-14);
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }
}
