//! Standalone re-implementation of the seeded per-segment task draw.
//!
//! One `next_u64` per segment from `ChaCha8Rng::seed_from_u64(seed)`,
//! mapped to `[0, 1)` with the top 53 bits. Weights are normalized to sum
//! to one, then the draw is scaled by the total weight of the kinds the
//! segment can satisfy and walked cumulatively in the fixed kind order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `weights[k]` is the raw weight of kind `k`; `feasible[i][k]` says whether
/// segment `i` can be turned into kind `k`. Returns the chosen kind index per
/// segment, or `None` when nothing weighted is feasible.
pub fn reference_draw(weights: &[f64], feasible: &[Vec<bool>], seed: u64) -> Vec<Option<usize>> {
    let sum: f64 = weights.iter().sum();
    let norm: Vec<f64> = weights.iter().map(|w| w / sum).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for f in feasible {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let mut total = 0.0;
        let mut last = None;
        for k in 0..norm.len() {
            if f[k] && norm[k] > 0.0 {
                total += norm[k];
                last = Some(k);
            }
        }
        if last.is_none() {
            out.push(None);
            continue;
        }
        let target = u * total;
        let mut cum = 0.0;
        let mut pick = last;
        for k in 0..norm.len() {
            if f[k] && norm[k] > 0.0 {
                cum += norm[k];
                if target < cum {
                    pick = Some(k);
                    break;
                }
            }
        }
        out.push(pick);
    }
    out
}
