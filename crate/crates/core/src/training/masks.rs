//! Random masking of node histories and image patches.

use rand::seq::index::sample;
use rand::Rng;

/// `round(ratio · n)` indices drawn uniformly without replacement, sorted.
pub fn draw_mask(n: usize, ratio: f64, rng: &mut impl Rng) -> Vec<usize> {
    let k = ((ratio * n as f64).round() as usize).min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Node and patch mask sets for one training sample.
pub fn draw_dynamic_masks(
    node_count: usize,
    patch_count: usize,
    node_ratio: f64,
    patch_ratio: f64,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<usize>) {
    let nodes = draw_mask(node_count, node_ratio, rng);
    let patches = draw_mask(patch_count, patch_ratio, rng);
    (nodes, patches)
}
