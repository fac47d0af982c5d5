use crate::psm::UnaryMap;
use crate::skeleton::Pose2D;

/// Summed unary score of each projected pose at its joint locations.
pub fn raw_weights(unaries: &UnaryMap, projected: &[Pose2D]) -> Vec<f64> {
    projected
        .iter()
        .map(|p| p.joints.iter().enumerate().map(|(j, x)| unaries.sample(j, *x)).sum())
        .collect()
}

/// Keeps the `k_w` poses with the highest raw weight (lower index first on
/// ties), min-max normalizes them onto `[0, 1]` and zeroes the rest. If all
/// kept raw weights are equal every kept pose gets weight 1.
pub fn compute_weights(unaries: &UnaryMap, projected: &[Pose2D], k_w: usize) -> Vec<f64> {
    normalize_top(&raw_weights(unaries, projected), k_w)
}

pub fn normalize_top(raw: &[f64], k_w: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    let kept = &order[..k_w.min(raw.len())];
    let mut out = vec![0.0; raw.len()];
    if kept.is_empty() {
        return out;
    }
    let hi = raw[kept[0]];
    let lo = raw[kept[kept.len() - 1]];
    let range = hi - lo;
    for &i in kept {
        out[i] = if range > 0.0 { (raw[i] - lo) / range } else { 1.0 };
    }
    out
}
