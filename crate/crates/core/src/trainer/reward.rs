use crate::agent::neg_entropy;

/// Parts of one step's reward; `total` is their exact sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub critic_delta: f64,
    pub entropy_penalty: f64,
    pub reuse_penalty: f64,
    pub total: f64,
}

/// Critic increment with the default penalty weights (0.05 entropy, 1 reuse).
pub fn compute_reward(d_before: f64, d_after: f64, dist: &[f64], reused: bool) -> RewardBreakdown {
    compute_reward_with(d_before, d_after, dist, reused, 0.05, 1.0)
}

/// R' = (D(s') - D(s)) - c (log |F| + sum p log p) - [reused] * reuse.
pub fn compute_reward_with(
    d_before: f64,
    d_after: f64,
    dist: &[f64],
    reused: bool,
    entropy_coefficient: f64,
    reuse: f64,
) -> RewardBreakdown {
    let critic_delta = d_after - d_before;
    let entropy_penalty = -entropy_coefficient * ((dist.len() as f64).ln() + neg_entropy(dist));
    let reuse_penalty = if reused { -reuse } else { 0.0 };
    RewardBreakdown {
        critic_delta,
        entropy_penalty,
        reuse_penalty,
        total: critic_delta + entropy_penalty + reuse_penalty,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_extremes() {
        let u = compute_reward(0.0, 0.0, &[0.125; 8], false);
        assert!(u.entropy_penalty.abs() < 1e-15);
        let mut one_hot = [0.0; 8];
        one_hot[2] = 1.0;
        let o = compute_reward(0.0, 0.0, &one_hot, false);
        assert!((o.entropy_penalty + 0.05 * 8f64.ln()).abs() < 1e-15);
        assert!((o.entropy_penalty + 0.10397).abs() < 1e-5);
    }

    #[test]
    fn reuse_total() {
        let r = compute_reward(0.2, 0.5, &[0.125; 8], true);
        assert!((r.total + 0.7).abs() < 1e-12);
        assert_eq!(r.total, r.critic_delta + r.entropy_penalty + r.reuse_penalty);
    }
}
