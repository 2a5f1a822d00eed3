use crate::RlError;

/// Generalized advantage estimates for one trajectory segment. `values`
/// carries one extra trailing entry, the bootstrap value of the state after
/// the last reward (zero after termination). Returns `(advantages,
/// returns)` with `returns = advantages + values[..T]`.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    if values.len() != rewards.len() + 1 {
        return Err(RlError::Shape(format!("{} values for {} rewards; expected one more", values.len(), rewards.len())));
    }
    let t = rewards.len();
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let delta = rewards[i] + gamma * values[i + 1] - values[i];
        next = delta + gamma * lambda * next;
        adv[i] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_mismatch() {
        assert!(matches!(compute_gae(&[1.0, 2.0], &[0.0, 0.0], 0.9, 0.9), Err(RlError::Shape(_))));
    }

    #[test]
    fn empty_segment() {
        let (a, r) = compute_gae(&[], &[3.0], 0.9, 0.9).unwrap();
        assert!(a.is_empty() && r.is_empty());
    }
}
