use super::RlError;

/// Generalised advantage estimation over one sequence.
///
/// `values[t]` estimates `V(s_t)` and `next_values[t]` estimates
/// `V(s_{t+1})`; `dones[t]` marks that the episode terminated after step
/// `t`, which both cuts the bootstrap and stops the recursion.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n || next_values.len() != n || dones.len() != n {
        return Err(RlError::Config(format!(
            "gae inputs disagree in length: {n} rewards, {} values, {} next values, {} dones",
            values.len(),
            next_values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_values[t] * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
