use crate::episode::Experience;
use crate::error::ShapeError;
use crate::nn::Mlp;

/// Generalized advantage estimates for one trajectory.
///
/// `values[t]` is `V(s_t)`; `bootstrap` is `V(s_T)` after the last step,
/// which callers set to 0 when the trajectory ended in a terminal state.
pub fn gae_from_values(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let mut advantages = vec![0.0; rewards.len()];
    let mut running = 0.0;
    let mut next_value = bootstrap;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
        next_value = values[t];
    }
    advantages
}

/// GAE over one episode with a value network as critic.
///
/// Episodes cut short by the time limit or the cycle budget bootstrap from
/// `V(s')` of their last step; a failure step bootstraps from 0.
pub fn gae_advantages(episode: &[Experience], critic: &Mlp, gamma: f64, lambda: f64) -> Result<Vec<f64>, ShapeError> {
    let Some(last) = episode.last() else {
        return Ok(Vec::new());
    };
    let values = episode
        .iter()
        .map(|e| critic.forward_scalar(e.state.as_slice()))
        .collect::<Result<Vec<_>, _>>()?;
    let bootstrap = if last.terminal {
        0.0
    } else {
        critic.forward_scalar(last.next_state.as_slice())?
    };
    let rewards: Vec<f64> = episode.iter().map(|e| e.reward).collect();
    Ok(gae_from_values(&rewards, &values, bootstrap, gamma, lambda))
}
