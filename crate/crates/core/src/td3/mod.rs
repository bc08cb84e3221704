//! Twin-delayed deterministic policy gradient learning.
//!
//! Self-contained: MLP networks with hand-written backpropagation, a ring
//! replay buffer, twin critics with clipped double-Q targets, delayed actor
//! updates and target-policy smoothing. The actor update ascends
//! Q(s, pi(s)) through the first critic.

mod buffer;
mod mlp;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use buffer::{ReplayBuffer, Transition};
pub use mlp::{Activation, Adam, Gradients, NetError, PolicyNet};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub gamma: f64,
    /// Soft-update retain factor: target = phi * target + (1 - phi) * main.
    pub phi: f64,
    pub actor_lr: f64,
    pub critic1_lr: f64,
    pub critic2_lr: f64,
    pub exploration_sigma: f64,
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    /// Actor and targets update every `policy_delay`-th call.
    pub policy_delay: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Random-action environment steps before learning starts.
    pub warmup_steps: u64,
    pub hidden: Vec<usize>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            gamma: 0.99,
            phi: 0.995,
            actor_lr: 3e-4,
            critic1_lr: 3e-4,
            critic2_lr: 3e-4,
            exploration_sigma: 0.1,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            policy_delay: 2,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            hidden: vec![128, 128],
        }
    }
}

#[derive(Debug, Error)]
pub enum Td3Error {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferUnderflow { have: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    Dims(String),
}

#[derive(Debug, Clone, Default)]
pub struct UpdateDiagnostics {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
    pub did_policy_update: bool,
    /// Bootstrap regression targets of the sampled batch.
    pub targets: Vec<f64>,
}

/// Actor, twin critics and their target copies, with optimizer state.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: PolicyNet,
    pub critic1: PolicyNet,
    pub critic2: PolicyNet,
    pub target_actor: PolicyNet,
    pub target_critic1: PolicyNet,
    pub target_critic2: PolicyNet,
    opt_actor: Adam,
    opt_critic1: Adam,
    opt_critic2: Adam,
    state_dim: usize,
    action_dim: usize,
}

impl Td3Agent {
    /// Fresh agent; target networks start equal to the main networks.
    pub fn new<R: Rng>(state_dim: usize, action_dim: usize, config: &Td3Config, rng: &mut R) -> Self {
        let mut actor_dims = vec![state_dim];
        actor_dims.extend_from_slice(&config.hidden);
        actor_dims.push(action_dim);
        let mut critic_dims = vec![state_dim + action_dim];
        critic_dims.extend_from_slice(&config.hidden);
        critic_dims.push(1);

        let actor = PolicyNet::new(&actor_dims, Activation::Tanh, rng);
        let critic1 = PolicyNet::new(&critic_dims, Activation::Identity, rng);
        let critic2 = PolicyNet::new(&critic_dims, Activation::Identity, rng);
        Td3Agent {
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            opt_actor: Adam::new(&actor, config.actor_lr),
            opt_critic1: Adam::new(&critic1, config.critic1_lr),
            opt_critic2: Adam::new(&critic2, config.critic2_lr),
            actor,
            critic1,
            critic2,
            state_dim,
            action_dim,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.actor.all_finite()
            && self.critic1.all_finite()
            && self.critic2.all_finite()
            && self.target_actor.all_finite()
            && self.target_critic1.all_finite()
            && self.target_critic2.all_finite()
    }
}

/// Greedy action plus exploration noise, clipped into [-1, 1] elementwise.
/// `sigma = 0` yields the pure greedy action.
pub fn act<R: Rng>(actor: &PolicyNet, state: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    assert_eq!(
        state.len(),
        actor.input_dim(),
        "state length must match the actor input dim"
    );
    let greedy = actor.forward(Array1::from_vec(state.to_vec()).view());
    if sigma == 0.0 {
        return greedy.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    greedy
        .iter()
        .map(|&a| (a + normal.sample(rng)).clamp(-1.0, 1.0))
        .collect()
}

/// Map the scalar decision-actor output onto the three lane decisions.
/// Applied after exploration noise so exploration reaches all three.
pub fn decision_from_action(u: f64) -> i8 {
    if u > 1.0 / 3.0 {
        1
    } else if u < -1.0 / 3.0 {
        -1
    } else {
        0
    }
}

fn critic_input(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states.view(), actions.view()]).expect("batch sizes match")
}

/// One TD3 learning step over a sampled mini-batch.
///
/// Both critics regress toward the shared clipped double-Q target; every
/// `policy_delay`-th call (counted by `step`) the actor ascends the first
/// critic and all three targets soft-update. Terminal transitions drop the
/// bootstrap term.
pub fn td3_update<R: Rng>(
    agent: &mut Td3Agent,
    buffer: &ReplayBuffer,
    config: &Td3Config,
    step: u64,
    rng: &mut R,
) -> Result<UpdateDiagnostics, Td3Error> {
    let b = config.batch_size;
    if buffer.len() < b {
        return Err(Td3Error::BufferUnderflow {
            have: buffer.len(),
            need: b,
        });
    }
    let batch = buffer.sample(b, rng);
    let ds = agent.state_dim;
    let da = agent.action_dim;

    let mut states = Array2::zeros((b, ds));
    let mut actions = Array2::zeros((b, da));
    let mut next_states = Array2::zeros((b, ds));
    let mut rewards = Array1::zeros(b);
    let mut not_done = Array1::zeros(b);
    for (i, t) in batch.iter().enumerate() {
        if t.state.len() != ds || t.action.len() != da {
            return Err(Td3Error::Dims(format!(
                "transition dims ({}, {}) do not match agent ({ds}, {da})",
                t.state.len(),
                t.action.len()
            )));
        }
        states.row_mut(i).assign(&Array1::from_vec(t.state.clone()));
        actions.row_mut(i).assign(&Array1::from_vec(t.action.clone()));
        next_states
            .row_mut(i)
            .assign(&Array1::from_vec(t.next_state.clone()));
        rewards[i] = t.reward;
        not_done[i] = if t.done { 0.0 } else { 1.0 };
    }

    // Target actions from the target actor with clipped smoothing noise.
    let (mut next_actions, _) = agent.target_actor.forward_batch(next_states.view());
    if config.smoothing_sigma > 0.0 {
        let normal = Normal::new(0.0, config.smoothing_sigma).expect("valid sigma");
        for v in next_actions.iter_mut() {
            let noise = normal
                .sample(rng)
                .clamp(-config.smoothing_clip, config.smoothing_clip);
            *v = (*v + noise).clamp(-1.0, 1.0);
        }
    }

    // Clipped double-Q bootstrap target.
    let target_in = critic_input(&next_states, &next_actions);
    let (q1t, _) = agent.target_critic1.forward_batch(target_in.view());
    let (q2t, _) = agent.target_critic2.forward_batch(target_in.view());
    let mut targets = Array1::zeros(b);
    for i in 0..b {
        let min_q = q1t[(i, 0)].min(q2t[(i, 0)]);
        targets[i] = rewards[i] + config.gamma * not_done[i] * min_q;
    }

    // Critic regression toward the shared target.
    let main_in = critic_input(&states, &actions);
    let mut losses = [0.0; 2];
    for (k, (critic, opt)) in [
        (&mut agent.critic1, &mut agent.opt_critic1),
        (&mut agent.critic2, &mut agent.opt_critic2),
    ]
    .into_iter()
    .enumerate()
    {
        let (pred, cache) = critic.forward_batch(main_in.view());
        let mut grad_out = Array2::zeros((b, 1));
        let mut loss = 0.0;
        for i in 0..b {
            let err = pred[(i, 0)] - targets[i];
            loss += err * err;
            grad_out[(i, 0)] = 2.0 * err / b as f64;
        }
        losses[k] = loss / b as f64;
        let (grads, _) = critic.backward(&cache, grad_out.view());
        opt.step(critic, &grads);
    }

    let mut diag = UpdateDiagnostics {
        critic1_loss: losses[0],
        critic2_loss: losses[1],
        actor_loss: None,
        did_policy_update: false,
        targets: targets.to_vec(),
    };

    if step % config.policy_delay == 0 {
        // Deterministic policy gradient: ascend Q1(s, pi(s)).
        let (pi, actor_cache) = agent.actor.forward_batch(states.view());
        let actor_in = critic_input(&states, &pi);
        let (q, critic_cache) = agent.critic1.forward_batch(actor_in.view());
        let actor_loss = -q.column(0).sum() / b as f64;
        let grad_q = Array2::from_elem((b, 1), -1.0 / b as f64);
        let (_, grad_in) = agent.critic1.backward(&critic_cache, grad_q.view());
        let grad_actions = grad_in.slice(ndarray::s![.., ds..]).to_owned();
        let (actor_grads, _) = agent.actor.backward(&actor_cache, grad_actions.view());
        agent.opt_actor.step(&mut agent.actor, &actor_grads);

        agent.target_actor.soft_update_from(&agent.actor, config.phi);
        agent
            .target_critic1
            .soft_update_from(&agent.critic1, config.phi);
        agent
            .target_critic2
            .soft_update_from(&agent.critic2, config.phi);

        diag.actor_loss = Some(actor_loss);
        diag.did_policy_update = true;
    }

    Ok(diag)
}

/// Compare analytic gradients against central finite differences,
/// parameter by parameter. `loss` maps a batch of network outputs to a
/// scalar loss and its gradient with respect to those outputs. Returns the
/// maximum relative error (floored denominator guards near-zero gradients).
pub fn gradient_check<F>(net: &PolicyNet, inputs: ArrayView2<f64>, loss: F, epsilon: f64) -> f64
where
    F: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    assert!(
        (1e-6..=1e-3).contains(&epsilon),
        "epsilon outside sensible finite-difference range"
    );
    let (out, cache) = net.forward_batch(inputs);
    let (_, grad_out) = loss(out.view());
    let (analytic, _) = net.backward(&cache, grad_out.view());

    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    for idx in 0..net.param_count() {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + epsilon;
        let (out_p, _) = probe.forward_batch(inputs);
        let (l_plus, _) = loss(out_p.view());
        *probe.param_mut(idx) = original - epsilon;
        let (out_m, _) = probe.forward_batch(inputs);
        let (l_minus, _) = loss(out_m.view());
        *probe.param_mut(idx) = original;

        let numeric = (l_plus - l_minus) / (2.0 * epsilon);
        let a = PolicyNet::grad_at(&analytic, idx);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

/// Mean-squared-error loss against fixed targets, for gradient checking.
pub fn squared_loss(targets: Array2<f64>) -> impl Fn(ArrayView2<f64>) -> (f64, Array2<f64>) {
    move |out: ArrayView2<f64>| {
        let n = out.len() as f64;
        let diff = &out - &targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        (loss, diff.mapv(|d| 2.0 * d / n))
    }
}
