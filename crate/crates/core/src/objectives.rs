//! Value, positive-sample and negative-sample losses and the combined update.

use crate::agent::{argmax, AgentBundle, LossWeights};
use crate::autodiff::{sgd_step, Gradients, ParamSet, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;
use crate::seed::Rng;

/// `-exp(min(|z_i - z_j|, cap))` for one pair.
pub fn negative_pair_loss(zi: &[f64], zj: &[f64], cap: f64) -> f64 {
    let d: f64 = zi
        .iter()
        .zip(zj)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    -d.min(cap).exp()
}

/// `|tau_t - z_next - gamma * tau_next|^2`; terminal steps drop the bootstrap.
pub fn positive_pair_loss(
    tau_t: &[f64],
    z_next: &[f64],
    tau_next: &[f64],
    gamma: f64,
    terminal: bool,
) -> f64 {
    let g = if terminal { 0.0 } else { gamma };
    tau_t
        .iter()
        .zip(z_next)
        .zip(tau_next)
        .map(|((t, z), b)| {
            let e = t - z - g * b;
            e * e
        })
        .sum()
}

/// Double-Q regression target `r + gamma_q * Q_target(s', argmax_a Q_online(s', a))`.
pub fn td_target(reward: f64, terminal: bool, gamma_q: f64, target_q_at_online_argmax: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma_q * target_q_at_online_argmax
    }
}

/// Mean over rows of `-exp(min(|z_i - z_j|, cap))` for `[B, d]` latents.
pub fn negative_loss<F: Scalar>(tape: &mut Tape<F>, zi: Var, zj: Var, cap: f64) -> Result<Var> {
    let diff = tape.sub(zi, zj)?;
    let d = tape.row_norm(diff)?;
    let d = tape.clamp_max(d, F::c(cap));
    let e = tape.exp(d);
    let m = tape.mean(e);
    Ok(tape.scale(m, -F::one()))
}

/// Mean over rows of `|tau_t - z_next - bootstrap|^2`.
///
/// `bootstrap` holds `gamma * tau(z_{t+1}, a_{t+1})` (zero rows for terminal
/// steps) as a constant, so gradient reaches `tau_t` and `z_next` only.
pub fn positive_loss<F: Scalar>(
    tape: &mut Tape<F>,
    tau_t: Var,
    z_next: Var,
    bootstrap: Tensor<F>,
) -> Result<Var> {
    let b = tape.constant(bootstrap);
    let e = tape.sub(tau_t, z_next)?;
    let e = tape.sub(e, b)?;
    let sq = tape.row_sq_norm(e)?;
    Ok(tape.mean(sq))
}

/// Mean squared TD error of `[B, 1]` predictions against constant targets.
pub fn q_loss<F: Scalar>(tape: &mut Tape<F>, q: Var, targets: Tensor<F>) -> Result<Var> {
    let y = tape.constant(targets);
    let e = tape.sub(q, y)?;
    let sq = tape.mul(e, e)?;
    Ok(tape.mean(sq))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub q: f64,
    pub pos: f64,
    pub neg: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.pos.is_finite() && self.neg.is_finite() && self.total.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Plain gradient step on the weighted sum.
    Sgd,
    /// One Adam state over the weighted sum.
    Adam,
    /// One Adam state per loss, each stepped at `weight * learning_rate`.
    AdamPerLoss,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Shared step size. Loss weights scale the gradients before the step,
    /// so under Adam only their ratios matter.
    pub learning_rate: f64,
    /// Hard target copy every this many updates.
    pub sync_period: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            sync_period: 10,
            optimizer: Optimizer::Adam,
        }
    }
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.005;

/// Transition indices of one update plus independent negative-pair draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub neg_i: Vec<usize>,
    pub neg_j: Vec<usize>,
}

impl Batch {
    pub fn sample(buffer: &ReplayBuffer, size: usize, rng: &mut Rng) -> Result<Self> {
        if buffer.len() < size.max(1) {
            return Err(Error::NotReady {
                have: buffer.len(),
                need: size.max(1),
            });
        }
        let rows = (0..size).map(|_| buffer.sample_index(rng)).collect();
        let mut neg_i = Vec::with_capacity(size);
        let mut neg_j = Vec::with_capacity(size);
        for _ in 0..size {
            neg_i.push(buffer.sample_index(rng));
            neg_j.push(buffer.sample_index(rng));
        }
        Ok(Batch { rows, neg_i, neg_j })
    }
}

/// Distinct observations of a batch and where each role finds its row.
struct Unique {
    ids: Vec<usize>,
    slot: std::collections::HashMap<usize, usize>,
}

impl Unique {
    fn new() -> Self {
        Unique {
            ids: Vec::new(),
            slot: Default::default(),
        }
    }

    fn row(&mut self, id: usize) -> usize {
        *self.slot.entry(id).or_insert_with(|| {
            self.ids.push(id);
            self.ids.len() - 1
        })
    }

    fn stack(&self, buffer: &ReplayBuffer) -> Result<Tensor<f32>> {
        let refs: Vec<&Tensor<f32>> = self.ids.iter().map(|id| buffer.obs(*id)).collect();
        Tensor::stack(&refs)
    }
}

/// Double-Q targets for the batch rows, `[B, 1]`.
fn double_q_targets(
    bundle: &AgentBundle,
    buffer: &ReplayBuffer,
    rows: &[usize],
    online_next_q: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let n_actions = bundle.net.n_actions();
    let mut next = Unique::new();
    let next_rows: Vec<usize> = rows
        .iter()
        .map(|r| next.row(buffer.get(*r).next_obs))
        .collect();
    let best: Vec<usize> = (0..rows.len())
        .map(|b| argmax(&online_next_q.data()[b * n_actions..(b + 1) * n_actions]))
        .collect();

    let mut tape = Tape::new();
    let p = bundle.target.bind_constant(&mut tape);
    let x = tape.constant(next.stack(buffer)?);
    let z = bundle.net.encode_batch(&mut tape, &p, x)?.z;
    let z = tape.gather(z, &next_rows)?;
    let q = bundle.net.q_values(&mut tape, &p, z, &best)?;
    let qv = tape.value(q).data();
    let y = rows
        .iter()
        .enumerate()
        .map(|(b, r)| {
            let t = buffer.get(*r);
            td_target(t.reward as f64, t.terminal, bundle.gamma_q, qv[b] as f64) as f32
        })
        .collect();
    Tensor::new(vec![rows.len(), 1], y)
}

/// The three losses of one batch, kept on their tape for differentiation.
pub struct BatchLosses {
    pub report: LossReport,
    tape: Tape<f32>,
    params: Vec<Var>,
    /// Value, negative and positive loss nodes.
    losses: [Var; 3],
}

impl BatchLosses {
    /// Gradient of `sum_k weights[k] * loss_k` (order: value, negative, positive).
    pub fn weighted_gradients(&mut self, weights: [f64; 3]) -> Result<Gradients<f32>> {
        let mut total: Option<Var> = None;
        for (loss, w) in self.losses.into_iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let term = self.tape.scale(loss, w as f32);
            total = Some(match total {
                None => term,
                Some(acc) => self.tape.add(acc, term)?,
            });
        }
        let root = match total {
            Some(t) => t,
            None => self.tape.constant(Tensor::scalar(0.0)),
        };
        self.tape.backward(root)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

/// Evaluates all three losses on a batch with the online network.
pub fn batch_losses(
    bundle: &AgentBundle,
    buffer: &ReplayBuffer,
    batch: &Batch,
) -> Result<BatchLosses> {
    let net = &bundle.net;
    let mut u = Unique::new();
    let t_rows: Vec<usize> = batch
        .rows
        .iter()
        .map(|r| u.row(buffer.get(*r).obs))
        .collect();
    let n_rows: Vec<usize> = batch
        .rows
        .iter()
        .map(|r| u.row(buffer.get(*r).next_obs))
        .collect();
    let i_rows: Vec<usize> = batch
        .neg_i
        .iter()
        .map(|r| u.row(buffer.get(*r).obs))
        .collect();
    let j_rows: Vec<usize> = batch
        .neg_j
        .iter()
        .map(|r| u.row(buffer.get(*r).obs))
        .collect();
    let actions: Vec<usize> = batch.rows.iter().map(|r| buffer.get(*r).action).collect();
    let next_actions: Vec<usize> = batch
        .rows
        .iter()
        .map(|r| buffer.get(*r).next_action.unwrap_or(0))
        .collect();

    let mut tape = Tape::new();
    let p = bundle.online.bind(&mut tape);
    let x = tape.constant(u.stack(buffer)?);
    let z_all = net.encode_batch(&mut tape, &p, x)?.z;
    let z_t = tape.gather(z_all, &t_rows)?;
    let z_next = tape.gather(z_all, &n_rows)?;

    // value loss
    let z_next_const = tape.detach(z_next);
    let q_next = net.q_all(&mut tape, &p, z_next_const)?;
    let targets = double_q_targets(bundle, buffer, &batch.rows, tape.value(q_next))?;
    let q = net.q_values(&mut tape, &p, z_t, &actions)?;
    let l_q = q_loss(&mut tape, q, targets)?;

    // positive sampling loss
    let tau_next = net.tau_batch(&mut tape, &p, z_next_const, &next_actions)?;
    let d = net.latent();
    let mut boot = tape.value(tau_next).clone();
    for (b, r) in batch.rows.iter().enumerate() {
        let g = if buffer.get(*r).terminal {
            0.0
        } else {
            bundle.gamma_pred as f32
        };
        for v in &mut boot.data_mut()[b * d..(b + 1) * d] {
            *v *= g;
        }
    }
    let tau_t = net.tau_batch(&mut tape, &p, z_t, &actions)?;
    let l_pos = positive_loss(&mut tape, tau_t, z_next, boot)?;

    // negative sampling loss
    let zi = tape.gather(z_all, &i_rows)?;
    let zj = tape.gather(z_all, &j_rows)?;
    let l_neg = negative_loss(&mut tape, zi, zj, bundle.distance_cap)?;

    let w = bundle.weights;
    let (vq, vp, vn) = (
        tape.value(l_q).item() as f64,
        tape.value(l_pos).item() as f64,
        tape.value(l_neg).item() as f64,
    );
    let report = LossReport {
        q: vq,
        pos: vp,
        neg: vn,
        total: w.q * vq + w.pos * vp + w.neg * vn,
    };
    Ok(BatchLosses {
        report,
        tape,
        params: p,
        losses: [l_q, l_neg, l_pos],
    })
}

/// Accumulates the gradient of the weighted loss into `bundle.online`
/// without stepping.
pub fn accumulate_gradients(
    bundle: &mut AgentBundle,
    buffer: &ReplayBuffer,
    batch: &Batch,
    weights: LossWeights,
) -> Result<LossReport> {
    let mut losses = batch_losses(bundle, buffer, batch)?;
    let grads = losses.weighted_gradients([weights.q, weights.neg, weights.pos])?;
    bundle.online.accumulate(&grads, losses.params());
    let mut report = losses.report;
    report.total = weights.q * report.q + weights.pos * report.pos + weights.neg * report.neg;
    Ok(report)
}

fn gradients_finite(params: &ParamSet<f32>) -> bool {
    params.ids().all(|id| {
        params
            .grad(id)
            .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    })
}

fn abort(bundle: &mut AgentBundle, step: usize, report: &LossReport) -> Error {
    bundle.online.zero_grads();
    Error::NumericAbort {
        step,
        detail: format!("non-finite loss or gradient: {report:?}"),
    }
}

/// One update: sample a batch, step the losses, and hard-sync the target
/// after every `sync_period`-th update. `step` counts completed updates.
///
/// With [`Optimizer::Sgd`] the weighted sum is stepped at the base rate.
/// With [`Optimizer::Adam`] one Adam state steps the weighted sum.
/// With [`Optimizer::AdamPerLoss`] every loss has its own Adam moments and is
/// stepped at `weight * learning_rate`.
pub fn train_step(
    bundle: &mut AgentBundle,
    buffer: &ReplayBuffer,
    config: &TrainConfig,
    step: usize,
    rng: &mut Rng,
) -> Result<LossReport> {
    let batch = Batch::sample(buffer, config.batch_size, rng)?;
    let w = bundle.weights;
    let report = match config.optimizer {
        Optimizer::Sgd => {
            let report = accumulate_gradients(bundle, buffer, &batch, w)?;
            if !report.is_finite() || !gradients_finite(&bundle.online) {
                return Err(abort(bundle, step, &report));
            }
            sgd_step(&mut bundle.online, config.learning_rate as f32)?;
            report
        }
        Optimizer::Adam => {
            let report = accumulate_gradients(bundle, buffer, &batch, w)?;
            if !report.is_finite() || !gradients_finite(&bundle.online) {
                return Err(abort(bundle, step, &report));
            }
            bundle.adam[0].step(&mut bundle.online, config.learning_rate)?;
            report
        }
        Optimizer::AdamPerLoss => {
            let mut losses = batch_losses(bundle, buffer, &batch)?;
            let report = losses.report;
            if !report.is_finite() {
                return Err(abort(bundle, step, &report));
            }
            let mut per_loss = Vec::with_capacity(3);
            for (k, weight) in [w.q, w.neg, w.pos].into_iter().enumerate() {
                if weight == 0.0 {
                    continue;
                }
                let mut unit = [0.0; 3];
                unit[k] = 1.0;
                let grads = losses.weighted_gradients(unit)?;
                bundle.online.accumulate(&grads, losses.params());
                if !gradients_finite(&bundle.online) {
                    return Err(abort(bundle, step, &report));
                }
                bundle.online.zero_grads();
                per_loss.push((k, weight, grads));
            }
            for (k, weight, grads) in per_loss {
                bundle.online.accumulate(&grads, losses.params());
                bundle.adam[k].step(&mut bundle.online, weight * config.learning_rate)?;
            }
            report
        }
    };
    if config.sync_period > 0 && (step + 1).is_multiple_of(config.sync_period) {
        bundle.sync_target();
    }
    Ok(report)
}
