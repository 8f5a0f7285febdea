//! Experiment protocols: build the task for a [`RunConfig`], train it, and
//! collect metrics, checkpoints, activation dumps and summary values.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::agent::{AgentBundle, AgentNet, AgentSpec, EncoderSpec};
use crate::analysis::{ActivationDump, Layer};
use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::config::{Experiment, ObservationMode, RunConfig};
use crate::env::{
    AltTMaze, Chain, CircularTrack, Corridor, CorridorKind, Environment, GridEnv, ImageBank,
    MazeInput, ObservationMap, Phase, TrialKind, APPROACH_LEN, CHAIN_RIGHT, CORRIDOR_LEN, RING_LEN,
    TRACE_LEN,
};
use crate::error::{Error, Result};
use crate::objectives::LossReport;
use crate::replay::{ObsStore, ReplayBuffer};
use crate::seed::{self, Rng};
use crate::session::Session;
use crate::training::Policy;

/// One evaluation row of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// Updates completed over the whole run.
    pub step: usize,
    pub phase: &'static str,
    pub score: f64,
    pub loss: LossReport,
}

pub const METRICS_HEADER: &str = "step,phase,score,loss_q,loss_pos,loss_neg,loss_total";

impl MetricRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.phase,
            self.score,
            self.loss.q,
            self.loss.pos,
            self.loss.neg,
            self.loss.total
        )
    }
}

/// Receives run artifacts as they are produced.
pub trait Sink {
    fn metric(&mut self, row: &MetricRow) -> Result<()>;
    fn checkpoint(&mut self, step: usize, params: &ParamSet<f32>) -> Result<()>;
    /// `name` is `"<layer tag>-<label>"`, e.g. `"t-output-post"`.
    fn dump(&mut self, name: &str, dump: &ActivationDump) -> Result<()>;
    fn summary(&mut self, key: &str, value: f64) -> Result<()>;
}

/// Everything a run produced, kept in memory.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub metrics: Vec<MetricRow>,
    pub checkpoints: Vec<(usize, ParamSet<f32>)>,
    pub dumps: Vec<(String, ActivationDump)>,
    pub summary: Vec<(String, f64)>,
}

impl RunRecord {
    pub fn value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn dump(&self, name: &str) -> Option<&ActivationDump> {
        self.dumps.iter().find(|(k, _)| k == name).map(|(_, d)| d)
    }

    pub fn final_score(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.score)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for m in &self.metrics {
            out.push_str(&m.csv());
            out.push('\n');
        }
        out
    }
}

impl Sink for RunRecord {
    fn metric(&mut self, row: &MetricRow) -> Result<()> {
        self.metrics.push(row.clone());
        Ok(())
    }

    fn checkpoint(&mut self, step: usize, params: &ParamSet<f32>) -> Result<()> {
        self.checkpoints.push((step, params.clone()));
        Ok(())
    }

    fn dump(&mut self, name: &str, dump: &ActivationDump) -> Result<()> {
        self.dumps.push((name.to_string(), dump.clone()));
        Ok(())
    }

    fn summary(&mut self, key: &str, value: f64) -> Result<()> {
        self.summary.push((key.to_string(), value));
        Ok(())
    }
}

/// Runs the experiment in memory.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    let mut record = RunRecord::default();
    run_with(cfg, &mut record)?;
    Ok(record)
}

/// Runs the experiment, streaming artifacts into `sink`.
pub fn run_with(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Foraging => foraging(cfg, sink),
        Experiment::GoalTransfer | Experiment::ShuffleTransfer => transfer(cfg, sink),
        Experiment::CircularTrack => circular_track(cfg, sink),
        Experiment::AltT | Experiment::PoAltT => alt_t(cfg, sink),
        Experiment::Corridor => corridor(cfg, sink),
        Experiment::Swap => swap(cfg, sink),
        Experiment::Chain => chain(cfg, sink),
    }
}

// ---------------------------------------------------------------------------
// task and agent construction

/// Goal of the foraging arena: configured, or drawn from the `"goal"` stream.
pub fn foraging_goal(cfg: &RunConfig) -> (usize, usize) {
    match cfg.env.goal {
        Some([x, y]) => (x, y),
        None => {
            let mut rng = seed::stream(cfg.seed, "goal");
            (
                rng.gen_range(0..cfg.env.side),
                rng.gen_range(0..cfg.env.side),
            )
        }
    }
}

/// The task-A gridworld of a run.
pub fn build_grid(cfg: &RunConfig) -> Result<GridEnv> {
    let side = cfg.env.side;
    let mut env = GridEnv::new(side, Some(foraging_goal(cfg)))?;
    env.set_stochasticity(cfg.env.stochasticity)?;
    match cfg.env.observation {
        ObservationMode::Plain => {}
        ObservationMode::Shuffled => env.set_observation_map(ObservationMap::shuffled(
            side * side,
            &mut seed::stream(cfg.seed, "obs-map"),
        ))?,
        ObservationMode::ImageBank => {
            let dir = cfg
                .env
                .image_dir
                .as_deref()
                .ok_or_else(|| Error::Config("image bank needs env.image_dir".into()))?;
            env.set_observation_map(ObservationMap::ImageBank(ImageBank::load(dir, side, side)?))?
        }
    }
    Ok(env)
}

pub fn build_track(cfg: &RunConfig) -> CircularTrack {
    CircularTrack::with_random_reward(&mut seed::stream(cfg.seed, "goal"))
}

pub fn maze_input(cfg: &RunConfig) -> MazeInput {
    match cfg.experiment {
        Experiment::PoAltT => MazeInput::Window(TRACE_LEN),
        _ => MazeInput::Trace,
    }
}

/// The environment a run trains on first.
pub fn build_env(cfg: &RunConfig) -> Result<Box<dyn Environment>> {
    Ok(match cfg.experiment {
        Experiment::Foraging
        | Experiment::GoalTransfer
        | Experiment::ShuffleTransfer
        | Experiment::Swap => Box::new(build_grid(cfg)?),
        Experiment::CircularTrack => Box::new(build_track(cfg)),
        Experiment::AltT | Experiment::PoAltT => Box::new(AltTMaze::new(maze_input(cfg))),
        Experiment::Corridor => Box::new(Corridor::new(CorridorKind::Vertical)),
        Experiment::Chain => Box::new(Chain::new(4)?),
    })
}

pub fn agent_spec(cfg: &RunConfig, env: &dyn Environment) -> Result<AgentSpec> {
    let shape = env.obs_shape();
    let (input, window) = match shape.as_slice() {
        [c, h, w] => ([*c, *h, *w], None),
        [l, c, h, w] => ([*c, *h, *w], Some(*l)),
        _ => {
            return Err(Error::shape(
                "agent spec",
                format!("unsupported observation shape {shape:?}"),
            ))
        }
    };
    let mut encoder = EncoderSpec::new(cfg.model.variant, cfg.model.latent, input);
    encoder.recurrent_window = window;
    Ok(AgentSpec {
        encoder,
        n_actions: env.n_actions(),
    })
}

pub fn build_bundle(cfg: &RunConfig, env: &dyn Environment) -> Result<AgentBundle> {
    let spec = agent_spec(cfg, env)?;
    let weights = cfg.model.loss_weights()?;
    let mut bundle = AgentBundle::new(
        spec,
        cfg.model.gamma_pred(),
        weights,
        &mut seed::stream(cfg.seed, "init"),
    )?;
    bundle.distance_cap = cfg.model.distance_cap;
    bundle.gamma_q = cfg.model.gamma_q;
    Ok(bundle)
}

/// Fresh agent on a fresh task with a prefilled buffer.
pub fn build_session(cfg: &RunConfig) -> Result<Session> {
    let env = build_env(cfg)?;
    let bundle = build_bundle(cfg, env.as_ref())?;
    Session::new(
        bundle,
        env,
        cfg.train.train_config(),
        cfg.train.policy(),
        cfg.train.buffer_capacity,
        cfg.train.prefill,
        cfg.seed,
    )
}

/// Restores online parameters from a checkpoint into an agent built for `cfg`.
pub fn restore_bundle(
    cfg: &RunConfig,
    env: &dyn Environment,
    params: &ParamSet<f32>,
) -> Result<AgentBundle> {
    let mut bundle = build_bundle(cfg, env)?;
    for id in bundle.online.ids().collect::<Vec<_>>() {
        let name = bundle.online.name(id).to_string();
        let src = params
            .find(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter '{name}'")))?;
        let value = params.get(src);
        if value.shape() != bundle.online.get(id).shape() {
            return Err(Error::shape(
                "restore",
                format!("parameter '{name}' has shape {:?}", value.shape()),
            ));
        }
        *bundle.online.get_mut(id) = value.clone();
    }
    bundle.target = bundle.online.clone();
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// training loop

struct Trainer<'a> {
    cfg: &'a RunConfig,
    sink: &'a mut dyn Sink,
    last_score: f64,
    first_high: Option<usize>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a RunConfig, sink: &'a mut dyn Sink) -> Self {
        Trainer {
            cfg,
            sink,
            last_score: 0.0,
            first_high: None,
        }
    }

    /// `steps` collect-and-update rounds, evaluating every `eval_every` updates.
    fn phase(
        &mut self,
        sess: &mut Session,
        steps: usize,
        phase: &'static str,
        collect: bool,
    ) -> Result<()> {
        let every = self.cfg.train.eval_every;
        for _ in 0..steps {
            let loss = if collect {
                sess.step()?
            } else {
                sess.update()?
            };
            let step = sess.updates;
            if step.is_multiple_of(every) {
                let score = sess.evaluate(self.cfg.train.eval_episodes)?;
                self.last_score = score;
                if score >= 0.9 && self.first_high.is_none() {
                    self.first_high = Some(step);
                }
                self.sink.metric(&MetricRow {
                    step,
                    phase,
                    score,
                    loss,
                })?;
            }
            let ck = self.cfg.output.checkpoint_every;
            if ck > 0 && step.is_multiple_of(ck) {
                self.sink.checkpoint(step, &sess.bundle.online)?;
            }
        }
        Ok(())
    }

    fn final_checkpoint(&mut self, sess: &Session) -> Result<()> {
        let ck = self.cfg.output.checkpoint_every;
        if ck == 0 || !sess.updates.is_multiple_of(ck) {
            self.sink.checkpoint(sess.updates, &sess.bundle.online)?;
        }
        Ok(())
    }
}

fn foraging(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    sink.checkpoint(0, &sess.bundle.online)?;
    let mut tr = Trainer::new(cfg, sink);
    tr.phase(&mut sess, cfg.steps, "A", true)?;
    tr.final_checkpoint(&sess)?;
    let (score, first) = (tr.last_score, tr.first_high);
    sink.summary("final_score", score)?;
    sink.summary("first_step_0.9", first.map_or(f64::INFINITY, |s| s as f64))?;
    let env = build_grid(cfg)?;
    let mut rng = seed::stream(cfg.seed, "probe");
    for layer in [Layer::Latent, Layer::TOutput] {
        let d = grid_dump(
            &sess.bundle,
            &env,
            layer,
            cfg.protocol.rollout_steps,
            &mut rng,
        )?;
        sink.dump(&format!("{}-final", layer.tag()), &d)?;
    }
    Ok(())
}

fn transfer(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    let mut tr = Trainer::new(cfg, sink);
    tr.phase(&mut sess, cfg.steps, "A", true)?;
    let score_a = tr.last_score;
    tr.sink.checkpoint(sess.updates, &sess.bundle.online)?;

    let mut env = build_grid(cfg)?;
    if cfg.experiment == Experiment::GoalTransfer {
        env.set_goal(goal_b(cfg)?)?;
    } else {
        env.shuffle_transitions(&mut seed::stream(cfg.seed, "shuffle"));
    }
    sess.replace_env(Box::new(env));
    sess.replace_buffer(ReplayBuffer::new(cfg.train.buffer_capacity)?);
    sess.collect(Policy::Random, cfg.train.prefill)?;
    sess.bundle.set_frozen(
        |n| AgentNet::is_encoder_param(n) || AgentNet::is_t_param(n),
        true,
    );
    sess.bundle.reset_optimizer();
    let start_b = sess.evaluate(cfg.train.eval_episodes)?;
    tr.phase(&mut sess, cfg.protocol.phase_b_steps, "B", true)?;
    tr.final_checkpoint(&sess)?;
    let score_b = tr.last_score;
    sink.summary("task_a_score", score_a)?;
    sink.summary("task_b_initial", start_b)?;
    sink.summary("task_b_score", score_b)?;
    Ok(())
}

/// New goal of the goal-transfer task: configured, or drawn until it differs
/// from the task-A goal.
pub fn goal_b(cfg: &RunConfig) -> Result<(usize, usize)> {
    let a = foraging_goal(cfg);
    if let Some([x, y]) = cfg.env.goal_b {
        if (x, y) == a {
            return Err(Error::Config(
                "env.goal_b must differ from the task-A goal".into(),
            ));
        }
        return Ok((x, y));
    }
    let mut rng = seed::stream(cfg.seed, "goal-b");
    loop {
        let g = (
            rng.gen_range(0..cfg.env.side),
            rng.gen_range(0..cfg.env.side),
        );
        if g != a {
            return Ok(g);
        }
    }
}

fn circular_track(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    sess.policy = Policy::Random;
    let mut tr = Trainer::new(cfg, sink);
    tr.phase(&mut sess, cfg.protocol.pretrain_steps, "pre", true)?;
    tr.sink.checkpoint(sess.updates, &sess.bundle.online)?;
    let track = build_track(cfg);
    let rollout = cfg.protocol.rollout_steps;
    let pre = ring_dump(
        &sess.bundle,
        &track,
        Layer::TOutput,
        rollout,
        &mut seed::stream(cfg.seed, "probe"),
    )?;
    tr.sink.dump("t-output-pre", &pre)?;

    sess.policy = cfg.train.policy();
    tr.phase(&mut sess, cfg.steps, "post", true)?;
    tr.final_checkpoint(&sess)?;
    let score = tr.last_score;
    let post = ring_dump(
        &sess.bundle,
        &track,
        Layer::TOutput,
        rollout,
        &mut seed::stream(cfg.seed, "probe"),
    )?;
    sink.dump("t-output-post", &post)?;
    let mut control = sess.bundle.clone();
    shuffle_t_weights(
        &mut control.online,
        &mut seed::stream(cfg.seed, "t-shuffle"),
    );
    let ctrl = ring_dump(
        &control,
        &track,
        Layer::TOutput,
        rollout,
        &mut seed::stream(cfg.seed, "probe"),
    )?;
    sink.dump("t-output-shuffled", &ctrl)?;
    sink.summary("final_score", score)?;
    sink.summary("reward_state", track.reward_state() as f64)?;
    Ok(())
}

/// Permutes the entries of every `T` parameter tensor in place.
pub fn shuffle_t_weights(params: &mut ParamSet<f32>, rng: &mut Rng) {
    for id in params.ids().collect::<Vec<_>>() {
        if AgentNet::is_t_param(params.name(id)) {
            params.get_mut(id).data_mut().shuffle(rng);
        }
    }
}

fn alt_t(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    let mut tr = Trainer::new(cfg, sink);
    tr.phase(&mut sess, cfg.steps, "A", true)?;
    tr.final_checkpoint(&sess)?;
    let score = tr.last_score;
    let d = maze_dump(
        &sess.bundle,
        maze_input(cfg),
        Layer::TOutput,
        cfg.protocol.probe_trials,
    )?;
    sink.dump("t-output-final", &d)?;
    sink.summary("final_score", score)?;
    Ok(())
}

fn corridor(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    sink.checkpoint(0, &sess.bundle.online)?;
    let pre = corridor_dump(&sess.bundle, Layer::EncoderEarly)?;
    sink.dump("encoder-early-pre", &pre)?;
    let mut tr = Trainer::new(cfg, sink);
    tr.phase(&mut sess, cfg.steps, "A", true)?;
    tr.final_checkpoint(&sess)?;
    let score = tr.last_score;
    let post = corridor_dump(&sess.bundle, Layer::EncoderEarly)?;
    sink.dump("encoder-early-post", &post)?;
    sink.summary("final_score", score)?;
    Ok(())
}

fn chain(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    let chain = Chain::new(4)?;
    let every = cfg.train.eval_every;
    let mut optimal_at = None;
    let mut tr = Trainer::new(cfg, sink);
    for _ in 0..cfg.steps / every {
        tr.phase(&mut sess, every, "A", true)?;
        if optimal_at.is_none() && chain_greedy_optimal(&sess.bundle, &chain)? {
            optimal_at = Some(sess.updates);
        }
    }
    tr.final_checkpoint(&sess)?;
    let score = tr.last_score;
    let optimal = chain_greedy_optimal(&sess.bundle, &chain)?;
    sink.summary("final_score", score)?;
    sink.summary("optimal_at", optimal_at.map_or(f64::INFINITY, |s| s as f64))?;
    sink.summary("optimal_final", if optimal { 1.0 } else { 0.0 })?;
    Ok(())
}

/// Whether the greedy action moves right in every non-terminal chain state.
pub fn chain_greedy_optimal(bundle: &AgentBundle, chain: &Chain) -> Result<bool> {
    for s in 0..chain.len() - 1 {
        if bundle.greedy_action(&chain.render_state(s))? != CHAIN_RIGHT {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// swap exposure

/// Probe cells of one swap experiment (grid cell indices).
#[derive(Clone, Debug, PartialEq)]
pub struct SwapProbes {
    pub unit: usize,
    /// `P1, P2, P3`; P3 borders the swap.
    pub preferred: [usize; 3],
    /// `N1, N2, N3`; N3 borders the swap.
    pub nonpreferred: [usize; 3],
}

/// All 3-cell paths `a - b - c` of adjacent open cells, each orientation once.
fn three_cell_paths(env: &GridEnv) -> Vec<[usize; 3]> {
    let open = env.open_cells();
    let neighbours = |c: usize| -> Vec<usize> {
        let mut n: Vec<usize> = (0..4)
            .map(|a| env.geometric_move(c, a))
            .filter(|m| *m != c)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    };
    let mut paths = Vec::new();
    for &b in &open {
        let nb = neighbours(b);
        for (i, &a) in nb.iter().enumerate() {
            for &c in &nb[i + 1..] {
                paths.push([a, b, c]);
            }
        }
    }
    paths
}

/// Picks a contiguous preferred path through the unit's strongest cells and
/// a disjoint non-preferred path through its weakest. Each path is oriented
/// so that its end nearer the other path's extreme faces the swap: P3 is the
/// weaker end of the preferred path, N3 the stronger end of the other.
pub fn select_swap_probes(env: &GridEnv, response: &[f64], unit: usize) -> Result<SwapProbes> {
    let paths = three_cell_paths(env);
    let sum = |p: &[usize; 3]| p.iter().map(|c| response[*c]).sum::<f64>();
    let best = paths
        .iter()
        .copied()
        .reduce(|a, b| if sum(&b) > sum(&a) { b } else { a })
        .ok_or(Error::ProbeSelection("preferred"))?;
    let worst = paths
        .iter()
        .copied()
        .filter(|p| p.iter().all(|c| !best.contains(c)))
        .reduce(|a, b| if sum(&b) < sum(&a) { b } else { a })
        .ok_or(Error::ProbeSelection("non-preferred"))?;
    let lo = worst
        .iter()
        .map(|c| response[*c])
        .fold(f64::INFINITY, f64::min);
    let hi = best
        .iter()
        .map(|c| response[*c])
        .fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-6 || sum(&best) <= sum(&worst) {
        return Err(Error::ProbeSelection("preferred"));
    }
    let mut p = best;
    if response[p[0]] < response[p[2]] {
        p.reverse();
    }
    let mut n = worst;
    if response[n[0]] > response[n[2]] {
        n.reverse();
    }
    Ok(SwapProbes {
        unit,
        preferred: p,
        nonpreferred: n,
    })
}

/// The five exposure transitions `P1 -> P2 -> P3 -> N3 -> N2 -> N1`.
pub fn swap_chain(env: &GridEnv, probes: &SwapProbes) -> Result<ReplayBuffer> {
    let [p1, p2, p3] = probes.preferred;
    let [n1, n2, n3] = probes.nonpreferred;
    let cells = [p1, p2, p3, n3, n2, n1];
    let action_between =
        |from: usize, to: usize| (0..4).find(|a| env.geometric_move(from, *a) == to);
    let mut actions = Vec::with_capacity(5);
    for w in cells.windows(2) {
        // the swap link is not a grid move; it keeps the heading of the step before
        let a = action_between(w[0], w[1])
            .or_else(|| actions.last().copied())
            .unwrap_or(0);
        actions.push(a);
    }
    let mut buffer = ReplayBuffer::new(5)?;
    for k in 0..5 {
        let next = actions.get(k + 1).copied().unwrap_or(actions[k]);
        buffer.push(
            &env.render_cell(cells[k]),
            actions[k],
            0.0,
            &env.render_cell(cells[k + 1]),
            Some(next),
            false,
        )?;
    }
    Ok(buffer)
}

/// Online latent of every grid cell, in cell-index order.
pub fn latent_table(bundle: &AgentBundle, env: &GridEnv) -> Result<Vec<Vec<f64>>> {
    let obs: Vec<Tensor<f32>> = (0..env.width() * env.height())
        .map(|c| env.render_cell(c))
        .collect();
    let refs: Vec<&Tensor<f32>> = obs.iter().collect();
    let z = bundle.encode_many(&refs)?;
    let d = bundle.net.latent();
    Ok((0..obs.len())
        .map(|i| {
            z.data()[i * d..(i + 1) * d]
                .iter()
                .map(|v| *v as f64)
                .collect()
        })
        .collect())
}

fn swap(cfg: &RunConfig, sink: &mut dyn Sink) -> Result<()> {
    let mut sess = build_session(cfg)?;
    let mut tr = Trainer::new(cfg, sink);
    tr.phase(&mut sess, cfg.steps, "A", true)?;
    tr.sink.checkpoint(sess.updates, &sess.bundle.online)?;
    let env = build_grid(cfg)?;
    let before = latent_table(&sess.bundle, &env)?;

    // units ranked by response range; start at the configured rank and move
    // on when no probe paths exist
    let d = sess.bundle.net.latent();
    let range = |u: usize| {
        let col: Vec<f64> = before.iter().map(|z| z[u]).collect();
        col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - col.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let mut units: Vec<usize> = (0..d).collect();
    units.sort_by(|a, b| range(*b).total_cmp(&range(*a)).then(a.cmp(b)));
    let mut probes = None;
    for &u in units.iter().cycle().skip(cfg.protocol.probe_unit).take(d) {
        let resp: Vec<f64> = before.iter().map(|z| z[u]).collect();
        if let Ok(p) = select_swap_probes(&env, &resp, u) {
            probes = Some(p);
            break;
        }
    }
    let probes = probes.ok_or(Error::ProbeSelection("preferred"))?;

    sess.replace_buffer(swap_chain(&env, &probes)?);
    sess.train.batch_size = sess.train.batch_size.min(5);
    sess.bundle.reset_optimizer();
    tr.phase(&mut sess, cfg.protocol.exposure_steps, "exposure", false)?;
    tr.final_checkpoint(&sess)?;
    let after = latent_table(&sess.bundle, &env)?;
    let u = probes.unit;
    let pairs = |t: &Vec<Vec<f64>>| -> Vec<(f64, f64)> {
        (0..3)
            .map(|k| (t[probes.preferred[k]][u], t[probes.nonpreferred[k]][u]))
            .collect()
    };
    let delta = crate::analysis::swap_response_delta(&pairs(&before), &pairs(&after));
    sink.summary("unit", u as f64)?;
    for (k, name) in ["p1", "p2", "p3"].iter().enumerate() {
        sink.summary(&format!("cell_{name}"), probes.preferred[k] as f64)?;
    }
    for (k, name) in ["n1", "n2", "n3"].iter().enumerate() {
        sink.summary(&format!("cell_{name}"), probes.nonpreferred[k] as f64)?;
    }
    for (k, v) in delta.iter().enumerate() {
        sink.summary(&format!("delta_{}", k + 1), *v)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// activation probes

/// Activations of `layer` for a batch of observations; `actions` feed the
/// transition network and are ignored for encoder layers. Returns one row
/// per observation.
///
/// `encoder-early` averages each first-layer channel over space (the most
/// recent frame for windowed inputs); `t-output` is `ReLU(tau(z, a))`.
pub fn layer_activations(
    bundle: &AgentBundle,
    obs: &[&Tensor<f32>],
    actions: &[usize],
    layer: Layer,
) -> Result<Vec<Vec<f64>>> {
    let net = &bundle.net;
    let mut tape = Tape::new();
    let p = bundle.online.bind_constant(&mut tape);
    let x = tape.constant(Tensor::stack(obs)?);
    let tr = net.encode_batch(&mut tape, &p, x)?;
    let b = obs.len();
    let rows = |t: &Tensor<f32>| -> Vec<Vec<f64>> {
        let w = t.len() / b;
        (0..b)
            .map(|i| {
                t.data()[i * w..(i + 1) * w]
                    .iter()
                    .map(|v| *v as f64)
                    .collect()
            })
            .collect()
    };
    Ok(match layer {
        Layer::Latent => rows(tape.value(tr.z)),
        Layer::TOutput => {
            let tau = net.tau_batch(&mut tape, &p, tr.z, actions)?;
            let out = tape.relu(tau);
            rows(tape.value(out))
        }
        Layer::EncoderEarly => {
            let e = tape.value(tr.early);
            let s = e.shape().to_vec();
            let (c, hw) = (s[1], s[2] * s[3]);
            let per_frame = s[0] / b;
            (0..b)
                .map(|i| {
                    let f = i * per_frame + per_frame - 1;
                    (0..c)
                        .map(|ch| {
                            let base = (f * c + ch) * hw;
                            e.data()[base..base + hw]
                                .iter()
                                .map(|v| *v as f64)
                                .sum::<f64>()
                                / hw as f64
                        })
                        .collect()
                })
                .collect()
        }
    })
}

/// Averages layer activations over visits, where each visit is an
/// observation, the action taken there, a state index and a condition.
struct VisitAccumulator {
    store: ObsStore,
    keys: HashMap<(usize, usize), usize>,
    pairs: Vec<(usize, usize)>,
    visits: Vec<(usize, usize, usize)>,
}

impl VisitAccumulator {
    fn new() -> Self {
        VisitAccumulator {
            store: ObsStore::new(),
            keys: HashMap::new(),
            pairs: Vec::new(),
            visits: Vec::new(),
        }
    }

    fn visit(&mut self, obs: &Tensor<f32>, action: usize, state: usize, condition: usize) {
        let id = self.store.intern(obs);
        let n = self.pairs.len();
        let k = *self.keys.entry((id, action)).or_insert(n);
        if k == n {
            self.pairs.push((id, action));
        }
        self.visits.push((k, state, condition));
    }

    fn finish(
        self,
        bundle: &AgentBundle,
        layer: Layer,
        conditions: Vec<String>,
        coords: Vec<(usize, usize)>,
    ) -> Result<ActivationDump> {
        const CHUNK: usize = 256;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.pairs.len());
        for chunk in self.pairs.chunks(CHUNK) {
            let obs: Vec<&Tensor<f32>> = chunk.iter().map(|(id, _)| self.store.get(*id)).collect();
            let actions: Vec<usize> = chunk.iter().map(|(_, a)| *a).collect();
            acts.extend(layer_activations(bundle, &obs, &actions, layer)?);
        }
        let n_units = acts.first().map_or(0, Vec::len);
        let (n_states, n_cond) = (coords.len(), conditions.len());
        let mut sums = vec![0.0; n_units * n_states * n_cond];
        let mut counts = vec![0usize; n_states * n_cond];
        let mut occupancy = vec![0.0; n_states];
        for &(k, s, c) in &self.visits {
            counts[s * n_cond + c] += 1;
            occupancy[s] += 1.0;
            for (u, v) in acts[k].iter().enumerate() {
                sums[(u * n_states + s) * n_cond + c] += v;
            }
        }
        for u in 0..n_units {
            for s in 0..n_states {
                for c in 0..n_cond {
                    let n = counts[s * n_cond + c];
                    if n > 0 {
                        sums[(u * n_states + s) * n_cond + c] /= n as f64;
                    }
                }
            }
        }
        let total: f64 = occupancy.iter().sum();
        if total > 0.0 {
            occupancy.iter_mut().for_each(|o| *o /= total);
        }
        ActivationDump::new(layer, n_units, conditions, coords, sums, occupancy)
    }
}

/// Uniform-random rollout over the arena. Every arrival, including arrival
/// at the goal, counts as a visit with the action the random policy draws
/// there.
pub fn grid_dump(
    bundle: &AgentBundle,
    env: &GridEnv,
    layer: Layer,
    steps: usize,
    rng: &mut Rng,
) -> Result<ActivationDump> {
    let mut env = env.clone();
    let mut acc = VisitAccumulator::new();
    let mut obs = env.reset(rng);
    for _ in 0..steps {
        let a = rng.gen_range(0..4);
        let cell = env.index(env.agent());
        acc.visit(&obs, a, cell, 0);
        let step = env.step(a, rng)?;
        obs = if step.terminal {
            acc.visit(&step.obs, rng.gen_range(0..4), env.index(env.agent()), 0);
            env.reset(rng)
        } else {
            step.obs
        };
    }
    let coords = (0..env.width() * env.height())
        .map(|c| env.cell(c))
        .collect();
    acc.finish(bundle, layer, vec!["all".into()], coords)
}

/// Uniform-random rollout around the ring; states are ring indices.
pub fn ring_dump(
    bundle: &AgentBundle,
    track: &CircularTrack,
    layer: Layer,
    steps: usize,
    rng: &mut Rng,
) -> Result<ActivationDump> {
    let mut env = track.clone();
    let mut acc = VisitAccumulator::new();
    let mut obs = env.reset(rng);
    for _ in 0..steps {
        let a = rng.gen_range(0..2);
        acc.visit(&obs, a, env.position(), 0);
        let step = env.step(a, rng)?;
        obs = if step.terminal {
            acc.visit(&step.obs, rng.gen_range(0..2), env.position(), 0);
            env.reset(rng)
        } else {
            step.obs
        };
    }
    let coords = (0..RING_LEN).map(|i| (i, 0)).collect();
    acc.finish(bundle, layer, vec!["all".into()], coords)
}

pub const MAZE_CONDITIONS: [&str; 2] = ["left", "right"];

/// Scripted figure-8 runs through the maze; records the centre stem
/// `(2, 0) .. (2, 4)` on the outbound leg, split by trial type.
pub fn maze_dump(
    bundle: &AgentBundle,
    input: MazeInput,
    layer: Layer,
    trials: usize,
) -> Result<ActivationDump> {
    let mut acc = VisitAccumulator::new();
    for start in [TrialKind::Left, TrialKind::Right] {
        let mut m = AltTMaze::new(input);
        m.start_return(start);
        // the return leg fills the history before the first outbound leg
        let end = m.trials_started() + trials.div_ceil(2);
        while m.trials_started() <= end {
            let a = m.scripted_action();
            let (x, y) = m.cell();
            if m.trials_started() > 0 && m.phase() == Phase::Outbound && x == 2 {
                let cond = if m.trial() == TrialKind::Left { 0 } else { 1 };
                acc.visit(&m.observe(), a, y, cond);
            }
            m.step_exact(a)?;
            if m.trials_started() == end && m.phase() == Phase::Return {
                break;
            }
        }
    }
    let coords = (0..5).map(|y| (2, y)).collect();
    acc.finish(
        bundle,
        layer,
        MAZE_CONDITIONS.iter().map(|s| s.to_string()).collect(),
        coords,
    )
}

pub const CORRIDOR_CONDITIONS: [&str; 2] = ["vertical", "angled"];

/// Every corridor position under both patterns, visited once each with the
/// forward action.
pub fn corridor_dump(bundle: &AgentBundle, layer: Layer) -> Result<ActivationDump> {
    let mut acc = VisitAccumulator::new();
    let n = APPROACH_LEN + CORRIDOR_LEN;
    for (c, kind) in [CorridorKind::Vertical, CorridorKind::Angled]
        .into_iter()
        .enumerate()
    {
        for pos in 0..n {
            acc.visit(&Corridor::render(kind, pos), crate::env::FORWARD, pos, c);
        }
    }
    let coords = (0..n).map(|p| (p, 0)).collect();
    acc.finish(
        bundle,
        layer,
        CORRIDOR_CONDITIONS.iter().map(|s| s.to_string()).collect(),
        coords,
    )
}

/// Recomputes one probe for a stored checkpoint of a run.
pub fn probe_checkpoint(
    cfg: &RunConfig,
    params: &ParamSet<f32>,
    layer: Layer,
) -> Result<ActivationDump> {
    let env = build_env(cfg)?;
    let bundle = restore_bundle(cfg, env.as_ref(), params)?;
    let mut rng = seed::stream(cfg.seed, "probe");
    let rollout = cfg.protocol.rollout_steps;
    match cfg.experiment {
        Experiment::Foraging
        | Experiment::GoalTransfer
        | Experiment::ShuffleTransfer
        | Experiment::Swap => grid_dump(&bundle, &build_grid(cfg)?, layer, rollout, &mut rng),
        Experiment::CircularTrack => {
            ring_dump(&bundle, &build_track(cfg), layer, rollout, &mut rng)
        }
        Experiment::AltT | Experiment::PoAltT => {
            maze_dump(&bundle, maze_input(cfg), layer, cfg.protocol.probe_trials)
        }
        Experiment::Corridor => corridor_dump(&bundle, layer),
        Experiment::Chain => Err(Error::Config(
            "the chain task has no activation probes".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: Experiment) -> RunConfig {
        let mut cfg = RunConfig::new(experiment);
        cfg.steps = 20;
        cfg.train.batch_size = 8;
        cfg.train.prefill = 50;
        cfg.train.eval_episodes = 2;
        cfg.env.side = 4;
        cfg.protocol = crate::config::ProtocolConfig {
            phase_b_steps: 10,
            pretrain_steps: 10,
            exposure_steps: 5,
            probe_unit: 0,
            rollout_steps: 400,
            probe_trials: 4,
        };
        cfg.output.checkpoint_every = 10;
        cfg
    }

    #[test]
    fn every_experiment_runs_end_to_end() {
        for e in [
            Experiment::Foraging,
            Experiment::GoalTransfer,
            Experiment::ShuffleTransfer,
            Experiment::CircularTrack,
            Experiment::AltT,
            Experiment::PoAltT,
            Experiment::Corridor,
            Experiment::Swap,
            Experiment::Chain,
        ] {
            let rec = run(&small(e)).unwrap_or_else(|err| panic!("{e:?}: {err}"));
            assert!(!rec.metrics.is_empty(), "{e:?}");
            let steps: Vec<usize> = rec.metrics.iter().map(|m| m.step).collect();
            assert!(
                steps.windows(2).all(|w| w[0] < w[1]),
                "{e:?} steps {steps:?}"
            );
            assert!(!rec.checkpoints.is_empty(), "{e:?}");
        }
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = small(Experiment::Foraging);
        assert_eq!(
            run(&cfg).unwrap().metrics_csv(),
            run(&cfg).unwrap().metrics_csv()
        );
    }

    #[test]
    fn goal_b_differs_from_goal_a() {
        for seed in 0..20 {
            let mut cfg = small(Experiment::GoalTransfer);
            cfg.seed = seed;
            assert_ne!(goal_b(&cfg).unwrap(), foraging_goal(&cfg));
        }
    }

    #[test]
    fn swap_probes_are_contiguous_and_disjoint() {
        let env = GridEnv::new(4, None).unwrap();
        // response peaks at cell 0 and falls off with distance
        let resp: Vec<f64> = (0..16)
            .map(|c| {
                let (x, y) = env.cell(c);
                -((x + y) as f64)
            })
            .collect();
        let p = select_swap_probes(&env, &resp, 3).unwrap();
        for path in [p.preferred, p.nonpreferred] {
            for w in path.windows(2) {
                assert!((0..4).any(|a| env.geometric_move(w[0], a) == w[1]));
            }
        }
        assert!(p.preferred.iter().all(|c| !p.nonpreferred.contains(c)));
        assert!(p.preferred.contains(&0));
        assert!(p.nonpreferred.contains(&15));
        assert!(resp[p.preferred[0]] >= resp[p.preferred[2]]);
        assert!(resp[p.nonpreferred[0]] <= resp[p.nonpreferred[2]]);

        let chain = swap_chain(&env, &p).unwrap();
        assert_eq!(chain.len(), 5);
        assert!(chain.iter().all(|t| t.reward == 0.0 && !t.terminal));
    }

    #[test]
    fn flat_response_has_no_probes() {
        let env = GridEnv::new(4, None).unwrap();
        assert!(matches!(
            select_swap_probes(&env, &[0.5; 16], 0),
            Err(Error::ProbeSelection(_))
        ));
    }

    #[test]
    fn maze_dump_covers_the_stem_in_both_conditions() {
        let cfg = small(Experiment::AltT);
        let env = build_env(&cfg).unwrap();
        let bundle = build_bundle(&cfg, env.as_ref()).unwrap();
        let d = maze_dump(&bundle, MazeInput::Trace, Layer::TOutput, 4).unwrap();
        assert_eq!(d.n_states, 5);
        assert_eq!(d.n_conditions(), 2);
        assert!(d.occupancy.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn shuffled_t_weights_keep_their_values() {
        let cfg = small(Experiment::CircularTrack);
        let env = build_env(&cfg).unwrap();
        let bundle = build_bundle(&cfg, env.as_ref()).unwrap();
        let mut params = bundle.online.clone();
        shuffle_t_weights(&mut params, &mut seed::stream(1, "t"));
        for id in params.ids() {
            let (mut a, mut b) = (
                bundle.online.get(id).data().to_vec(),
                params.get(id).data().to_vec(),
            );
            if AgentNet::is_t_param(params.name(id)) {
                a.sort_by(f32::total_cmp);
                b.sort_by(f32::total_cmp);
            }
            assert_eq!(a, b);
        }
    }
}
