//! Finite-difference cases for every tape operation and for the three
//! training losses through the full network, ten random instances each.

use pxrl::agent::{AgentNet, AgentSpec, EncoderSpec, Variant};
use pxrl::autodiff::{grad_check, GradCheckReport, ParamSet, Tape, Tensor, Var};
use pxrl::objectives::{negative_loss, positive_loss, q_loss};
use pxrl::seed::{self, Rng};
use pxrl::Result;
use rand::Rng as _;

pub const INSTANCES: u64 = 10;
pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub type Reports = Vec<(String, GradCheckReport)>;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, so ReLU-like kinks stay outside the stencil.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Reduces any output to a scalar through a fixed random readout.
fn readout(tape: &mut Tape<f64>, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let r = random(&mut seed::stream(rng_seed, "readout"), &shape);
    let r = tape.constant(r);
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

fn check<Fr>(out: &mut Reports, name: &str, params: &ParamSet<f64>, fragment: Fr)
where
    Fr: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    out.push((
        name.to_string(),
        grad_check(params, fragment, STEP, TOL).unwrap(),
    ));
}

/// A check counts only if it compared something, stayed clear of kinks
/// almost everywhere and passed.
pub fn acceptable(r: &GradCheckReport) -> bool {
    r.checked > 0 && r.nonsmooth * 100 <= r.checked && r.passed()
}

fn for_instances(op: &str, mut body: impl FnMut(u64, &mut Rng)) {
    for k in 0..INSTANCES {
        let mut rng = seed::stream(k, op);
        body(k, &mut rng);
    }
}

fn set(tensors: Vec<Tensor<f64>>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (i, t) in tensors.into_iter().enumerate() {
        p.add(format!("p{i}"), t);
    }
    p
}

pub fn conv2d() -> Reports {
    let mut out = Vec::new();
    for_instances("conv2d", |k, rng| {
        let p = set(vec![
            random(rng, &[2, 2, 5, 5]),
            random(rng, &[3, 2, 2, 2]),
            random(rng, &[3]),
        ]);
        check(&mut out, "conv2d", &p, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            readout(t, y, k)
        });
    });
    out
}

pub fn maxpool2d() -> Reports {
    let mut out = Vec::new();
    for_instances("maxpool2d", |k, rng| {
        // odd sizes exercise the clipped edge windows
        let shape = if k % 2 == 0 {
            [2, 3, 4, 4]
        } else {
            [2, 3, 5, 3]
        };
        let p = set(vec![random(rng, &shape)]);
        check(&mut out, "maxpool2d", &p, |t, v| {
            let y = t.maxpool2d(v[0], 2)?;
            readout(t, y, k)
        });
    });
    out
}

pub fn dense() -> Reports {
    let mut out = Vec::new();
    for_instances("dense", |k, rng| {
        let p = set(vec![
            random(rng, &[3, 4]),
            random(rng, &[5, 4]),
            random(rng, &[5]),
        ]);
        check(&mut out, "dense", &p, |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            readout(t, y, k)
        });
    });
    out
}

pub fn relu() -> Reports {
    let mut out = Vec::new();
    for_instances("relu", |k, rng| {
        let p = set(vec![away_from_zero(rng, &[4, 5])]);
        check(&mut out, "relu", &p, |t, v| {
            let y = t.relu(v[0]);
            readout(t, y, k)
        });
    });
    out
}

pub fn elementwise_binary() -> Reports {
    let mut out = Vec::new();
    for_instances("binary", |k, rng| {
        let p = set(vec![random(rng, &[3, 4]), random(rng, &[3, 4])]);
        check(&mut out, "add", &p, |t, v| {
            let y = t.add(v[0], v[1])?;
            readout(t, y, k)
        });
        check(&mut out, "sub", &p, |t, v| {
            let y = t.sub(v[0], v[1])?;
            readout(t, y, k)
        });
        check(&mut out, "mul", &p, |t, v| {
            let y = t.mul(v[0], v[1])?;
            readout(t, y, k)
        });
    });
    out
}

pub fn elementwise_unary() -> Reports {
    let mut out = Vec::new();
    for_instances("unary", |k, rng| {
        let p = set(vec![random(rng, &[6])]);
        check(&mut out, "scale", &p, |t, v| {
            let y = t.scale(v[0], -2.5);
            readout(t, y, k)
        });
        check(&mut out, "exp", &p, |t, v| {
            let y = t.exp(v[0]);
            readout(t, y, k)
        });
        // cap sits between values, never within the stencil
        let cap = 0.01 + 0.5 * (p.iter().next().unwrap().1.data()[0]);
        check(&mut out, "clamp_max", &p, |t, v| {
            let y = t.clamp_max(v[0], cap);
            readout(t, y, k)
        });
    });
    out
}

pub fn shape_ops() -> Reports {
    let mut out = Vec::new();
    for_instances("shape", |k, rng| {
        let p = set(vec![random(rng, &[3, 2]), random(rng, &[3, 4])]);
        check(&mut out, "concat", &p, |t, v| {
            let y = t.concat(v[0], v[1])?;
            readout(t, y, k)
        });
        check(&mut out, "gather", &p, |t, v| {
            let y = t.gather(v[1], &[0, 2, 2, 1])?;
            readout(t, y, k)
        });
        check(&mut out, "reshape", &p, |t, v| {
            let y = t.reshape(v[1], &[2, 6])?;
            readout(t, y, k)
        });
    });
    out
}

pub fn reductions() -> Reports {
    let mut out = Vec::new();
    for_instances("reduce", |k, rng| {
        let p = set(vec![away_from_zero(rng, &[3, 4])]);
        check(&mut out, "sum", &p, |t, v| {
            let y = t.sum(v[0]);
            Ok(t.exp(y))
        });
        check(&mut out, "mean", &p, |t, v| {
            let y = t.mean(v[0]);
            Ok(t.exp(y))
        });
        check(&mut out, "row_sq_norm", &p, |t, v| {
            let y = t.row_sq_norm(v[0])?;
            readout(t, y, k)
        });
        check(&mut out, "row_norm", &p, |t, v| {
            let y = t.row_norm(v[0])?;
            readout(t, y, k)
        });
    });
    out
}

/// Finite differences also see through a detached value, so the stop-gradient
/// is checked against its defining rule instead: `d/dx sum(r * sg(x) * x) = r * x`.
/// Returns the largest deviation over all instances.
pub fn detach_rule_error() -> f64 {
    let mut worst: f64 = 0.0;
    for_instances("detach", |k, rng| {
        let x = random(rng, &[3, 4]);
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let d = t.detach(v);
        let y = t.mul(d, v).unwrap();
        let out = readout(&mut t, y, k).unwrap();
        let g = t.backward(out).unwrap();
        let r = random(&mut seed::stream(k, "readout"), &[3, 4]);
        for ((gi, ri), xi) in g.get(v).unwrap().iter().zip(r.data()).zip(x.data()) {
            worst = worst.max((gi - ri * xi).abs());
        }
    });
    worst
}

/// Every elementary operation.
pub fn all_ops() -> Reports {
    [
        conv2d(),
        maxpool2d(),
        dense(),
        relu(),
        elementwise_binary(),
        elementwise_unary(),
        shape_ops(),
        reductions(),
    ]
    .concat()
}

// ---------------------------------------------------------------------------
// full losses through encoder, value head and transition network

const BATCH: usize = 4;

fn network(k: u64, recurrent: Option<usize>) -> (AgentNet, ParamSet<f64>, Tensor<f64>) {
    let mut encoder = EncoderSpec::new(Variant::Base, 3, [1, 5, 5]);
    encoder.recurrent_window = recurrent;
    let spec = AgentSpec {
        encoder,
        n_actions: 4,
    };
    let (net, params) = AgentNet::build(spec, &mut seed::stream(k, "net")).unwrap();
    let mut rng = seed::stream(k, "obs");
    let obs_shape: Vec<usize> = match recurrent {
        Some(l) => vec![BATCH, l, 1, 5, 5],
        None => vec![BATCH, 1, 5, 5],
    };
    let n = obs_shape.iter().product();
    let obs = Tensor::new(obs_shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    (net, params.cast::<f64>(), obs)
}

const ACTIONS: [usize; BATCH] = [0, 3, 1, 2];
const NEXT_ACTIONS: [usize; BATCH] = [2, 2, 0, 1];

fn value_loss<'a>(
    net: &'a AgentNet,
    obs: &'a Tensor<f64>,
    k: u64,
) -> impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a {
    let targets = random(&mut seed::stream(k, "targets"), &[BATCH, 1]);
    move |t, p| {
        let x = t.constant(obs.clone());
        let z = net.encode_batch(t, p, x)?.z;
        let q = net.q_values(t, p, z, &ACTIONS)?;
        q_loss(t, q, targets.clone())
    }
}

pub fn value_loss_through_network() -> Reports {
    let mut out = Vec::new();
    for k in 0..INSTANCES {
        let (net, p, obs) = network(k, None);
        check(&mut out, "L_Q", &p, value_loss(&net, &obs, k));
    }
    out
}

pub fn value_loss_through_recurrent_encoder() -> Reports {
    let mut out = Vec::new();
    for k in 0..INSTANCES {
        let (net, p, obs) = network(k, Some(3));
        check(&mut out, "L_Q recurrent", &p, value_loss(&net, &obs, k));
    }
    out
}

pub fn positive_loss_through_network() -> Reports {
    let mut out = Vec::new();
    for k in 0..INSTANCES {
        let (net, p, obs) = network(k, None);
        let gamma = [0.0, 0.25, 0.5, 0.8][k as usize % 4];
        // successor of row i is row i+1 (cyclic); the last row is terminal
        let next: Vec<usize> = (0..BATCH).map(|i| (i + 1) % BATCH).collect();
        // the bootstrap is a stop-gradient target: evaluate it once and hold it fixed
        let boot = {
            let mut t = Tape::new();
            let vars = p.bind_constant(&mut t);
            let x = t.constant(obs.clone());
            let z = net.encode_batch(&mut t, &vars, x).unwrap().z;
            let z_next = t.gather(z, &next).unwrap();
            let tau_next = net.tau_batch(&mut t, &vars, z_next, &NEXT_ACTIONS).unwrap();
            let d = net.latent();
            let mut boot = t.value(tau_next).clone();
            for (i, v) in boot.data_mut().iter_mut().enumerate() {
                *v *= if i / d == BATCH - 1 { 0.0 } else { gamma };
            }
            boot
        };
        check(&mut out, "L_+", &p, |t, p| {
            let x = t.constant(obs.clone());
            let z = net.encode_batch(t, p, x)?.z;
            let z_next = t.gather(z, &next)?;
            let tau = net.tau_batch(t, p, z, &ACTIONS)?;
            positive_loss(t, tau, z_next, boot.clone())
        });
    }
    out
}

pub fn negative_loss_through_network() -> Reports {
    let mut out = Vec::new();
    for k in 0..INSTANCES {
        let (net, p, obs) = network(k, None);
        // alternate between an inactive and a binding distance cap
        let cap = if k % 2 == 0 { 1e3 } else { 1e-3 };
        check(&mut out, "L_-", &p, |t, p| {
            let x = t.constant(obs.clone());
            let z = net.encode_batch(t, p, x)?.z;
            let zi = t.gather(z, &[0, 1, 2, 3])?;
            let zj = t.gather(z, &[2, 3, 1, 0])?;
            negative_loss(t, zi, zj, cap)
        });
    }
    out
}

/// The three losses through the whole network.
pub fn all_losses() -> Reports {
    [
        value_loss_through_network(),
        value_loss_through_recurrent_encoder(),
        positive_loss_through_network(),
        negative_loss_through_network(),
    ]
    .concat()
}
