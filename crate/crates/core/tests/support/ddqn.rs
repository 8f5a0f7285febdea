//! Standalone double-DQN in f64 with hand-written backpropagation. It shares
//! nothing with the library beyond the parameter values it starts from and
//! the replay contents it reads.

use pxrl::autodiff::ParamSet;
use pxrl::replay::ReplayBuffer;
use pxrl::seed::Rng;
use rand::Rng as _;

#[derive(Clone, Debug)]
struct Dense {
    w: Vec<f64>,
    b: Vec<f64>,
    inp: usize,
    out: usize,
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                self.b[o]
                    + (0..self.inp)
                        .map(|i| self.w[o * self.inp + i] * x[i])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], g: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        for o in 0..self.out {
            g.b[o] += dy[o];
            for i in 0..self.inp {
                g.w[o * self.inp + i] += dy[o] * x[i];
                dx[i] += dy[o] * self.w[o * self.inp + i];
            }
        }
        dx
    }
}

/// 2x2 valid convolution, stride 1.
#[derive(Clone, Debug)]
struct Conv {
    w: Vec<f64>,
    b: Vec<f64>,
    ci: usize,
    co: usize,
}

impl Conv {
    fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (h - 1, w - 1);
        let mut y = vec![0.0; self.co * oh * ow];
        for o in 0..self.co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = self.b[o];
                    for c in 0..self.ci {
                        for ki in 0..2 {
                            for kj in 0..2 {
                                s += self.w[((o * self.ci + c) * 2 + ki) * 2 + kj]
                                    * x[(c * h + i + ki) * w + j + kj];
                            }
                        }
                    }
                    y[(o * oh + i) * ow + j] = s;
                }
            }
        }
        y
    }

    fn backward(&self, x: &[f64], h: usize, w: usize, dy: &[f64], g: &mut Conv) -> Vec<f64> {
        let (oh, ow) = (h - 1, w - 1);
        let mut dx = vec![0.0; self.ci * h * w];
        for o in 0..self.co {
            for i in 0..oh {
                for j in 0..ow {
                    let d = dy[(o * oh + i) * ow + j];
                    g.b[o] += d;
                    for c in 0..self.ci {
                        for ki in 0..2 {
                            for kj in 0..2 {
                                let wi = ((o * self.ci + c) * 2 + ki) * 2 + kj;
                                let xi = (c * h + i + ki) * w + j + kj;
                                g.w[wi] += d * x[xi];
                                dx[xi] += d * self.w[wi];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn relu_back(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(p, d)| if *p > 0.0 { *d } else { 0.0 })
        .collect()
}

/// Encoder and value head of the base architecture.
#[derive(Clone, Debug)]
pub struct Network {
    conv0: Conv,
    conv1: Conv,
    fc0: Dense,
    latent: Dense,
    q0: Dense,
    qout: Dense,
    input: [usize; 3],
    n_actions: usize,
}

/// Everything the backward pass needs from one encoder forward pass.
struct Trace {
    x: Vec<f64>,
    a0: Vec<f64>,
    h0: Vec<f64>,
    a1: Vec<f64>,
    pool_src: Vec<usize>,
    pooled: Vec<f64>,
    f_pre: Vec<f64>,
    f: Vec<f64>,
    z_pre: Vec<f64>,
    z: Vec<f64>,
}

impl Network {
    pub fn from_params(p: &ParamSet<f32>, input: [usize; 3], n_actions: usize) -> Self {
        let get = |name: &str| -> (Vec<f64>, Vec<usize>) {
            let t = p.get(
                p.find(name)
                    .unwrap_or_else(|| panic!("missing parameter {name}")),
            );
            (
                t.data().iter().map(|v| *v as f64).collect(),
                t.shape().to_vec(),
            )
        };
        let conv = |name: &str| {
            let (w, s) = get(&format!("{name}.weight"));
            Conv {
                w,
                b: get(&format!("{name}.bias")).0,
                co: s[0],
                ci: s[1],
            }
        };
        let dense = |name: &str| {
            let (w, s) = get(&format!("{name}.weight"));
            Dense {
                w,
                b: get(&format!("{name}.bias")).0,
                out: s[0],
                inp: s[1],
            }
        };
        Network {
            conv0: conv("encoder.conv0"),
            conv1: conv("encoder.conv1"),
            fc0: dense("encoder.fc0"),
            latent: dense("encoder.latent"),
            q0: dense("q.fc0"),
            qout: dense("q.out"),
            input,
            n_actions,
        }
    }

    fn zeroed(&self) -> Network {
        let mut g = self.clone();
        for v in g.slices_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        g
    }

    fn slices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.conv0.w,
            &mut self.conv0.b,
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.fc0.w,
            &mut self.fc0.b,
            &mut self.latent.w,
            &mut self.latent.b,
            &mut self.q0.w,
            &mut self.q0.b,
            &mut self.qout.w,
            &mut self.qout.b,
        ]
    }

    /// Values in library naming, for comparison.
    pub fn named(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("encoder.conv0.weight", &self.conv0.w),
            ("encoder.conv0.bias", &self.conv0.b),
            ("encoder.conv1.weight", &self.conv1.w),
            ("encoder.conv1.bias", &self.conv1.b),
            ("encoder.fc0.weight", &self.fc0.w),
            ("encoder.fc0.bias", &self.fc0.b),
            ("encoder.latent.weight", &self.latent.w),
            ("encoder.latent.bias", &self.latent.b),
            ("q.fc0.weight", &self.q0.w),
            ("q.fc0.bias", &self.q0.b),
            ("q.out.weight", &self.qout.w),
            ("q.out.bias", &self.qout.b),
        ]
    }

    fn encode(&self, x: &[f64]) -> Trace {
        let [_, h, w] = self.input;
        let a0 = self.conv0.forward(x, h, w);
        let h0 = relu(&a0);
        let a1 = self.conv1.forward(&h0, h - 1, w - 1);
        let h1 = relu(&a1);
        let (sh, sw) = (h - 2, w - 2);
        let (ph, pw) = (sh.div_ceil(2), sw.div_ceil(2));
        let mut pooled = Vec::new();
        let mut pool_src = Vec::new();
        for c in 0..self.conv1.co {
            for i in 0..ph {
                for j in 0..pw {
                    let mut best = (c * sh + 2 * i) * sw + 2 * j;
                    for di in 0..2.min(sh - 2 * i) {
                        for dj in 0..2.min(sw - 2 * j) {
                            let k = (c * sh + 2 * i + di) * sw + 2 * j + dj;
                            if h1[k] > h1[best] {
                                best = k;
                            }
                        }
                    }
                    pooled.push(h1[best]);
                    pool_src.push(best);
                }
            }
        }
        let f_pre = self.fc0.forward(&pooled);
        let f = relu(&f_pre);
        let z_pre = self.latent.forward(&f);
        let z = relu(&z_pre);
        Trace {
            x: x.to_vec(),
            a0,
            h0,
            a1,
            pool_src,
            pooled,
            f_pre,
            f,
            z_pre,
            z,
        }
    }

    fn head_input(&self, z: &[f64], a: usize) -> Vec<f64> {
        let mut x = z.to_vec();
        x.extend((0..self.n_actions).map(|k| if k == a { 1.0 } else { 0.0 }));
        x
    }

    fn q(&self, z: &[f64], a: usize) -> f64 {
        let h = relu(&self.q0.forward(&self.head_input(z, a)));
        self.qout.forward(&h)[0]
    }

    /// Adds `dq * dQ(o, a)/dθ` into `g`.
    fn backward_q(&self, tr: &Trace, a: usize, dq: f64, g: &mut Network) {
        let [_, h, w] = self.input;
        let qin = self.head_input(&tr.z, a);
        let qa = self.q0.forward(&qin);
        let qh = relu(&qa);
        let dqh = self.qout.backward(&qh, &[dq], &mut g.qout);
        let dqin = self.q0.backward(&qin, &relu_back(&qa, &dqh), &mut g.q0);
        let dz = &dqin[..tr.z.len()];
        let df = self
            .latent
            .backward(&tr.f, &relu_back(&tr.z_pre, dz), &mut g.latent);
        let dpooled = self
            .fc0
            .backward(&tr.pooled, &relu_back(&tr.f_pre, &df), &mut g.fc0);
        let mut dh1 = vec![0.0; tr.a1.len()];
        for (k, src) in tr.pool_src.iter().enumerate() {
            dh1[*src] += dpooled[k];
        }
        let dh0 = self
            .conv1
            .backward(&tr.h0, h - 1, w - 1, &relu_back(&tr.a1, &dh1), &mut g.conv1);
        self.conv0
            .backward(&tr.x, h, w, &relu_back(&tr.a0, &dh0), &mut g.conv0);
    }
}

/// Double DQN with a hard-synced target copy, trained by plain SGD on the
/// mean squared TD error.
pub struct DoubleDqn {
    pub online: Network,
    target: Network,
    gamma: f64,
    step_size: f64,
    sync_period: usize,
    updates: usize,
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl DoubleDqn {
    pub fn new(online: Network, gamma: f64, step_size: f64, sync_period: usize) -> Self {
        DoubleDqn {
            target: online.clone(),
            online,
            gamma,
            step_size,
            sync_period,
            updates: 0,
        }
    }

    /// One update on `batch` transitions drawn from `rng`, which is consumed
    /// exactly as the library consumes its sampling stream (the negative-pair
    /// draws are made and discarded).
    pub fn update(&mut self, buffer: &ReplayBuffer, batch: usize, rng: &mut Rng) {
        let n = buffer.len();
        let rows: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..n)).collect();
        for _ in 0..2 * batch {
            let _: usize = rng.gen_range(0..n);
        }
        let obs =
            |id: usize| -> Vec<f64> { buffer.obs(id).data().iter().map(|v| *v as f64).collect() };
        let mut g = self.online.zeroed();
        for r in &rows {
            let t = buffer.get(*r);
            let y = if t.terminal {
                t.reward as f64
            } else {
                let next = obs(t.next_obs);
                let zo = self.online.encode(&next).z;
                let qs: Vec<f64> = (0..self.online.n_actions)
                    .map(|a| self.online.q(&zo, a))
                    .collect();
                let best = first_argmax(&qs);
                let zt = self.target.encode(&next).z;
                t.reward as f64 + self.gamma * self.target.q(&zt, best)
            };
            let tr = self.online.encode(&obs(t.obs));
            let q = self.online.q(&tr.z, t.action);
            let dq = 2.0 * (q - y) / batch as f64;
            self.online.backward_q(&tr, t.action, dq, &mut g);
        }
        let lr = self.step_size;
        for (p, gp) in self.online.slices_mut().into_iter().zip(g.slices_mut()) {
            for (v, d) in p.iter_mut().zip(gp.iter()) {
                *v -= lr * d;
            }
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.sync_period) {
            self.target = self.online.clone();
        }
    }
}
