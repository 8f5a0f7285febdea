//! Encoder `E`, value head `Q(z, a)`, prediction head `T(z, a)` and the
//! target copies used by double Q-learning.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamId, ParamSet, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Layer-table variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Base,
    DeepEncoder,
    DeepQ,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub variant: Variant,
    pub latent: usize,
    /// Observation shape `(C, H, W)`.
    pub input: [usize; 3],
    /// Frames per recurrent window; `None` for the feedforward encoder.
    #[serde(default)]
    pub recurrent_window: Option<usize>,
}

impl EncoderSpec {
    pub fn new(variant: Variant, latent: usize, input: [usize; 3]) -> Self {
        EncoderSpec {
            variant,
            latent,
            input,
            recurrent_window: None,
        }
    }

    fn conv_channels(&self) -> [usize; 2] {
        match self.variant {
            Variant::DeepEncoder => [16, 48],
            Variant::Base | Variant::DeepQ => [16, 32],
        }
    }

    /// Widths of the hidden fully connected layers before the latent layer.
    fn hidden_widths(&self) -> &'static [usize] {
        match self.variant {
            Variant::DeepEncoder => &[48, 32],
            Variant::Base | Variant::DeepQ => &[32],
        }
    }

    /// Spatial size after conv, conv, pool.
    pub fn pooled_hw(&self) -> (usize, usize) {
        let [_, h, w] = self.input;
        (
            h.saturating_sub(2).div_ceil(2),
            w.saturating_sub(2).div_ceil(2),
        )
    }

    /// Per-sample input shape fed to [`AgentNet::encode_batch`].
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.recurrent_window {
            Some(l) => vec![l, self.input[0], self.input[1], self.input[2]],
            None => self.input.to_vec(),
        }
    }

    /// Shape audit: every activation shape from input to latent for one sample.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let [c, h, w] = self.input;
        let [c1, c2] = self.conv_channels();
        let (ph, pw) = self.pooled_hw();
        let mut shapes = vec![
            vec![c, h, w],
            vec![c1, h - 1, w - 1],
            vec![c2, h - 2, w - 2],
            vec![c2, ph, pw],
        ];
        for width in self.hidden_widths() {
            shapes.push(vec![*width]);
        }
        shapes.push(vec![self.latent]);
        shapes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub encoder: EncoderSpec,
    pub n_actions: usize,
}

impl AgentSpec {
    pub fn q_hidden(&self) -> &'static [usize] {
        match self.encoder.variant {
            Variant::DeepQ => &[32, 16],
            Variant::Base | Variant::DeepEncoder => &[16],
        }
    }

    pub fn t_hidden(&self) -> &'static [usize] {
        &[16]
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

/// Parameter layout of one agent. The values live in a [`ParamSet`] so the
/// same layout drives the online and target copies.
#[derive(Clone, Debug)]
pub struct AgentNet {
    spec: AgentSpec,
    convs: Vec<Layer>,
    /// Hidden encoder layers followed by the latent layer.
    enc_fc: Vec<Layer>,
    q: Vec<Layer>,
    t: Vec<Layer>,
}

/// Intermediate encoder activations for one batch.
#[derive(Clone, Copy, Debug)]
pub struct EncoderTrace {
    /// First convolution after ReLU, `[B, 16, H-1, W-1]`.
    pub early: Var,
    /// Last hidden layer before the latent layer, `[B, 32]`.
    pub penultimate: Var,
    pub z: Var,
}

fn uniform_tensor(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..bound) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn add_layer(
    params: &mut ParamSet<f32>,
    rng: &mut Rng,
    name: &str,
    wshape: &[usize],
    fan_in: usize,
) -> Layer {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let weight = params.add(format!("{name}.weight"), uniform_tensor(rng, wshape, bound));
    let bias = params.add(
        format!("{name}.bias"),
        uniform_tensor(rng, &[wshape[0]], bound),
    );
    Layer { weight, bias }
}

impl AgentNet {
    /// Builds the layout and draws initial weights uniformly in
    /// `±1/sqrt(fan_in)`.
    pub fn build(spec: AgentSpec, rng: &mut Rng) -> Result<(AgentNet, ParamSet<f32>)> {
        let enc = &spec.encoder;
        let [c, h, w] = enc.input;
        if h < 4 || w < 4 {
            return Err(Error::shape(
                "encoder",
                format!("observations must be at least 4x4 for two 2x2 convolutions and pooling, got {h}x{w}"),
            ));
        }
        if enc.latent == 0 || spec.n_actions == 0 {
            return Err(Error::Config(
                "latent size and action count must be positive".into(),
            ));
        }
        let mut params = ParamSet::new();
        let [c1, c2] = enc.conv_channels();
        let convs = vec![
            add_layer(&mut params, rng, "encoder.conv0", &[c1, c, 2, 2], c * 4),
            add_layer(&mut params, rng, "encoder.conv1", &[c2, c1, 2, 2], c1 * 4),
        ];
        let (ph, pw) = enc.pooled_hw();
        let mut width = c2 * ph * pw;
        let mut enc_fc = Vec::new();
        for (i, out) in enc.hidden_widths().iter().enumerate() {
            enc_fc.push(add_layer(
                &mut params,
                rng,
                &format!("encoder.fc{i}"),
                &[*out, width],
                width,
            ));
            width = *out;
        }
        let latent_in = if enc.recurrent_window.is_some() {
            width + enc.latent
        } else {
            width
        };
        let name = if enc.recurrent_window.is_some() {
            "encoder.combine"
        } else {
            "encoder.latent"
        };
        enc_fc.push(add_layer(
            &mut params,
            rng,
            name,
            &[enc.latent, latent_in],
            latent_in,
        ));

        let head_in = enc.latent + spec.n_actions;
        let mut q = Vec::new();
        let mut width = head_in;
        for (i, out) in spec.q_hidden().iter().enumerate() {
            q.push(add_layer(
                &mut params,
                rng,
                &format!("q.fc{i}"),
                &[*out, width],
                width,
            ));
            width = *out;
        }
        q.push(add_layer(&mut params, rng, "q.out", &[1, width], width));

        let mut t = Vec::new();
        let mut width = head_in;
        for (i, out) in spec.t_hidden().iter().enumerate() {
            t.push(add_layer(
                &mut params,
                rng,
                &format!("t.fc{i}"),
                &[*out, width],
                width,
            ));
            width = *out;
        }
        t.push(add_layer(
            &mut params,
            rng,
            "t.out",
            &[enc.latent, width],
            width,
        ));

        Ok((
            AgentNet {
                spec,
                convs,
                enc_fc,
                q,
                t,
            },
            params,
        ))
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn latent(&self) -> usize {
        self.spec.encoder.latent
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("encoder.")
    }

    pub fn is_q_param(name: &str) -> bool {
        name.starts_with("q.")
    }

    pub fn is_t_param(name: &str) -> bool {
        name.starts_with("t.")
    }

    fn dense<F: Scalar>(tape: &mut Tape<F>, p: &[Var], l: Layer, x: Var) -> Result<Var> {
        tape.dense(x, p[l.weight.index()], p[l.bias.index()])
    }

    /// Convolutional trunk and hidden layers: `[B, C, H, W] -> [B, hidden]`.
    fn features<F: Scalar>(&self, tape: &mut Tape<F>, p: &[Var], obs: Var) -> Result<(Var, Var)> {
        let c0 = self.convs[0];
        let h = tape.conv2d(obs, p[c0.weight.index()], p[c0.bias.index()])?;
        let early = tape.relu(h);
        let c1 = self.convs[1];
        let h = tape.conv2d(early, p[c1.weight.index()], p[c1.bias.index()])?;
        let h = tape.relu(h);
        let h = tape.maxpool2d(h, 2)?;
        let s = tape.shape(h).to_vec();
        let mut x = tape.reshape(h, &[s[0], s[1] * s[2] * s[3]])?;
        for l in &self.enc_fc[..self.enc_fc.len() - 1] {
            let y = Self::dense(tape, p, *l, x)?;
            x = tape.relu(y);
        }
        Ok((early, x))
    }

    fn check_batch<F: Scalar>(&self, tape: &Tape<F>, obs: Var) -> Result<usize> {
        let want = self.spec.encoder.sample_shape();
        let got = tape.shape(obs);
        if got.len() != want.len() + 1 || got[1..] != want[..] {
            return Err(Error::shape(
                "encode",
                format!("expected batch of {want:?} observations, got {got:?}"),
            ));
        }
        Ok(got[0])
    }

    /// Encodes a batch `[B, C, H, W]` (or `[B, L, C, H, W]` windows for the
    /// recurrent encoder) into latents `[B, |z|]`.
    pub fn encode_batch<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        obs: Var,
    ) -> Result<EncoderTrace> {
        let b = self.check_batch(tape, obs)?;
        let last = *self.enc_fc.last().unwrap();
        match self.spec.encoder.recurrent_window {
            None => {
                let (early, pen) = self.features(tape, p, obs)?;
                let y = Self::dense(tape, p, last, pen)?;
                let z = tape.relu(y);
                Ok(EncoderTrace {
                    early,
                    penultimate: pen,
                    z,
                })
            }
            Some(l) => {
                let [c, h, w] = self.spec.encoder.input;
                let frames = tape.reshape(obs, &[b * l, c, h, w])?;
                let (early, pen) = self.features(tape, p, frames)?;
                let mut z = tape.constant(Tensor::zeros(&[b, self.latent()]));
                let mut last_pen = pen;
                for step in 0..l {
                    let rows: Vec<usize> = (0..b).map(|i| i * l + step).collect();
                    let feat = tape.gather(pen, &rows)?;
                    z = self.combine(tape, p, feat, z)?;
                    last_pen = feat;
                }
                Ok(EncoderTrace {
                    early,
                    penultimate: last_pen,
                    z,
                })
            }
        }
    }

    /// One recurrent update `z = ReLU(W [features; z_prev] + b)`.
    pub fn combine<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        features: Var,
        z_prev: Var,
    ) -> Result<Var> {
        if self.spec.encoder.recurrent_window.is_none() {
            return Err(Error::Contract(
                "combine called on a feedforward encoder".into(),
            ));
        }
        let last = *self.enc_fc.last().unwrap();
        let x = tape.concat(features, z_prev)?;
        let y = Self::dense(tape, p, last, x)?;
        Ok(tape.relu(y))
    }

    /// Penultimate encoder features of single frames `[B, C, H, W]`.
    pub fn frame_features<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        frames: Var,
    ) -> Result<Var> {
        Ok(self.features(tape, p, frames)?.1)
    }

    fn mlp<F: Scalar>(tape: &mut Tape<F>, p: &[Var], layers: &[Layer], mut x: Var) -> Result<Var> {
        for (i, l) in layers.iter().enumerate() {
            x = Self::dense(tape, p, *l, x)?;
            if i + 1 < layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn one_hot<F: Scalar>(&self, actions: &[usize]) -> Tensor<F> {
        let a = self.n_actions();
        let mut t = Tensor::zeros(&[actions.len(), a]);
        for (i, act) in actions.iter().enumerate() {
            t.data_mut()[i * a + act] = F::one();
        }
        t
    }

    /// `Q(z, a)` for a batch: `z` is `[B, |z|]`, returns `[B, 1]`.
    pub fn q_values<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        z: Var,
        actions: &[usize],
    ) -> Result<Var> {
        let oh = tape.constant(self.one_hot(actions));
        let x = tape.concat(z, oh)?;
        Self::mlp(tape, p, &self.q, x)
    }

    /// Q values of every action: `[B, |z|] -> [B, A]`, row-major by sample.
    pub fn q_all<F: Scalar>(&self, tape: &mut Tape<F>, p: &[Var], z: Var) -> Result<Var> {
        let b = tape.shape(z)[0];
        let a = self.n_actions();
        let rows: Vec<usize> = (0..b * a).map(|i| i / a).collect();
        let actions: Vec<usize> = (0..b * a).map(|i| i % a).collect();
        let zz = tape.gather(z, &rows)?;
        let q = self.q_values(tape, p, zz, &actions)?;
        tape.reshape(q, &[b, a])
    }

    /// `T(z, a)`: predicted latent displacement, `[B, |z|]`.
    pub fn predict_delta_batch<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        z: Var,
        actions: &[usize],
    ) -> Result<Var> {
        let oh = tape.constant(self.one_hot(actions));
        let x = tape.concat(z, oh)?;
        Self::mlp(tape, p, &self.t, x)
    }

    /// `tau(z, a) = z + T(z, a)`.
    pub fn tau_batch<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        z: Var,
        actions: &[usize],
    ) -> Result<Var> {
        let d = self.predict_delta_batch(tape, p, z, actions)?;
        tape.add(z, d)
    }

    /// Activations of the hidden layer of `T`, `[B, 16]`.
    pub fn t_hidden_batch<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &[Var],
        z: Var,
        actions: &[usize],
    ) -> Result<Var> {
        let oh = tape.constant(self.one_hot(actions));
        let x = tape.concat(z, oh)?;
        let y = Self::dense(tape, p, self.t[0], x)?;
        Ok(tape.relu(y))
    }
}

/// Greedy action: first index among maximal Q values.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Weights of the three losses in the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub q: f64,
    pub neg: f64,
    pub pos: f64,
}

impl LossWeights {
    pub const fn new(q: f64, neg: f64, pos: f64) -> Self {
        LossWeights { q, neg, pos }
    }
}

/// Online network, target copy, discount factors and loss weights of one run.
#[derive(Clone, Debug)]
pub struct AgentBundle {
    pub net: AgentNet,
    pub online: ParamSet<f32>,
    pub target: ParamSet<f32>,
    /// Horizon of the positive sampling loss.
    pub gamma_pred: f64,
    /// TD discount of the value loss.
    pub gamma_q: f64,
    pub weights: LossWeights,
    /// Latent distance beyond which the negative loss stops pushing pairs apart.
    pub distance_cap: f64,
    /// Adam moments of the value, negative and positive losses, in that order.
    pub adam: [Adam<f32>; 3],
}

pub const DEFAULT_GAMMA_Q: f64 = 0.9;
pub const DEFAULT_DISTANCE_CAP: f64 = 0.1;

impl AgentBundle {
    pub fn new(
        spec: AgentSpec,
        gamma_pred: f64,
        weights: LossWeights,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma_pred) {
            return Err(Error::Config(format!(
                "gamma_pred must lie in [0, 1), got {gamma_pred}"
            )));
        }
        let (net, online) = AgentNet::build(spec, rng)?;
        let target = online.clone();
        let adam = [Adam::new(&online), Adam::new(&online), Adam::new(&online)];
        Ok(AgentBundle {
            net,
            online,
            target,
            gamma_pred,
            gamma_q: DEFAULT_GAMMA_Q,
            weights,
            distance_cap: DEFAULT_DISTANCE_CAP,
            adam,
        })
    }

    /// Discards optimizer moments, e.g. when a new training phase begins.
    pub fn reset_optimizer(&mut self) {
        self.adam = [
            Adam::new(&self.online),
            Adam::new(&self.online),
            Adam::new(&self.online),
        ];
    }

    /// Copies online encoder and Q parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target.copy_matching(&self.online, |n| {
            AgentNet::is_encoder_param(n) || AgentNet::is_q_param(n)
        });
    }

    /// Freezes or unfreezes every parameter matching `filter`.
    pub fn set_frozen(&mut self, filter: impl Fn(&str) -> bool, frozen: bool) {
        let ids: Vec<ParamId> = self
            .online
            .ids()
            .filter(|id| filter(self.online.name(*id)))
            .collect();
        for id in ids {
            self.online.set_frozen(id, frozen);
        }
    }

    fn batch_obs(&self, obs: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        Tensor::stack(obs)
    }

    /// Latents of a batch of observations under the online encoder, `[B, |z|]`.
    pub fn encode_many(&self, obs: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.online.bind_constant(&mut tape);
        let x = tape.constant(self.batch_obs(obs)?);
        let tr = self.net.encode_batch(&mut tape, &p, x)?;
        Ok(tape.value(tr.z).clone())
    }

    pub fn encode(&self, obs: &Tensor<f32>) -> Result<Tensor<f32>> {
        let z = self.encode_many(&[obs])?;
        z.reshape(&[self.net.latent()])
    }

    /// Single recurrent update from an explicit previous latent.
    pub fn recurrent_encode(&self, obs: &Tensor<f32>, z_prev: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [c, h, w] = self.net.spec().encoder.input;
        if obs.shape() != [c, h, w] {
            return Err(Error::shape(
                "recurrent_encode",
                format!("expected [{c},{h},{w}], got {:?}", obs.shape()),
            ));
        }
        let mut tape = Tape::new();
        let p = self.online.bind_constant(&mut tape);
        let x = tape.constant(obs.clone().reshape(&[1, c, h, w])?);
        let feat = self.net.frame_features(&mut tape, &p, x)?;
        let zp = tape.constant(z_prev.clone().reshape(&[1, self.net.latent()])?);
        let z = self.net.combine(&mut tape, &p, feat, zp)?;
        tape.value(z).clone().reshape(&[self.net.latent()])
    }

    fn head(
        &self,
        z: &Tensor<f32>,
        a: usize,
        which: fn(&AgentNet, &mut Tape<f32>, &[Var], Var, &[usize]) -> Result<Var>,
        params: &ParamSet<f32>,
    ) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = params.bind_constant(&mut tape);
        let zv = tape.constant(z.clone().reshape(&[1, z.len()])?);
        let out = which(&self.net, &mut tape, &p, zv, &[a])?;
        Ok(tape.value(out).clone())
    }

    pub fn q_value(&self, z: &Tensor<f32>, a: usize) -> Result<f32> {
        Ok(self.head(z, a, AgentNet::q_values, &self.online)?.item())
    }

    pub fn target_q_value(&self, z: &Tensor<f32>, a: usize) -> Result<f32> {
        Ok(self.head(z, a, AgentNet::q_values, &self.target)?.item())
    }

    pub fn predict_delta(&self, z: &Tensor<f32>, a: usize) -> Result<Tensor<f32>> {
        self.head(z, a, AgentNet::predict_delta_batch, &self.online)?
            .reshape(&[z.len()])
    }

    pub fn tau(&self, z: &Tensor<f32>, a: usize) -> Result<Tensor<f32>> {
        self.head(z, a, AgentNet::tau_batch, &self.online)?
            .reshape(&[z.len()])
    }

    /// Q values of every action for a batch of observations, `[B, A]`.
    pub fn q_table(&self, obs: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.online.bind_constant(&mut tape);
        let x = tape.constant(self.batch_obs(obs)?);
        let tr = self.net.encode_batch(&mut tape, &p, x)?;
        let q = self.net.q_all(&mut tape, &p, tr.z)?;
        Ok(tape.value(q).clone())
    }

    pub fn greedy_action(&self, obs: &Tensor<f32>) -> Result<usize> {
        let q = self.q_table(&[obs])?;
        Ok(argmax(q.data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn spec(variant: Variant, latent: usize) -> AgentSpec {
        AgentSpec {
            encoder: EncoderSpec::new(variant, latent, [1, 8, 8]),
            n_actions: 4,
        }
    }

    fn one_hot_obs(x: usize, y: usize) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[1, 8, 8]);
        t.data_mut()[y * 8 + x] = 1.0;
        t
    }

    fn bundle(variant: Variant, latent: usize, s: u64) -> AgentBundle {
        AgentBundle::new(
            spec(variant, latent),
            0.0,
            LossWeights::new(1e-4, 1e-5, 1e-6),
            &mut seed::stream(s, "init"),
        )
        .unwrap()
    }

    fn zero_matching(b: &mut AgentBundle, f: impl Fn(&str) -> bool) {
        let ids: Vec<_> = b.online.ids().filter(|i| f(b.online.name(*i))).collect();
        for id in ids {
            b.online
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn shape_audit_for_all_variants() {
        let base = spec(Variant::Base, 10).encoder.layer_shapes();
        assert_eq!(
            base,
            vec![
                vec![1, 8, 8],
                vec![16, 7, 7],
                vec![32, 6, 6],
                vec![32, 3, 3],
                vec![32],
                vec![10]
            ]
        );
        let deep = spec(Variant::DeepEncoder, 10).encoder.layer_shapes();
        assert_eq!(
            deep,
            vec![
                vec![1, 8, 8],
                vec![16, 7, 7],
                vec![48, 6, 6],
                vec![48, 3, 3],
                vec![48],
                vec![32],
                vec![10]
            ]
        );

        for variant in [Variant::Base, Variant::DeepEncoder, Variant::DeepQ] {
            let b = bundle(variant, 10, 1);
            let shapes: Vec<(String, Vec<usize>)> = b
                .online
                .iter()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
                .collect();
            let expect: Vec<(&str, Vec<usize>)> = match variant {
                Variant::Base => vec![
                    ("encoder.conv0.weight", vec![16, 1, 2, 2]),
                    ("encoder.conv0.bias", vec![16]),
                    ("encoder.conv1.weight", vec![32, 16, 2, 2]),
                    ("encoder.conv1.bias", vec![32]),
                    ("encoder.fc0.weight", vec![32, 288]),
                    ("encoder.fc0.bias", vec![32]),
                    ("encoder.latent.weight", vec![10, 32]),
                    ("encoder.latent.bias", vec![10]),
                    ("q.fc0.weight", vec![16, 14]),
                    ("q.fc0.bias", vec![16]),
                    ("q.out.weight", vec![1, 16]),
                    ("q.out.bias", vec![1]),
                    ("t.fc0.weight", vec![16, 14]),
                    ("t.fc0.bias", vec![16]),
                    ("t.out.weight", vec![10, 16]),
                    ("t.out.bias", vec![10]),
                ],
                Variant::DeepEncoder => vec![
                    ("encoder.conv0.weight", vec![16, 1, 2, 2]),
                    ("encoder.conv0.bias", vec![16]),
                    ("encoder.conv1.weight", vec![48, 16, 2, 2]),
                    ("encoder.conv1.bias", vec![48]),
                    ("encoder.fc0.weight", vec![48, 432]),
                    ("encoder.fc0.bias", vec![48]),
                    ("encoder.fc1.weight", vec![32, 48]),
                    ("encoder.fc1.bias", vec![32]),
                    ("encoder.latent.weight", vec![10, 32]),
                    ("encoder.latent.bias", vec![10]),
                    ("q.fc0.weight", vec![16, 14]),
                    ("q.fc0.bias", vec![16]),
                    ("q.out.weight", vec![1, 16]),
                    ("q.out.bias", vec![1]),
                    ("t.fc0.weight", vec![16, 14]),
                    ("t.fc0.bias", vec![16]),
                    ("t.out.weight", vec![10, 16]),
                    ("t.out.bias", vec![10]),
                ],
                Variant::DeepQ => vec![
                    ("encoder.conv0.weight", vec![16, 1, 2, 2]),
                    ("encoder.conv0.bias", vec![16]),
                    ("encoder.conv1.weight", vec![32, 16, 2, 2]),
                    ("encoder.conv1.bias", vec![32]),
                    ("encoder.fc0.weight", vec![32, 288]),
                    ("encoder.fc0.bias", vec![32]),
                    ("encoder.latent.weight", vec![10, 32]),
                    ("encoder.latent.bias", vec![10]),
                    ("q.fc0.weight", vec![32, 14]),
                    ("q.fc0.bias", vec![32]),
                    ("q.fc1.weight", vec![16, 32]),
                    ("q.fc1.bias", vec![16]),
                    ("q.out.weight", vec![1, 16]),
                    ("q.out.bias", vec![1]),
                    ("t.fc0.weight", vec![16, 14]),
                    ("t.fc0.bias", vec![16]),
                    ("t.out.weight", vec![10, 16]),
                    ("t.out.bias", vec![10]),
                ],
            };
            let expect: Vec<(String, Vec<usize>)> = expect
                .into_iter()
                .map(|(n, s)| (n.to_string(), s))
                .collect();
            assert_eq!(shapes, expect, "{variant:?}");
            assert_eq!(b.encode(&one_hot_obs(2, 6)).unwrap().shape(), &[10]);
        }
    }

    #[test]
    fn init_is_reproducible_and_bounded() {
        let a = bundle(Variant::Base, 10, 5);
        let b = bundle(Variant::Base, 10, 5);
        assert_eq!(a.online, b.online);
        let c = bundle(Variant::Base, 10, 6);
        assert_ne!(a.online, c.online);
        let w = a.online.get(a.online.find("encoder.fc0.weight").unwrap());
        assert!(w.max_abs() <= 1.0 / (288f32).sqrt());
    }

    #[test]
    fn zero_observation_and_biases_give_zero_latent() {
        let mut b = bundle(Variant::Base, 6, 2);
        zero_matching(&mut b, |n| n.ends_with(".bias"));
        let z = b.encode(&Tensor::zeros(&[1, 8, 8])).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encode_is_deterministic_and_nonnegative() {
        let b = bundle(Variant::Base, 8, 3);
        for x in 0..8 {
            for y in 0..8 {
                let o = one_hot_obs(x, y);
                let z1 = b.encode(&o).unwrap();
                let z2 = b.encode(&o).unwrap();
                assert_eq!(z1, z2);
                assert!(z1.data().iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let b = bundle(Variant::Base, 8, 3);
        assert!(matches!(
            b.encode(&Tensor::zeros(&[1, 5, 5])),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn q_head_examples() {
        let mut b = bundle(Variant::Base, 4, 4);
        let z = Tensor::from_vec(vec![0.3, 0.0, 1.2, 0.5]);
        // columns of the first layer that see the one-hot action
        let w = b.online.find("q.fc0.weight").unwrap();
        for row in 0..16 {
            for col in 4..8 {
                b.online.get_mut(w).data_mut()[row * 8 + col] = 0.0;
            }
        }
        let q0 = b.q_value(&z, 0).unwrap();
        for a in 1..4 {
            assert_eq!(b.q_value(&z, a).unwrap(), q0);
        }
        zero_matching(&mut b, AgentNet::is_q_param);
        for a in 0..4 {
            assert_eq!(b.q_value(&z, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn greedy_is_argmax_of_q() {
        let b = bundle(Variant::Base, 6, 9);
        let o = one_hot_obs(1, 1);
        let z = b.encode(&o).unwrap();
        let qs: Vec<f32> = (0..4).map(|a| b.q_value(&z, a).unwrap()).collect();
        assert_eq!(b.greedy_action(&o).unwrap(), argmax(&qs));
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }

    #[test]
    fn tau_is_residual() {
        let mut b = bundle(Variant::Base, 5, 11);
        let z = Tensor::from_vec(vec![0.1, 0.7, 0.0, 2.0, 0.4]);
        for a in 0..4 {
            let tau = b.tau(&z, a).unwrap();
            let d = b.predict_delta(&z, a).unwrap();
            assert_eq!(b.predict_delta(&z, a).unwrap(), d);
            for i in 0..5 {
                assert_eq!(tau.data()[i], z.data()[i] + d.data()[i]);
            }
        }
        zero_matching(&mut b, AgentNet::is_t_param);
        assert!(b
            .predict_delta(&z, 2)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
        assert_eq!(b.tau(&z, 2).unwrap(), z);
    }

    #[test]
    fn target_sync() {
        let mut b = bundle(Variant::Base, 6, 12);
        assert_eq!(b.online, b.target);
        let id = b.online.find("q.out.bias").unwrap();
        b.online.get_mut(id).data_mut()[0] += 1.0;
        let z = Tensor::from_vec(vec![0.5; 6]);
        assert_ne!(b.q_value(&z, 1).unwrap(), b.target_q_value(&z, 1).unwrap());
        b.sync_target();
        let snapshot = b.target.clone();
        for a in 0..4 {
            assert_eq!(b.q_value(&z, a).unwrap(), b.target_q_value(&z, a).unwrap());
        }
        b.sync_target();
        assert_eq!(b.target, snapshot);
    }

    #[test]
    fn recurrent_encoder() {
        let mut s = spec(Variant::Base, 6);
        s.encoder.recurrent_window = Some(3);
        let mut b = AgentBundle::new(
            s,
            0.0,
            LossWeights::new(1.0, 0.0, 0.0),
            &mut seed::stream(1, "init"),
        )
        .unwrap();
        let o = one_hot_obs(3, 4);
        let z0 = Tensor::zeros(&[6]);
        let za = b.recurrent_encode(&o, &z0).unwrap();
        let zb = b.recurrent_encode(&o, &Tensor::full(&[6], 2.0)).unwrap();
        assert_ne!(za, zb, "history dependence");

        // with recurrent weights zeroed the update reduces to feedforward encoding
        let w = b.online.find("encoder.combine.weight").unwrap();
        for row in 0..6 {
            for col in 32..38 {
                b.online.get_mut(w).data_mut()[row * 38 + col] = 0.0;
            }
        }
        let zc = b.recurrent_encode(&o, &Tensor::full(&[6], 2.0)).unwrap();
        let zd = b.recurrent_encode(&o, &z0).unwrap();
        assert_eq!(zc, zd);

        // window encoding equals unrolling from a zero state
        let frames = [one_hot_obs(0, 0), one_hot_obs(1, 0), one_hot_obs(3, 4)];
        let window = Tensor::stack(&[&frames[0], &frames[1], &frames[2]]).unwrap();
        let mut z = z0.clone();
        for f in &frames {
            z = b.recurrent_encode(f, &z).unwrap();
        }
        let zw = b.encode(&window).unwrap();
        for (p, q) in z.data().iter().zip(zw.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}
