//! Shared-trunk multi-task MLP, optimizers and gradient clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, ParamId, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    /// Number of fully-connected trunk layers.
    pub depth: usize,
    pub n_tasks: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Trunk parameter; `last` marks the final trunk layer.
    Shared { last: bool },
    /// Head parameter of the given task.
    Task(usize),
    /// Extra trainable tensor registered after construction.
    Auxiliary,
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Output of one forward pass: the trunk features and one prediction per task.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Var,
    pub outputs: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct MultiTaskNet {
    config: NetConfig,
    params: Vec<Tensor>,
    roles: Vec<ParamRole>,
    trunk: Vec<Linear>,
    heads: Vec<Linear>,
}

impl MultiTaskNet {
    /// Builds a network with weights drawn uniformly on `±sqrt(1/fan_in)`.
    pub fn new(config: NetConfig) -> Result<Self> {
        let NetConfig {
            input_dim,
            output_dim,
            hidden,
            depth,
            n_tasks,
            ..
        } = config;
        if input_dim == 0 || output_dim == 0 || hidden == 0 || depth == 0 || n_tasks == 0 {
            return Err(Error::config(format!(
                "network dimensions must be positive: {config:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut net = Self {
            config,
            params: Vec::new(),
            roles: Vec::new(),
            trunk: Vec::new(),
            heads: Vec::new(),
        };
        for layer in 0..depth {
            let fan_in = if layer == 0 { input_dim } else { hidden };
            let role = ParamRole::Shared {
                last: layer + 1 == depth,
            };
            let lin = net.add_linear(&mut rng, fan_in, hidden, role);
            net.trunk.push(lin);
        }
        for task in 0..n_tasks {
            let lin = net.add_linear(&mut rng, hidden, output_dim, ParamRole::Task(task));
            net.heads.push(lin);
        }
        Ok(net)
    }

    fn add_linear(&mut self, rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, role: ParamRole) -> Linear {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor::from_parts(vec![fan_in, fan_out], draw(fan_in * fan_out));
        let b = Tensor::from_parts(vec![1, fan_out], draw(fan_out));
        Linear {
            weight: self.push_param(w, role),
            bias: self.push_param(b, role),
            fan_in,
            fan_out,
        }
    }

    fn push_param(&mut self, value: Tensor, role: ParamRole) -> ParamId {
        self.params.push(value);
        self.roles.push(role);
        ParamId(self.params.len() - 1)
    }

    /// Registers an extra trainable tensor (e.g. learned task log-variances)
    /// so it is updated by the same optimizer as the network.
    pub fn add_auxiliary(&mut self, value: Tensor) -> ParamId {
        self.push_param(value, ParamRole::Auxiliary)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn n_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn num_shared_scalars(&self) -> usize {
        self.shared_ids().iter().map(|id| self.params[id.0].len()).sum()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn role(&self, id: ParamId) -> ParamRole {
        self.roles[id.0]
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    fn ids_where(&self, pred: impl Fn(ParamRole) -> bool) -> Vec<ParamId> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(**r))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn shared_ids(&self) -> Vec<ParamId> {
        self.ids_where(|r| matches!(r, ParamRole::Shared { .. }))
    }

    pub fn last_shared_ids(&self) -> Vec<ParamId> {
        self.ids_where(|r| matches!(r, ParamRole::Shared { last: true }))
    }

    pub fn task_ids(&self, task: usize) -> Vec<ParamId> {
        self.ids_where(|r| r == ParamRole::Task(task))
    }

    pub fn trunk(&self) -> &[Linear] {
        &self.trunk
    }

    pub fn heads(&self) -> &[Linear] {
        &self.heads
    }

    /// Records every parameter on the tape, indexed by `ParamId`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect()
    }

    fn affine(tape: &mut Tape, x: Var, lin: &Linear, vars: &[Var], ones: Var) -> Result<Var> {
        let xw = tape.matmul(x, vars[lin.weight.0])?;
        let b = tape.matmul(ones, vars[lin.bias.0])?;
        tape.add(xw, b)
    }

    fn activate(&self, tape: &mut Tape, x: Var) -> Var {
        match self.config.activation {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    /// One trunk pass and all heads, recorded on `tape`. `vars` comes from
    /// [`MultiTaskNet::bind`] on the same tape.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Forward> {
        self.forward_heads(tape, vars, x, 0..self.n_tasks())
    }

    /// Like [`MultiTaskNet::forward`] but evaluates heads in the given order.
    /// `outputs[k]` is the output of the k-th head visited.
    pub fn forward_heads(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        order: impl IntoIterator<Item = usize>,
    ) -> Result<Forward> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::Shape {
                op: "forward",
                lhs: shape,
                rhs: vec![self.config.input_dim],
            });
        }
        let ones = tape.constant(Tensor::full(&[shape[0], 1], 1.0));
        let mut h = x;
        for lin in &self.trunk {
            let z = Self::affine(tape, h, lin, vars, ones)?;
            h = self.activate(tape, z);
        }
        // All heads as one wide product, then split per task.
        let heads: Vec<&Linear> = order.into_iter().map(|t| &self.heads[t]).collect();
        if heads.is_empty() {
            return Ok(Forward { features: h, outputs: Vec::new() });
        }
        let weights: Vec<Var> = heads.iter().map(|l| vars[l.weight.0]).collect();
        let biases: Vec<Var> = heads.iter().map(|l| vars[l.bias.0]).collect();
        let xw = tape.matmul_cat(h, &weights)?;
        let b = tape.matmul_cat(ones, &biases)?;
        let mut outputs = Vec::with_capacity(heads.len());
        let mut start = 0;
        for lin in heads {
            let xw_t = tape.cols(xw, start, lin.fan_out)?;
            let b_t = tape.cols(b, start, lin.fan_out)?;
            outputs.push(tape.add(xw_t, b_t)?);
            start += lin.fan_out;
        }
        Ok(Forward { features: h, outputs })
    }

    /// Evaluates the network on a batch without keeping a tape around.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, &vars, xv)?;
        Ok(fwd.outputs.iter().map(|&v| tape.value(v).clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a list of parameter tensors addressed by position.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape());
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor {
        &self.m[id.0]
    }

    /// Grows the state to cover parameters appended after construction.
    pub fn extend(&mut self, params: &[Tensor]) {
        for p in &params[self.m.len()..] {
            self.m.push(Tensor::zeros(p.shape()));
            self.v.push(Tensor::zeros(p.shape()));
        }
    }

    /// One bias-corrected Adam update. Parameters without a gradient entry
    /// are treated as having zero gradient.
    pub fn step(&mut self, params: &mut [Tensor], grads: &GradientMap) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam",
                lhs: vec![params.len()],
                rhs: vec![self.m.len()],
            });
        }
        for (id, g) in grads.iter() {
            let p = params.get(id.0).ok_or(Error::UnknownParam(id))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.get(ParamId(i));
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent.
pub fn sgd_step(params: &mut [Tensor], grads: &GradientMap, lr: f64) -> Result<()> {
    for (id, g) in grads.iter() {
        let p = params.get_mut(id.0).ok_or(Error::UnknownParam(id))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "sgd",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        p.axpy(-lr, g);
    }
    Ok(())
}

/// Rescales all gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradientMap, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mtr_config(n_tasks: usize) -> NetConfig {
        NetConfig {
            input_dim: 250,
            output_dim: 100,
            hidden: 100,
            depth: 4,
            n_tasks,
            activation: Activation::Relu,
            init_seed: 7,
        }
    }

    #[test]
    fn parameter_counts() {
        let net = MultiTaskNet::new(mtr_config(10)).unwrap();
        // trunk: 250x100 + 3 * 100x100 (+ biases); heads: 10 * 100x100 (+ biases)
        let shared = (250 * 100 + 100) + 3 * (100 * 100 + 100);
        let heads = 10 * (100 * 100 + 100);
        assert_eq!(net.num_shared_scalars(), shared);
        assert_eq!(shared, 55_400);
        assert_eq!(net.num_scalars(), shared + heads);
        assert_eq!(net.num_scalars(), 156_400);
        assert_eq!(net.last_shared_ids().len(), 2);
    }

    #[test]
    fn partition_covers_every_param_once() {
        let net = MultiTaskNet::new(mtr_config(3)).unwrap();
        let mut seen = vec![0; net.num_params()];
        for id in net.shared_ids() {
            seen[id.0] += 1;
        }
        for t in 0..3 {
            for id in net.task_ids(t) {
                seen[id.0] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(net.last_shared_ids().iter().all(|id| net.shared_ids().contains(id)));
    }

    #[test]
    fn single_task_is_plain_mlp() {
        let net = MultiTaskNet::new(mtr_config(1)).unwrap();
        assert_eq!(net.heads().len(), 1);
        assert_eq!(net.task_ids(0).len(), 2);
    }

    #[test]
    fn same_seed_same_params() {
        let a = MultiTaskNet::new(mtr_config(2)).unwrap();
        let b = MultiTaskNet::new(mtr_config(2)).unwrap();
        assert_eq!(a.params(), b.params());
        let mut cfg = mtr_config(2);
        cfg.init_seed = 8;
        let c = MultiTaskNet::new(cfg).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let net = MultiTaskNet::new(mtr_config(1)).unwrap();
        for lin in net.trunk().iter().chain(net.heads()) {
            let bound = (1.0 / lin.fan_in as f64).sqrt();
            assert!(net.param(lin.weight).data().iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn rejects_zero_dims() {
        let mut cfg = mtr_config(0);
        assert!(MultiTaskNet::new(cfg.clone()).is_err());
        cfg.n_tasks = 1;
        cfg.hidden = 0;
        assert!(MultiTaskNet::new(cfg).is_err());
    }

    #[test]
    fn forward_shapes() {
        let net = MultiTaskNet::new(mtr_config(10)).unwrap();
        let x = Tensor::full(&[2, 250], 0.1);
        let out = net.predict(&x).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|o| o.shape() == [2, 100]));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = MultiTaskNet::new(mtr_config(2)).unwrap();
        assert!(net.predict(&Tensor::zeros(&[2, 249])).is_err());
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut net = MultiTaskNet::new(mtr_config(3)).unwrap();
        for p in net.params_mut() {
            p.scale_in_place(0.0);
        }
        let x = Tensor::full(&[4, 250], 1.5);
        for o in net.predict(&x).unwrap() {
            assert!(o.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn head_order_does_not_matter() {
        let net = MultiTaskNet::new(mtr_config(4)).unwrap();
        let x = Tensor::full(&[3, 250], 0.05);
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let xv = tape.constant(x);
        let fwd = net.forward_heads(&mut tape, &vars, xv, 0..4).unwrap();
        let rev = net.forward_heads(&mut tape, &vars, xv, (0..4).rev()).unwrap();
        for t in 0..4 {
            assert_eq!(tape.value(fwd.outputs[t]), tape.value(rev.outputs[3 - t]));
        }
    }

    fn one_param(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    fn grad_of(v: f64) -> GradientMap {
        let mut g = GradientMap::new();
        g.insert(ParamId(0), Tensor::scalar(v));
        g
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = one_param(1.25);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &grad_of(0.0)).unwrap();
        assert_eq!(p[0].data(), &[1.25]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut p = one_param(0.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3), &p);
        adam.step(&mut p, &grad_of(0.5)).unwrap();
        // m_hat = 0.5, v_hat = 0.25 -> update = -lr * 0.5 / (0.5 + 1e-8)
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_update_opposes_first_moment() {
        let mut p = vec![Tensor::vector(&[0.0, 0.0, 0.0]).unwrap()];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let mut g = GradientMap::new();
        for step in 0..5 {
            let sign = if step % 2 == 0 { 1.0 } else { -0.3 };
            g.insert(ParamId(0), Tensor::vector(&[sign, -2.0 * sign, 0.1]).unwrap());
            let before = p[0].clone();
            adam.step(&mut p, &g).unwrap();
            for j in 0..3 {
                let delta = p[0].data()[j] - before.data()[j];
                let m = adam.first_moment(ParamId(0)).data()[j];
                assert!(delta * m <= 0.0);
            }
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = one_param(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let mut g = GradientMap::new();
        g.insert(ParamId(0), Tensor::zeros(&[2]));
        assert!(adam.step(&mut p, &g).is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn adam_first_step_is_loss_scale_invariant() {
        let config = AdamConfig {
            eps: 1e-12,
            ..AdamConfig::with_lr(1e-2)
        };
        let g0 = [0.3, -1.7, 4.0];
        let run = |c: f64| {
            let mut p = vec![Tensor::zeros(&[3])];
            let mut adam = AdamState::new(config, &p);
            let mut g = GradientMap::new();
            g.insert(ParamId(0), Tensor::vector(&g0.map(|x| c * x)).unwrap());
            adam.step(&mut p, &g).unwrap();
            p[0].clone()
        };
        let base = run(1.0);
        for c in [0.1, 10.0] {
            let scaled = run(c);
            for (a, b) in base.data().iter().zip(scaled.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = one_param(1.0);
        sgd_step(&mut p, &grad_of(2.0), 0.1).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let mut g = GradientMap::new();
        g.insert(ParamId(0), Tensor::vector(&[0.3]).unwrap());
        let before = g.clone();
        clip_global_norm(&mut g, 0.5);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_scales_down() {
        let mut g = GradientMap::new();
        g.insert(ParamId(0), Tensor::vector(&[6.0, 8.0]).unwrap());
        let norm = clip_global_norm(&mut g, 0.5);
        assert_eq!(norm, 10.0);
        let d = g.get(ParamId(0)).unwrap().data();
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn clip_zero_gradients_unchanged() {
        let mut g = GradientMap::new();
        g.insert(ParamId(0), Tensor::zeros(&[4]));
        clip_global_norm(&mut g, 0.5);
        assert_eq!(g.get(ParamId(0)).unwrap(), &Tensor::zeros(&[4]));
    }
}
