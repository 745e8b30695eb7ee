//! Multi-dimensional gated recurrent unit network for 2D slices.
//!
//! Each layer runs four convolutional GRUs: forward and backward along the
//! rows and along the columns. A C-GRU treats one spatial axis as time; at
//! each position it consumes a `1×W×C` slab and its linear maps are same-padded
//! convolutions over that slab. The four directional outputs are summed,
//! optionally joined by a 1×1 projection of the layer input (residual path),
//! and a final 1×1 convolution maps the result to per-pixel class logits.

mod params;

pub use params::ParamSet;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdGruConfig {
    pub input_channels: usize,
    pub hidden_channels: Vec<usize>,
    pub kernel_size: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub dropconnect_on_state: bool,
    pub residual: bool,
    pub combine_mode: CombineMode,
}

impl Default for MdGruConfig {
    fn default() -> Self {
        Self {
            input_channels: 8,
            hidden_channels: vec![16],
            kernel_size: 7,
            num_classes: 3,
            dropout_rate: 0.5,
            dropconnect_on_state: true,
            residual: true,
            combine_mode: CombineMode::Sum,
        }
    }
}

impl MdGruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("kernel_size must be odd"));
        }
        if self.input_channels == 0 || self.hidden_channels.is_empty() {
            return Err(Error::invalid("need input channels and at least one layer"));
        }
        if self.hidden_channels.contains(&0) {
            return Err(Error::invalid("hidden channel counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// The four scans of one layer, in parameter order.
pub const SCANS: [(Axis, Direction, &str); 4] = [
    (Axis::Rows, Direction::Forward, "rows_fwd"),
    (Axis::Rows, Direction::Backward, "rows_bwd"),
    (Axis::Cols, Direction::Forward, "cols_fwd"),
    (Axis::Cols, Direction::Backward, "cols_bwd"),
];

const GRU_TENSORS: [&str; 9] = ["w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h"];

/// Kernels (`k×k×Cin×Ch` input, `k×k×Ch×Ch` recurrent) and biases of one C-GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct CGRUParams {
    pub w_r: Tensor,
    pub w_z: Tensor,
    pub w_h: Tensor,
    pub u_r: Tensor,
    pub u_z: Tensor,
    pub u_h: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_h: Tensor,
}

impl CGRUParams {
    pub fn zeros(k: usize, cin: usize, ch: usize) -> Self {
        Self {
            w_r: Tensor::zeros(vec![k, k, cin, ch]),
            w_z: Tensor::zeros(vec![k, k, cin, ch]),
            w_h: Tensor::zeros(vec![k, k, cin, ch]),
            u_r: Tensor::zeros(vec![k, k, ch, ch]),
            u_z: Tensor::zeros(vec![k, k, ch, ch]),
            u_h: Tensor::zeros(vec![k, k, ch, ch]),
            b_r: Tensor::zeros(vec![ch]),
            b_z: Tensor::zeros(vec![ch]),
            b_h: Tensor::zeros(vec![ch]),
        }
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_r, &self.w_z, &self.w_h, &self.u_r, &self.u_z, &self.u_h, &self.b_r,
            &self.b_z, &self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.w_r.shape().first().copied().unwrap_or(0);
        let cin = self.w_r.shape().get(2).copied().unwrap_or(0);
        let ch = self.b_r.len();
        let expect_w = [k, k, cin, ch];
        let expect_u = [k, k, ch, ch];
        for (i, t) in self.tensors().into_iter().enumerate() {
            let ok = match i {
                0..=2 => t.shape() == expect_w,
                3..=5 => t.shape() == expect_u,
                _ => t.shape() == [ch],
            };
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "cgru params",
                    lhs: expect_w.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("cgru params".into()));
            }
        }
        if k % 2 == 0 {
            return Err(Error::invalid("C-GRU kernels need an odd extent"));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> CGRUVars {
        let v: Vec<Var> = self.tensors().iter().map(|t| tape.param(t)).collect();
        CGRUVars::from_slice(&v)
    }
}

/// Tape handles of one C-GRU's parameters.
#[derive(Debug, Clone, Copy)]
pub struct CGRUVars {
    pub w_r: Var,
    pub w_z: Var,
    pub w_h: Var,
    pub u_r: Var,
    pub u_z: Var,
    pub u_h: Var,
    pub b_r: Var,
    pub b_z: Var,
    pub b_h: Var,
}

impl CGRUVars {
    fn from_slice(v: &[Var]) -> Self {
        Self {
            w_r: v[0],
            w_z: v[1],
            w_h: v[2],
            u_r: v[3],
            u_z: v[4],
            u_h: v[5],
            b_r: v[6],
            b_z: v[7],
            b_h: v[8],
        }
    }

    /// Replaces the recurrent kernels with `U ⊙ mask`.
    fn with_state_masks(self, tape: &mut Tape, masks: &[Tensor; 3]) -> Result<Self> {
        let mut out = self;
        for (u, m) in [&mut out.u_r, &mut out.u_z, &mut out.u_h].into_iter().zip(masks) {
            let mv = tape.constant(m.clone());
            *u = tape.mul(*u, mv)?;
        }
        Ok(out)
    }
}

/// One C-GRU update on a `1×W×Cin` slab:
///
/// ```text
/// r  = σ(W_r*x + U_r*h + b_r)
/// z  = σ(W_z*x + U_z*h + b_z)
/// h~ = tanh(W_h*x + U_h*(r⊙h) + b_h)
/// h' = (1 − z)⊙h + z⊙h~
/// ```
pub fn cgru_step(tape: &mut Tape, x_t: Var, h_prev: Var, p: &CGRUVars) -> Result<Var> {
    let xs = tape.shape(x_t).to_vec();
    let hs = tape.shape(h_prev).to_vec();
    if xs.len() != 3 || hs.len() != 3 || xs[0] != hs[0] || xs[1] != hs[1] {
        return Err(Error::ShapeMismatch {
            op: "cgru_step",
            lhs: xs,
            rhs: hs,
        });
    }
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let xw = tape.conv2d(x_t, w, Some(b))?;
        let hu = tape.conv2d(h, u, None)?;
        tape.add(xw, hu)
    };
    let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h_prev)?;
    let r = tape.sigmoid(r_pre)?;
    let z_pre = gate(tape, p.w_z, p.u_z, p.b_z, h_prev)?;
    let z = tape.sigmoid(z_pre)?;
    let rh = tape.mul(r, h_prev)?;
    let cand_pre = gate(tape, p.w_h, p.u_h, p.b_h, rh)?;
    let cand = tape.tanh(cand_pre)?;
    let keep = tape.rsub_scalar(1.0, z)?;
    let old = tape.mul(keep, h_prev)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// Runs a C-GRU along `axis` in `direction`; the output at position `t` is the
/// hidden state after consuming positions up to `t` in scan order.
pub fn cgru_scan(
    tape: &mut Tape,
    input: Var,
    p: &CGRUVars,
    axis: Axis,
    direction: Direction,
) -> Result<Var> {
    let x = match axis {
        Axis::Rows => input,
        Axis::Cols => tape.transpose01(input)?,
    };
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            shape,
            reason: "C-GRU input must be H×W×C".into(),
        });
    }
    let (steps, width) = (shape[0], shape[1]);
    let ch = tape.shape(p.b_r)[0];
    let mut h = tape.constant(Tensor::zeros(vec![1, width, ch]));
    let mut states = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..steps),
        Direction::Backward => Box::new((0..steps).rev()),
    };
    for t in order {
        let x_t = tape.row(x, t)?;
        h = cgru_step(tape, x_t, h, p)?;
        states[t] = h;
    }
    let out = tape.stack(&states)?;
    match axis {
        Axis::Rows => Ok(out),
        Axis::Cols => tape.transpose01(out),
    }
}

/// Dropout and dropconnect masks for one training forward pass, already scaled
/// by `1/keep` so inference needs no rescaling.
#[derive(Debug, Clone)]
pub struct Masks {
    /// Per layer, per scan: masks for `U_r`, `U_z`, `U_h`.
    pub state: Vec<Vec<[Tensor; 3]>>,
    /// Per layer: mask over the combined `H×W×Ch` output.
    pub output: Vec<Tensor>,
}

impl Masks {
    pub fn sample(config: &MdGruConfig, height: usize, width: usize, seed: u64, index: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Dropout, index);
        let keep = 1.0 - config.dropout_rate;
        let mut bernoulli = |shape: Vec<usize>| {
            Tensor::from_fn(shape, |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        let k = config.kernel_size;
        let mut state = Vec::new();
        let mut output = Vec::new();
        for &ch in &config.hidden_channels {
            let mut per_scan = Vec::new();
            if config.dropconnect_on_state {
                for _ in SCANS {
                    per_scan.push([
                        bernoulli(vec![k, k, ch, ch]),
                        bernoulli(vec![k, k, ch, ch]),
                        bernoulli(vec![k, k, ch, ch]),
                    ]);
                }
            }
            state.push(per_scan);
            output.push(bernoulli(vec![height, width, ch]));
        }
        Self { state, output }
    }
}

/// The network: configuration plus its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MdGru {
    config: MdGruConfig,
    params: ParamSet,
}

/// A recorded forward pass, ready for loss construction and backward.
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    pub params: Vec<Var>,
}

impl ForwardPass {
    /// Backpropagates `loss` and accumulates into the parameter gradients.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.tape.backward(loss)?;
        params.accumulate(&grads, &self.params)
    }
}

impl MdGru {
    /// Randomly initialized network (Glorot-uniform kernels, zero biases).
    pub fn new(config: MdGruConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let k = config.kernel_size;
        let mut params = ParamSet::new();
        let mut glorot = |shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            Tensor::from_fn(shape, |_| dist.sample(&mut rng))
        };
        let mut cin = config.input_channels;
        for (l, &ch) in config.hidden_channels.iter().enumerate() {
            for (_, _, scan) in SCANS {
                for name in GRU_TENSORS {
                    let t = match &name[..1] {
                        "w" => glorot(vec![k, k, cin, ch], k * cin, k * ch),
                        "u" => glorot(vec![k, k, ch, ch], k * ch, k * ch),
                        _ => Tensor::zeros(vec![ch]),
                    };
                    params.push(format!("layer{l}.{scan}.{name}"), t);
                }
            }
            if config.residual {
                params.push(format!("layer{l}.residual.kernel"), glorot(vec![1, 1, cin, ch], cin, ch));
                params.push(format!("layer{l}.residual.bias"), Tensor::zeros(vec![ch]));
            }
            cin = ch;
        }
        let l = config.num_classes;
        params.push("classifier.kernel", glorot(vec![1, 1, cin, l], cin, l));
        params.push("classifier.bias", Tensor::zeros(vec![l]));
        Ok(Self { config, params })
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(config: MdGruConfig, params: ParamSet) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        if template.params.names() != params.names() {
            return Err(Error::invalid("parameter names do not match the configuration"));
        }
        for ((name, a), b) in template.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "parameter shape",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                })
                .map_err(|e| Error::invalid(format!("{name}: {e}")));
            }
        }
        let mut params = params;
        for t in params.tensors_mut() {
            if !t.requires_grad() {
                *t = t.clone().with_grad();
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MdGruConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// The C-GRU parameters of `layer`/`scan`, copied out.
    pub fn cgru(&self, layer: usize, scan: usize) -> CGRUParams {
        let get = |n: &str| {
            self.params
                .get(&format!("layer{layer}.{}.{n}", SCANS[scan].2))
                .expect("parameter present")
                .clone()
        };
        CGRUParams {
            w_r: get("w_r"),
            w_z: get("w_z"),
            w_h: get("w_h"),
            u_r: get("u_r"),
            u_z: get("u_z"),
            u_h: get("u_h"),
            b_r: get("b_r"),
            b_z: get("b_z"),
            b_h: get("b_h"),
        }
    }

    pub fn set_cgru(&mut self, layer: usize, scan: usize, p: &CGRUParams) -> Result<()> {
        p.validate()?;
        for (name, t) in GRU_TENSORS.iter().zip(p.tensors()) {
            let key = format!("layer{layer}.{}.{name}", SCANS[scan].2);
            let slot = self
                .params
                .get_mut(&key)
                .ok_or_else(|| Error::invalid(format!("no parameter {key}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "set_cgru",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[2] != self.config.input_channels {
            return Err(Error::ShapeMismatch {
                op: "mdgru input channels",
                lhs: vec![self.config.input_channels],
                rhs: shape.to_vec(),
            });
        }
        if shape[0] == 0 || shape[1] == 0 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "empty image".into(),
            });
        }
        Ok(())
    }

    /// Builds the network graph on `tape` using `vars` (one per parameter, in
    /// [`ParamSet`] order) and returns the `H×W×L` logits.
    pub fn build(
        &self,
        tape: &mut Tape,
        input: Var,
        vars: &[Var],
        masks: Option<&Masks>,
    ) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        if vars.len() != self.params.len() {
            return Err(Error::invalid("parameter binding does not match the network"));
        }
        let mut cursor = 0usize;
        let mut next = |n: usize| {
            let s = &vars[cursor..cursor + n];
            cursor += n;
            s.to_vec()
        };
        let mut x = input;
        for layer in 0..self.config.hidden_channels.len() {
            let mut combined: Option<Var> = None;
            for (s, &(axis, direction, _)) in SCANS.iter().enumerate() {
                let mut p = CGRUVars::from_slice(&next(GRU_TENSORS.len()));
                if let Some(m) = masks {
                    if let Some(sm) = m.state.get(layer).and_then(|v| v.get(s)) {
                        p = p.with_state_masks(tape, sm)?;
                    }
                }
                let out = cgru_scan(tape, x, &p, axis, direction)?;
                combined = Some(match combined {
                    None => out,
                    Some(c) => tape.add(c, out)?,
                });
            }
            let mut y = combined.expect("four scans");
            if self.config.residual {
                let r = next(2);
                let proj = tape.conv2d(x, r[0], Some(r[1]))?;
                y = tape.add(y, proj)?;
            }
            if let Some(m) = masks {
                if let Some(mask) = m.output.get(layer) {
                    if mask.shape() != tape.shape(y) {
                        return Err(Error::ShapeMismatch {
                            op: "dropout mask",
                            lhs: mask.shape().to_vec(),
                            rhs: tape.shape(y).to_vec(),
                        });
                    }
                    let mv = tape.constant(mask.clone());
                    y = tape.mul(y, mv)?;
                }
            }
            x = y;
        }
        let c = next(2);
        tape.conv2d(x, c[0], Some(c[1]))
    }

    /// Records a forward pass. With `training`, dropout/dropconnect masks are
    /// drawn from the dropout stream of `(seed, step)`.
    pub fn forward(&self, input: &Tensor, training: bool, seed: u64, step: u64) -> Result<ForwardPass> {
        self.check_input(input.shape())?;
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let masks = (training && self.config.dropout_rate > 0.0).then(|| {
            Masks::sample(&self.config, input.shape()[0], input.shape()[1], seed, step)
        });
        let logits = self.build(&mut tape, x, &params, masks.as_ref())?;
        Ok(ForwardPass {
            tape,
            logits,
            params,
        })
    }

    /// Inference logits without recording gradients.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.shape())?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let x = tape.constant(input.clone());
        let logits = self.build(&mut tape, x, &params, None)?;
        Ok(tape.value(logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_value(p: &CGRUParams, x: &Tensor, h: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h.clone());
        let out = cgru_step(&mut tape, xv, hv, &vars).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn zero_params_from_zero_state_stay_zero() {
        let p = CGRUParams::zeros(3, 2, 4);
        let x = Tensor::from_fn(vec![1, 5, 2], |i| i as f64 * 0.1 - 0.3);
        let out = step_value(&p, &x, &Tensor::zeros(vec![1, 5, 4]));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = CGRUParams::zeros(3, 2, 4);
        let x = Tensor::from_fn(vec![1, 5, 2], |i| i as f64);
        let h = Tensor::from_fn(vec![1, 5, 4], |i| (i as f64 * 0.37).sin() * 0.9);
        let out = step_value(&p, &x, &h);
        for (o, hv) in out.data().iter().zip(h.data()) {
            assert_eq!(*o, 0.5 * hv);
        }
    }

    #[test]
    fn step_rejects_mismatched_width() {
        let p = CGRUParams::zeros(1, 1, 1);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(vec![1, 3, 1]));
        let h = tape.constant(Tensor::zeros(vec![1, 4, 1]));
        assert!(cgru_step(&mut tape, x, h, &vars).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = MdGruConfig::default();
        assert!(c.validate().is_ok());
        c.num_classes = 1;
        assert!(c.validate().is_err());
        c.num_classes = 3;
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let cfg = MdGruConfig {
            input_channels: 2,
            hidden_channels: vec![2],
            kernel_size: 3,
            ..MdGruConfig::default()
        };
        let net = MdGru::new(cfg, 1).unwrap();
        assert!(net.logits(&Tensor::zeros(vec![4, 4, 3])).is_err());
        assert!(net.forward(&Tensor::zeros(vec![4, 4, 1]), false, 0, 0).is_err());
    }
}
