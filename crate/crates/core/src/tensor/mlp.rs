use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::matrix::Matrix;
use crate::tensor::tape::{elu, sigmoid, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Elu => elu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    fn record<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Layer widths and activations, independent of parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[input, hidden.., output]`
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, act: Activation, out_act: Activation) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        MlpSpec {
            widths,
            hidden: act,
            output: out_act,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::invalid(format!("bad layer widths {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Feed-forward network. Parameters are stored as `[W0, b0, W1, b1, ..]`
/// with `W_l` of shape `(in, out)` and `b_l` of shape `(1, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: Vec<Matrix<T>>,
}

/// Tape handles for one recorded forward pass.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub output: Var,
    /// Same order as [`Mlp::params`]. Empty when recorded frozen.
    pub params: Vec<Var>,
}

pub(crate) fn add_bias_rows<T: Scalar>(x: &mut Matrix<T>, bias: &[T]) {
    let cols = x.cols().max(1);
    for row in x.as_mut_slice().chunks_mut(cols) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(2 * (spec.widths.len() - 1));
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            params.push(Matrix::from_fn(fan_in, fan_out, |_, _| T::lit(normal.sample(rng))));
            params.push(Matrix::zeros(1, fan_out));
        }
        Ok(Mlp { spec, params })
    }

    /// All-zero parameters.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .widths
            .windows(2)
            .flat_map(|w| [Matrix::zeros(w[0], w[1]), Matrix::zeros(1, w[1])])
            .collect();
        Ok(Mlp { spec, params })
    }

    /// Builds a network from explicit parameters.
    pub fn from_params(spec: MlpSpec, params: Vec<Matrix<T>>) -> Result<Self> {
        spec.validate()?;
        let layers = spec.widths.len() - 1;
        if params.len() != 2 * layers {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                2 * layers,
                params.len()
            )));
        }
        for (l, w) in spec.widths.windows(2).enumerate() {
            if params[2 * l].shape() != (w[0], w[1]) || params[2 * l + 1].shape() != (1, w[1]) {
                return Err(Error::Shape {
                    op: "mlp layer",
                    lhs: (w[0], w[1]),
                    rhs: params[2 * l].shape(),
                });
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Matrix<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// All parameters concatenated in storage order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.as_slice().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_input(&self, shape: (usize, usize)) -> Result<()> {
        if shape.1 != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                lhs: shape,
                rhs: (shape.0, self.spec.input_dim()),
            });
        }
        Ok(())
    }

    fn layer_act(&self, l: usize) -> Activation {
        if l + 2 == self.spec.widths.len() {
            self.spec.output
        } else {
            self.spec.hidden
        }
    }

    /// Records the forward pass. With `trainable = false` the parameters
    /// enter the tape as constants and receive no gradient.
    pub fn record(&self, tape: &mut Tape<T>, input: Var, trainable: bool) -> Result<MlpVars> {
        self.check_input(tape.shape(input))?;
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            vars.push(if trainable {
                tape.param(p.clone())?
            } else {
                tape.constant(p.clone())?
            });
        }
        let output = self.record_with(tape, input, &vars)?;
        if !trainable {
            vars.clear();
        }
        Ok(MlpVars { output, params: vars })
    }

    /// Records the forward pass using caller-supplied parameter vars laid out
    /// like [`Mlp::params`]; the stored parameter values are not read.
    pub fn record_with(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut h = input;
        for l in 0..self.spec.widths.len() - 1 {
            let z = tape.matmul(h, params[2 * l])?;
            let z = tape.add_bias(z, params[2 * l + 1])?;
            h = self.layer_act(l).record(tape, z)?;
        }
        Ok(h)
    }

    /// Forward pass on a fresh tape with trainable parameters.
    pub fn forward_eval(&self, batch: &Matrix<T>) -> Result<(Matrix<T>, Tape<T>, MlpVars)> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone())?;
        let vars = self.record(&mut tape, x, true)?;
        Ok((tape.value(vars.output).clone(), tape, vars))
    }

    /// Tape-free inference; bitwise identical to the recorded forward pass.
    pub fn predict(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(batch.shape())?;
        let mut h: Option<Matrix<T>> = None;
        for l in 0..self.spec.widths.len() - 1 {
            let input = h.as_ref().unwrap_or(batch);
            let mut z = input.matmul(&self.params[2 * l])?;
            add_bias_rows(&mut z, self.params[2 * l + 1].as_slice());
            let act = self.layer_act(l);
            let out = z.map(|v| act.apply(v));
            if !out.is_finite() {
                return Err(Error::NonFinite("mlp predict"));
            }
            h = Some(out);
        }
        Ok(h.expect("at least one layer"))
    }
}
