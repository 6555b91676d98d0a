use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_cols, NnError, ParamSet, Real, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply<F: Real>(self, x: &mut Array2<F>) {
        match self {
            Self::Relu => x.mapv_inplace(|v| v.max(F::zero())),
            Self::Tanh => x.mapv_inplace(F::tanh),
        }
    }

    fn apply_tape<F: Real>(self, tape: &mut Tape<F>, x: Var) -> Var {
        match self {
            Self::Relu => tape.relu(x),
            Self::Tanh => tape.tanh(x),
        }
    }
}

/// A chain of affine layers stored in a [`ParamSet`] starting at
/// `first_param` (weight then bias for each layer). Weights are `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    sizes: Vec<usize>,
    activation: Activation,
    activate_last: bool,
    first_param: usize,
}

impl DenseStack {
    /// Appends freshly initialised layers to `params`. Weights and biases
    /// are uniform in +-1/sqrt(fan_in).
    pub fn init<F: Real, R: Rng + ?Sized>(
        sizes: Vec<usize>,
        activation: Activation,
        activate_last: bool,
        prefix: &str,
        params: &mut ParamSet<F>,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "a dense stack needs at least one layer");
        assert!(sizes.iter().all(|&s| s >= 1), "layer sizes must be positive");
        let first_param = params.len();
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
                F::lit(rng.random_range(-bound..bound))
            });
            let bias = Array2::from_shape_fn((1, fan_out), |_| F::lit(rng.random_range(-bound..bound)));
            params.push(format!("{prefix}.{i}.weight"), weight);
            params.push(format!("{prefix}.{i}.bias"), bias);
        }
        Self {
            sizes,
            activation,
            activate_last,
            first_param,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_slot(&self, layer: usize) -> usize {
        self.first_param + 2 * layer
    }

    pub fn bias_slot(&self, layer: usize) -> usize {
        self.first_param + 2 * layer + 1
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layer_count() || self.activate_last
    }

    pub fn forward<F: Real>(&self, params: &ParamSet<F>, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        check_cols(&x, self.input_dim(), "dense input")?;
        let mut h: Option<Array2<F>> = None;
        for layer in 0..self.layer_count() {
            let w = params.get(self.weight_slot(layer));
            let b = params.get(self.bias_slot(layer));
            let mut z = match &h {
                None => x.dot(w),
                Some(prev) => prev.dot(w),
            };
            z += &b.index_axis(Axis(0), 0);
            if self.activates(layer) {
                self.activation.apply(&mut z);
            }
            h = Some(z);
        }
        Ok(h.expect("at least one layer"))
    }

    pub fn forward_tape<F: Real>(
        &self,
        tape: &mut Tape<F>,
        params: &ParamSet<F>,
        x: Var,
    ) -> Result<Var, NnError> {
        check_cols(&tape.value(x).view(), self.input_dim(), "dense input")?;
        let mut h = x;
        for layer in 0..self.layer_count() {
            let w = tape.param(params, self.weight_slot(layer));
            let b = tape.param(params, self.bias_slot(layer));
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if self.activates(layer) {
                h = self.activation.apply_tape(tape, h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden_sizes);
        s.push(self.output_dim);
        s
    }
}

/// Plain multilayer perceptron with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub spec: MlpSpec,
    pub stack: DenseStack,
    pub params: ParamSet<F>,
}

impl<F: Real> Mlp<F> {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let stack = DenseStack::init(spec.sizes(), spec.activation, false, "mlp", &mut params, rng);
        Self { spec, stack, params }
    }

    pub fn forward(&self, input: &[F]) -> Result<Vec<F>, NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.stack.forward(&self.params, x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        self.stack.forward(&self.params, x)
    }

    pub fn forward_tape(&self, tape: &mut Tape<F>, x: Var) -> Result<Var, NnError> {
        self.stack.forward_tape(tape, &self.params, x)
    }
}
