use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{check_cols, Activation, DenseStack, NnError, ParamSet, Real, Tape, Var};

/// Shared trunk with a scalar value head and a per-action advantage head.
///
/// With `mean_subtract` the advantages are centred before being added to the
/// value, which makes the two heads separately identifiable. Without it the
/// output is the plain sum V + A.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingNet<F> {
    pub params: ParamSet<F>,
    pub trunk: DenseStack,
    pub value: DenseStack,
    pub advantage: DenseStack,
    pub mean_subtract: bool,
}

impl<F: Real> DuelingNet<F> {
    /// `hidden` lists the trunk widths; both heads are linear maps from the
    /// last trunk layer.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        action_count: usize,
        mean_subtract: bool,
        rng: &mut R,
    ) -> Self {
        assert!(!hidden.is_empty(), "dueling trunk needs a hidden layer");
        let mut params = ParamSet::new();
        let mut sizes = vec![input_dim];
        sizes.extend(hidden);
        let width = *hidden.last().expect("non-empty");
        let trunk = DenseStack::init(sizes, Activation::Relu, true, "trunk", &mut params, rng);
        let value = DenseStack::init(vec![width, 1], Activation::Relu, false, "value", &mut params, rng);
        let advantage = DenseStack::init(
            vec![width, action_count],
            Activation::Relu,
            false,
            "advantage",
            &mut params,
            rng,
        );
        Self {
            params,
            trunk,
            value,
            advantage,
            mean_subtract,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn action_count(&self) -> usize {
        self.advantage.output_dim()
    }

    /// Value column (n x 1) and advantages (n x |A|).
    pub fn heads(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Array2<F>), NnError> {
        let h = self.trunk.forward(&self.params, x)?;
        let v = self.value.forward(&self.params, h.view())?;
        let a = self.advantage.forward(&self.params, h.view())?;
        Ok((v, a))
    }

    pub fn q_values(&self, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        let (v, a) = self.heads(x)?;
        Ok(combine(&v, a, self.mean_subtract))
    }

    pub fn state_values(&self, x: ArrayView2<F>) -> Result<Array1<F>, NnError> {
        let h = self.trunk.forward(&self.params, x)?;
        Ok(self.value.forward(&self.params, h.view())?.index_axis_move(Axis(1), 0))
    }

    /// `(V, A, Q)` for a single observation.
    pub fn dueling_q(&self, obs: &[F]) -> Result<(F, Vec<F>, Vec<F>), NnError> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row view");
        check_cols(&x, self.input_dim(), "dueling input")?;
        let (v, a) = self.heads(x)?;
        let q = combine(&v, a.clone(), self.mean_subtract);
        Ok((v[[0, 0]], a.row(0).to_vec(), q.row(0).to_vec()))
    }

    pub fn q_tape(&self, tape: &mut Tape<F>, x: Var) -> Result<Var, NnError> {
        let h = self.trunk.forward_tape(tape, &self.params, x)?;
        let v = self.value.forward_tape(tape, &self.params, h)?;
        let a = self.advantage.forward_tape(tape, &self.params, h)?;
        let a = if self.mean_subtract {
            let m = tape.row_mean(a);
            let neg = tape.scale(m, -F::one());
            tape.add_col(a, neg)?
        } else {
            a
        };
        tape.add_col(a, v)
    }
}

/// Q = (A - mean A) + V per row, or A + V without centring.
pub fn combine<F: Real>(v: &Array2<F>, mut a: Array2<F>, mean_subtract: bool) -> Array2<F> {
    let n = F::lit(a.ncols() as f64);
    for (mut row, vv) in a.rows_mut().into_iter().zip(v.column(0)) {
        if mean_subtract {
            let mean = row.sum() / n;
            let neg = -mean;
            row.mapv_inplace(|x| x + neg);
        }
        row.mapv_inplace(|x| x + *vv);
    }
    a
}

/// Distributional head: `N` quantile atoms per action at the fixed
/// midpoint fractions `(2i + 1) / 2N`. Output columns are grouped by action.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNet<F> {
    pub params: ParamSet<F>,
    pub body: DenseStack,
    pub action_count: usize,
    pub atoms: usize,
}

impl<F: Real> QuantileNet<F> {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        action_count: usize,
        atoms: usize,
        rng: &mut R,
    ) -> Self {
        assert!(atoms >= 1);
        let mut params = ParamSet::new();
        let mut sizes = vec![input_dim];
        sizes.extend(hidden);
        sizes.push(action_count * atoms);
        let body = DenseStack::init(sizes, Activation::Relu, false, "quantile", &mut params, rng);
        Self {
            params,
            body,
            action_count,
            atoms,
        }
    }

    pub fn fractions(&self) -> Vec<F> {
        midpoint_fractions(self.atoms)
    }

    /// n x (|A| * N) atoms.
    pub fn atoms_batch(&self, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        self.body.forward(&self.params, x)
    }

    /// n x |A| expected returns (atom means).
    pub fn expectations(&self, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        Ok(atom_means(&self.atoms_batch(x)?, self.action_count, self.atoms))
    }

    pub fn atoms_tape(&self, tape: &mut Tape<F>, x: Var) -> Result<Var, NnError> {
        self.body.forward_tape(tape, &self.params, x)
    }
}

pub fn midpoint_fractions<F: Real>(n: usize) -> Vec<F> {
    (0..n)
        .map(|i| F::lit((2 * i + 1) as f64 / (2 * n) as f64))
        .collect()
}

pub(crate) fn atom_means<F: Real>(atoms: &Array2<F>, actions: usize, n: usize) -> Array2<F> {
    let nf = F::lit(n as f64);
    Array2::from_shape_fn((atoms.nrows(), actions), |(r, a)| {
        atoms.row(r).iter().skip(a * n).take(n).copied().sum::<F>() / nf
    })
}
