use ndarray::{Array2, Axis, Zip};

use super::{NnError, ParamSet, Real};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Const,
    Param(usize),
    MatMul(Var, Var),
    /// Adds a 1 x m row to every row.
    AddRow(Var, Var),
    /// Adds an n x 1 column to every column.
    AddCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, F, F),
    Mean(Var),
    RowMean(Var),
    /// Picks column `idx[i]` of row `i`.
    Gather(Var, Vec<usize>),
    /// Picks columns `idx[i]*width .. (idx[i]+1)*width` of row `i`.
    GatherBlock(Var, Vec<usize>, usize),
    Huber(Var, F),
    QuantileHuber {
        pred: Var,
        target: Array2<F>,
        taus: Vec<F>,
        kappa: F,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients for every slot of a [`ParamSet`]; untouched slots are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    pub values: Vec<Array2<F>>,
}

impl<F: Real> Grads<F> {
    pub fn max_abs(&self) -> F {
        self.values
            .iter()
            .flat_map(|g| g.iter())
            .fold(F::zero(), |m, &x| m.max(x.abs()))
    }
}

/// Records batched matrix operations and differentiates a scalar result
/// with respect to the parameters that were bound into it.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, params: &ParamSet<F>, idx: usize) -> Var {
        self.push(params.get(idx).clone(), Op::Param(idx), true)
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NnError::ShapeMismatch {
                context,
                expected: sa.to_vec(),
                got: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(NnError::ShapeMismatch {
                context: "matmul",
                expected: vec![va.ncols(), vb.ncols()],
                got: vb.shape().to_vec(),
            });
        }
        let out = va.dot(vb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(NnError::ShapeMismatch {
                context: "add_row",
                expected: vec![1, va.ncols()],
                got: vr.shape().to_vec(),
            });
        }
        let out = va + vr;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, NnError> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.ncols() != 1 || vc.nrows() != va.nrows() {
            return Err(NnError::ShapeMismatch {
                context: "add_col",
                expected: vec![va.nrows(), 1],
                got: vc.shape().to_vec(),
            });
        }
        let out = va + vc;
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(out, Op::AddCol(a, col), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let out = self.value(a) * k;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let out = self.value(a).mapv(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(F::zero()), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, F::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, F::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn huber(&mut self, a: Var, delta: F) -> Var {
        self.unary(a, |x| huber(x, delta), Op::Huber(a, delta))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / F::lit(v.len() as f64);
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), ng)
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = F::lit(v.ncols() as f64);
        let out = v.sum_axis(Axis(1)).mapv(|s| s / n).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(out, Op::RowMean(a), ng)
    }

    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, NnError> {
        self.gather_block(a, idx, 1)
    }

    pub fn gather_block(&mut self, a: Var, idx: Vec<usize>, width: usize) -> Result<Var, NnError> {
        let v = self.value(a);
        if idx.len() != v.nrows() || idx.iter().any(|&i| (i + 1) * width > v.ncols()) {
            return Err(NnError::ShapeMismatch {
                context: "gather",
                expected: vec![v.nrows(), v.ncols()],
                got: vec![idx.len(), idx.iter().max().map_or(0, |&m| (m + 1) * width)],
            });
        }
        let mut out = Array2::zeros((v.nrows(), width));
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..width {
                out[[r, c]] = v[[r, i * width + c]];
            }
        }
        let ng = self.ng(a);
        let op = if width == 1 {
            Op::Gather(a, idx)
        } else {
            Op::GatherBlock(a, idx, width)
        };
        Ok(self.push(out, op, ng))
    }

    /// Quantile-regression Huber loss of `pred` (n x N atoms at fractions
    /// `taus`) against fixed target atoms (n x N'): mean over the batch, sum
    /// over predicted atoms, mean over target atoms.
    pub fn quantile_huber(
        &mut self,
        pred: Var,
        target: Array2<F>,
        taus: Vec<F>,
        kappa: F,
    ) -> Result<Var, NnError> {
        let p = self.value(pred);
        if p.ncols() != taus.len() || target.nrows() != p.nrows() {
            return Err(NnError::ShapeMismatch {
                context: "quantile_huber",
                expected: vec![p.nrows(), taus.len()],
                got: target.shape().to_vec(),
            });
        }
        let (n, nt) = (p.nrows(), target.ncols());
        let mut total = F::zero();
        for b in 0..n {
            for (i, &tau) in taus.iter().enumerate() {
                let theta = p[[b, i]];
                for j in 0..nt {
                    let u = target[[b, j]] - theta;
                    total += quantile_weight(tau, u) * huber(u, kappa) / kappa;
                }
            }
        }
        let loss = total / F::lit((n * nt) as f64);
        let ng = self.ng(pred);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::QuantileHuber {
                pred,
                target,
                taus,
                kappa,
            },
            ng,
        ))
    }

    /// Reverse pass from a 1x1 `loss`; returns gradients shaped like
    /// `params`.
    pub fn backward(&self, loss: Var, params: &ParamSet<F>) -> Result<Grads<F>, NnError> {
        let root = self.value(loss);
        if root.shape() != [1, 1] {
            return Err(NnError::NonScalarLoss(root.shape().to_vec()));
        }
        let mut out = Grads {
            values: params.zeros_like(),
        };
        let mut grads: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, contrib: Array2<F>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &contrib,
                    slot => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Const => {}
                Op::Param(idx) => {
                    let dst = out.values.get_mut(*idx).ok_or(NnError::ShapeMismatch {
                        context: "backward param slot",
                        expected: vec![params.len()],
                        got: vec![*idx],
                    })?;
                    if dst.shape() != g.shape() {
                        return Err(NnError::ShapeMismatch {
                            context: "backward param shape",
                            expected: dst.shape().to_vec(),
                            got: g.shape().to_vec(),
                        });
                    }
                    *dst += &g;
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, r) => {
                    if self.ng(*r) {
                        send(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*a, g);
                }
                Op::AddCol(a, c) => {
                    if self.ng(*c) {
                        send(*c, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    send(*a, g);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.mapv(|x| -x));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        send(*a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        send(*b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, k) => send(*a, g * *k),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= F::zero() {
                                *d = F::zero();
                            }
                        });
                    send(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= F::one() - y * y);
                    send(*a, d);
                }
                Op::Exp(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y);
                    send(*a, d);
                }
                Op::Square(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= x + x);
                    send(*a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = F::zero();
                        }
                    });
                    send(*a, d);
                }
                Op::Huber(a, delta) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= huber_grad(x, *delta));
                    send(*a, d);
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let k = g[[0, 0]] / F::lit(v.len() as f64);
                    send(*a, Array2::from_elem(v.raw_dim(), k));
                }
                Op::RowMean(a) => {
                    let v = self.value(*a);
                    let n = F::lit(v.ncols() as f64);
                    let mut d = Array2::zeros(v.raw_dim());
                    for (mut row, gr) in d.rows_mut().into_iter().zip(g.rows()) {
                        row.fill(gr[0] / n);
                    }
                    send(*a, d);
                }
                Op::Gather(a, idx) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        d[[r, i]] = g[[r, 0]];
                    }
                    send(*a, d);
                }
                Op::GatherBlock(a, idx, width) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..*width {
                            d[[r, i * width + c]] = g[[r, c]];
                        }
                    }
                    send(*a, d);
                }
                Op::QuantileHuber {
                    pred,
                    target,
                    taus,
                    kappa,
                } => {
                    let p = self.value(*pred);
                    let (n, nt) = (p.nrows(), target.ncols());
                    let scale = g[[0, 0]] / F::lit((n * nt) as f64);
                    let mut d = Array2::zeros(p.raw_dim());
                    for b in 0..n {
                        for (i, &tau) in taus.iter().enumerate() {
                            let theta = p[[b, i]];
                            let mut acc = F::zero();
                            for j in 0..nt {
                                let u = target[[b, j]] - theta;
                                acc += quantile_weight(tau, u) * huber_grad(u, *kappa) / *kappa;
                            }
                            // du/dtheta = -1
                            d[[b, i]] = -acc * scale;
                        }
                    }
                    send(*pred, d);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn huber<F: Real>(x: F, delta: F) -> F {
    let a = x.abs();
    if a <= delta {
        F::lit(0.5) * x * x
    } else {
        delta * (a - F::lit(0.5) * delta)
    }
}

fn huber_grad<F: Real>(x: F, delta: F) -> F {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

fn quantile_weight<F: Real>(tau: F, u: F) -> F {
    if u < F::zero() {
        (tau - F::one()).abs()
    } else {
        tau
    }
}
