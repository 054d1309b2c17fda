//! Reverse-mode differentiation over a tape of batch matrices.
//!
//! Every node holds a `rows × cols` matrix. Parameters are views into a flat
//! parameter vector and carry their offset into it, so `backward` returns a
//! gradient laid out exactly like the parameters.

use ndarray::{Array2, ArrayView2, Axis, CowArray, Ix2};

use super::mlp::Activation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { offset: usize },
    Affine { input: Var, weight: Var, bias: Var },
    Activate { input: Var, act: Activation },
    SubConst { input: Var },
    Square { input: Var },
    Sum { input: Var },
    Mean { input: Var },
    Scale { input: Var, factor: f64 },
    RowScale { input: Var, weights: Vec<f64> },
    Add { lhs: Var, rhs: Var },
}

struct Node<'a> {
    value: CowArray<'a, f64, Ix2>,
    op: Op,
    needs_grad: bool,
}

/// Computation graph under construction. Nodes are appended in evaluation
/// order, which is also a valid topological order for the backward sweep.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: CowArray<'a, f64, Ix2>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let val = &self.nodes[v.0].value;
        if val.dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "expected a scalar node, got {:?}",
                val.dim()
            )));
        }
        Ok(val[[0, 0]])
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(CowArray::from(value), Op::Constant, false)
    }

    pub fn constant_view(&mut self, value: ArrayView2<'a, f64>) -> Var {
        self.push(CowArray::from(value), Op::Constant, false)
    }

    /// Register a parameter block living at `offset` in the flat parameter
    /// vector (row-major).
    pub fn param(&mut self, value: ArrayView2<'a, f64>, offset: usize) -> Var {
        self.push(CowArray::from(value), Op::Param { offset }, true)
    }

    /// `x · W + b` with `x: n×i`, `W: i×o`, `b: 1×o`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.ncols() != w.nrows() || b.nrows() != 1 || b.ncols() != w.ncols() {
            return Err(Error::Shape(format!(
                "affine: input {:?}, weight {:?}, bias {:?}",
                x.dim(),
                w.dim(),
                b.dim()
            )));
        }
        let mut out = x.dot(&w);
        out += &b;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            CowArray::from(out),
            Op::Affine {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn activate(&mut self, input: Var, act: Activation) -> Var {
        let out = self.value(input).mapv(|z| act.eval(z));
        let needs = self.needs(input);
        self.push(CowArray::from(out), Op::Activate { input, act }, needs)
    }

    /// `input − target` for a constant target of the same shape.
    pub fn sub_const(&mut self, input: Var, target: ArrayView2<'_, f64>) -> Result<Var> {
        let x = self.value(input);
        if x.dim() != target.dim() {
            return Err(Error::Shape(format!(
                "sub_const: input {:?} vs target {:?}",
                x.dim(),
                target.dim()
            )));
        }
        let out = &x - &target;
        let needs = self.needs(input);
        Ok(self.push(CowArray::from(out), Op::SubConst { input }, needs))
    }

    pub fn square(&mut self, input: Var) -> Var {
        let out = self.value(input).mapv(|z| z * z);
        let needs = self.needs(input);
        self.push(CowArray::from(out), Op::Square { input }, needs)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let needs = self.needs(input);
        self.push(
            CowArray::from(Array2::from_elem((1, 1), s)),
            Op::Sum { input },
            needs,
        )
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.is_empty() {
            return Err(Error::Empty("mean of an empty node".into()));
        }
        let m = x.sum() / x.len() as f64;
        let needs = self.needs(input);
        Ok(self.push(
            CowArray::from(Array2::from_elem((1, 1), m)),
            Op::Mean { input },
            needs,
        ))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).mapv(|z| z * factor);
        let needs = self.needs(input);
        self.push(CowArray::from(out), Op::Scale { input, factor }, needs)
    }

    /// Multiply row `i` by `weights[i]`.
    pub fn row_scale(&mut self, input: Var, weights: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if x.nrows() != weights.len() {
            return Err(Error::shape(x.nrows(), weights.len(), "row_scale weights"));
        }
        let mut out = x.to_owned();
        for (mut row, w) in out.axis_iter_mut(Axis(0)).zip(&weights) {
            row *= *w;
        }
        let needs = self.needs(input);
        Ok(self.push(CowArray::from(out), Op::RowScale { input, weights }, needs))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.dim() != b.dim() {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", a.dim(), b.dim())));
        }
        let out = &a + &b;
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(CowArray::from(out), Op::Add { lhs, rhs }, needs))
    }

    /// Gradient of the scalar node `loss` with respect to every registered
    /// parameter, scattered into a flat vector of length `n_params`.
    pub fn backward(&self, loss: Var, n_params: usize) -> Result<Vec<f64>> {
        self.scalar(loss)?;
        let mut grad = vec![0.0; n_params];
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    let end = offset + dy.len();
                    if end > n_params {
                        return Err(Error::Shape(format!(
                            "parameter block ends at {end}, gradient has {n_params} slots"
                        )));
                    }
                    for (g, d) in grad[*offset..end].iter_mut().zip(dy.iter()) {
                        *g += d;
                    }
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    if self.needs(*input) {
                        let w = self.value(*weight);
                        accumulate(&mut adj, *input, dy.dot(&w.t()));
                    }
                    if self.needs(*weight) {
                        let x = self.value(*input);
                        accumulate(&mut adj, *weight, x.t().dot(&dy));
                    }
                    if self.needs(*bias) {
                        let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut adj, *bias, db);
                    }
                }
                Op::Activate { input, act } => {
                    let z = self.value(*input);
                    let mut dx = dy;
                    dx.zip_mut_with(&z, |d, &zi| *d *= act.derivative(zi));
                    accumulate(&mut adj, *input, dx);
                }
                Op::SubConst { input } => accumulate(&mut adj, *input, dy),
                Op::Square { input } => {
                    let x = self.value(*input);
                    let mut dx = dy;
                    dx.zip_mut_with(&x, |d, &xi| *d *= 2.0 * xi);
                    accumulate(&mut adj, *input, dx);
                }
                Op::Sum { input } => {
                    let shape = self.value(*input).dim();
                    accumulate(&mut adj, *input, Array2::from_elem(shape, dy[[0, 0]]));
                }
                Op::Mean { input } => {
                    let x = self.value(*input);
                    let g = dy[[0, 0]] / x.len() as f64;
                    accumulate(&mut adj, *input, Array2::from_elem(x.dim(), g));
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut adj, *input, dy * *factor);
                }
                Op::RowScale { input, weights } => {
                    let mut dx = dy;
                    for (mut row, w) in dx.axis_iter_mut(Axis(0)).zip(weights) {
                        row *= *w;
                    }
                    accumulate(&mut adj, *input, dx);
                }
                Op::Add { lhs, rhs } => {
                    if self.needs(*lhs) {
                        accumulate(&mut adj, *lhs, dy.clone());
                    }
                    if self.needs(*rhs) {
                        accumulate(&mut adj, *rhs, dy);
                    }
                }
            }
        }
        Ok(grad)
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let theta = vec![0.3, -1.2, 2.5, 0.0, 4.0, -0.7];
        let view = ArrayView2::from_shape((2, 3), &theta).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(view, 0);
        let sq = tape.square(p);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss, theta.len()).unwrap();
        assert_eq!(g, theta);
    }

    #[test]
    fn linear_loss_gradient_is_coefficients() {
        // loss = Σ c_i θ_i written as sum(row_scale(θ)) with one column.
        let theta = vec![1.0, 2.0, -3.0];
        let c = vec![0.5, -2.0, 7.0];
        let view = ArrayView2::from_shape((3, 1), &theta).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(view, 0);
        let scaled = tape.row_scale(p, c.clone()).unwrap();
        let loss = tape.sum(scaled);
        assert!((tape.scalar(loss).unwrap() - (0.5 - 4.0 - 21.0)).abs() < 1e-15);
        assert_eq!(tape.backward(loss, 3).unwrap(), c);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 2.0]]);
        let w = tape.constant(array![[1.0], [2.0], [3.0]]);
        let b = tape.constant(array![[0.0]]);
        assert!(matches!(tape.affine(x, w, b), Err(Error::Shape(_))));
        assert!(tape.row_scale(x, vec![1.0, 2.0]).is_err());
        assert!(tape.sub_const(x, array![[1.0]].view()).is_err());
        assert!(tape.backward(x, 0).is_err());
    }

    #[test]
    fn shared_parameter_accumulates() {
        // loss = sum(p) + sum(p) → gradient 2 everywhere
        let theta = vec![1.0, -1.0];
        let view = ArrayView2::from_shape((1, 2), &theta).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(view, 0);
        let a = tape.sum(p);
        let b = tape.sum(p);
        let loss = tape.add(a, b).unwrap();
        assert_eq!(tape.backward(loss, 2).unwrap(), vec![2.0, 2.0]);
    }
}
