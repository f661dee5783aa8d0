//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation eagerly (values are computed on the
//! spot) and [`Tape::backward`] replays the record in reverse. Every node is
//! a 2-D array; scalars are `1 x 1` and vectors are single rows.

use ndarray::{Array2, Axis};

use super::params::{Activation, ParameterSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `n x m` plus a `1 x m` row broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Act(Var, Activation),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Clip(Var, f64, f64),
    StopGradient,
    SumAll(Var),
    MeanAll(Var),
    /// `n x m -> n x 1`
    SumCols(Var),
    /// `1 x m -> n x m`
    BroadcastRows(Var),
    /// Forward-only function without a derivative rule.
    Opaque(String),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(what: &'static str, expected: usize, got: usize) -> Error {
    Error::Dimension { what, expected, got }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The single entry of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let value = self.value(v);
        if value.dim() != (1, 1) {
            return Err(shape_err("scalar node size", 1, value.len()));
        }
        Ok(value[[0, 0]])
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that gradients are collected for.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Binds every entry of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &ParameterSet) -> Result<ParamVars> {
        let mut vars = Vec::with_capacity(params.len());
        for entry in params.entries() {
            let dims = entry.matrix_dims();
            let value = Array2::from_shape_vec(dims, entry.values().to_vec())
                .map_err(|_| shape_err("parameter matrix", dims.0 * dims.1, entry.values().len()))?;
            vars.push((entry.name().to_string(), self.variable(value)));
        }
        Ok(ParamVars { vars })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul inner dimension", va.ncols(), vb.nrows()));
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(shape_err("broadcast row width", va.ncols(), vr.ncols()));
        }
        let out = va + vr;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), out, rg))
    }

    /// `x W + b`
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("elementwise operand size", va.len(), vb.len()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(a);
        self.push(Op::Scale(a, k), out, rg)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        let rg = self.rg(a);
        self.push(Op::Offset(a), out, rg)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).mapv(|z| act.eval(z));
        let rg = self.rg(a);
        self.push(Op::Act(a, act), out, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(Op::Exp(a), out, rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(Op::Ln(a), out, rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        let rg = self.rg(a);
        self.push(Op::Square(a), out, rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::sqrt);
        let rg = self.rg(a);
        self.push(Op::Sqrt(a), out, rg)
    }

    /// Clamp to `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(Op::Clip(a, lo, hi), out, rg)
    }

    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(Op::StopGradient, out, false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::SumAll(a), out, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(Op::MeanAll(a), out, rg)
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(Op::SumCols(a), out, rg)
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let v = self.value(a);
        if v.nrows() != 1 {
            return Err(shape_err("broadcast source rows", 1, v.nrows()));
        }
        let out = v
            .broadcast((n, v.ncols()))
            .expect("single row broadcasts")
            .to_owned();
        let rg = self.rg(a);
        Ok(self.push(Op::BroadcastRows(a), out, rg))
    }

    /// Applies `f` elementwise with no derivative rule. Differentiating
    /// through the result fails with [`Error::UnsupportedPrimitive`].
    pub fn opaque(&mut self, a: Var, name: &str, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).mapv(f);
        let rg = self.rg(a);
        self.push(Op::Opaque(name.to_string()), out, rg)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.dim() != (1, 1) {
            return Err(shape_err("backward root size", 1, root_val.len()));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf | Op::StopGradient => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, -&g);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Act(a, act) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(self.value(*a))
                        .and(&node.value)
                        .for_each(|gi, &z, &f| *gi *= act.derivs_from(z, f).0);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * &node.value),
                Op::Ln(a) => accumulate(&mut grads, *a, g / self.value(*a)),
                Op::Square(a) => accumulate(&mut grads, *a, g * self.value(*a) * 2.0),
                Op::Sqrt(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gi, &r| *gi *= 0.5 / r);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clip(a, lo, hi) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if x < *lo || x > *hi {
                            *gi = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let dim = self.value(*a).dim();
                    accumulate(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let v = self.value(*a);
                    let ga = Array2::from_elem(v.dim(), g[[0, 0]] / v.len() as f64);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let dim = self.value(*a).dim();
                    let ga = g.broadcast(dim).expect("column broadcasts").to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    accumulate(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Opaque(name) => return Err(Error::UnsupportedPrimitive(name.clone())),
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a scalar root with respect to every differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for each bound parameter, zero where the root does not depend on it.
    pub fn collect(&self, params: &ParameterSet, vars: &ParamVars) -> Result<ParameterSet> {
        let mut out = params.zeros_like();
        for entry in out.entries_mut() {
            let var = vars.get(entry.name())?;
            if let Some(g) = self.get(var) {
                for (dst, src) in entry.values_mut().iter_mut().zip(g.iter()) {
                    *dst = *src;
                }
            }
        }
        Ok(out)
    }
}

/// Tape handles for the entries of a bound [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

/// Value and exact parameter gradient of a scalar loss built on a tape.
pub fn grad_params<F>(params: &ParameterSet, loss_fn: F) -> Result<(f64, ParameterSet)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    crate::error::ensure_finite(params.values(), "parameters")?;
    let mut tape = Tape::new();
    let vars = tape.bind(params)?;
    let loss = loss_fn(&mut tape, &vars)?;
    let value = tape.scalar(loss)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(loss)?.collect(params, &vars)?;
    crate::error::ensure_finite(grads.values(), "gradient")?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_gradient_is_twice_theta() {
        let mut p = ParameterSet::new();
        p.insert("theta", vec![3], vec![1.5, -2.0, 0.25]).unwrap();
        let (loss, g) = grad_params(&p, |t, v| {
            let th = v.get("theta")?;
            let sq = t.square(th);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert_eq!(loss, 1.5 * 1.5 + 4.0 + 0.0625);
        assert_eq!(g.entry("theta").unwrap().values(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut p = ParameterSet::new();
        p.insert("online", vec![2], vec![1.0, 2.0]).unwrap();
        p.insert("target", vec![2], vec![3.0, -1.0]).unwrap();
        let (_, g) = grad_params(&p, |t, v| {
            let on = v.get("online")?;
            let tg = v.get("target")?;
            let tg = t.stop_gradient(tg);
            let d = t.sub(tg, on)?;
            let sq = t.square(d);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(g.entry("target").unwrap().values().iter().all(|&x| x == 0.0));
        assert_eq!(g.entry("online").unwrap().values(), &[-4.0, 6.0]);
    }

    #[test]
    fn opaque_primitive_is_rejected_in_backward() {
        let mut p = ParameterSet::new();
        p.insert("x", vec![2], vec![1.0, -1.0]).unwrap();
        let err = grad_params(&p, |t, v| {
            let x = v.get("x")?;
            let r = t.opaque(x, "relu", |z| z.max(0.0));
            Ok(t.sum(r))
        })
        .unwrap_err();
        assert!(matches!(err, Error::UnsupportedPrimitive(name) if name == "relu"));
    }

    #[test]
    fn opaque_behind_stop_gradient_is_fine() {
        let mut p = ParameterSet::new();
        p.insert("x", vec![2], vec![1.0, -1.0]).unwrap();
        let (loss, _) = grad_params(&p, |t, v| {
            let x = v.get("x")?;
            let r = t.opaque(x, "relu", |z| z.max(0.0));
            let r = t.stop_gradient(r);
            let s = t.mul(r, x)?;
            Ok(t.sum(s))
        })
        .unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0]]);
        let b = t.constant(array![[1.0, 2.0]]);
        assert!(t.matmul(a, b).is_err());
    }

    #[test]
    fn clip_zeroes_gradient_outside_bounds() {
        let mut p = ParameterSet::new();
        p.insert("x", vec![3], vec![-6.0, 0.5, 3.0]).unwrap();
        let (_, g) = grad_params(&p, |t, v| {
            let x = v.get("x")?;
            let c = t.clip(x, -5.0, 2.0);
            Ok(t.sum(c))
        })
        .unwrap();
        assert_eq!(g.entry("x").unwrap().values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn nan_parameters_are_rejected() {
        let mut p = ParameterSet::new();
        p.insert("x", vec![1], vec![f64::NAN]).unwrap();
        assert!(matches!(
            grad_params(&p, |t, v| Ok(t.sum(v.get("x")?))),
            Err(Error::NonFinite(_))
        ));
    }
}
