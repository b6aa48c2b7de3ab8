//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value, its input
//! handles and a backward rule. Backpropagation walks the tape once in
//! reverse insertion order, which is a valid topological order because
//! inputs always precede their consumers.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule of one operation.
///
/// Returns one entry per input; entries for inputs whose `needs` flag is
/// false may be `None`.
pub trait Backward: Send + Sync {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape if no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an operation. Its output requires a gradient iff any input does.
    pub fn push(&mut self, value: Tensor, inputs: Vec<Var>, rule: Box<dyn Backward>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, inputs, Some(rule), requires_grad)
    }

    fn push_node(&mut self, value: Tensor, inputs: Vec<Var>, rule: Option<Box<dyn Backward>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs, rule, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagate from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        self.backward_with(output, Tensor::full(out.shape(), 1.0))
    }

    /// Backpropagate an explicit upstream gradient.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.nodes[output.0].value.shape() {
            return Err(Error::DimensionMismatch("seed gradient shape differs from output".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].as_ref() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = rule.backward(&inputs, &node.value, grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            // interior gradients are no longer needed once propagated
            if !self.nodes[idx].inputs.is_empty() && idx != output.0 {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn check_same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::DimensionMismatch(format!("operand shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, vec![a, b], Box::new(AddRule)))
    }

    /// `a + c` for a constant tensor `c`.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::DimensionMismatch(format!(
                "constant shape {:?} differs from {:?}",
                c.shape(),
                self.value(a).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(c);
        Ok(self.push(value, vec![a], Box::new(IdentityRule)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(value, vec![a], Box::new(ScaleRule(factor)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let original = self.value(a).shape().to_vec();
        Ok(self.push(value, vec![a], Box::new(ReshapeRule(original))))
    }

    /// `[b, ...] -> [b, n]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let shape = [v.batch(), v.row_len()];
        self.reshape(a, &shape)
    }

    /// `sum_k c_k a_k` over same-shape operands.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| Error::DimensionMismatch("empty linear combination".into()))?;
        let mut value = Tensor::zeros(self.value(first).shape());
        for &(v, c) in terms {
            self.check_same_shape(first, v)?;
            for (acc, x) in value.data_mut().iter_mut().zip(self.value(v).data()) {
                *acc += c * x;
            }
        }
        let (vars, coeffs) = terms.iter().copied().unzip();
        Ok(self.push(value, vars, Box::new(LincombRule(coeffs))))
    }

    /// Entries `lo..hi` along axis 1.
    pub fn narrow(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let v = self.value(a);
        let shape = v.shape().to_vec();
        if shape.len() < 2 || lo >= hi || hi > shape[1] {
            return Err(Error::DimensionMismatch(format!("cannot take {lo}..{hi} along axis 1 of {shape:?}")));
        }
        let inner: usize = shape[2..].iter().product();
        let mut data = Vec::with_capacity(shape[0] * (hi - lo) * inner);
        for row in v.data().chunks(shape[1] * inner) {
            data.extend_from_slice(&row[lo * inner..hi * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[1] = hi - lo;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, vec![a], Box::new(NarrowRule { shape, lo, hi })))
    }

    /// `max(0, x)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(value, vec![a], Box::new(ReluRule))
    }

    /// Per-row sum of squares: `[b, ...] -> [b]`.
    pub fn sum_squares_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let row = v.row_len();
        let data = v.data().chunks(row).map(|c| c.iter().map(|x| x * x).sum()).collect();
        let value = Tensor::new(&[v.batch()], data).expect("consistent shape");
        self.push(value, vec![a], Box::new(SumSquaresRule))
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push(value, vec![a], Box::new(MeanRule))
    }
}

struct AddRule;

impl Backward for AddRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        needs.iter().map(|&n| n.then(|| grad.clone())).collect()
    }
}

struct IdentityRule;

impl Backward for IdentityRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone())]
    }
}

struct ScaleRule(f64);

impl Backward for ScaleRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        g.data_mut().iter_mut().for_each(|v| *v *= self.0);
        vec![Some(g)]
    }
}

struct ReshapeRule(Vec<usize>);

impl Backward for ReshapeRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshape(&self.0).expect("same element count"))]
    }
}

struct LincombRule(Vec<f64>);

impl Backward for LincombRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        self.0
            .iter()
            .zip(needs)
            .map(|(&c, &n)| {
                n.then(|| {
                    let mut g = grad.clone();
                    g.data_mut().iter_mut().for_each(|v| *v *= c);
                    g
                })
            })
            .collect()
    }
}

struct NarrowRule {
    shape: Vec<usize>,
    lo: usize,
    hi: usize,
}

impl Backward for NarrowRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let inner: usize = self.shape[2..].iter().product();
        let mut g = Tensor::zeros(&self.shape);
        let width = (self.hi - self.lo) * inner;
        for (full, part) in g.data_mut().chunks_mut(self.shape[1] * inner).zip(grad.data().chunks(width)) {
            full[self.lo * inner..self.hi * inner].copy_from_slice(part);
        }
        vec![Some(g)]
    }
}

struct ReluRule;

impl Backward for ReluRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        for (gv, x) in g.data_mut().iter_mut().zip(inputs[0].data()) {
            if *x <= 0.0 {
                *gv = 0.0;
            }
        }
        vec![Some(g)]
    }
}

struct SumSquaresRule;

impl Backward for SumSquaresRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let row = x.row_len();
        let mut g = Tensor::zeros(x.shape());
        for ((gr, xr), up) in g.data_mut().chunks_mut(row).zip(x.data().chunks(row)).zip(grad.data()) {
            for (gv, xv) in gr.iter_mut().zip(xr) {
                *gv = 2.0 * xv * up;
            }
        }
        vec![Some(g)]
    }
}

struct MeanRule;

impl Backward for MeanRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        vec![Some(Tensor::full(x.shape(), grad.data()[0] / x.len() as f64))]
    }
}
