//! Append-only computation record. Nodes are pushed in evaluation order, so
//! the node list is already a topological order and the graph cannot contain
//! a cycle; `backward` walks it in reverse.

use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A scalar function with an analytic derivative, lifted into the graph by
/// [`Primitive::ScalarEval`].
pub trait ScalarFn {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    MatMul,
    AddBias,
    Relu,
    Tanh,
    MseLoss,
    SoftmaxCrossEntropy,
    ScalarEval,
}

/// A primitive together with its non-tensor arguments.
#[derive(Clone, Copy)]
pub enum Primitive<'a> {
    MatMul,
    AddBias,
    Relu,
    Tanh,
    MseLoss,
    SoftmaxCrossEntropy { labels: &'a [usize] },
    ScalarEval(&'a dyn ScalarFn),
}

impl Primitive<'_> {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::MatMul => PrimitiveKind::MatMul,
            Primitive::AddBias => PrimitiveKind::AddBias,
            Primitive::Relu => PrimitiveKind::Relu,
            Primitive::Tanh => PrimitiveKind::Tanh,
            Primitive::MseLoss => PrimitiveKind::MseLoss,
            Primitive::SoftmaxCrossEntropy { .. } => PrimitiveKind::SoftmaxCrossEntropy,
            Primitive::ScalarEval(_) => PrimitiveKind::ScalarEval,
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul | Primitive::AddBias | Primitive::MseLoss => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Mse(Var, Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    ScalarEval {
        input: Var,
        slope: f64,
    },
}

impl Op {
    fn kind(&self) -> Option<PrimitiveKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => PrimitiveKind::MatMul,
            Op::AddBias(..) => PrimitiveKind::AddBias,
            Op::Relu(_) => PrimitiveKind::Relu,
            Op::Tanh(_) => PrimitiveKind::Tanh,
            Op::Mse(..) => PrimitiveKind::MseLoss,
            Op::SoftmaxXent { .. } => PrimitiveKind::SoftmaxCrossEntropy,
            Op::ScalarEval { .. } => PrimitiveKind::ScalarEval,
        })
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Tensor>,
}

/// One forward pass worth of recorded operations. Build a fresh graph per
/// pass; nothing is reused between passes.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient filled in by the last [`Graph::backward`], if `v` was reachable.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// The primitive that produced `v`, or `None` for leaves.
    pub fn op_kind(&self, v: Var) -> Option<PrimitiveKind> {
        self.nodes[v.0].op.kind()
    }

    /// Direct inputs of `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::Relu(a) | Op::Tanh(a) => vec![*a],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
            Op::ScalarEval { input, .. } => vec![*input],
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `prim` on `inputs` and records it.
    pub fn apply(&mut self, prim: Primitive<'_>, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != prim.arity() {
            return Err(Error::invalid(format!(
                "{:?} takes {} inputs, got {}",
                prim.kind(),
                prim.arity(),
                inputs.len()
            )));
        }
        match prim {
            Primitive::MatMul => self.matmul(inputs[0], inputs[1]),
            Primitive::AddBias => self.add_bias(inputs[0], inputs[1]),
            Primitive::Relu => Ok(self.relu(inputs[0])),
            Primitive::Tanh => Ok(self.tanh(inputs[0])),
            Primitive::MseLoss => self.mse_loss(inputs[0], inputs[1]),
            Primitive::SoftmaxCrossEntropy { labels } => {
                self.softmax_cross_entropy(inputs[0], labels)
            }
            Primitive::ScalarEval(f) => self.scalar_eval(inputs[0], f),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let out = matmul(av, bv);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 || bv.shape() != [xv.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.push(out, Op::Tanh(x))
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse_loss",
                left: p.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        let n = p.len() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(sum / n), Op::Mse(pred, target)))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let classes = lv.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + denom.ln();
            total += log_z - row[label];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `f(x)` for a one-element `x`.
    pub fn scalar_eval(&mut self, x: Var, f: &dyn ScalarFn) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scalar_eval",
                left: xv.shape().to_vec(),
                right: vec![],
            });
        }
        let at = xv.item();
        Ok(self.push(
            Tensor::scalar(f.value(at)),
            Op::ScalarEval {
                input: x,
                slope: f.derivative(at),
            },
        ))
    }

    /// Fills the gradient of every node that `loss` depends on. Nodes that are
    /// not ancestors of `loss` are left without a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, self.value(b));
                    let gb = matmul_tn(self.value(a), &g);
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::AddBias(x, bias) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % c] += v;
                    }
                    self.accumulate(x, g.clone());
                    self.accumulate(bias, Tensor::new(vec![c], gb)?);
                }
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(self.value(x).data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.accumulate(x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g.clone();
                    let out = &self.nodes[idx].value;
                    for (gv, &y) in gx.data_mut().iter_mut().zip(out.data()) {
                        *gv *= 1.0 - y * y;
                    }
                    self.accumulate(x, gx);
                }
                Op::Mse(p, t) => {
                    let scale = 2.0 * g.item() / self.value(p).len() as f64;
                    let pv = self.value(p);
                    let tv = self.value(t);
                    let gp = Tensor::from_fn(pv.shape(), |i| scale * (pv.data()[i] - tv.data()[i]));
                    let gt = Tensor::from_fn(pv.shape(), |i| -gp.data()[i]);
                    self.accumulate(p, gp);
                    self.accumulate(t, gt);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let shape = self.value(logits).shape().to_vec();
                    let classes = shape[1];
                    let scale = g.item() / labels.len() as f64;
                    let mut gl = probs;
                    for (i, &label) in labels.iter().enumerate() {
                        gl[i * classes + label] -= 1.0;
                    }
                    for v in &mut gl {
                        *v *= scale;
                    }
                    self.accumulate(logits, Tensor::new(shape, gl)?);
                }
                Op::ScalarEval { input, slope } => {
                    let shape = self.value(input).shape().to_vec();
                    self.accumulate(input, Tensor::new(shape, vec![slope * g.item()])?);
                }
            }
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let slot = &mut self.nodes[v.0].grad;
        match slot {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => *slot = Some(g),
        }
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k, c) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data()[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![r, c], out).expect("matmul output shape")
}

/// `g · bᵀ`
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (r, c) = (g.shape()[0], g.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![0.0; r * k];
    for i in 0..r {
        let grow = &g.data()[i * c..(i + 1) * c];
        for p in 0..k {
            let brow = &b.data()[p * c..(p + 1) * c];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![r, k], out).expect("matmul_nt output shape")
}

/// `aᵀ · g`
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (r, k) = (a.shape()[0], a.shape()[1]);
    let c = g.shape()[1];
    let mut out = vec![0.0; k * c];
    for i in 0..r {
        let arow = &a.data()[i * k..(i + 1) * k];
        let grow = &g.data()[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * c..(p + 1) * c];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor::new(vec![k, c], out).expect("matmul_tn output shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_zero_propagation() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[3, 1]));
        let c = g.apply(Primitive::MatMul, &[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.op_kind(c), Some(PrimitiveKind::MatMul));
        assert_eq!(g.inputs(c), vec![a, b]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 1]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(mat(&[vec![-1.0, 0.0, 2.0]]));
        let y = g.relu(x);
        let t = g.leaf(Tensor::zeros(&[1, 3]));
        let l = g.mse_loss(y, t).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 4.0 / 3.0]);
    }

    #[test]
    fn uniform_softmax_cross_entropy_is_ln_classes() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[1, 5]));
        let l = g
            .apply(Primitive::SoftmaxCrossEntropy { labels: &[3] }, &[z])
            .unwrap();
        assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-15);
        assert!((g.value(l).item() - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn label_out_of_range() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            g.softmax_cross_entropy(z, &[0, 3]),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn mse_at_minimum_has_zero_grads() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::filled(&[1, 1], 3.0));
        let t = g.leaf(Tensor::filled(&[1, 1], 3.0));
        let l = g.mse_loss(p, t).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert_eq!(g.grad(p).unwrap().data(), &[0.0]);
        assert_eq!(g.grad(t).unwrap().data(), &[0.0]);
    }

    #[test]
    fn linear_map_gradient() {
        // loss = x * w with x = 2, w = 5
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 1], 2.0));
        let w = g.leaf(Tensor::filled(&[1, 1], 5.0));
        let y = g.matmul(x, w).unwrap();

        struct Sum;
        impl ScalarFn for Sum {
            fn value(&self, x: f64) -> f64 {
                x
            }
            fn derivative(&self, _: f64) -> f64 {
                1.0
            }
        }
        let l = g.scalar_eval(y, &Sum).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0]);
        assert_eq!(g.grad(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_leaves_untouched() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::filled(&[1, 1], 1.0));
        let unused = g.leaf(Tensor::filled(&[1, 1], 7.0));
        let t = g.leaf(Tensor::zeros(&[1, 1]));
        let l = g.mse_loss(a, t).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(unused).is_none());
        assert!(g.grad(a).is_some());
    }

    #[test]
    fn apply_checks_arity() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[1, 1]));
        assert!(g.apply(Primitive::MatMul, &[a]).is_err());
    }
}
