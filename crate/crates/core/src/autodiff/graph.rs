use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Value used in place of masked entries ahead of a softmax.
pub const MASK_FILL: f64 = -1e9;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// The primitive operations understood by the graph, with their attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]`; a 1-D left operand is a single row and yields `[n]`.
    MatMul,
    /// Element-wise sum. The right operand may match the left shape, be a
    /// single row matching the last axis, or hold one value.
    Add,
    /// Element-wise product with the same broadcasting as [`Primitive::Add`].
    Mul,
    Scale(f64),
    /// `None` reduces everything to a scalar; `Some(0)` sums rows of a
    /// matrix into `[cols]`, `Some(1)` sums columns into `[rows]`.
    Sum(Option<usize>),
    Mean(Option<usize>),
    /// Concatenation along the leading axis.
    Concat,
    /// Row lookup into a `[vocab, dim]` table.
    Embedding(Vec<usize>),
    /// Softmax over the last axis.
    Softmax,
    Sigmoid,
    Tanh,
    /// Replace entries whose mask bit is set with [`MASK_FILL`].
    MaskedFill(Vec<bool>),
    /// Cosine similarity of two equally sized tensors, flattened.
    Cosine,
    Log,
    Exp,
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
    /// Gather flat element indices into a 1-D tensor.
    Select(Vec<usize>),
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Sum(_) => "sum",
            Primitive::Mean(_) => "mean",
            Primitive::Concat => "concat",
            Primitive::Embedding(_) => "embedding",
            Primitive::Softmax => "softmax",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::MaskedFill(_) => "masked_fill",
            Primitive::Cosine => "cosine",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Softplus => "softplus",
            Primitive::Select(_) => "select",
            Primitive::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Apply(Primitive),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `var`; zero when
    /// `var` does not influence the root.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get_ref(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

/// Append-only record of primitive applications. Nodes are stored in
/// creation order, which is a topological order by construction.
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

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Evaluate `prim` on `inputs` and record the application.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = match prim {
            Primitive::MatMul | Primitive::Add | Primitive::Mul | Primitive::Cosine => Some(2),
            Primitive::Concat => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(Error::Invalid(format!(
                    "{} takes {n} inputs, got {}",
                    prim.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::Invalid("concat of zero inputs".into()));
        }
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&prim, &vals)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: Op::Apply(prim),
            inputs: inputs.to_vec(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum(None), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Sum(Some(axis)), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean(None), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Mean(Some(axis)), &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.apply(Primitive::Embedding(ids.to_vec()), &[table])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn masked_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.apply(Primitive::MaskedFill(mask.to_vec()), &[a])
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Cosine, &[a, b])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    pub fn select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.apply(Primitive::Select(indices.to_vec()), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Op::Apply(prim) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let local = backward_local(prim, &inputs, &node.value, &upstream, &needs);
            for ((input, need), g) in node.inputs.iter().zip(&needs).zip(local) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(g.data()),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(upstream);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    let (_, cols) = a.as_2d();
    let row_like = match b.shape() {
        [n] => *n == cols,
        [1, n] => *n == cols,
        _ => false,
    };
    if a.shape().len() >= 2 && row_like {
        return Ok(Broadcast::Row);
    }
    Err(Error::shape(op, a.shape(), b.shape()))
}

fn broadcast_zip(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let bd = b.data();
    match kind {
        Broadcast::Same => a.data().iter().zip(bd).map(|(x, y)| f(*x, *y)).collect(),
        Broadcast::Scalar => a.data().iter().map(|x| f(*x, bd[0])).collect(),
        Broadcast::Row => {
            let cols = bd.len();
            a.data()
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, bd[i % cols]))
                .collect()
        }
    }
}

/// Sum a full-size gradient back down to the broadcast operand's shape.
fn reduce_broadcast(g: &[f64], b: &Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => b.with_data(g.to_vec()),
        Broadcast::Scalar => b.with_data(vec![g.iter().sum()]),
        Broadcast::Row => {
            let cols = b.numel();
            let mut out = vec![0.0; cols];
            for (i, v) in g.iter().enumerate() {
                out[i % cols] += v;
            }
            b.with_data(out)
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const EXP_MAX: f64 = 709.0;

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (m, k) = match a.shape() {
        [k] => (1, *k),
        [m, k] => (*m, *k),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    match b.shape() {
        [k2, n] if *k2 == k => Ok((m, k, *n)),
        _ => Err(Error::shape("matmul", a.shape(), b.shape())),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn axis_dims(op: &'static str, a: &Tensor, axis: usize) -> Result<(usize, usize)> {
    match (a.shape(), axis) {
        ([r, c], 0 | 1) => Ok((*r, *c)),
        ([n], 0) => Ok((*n, 1)),
        _ => Err(Error::Domain {
            op,
            detail: format!("axis {axis} invalid for shape {:?}", a.shape()),
        }),
    }
}

fn forward(prim: &Primitive, xs: &[&Tensor]) -> Result<Tensor> {
    let name = prim.name();
    let out = match prim {
        Primitive::MatMul => {
            let (m, k, n) = matmul_dims(xs[0], xs[1])?;
            let data = matmul_raw(xs[0].data(), xs[1].data(), m, k, n);
            let shape = if xs[0].shape().len() == 1 { vec![n] } else { vec![m, n] };
            Tensor::new(shape, data)?
        }
        Primitive::Add => {
            let kind = broadcast_kind(name, xs[0], xs[1])?;
            xs[0].with_data(broadcast_zip(xs[0], xs[1], kind, |x, y| x + y))
        }
        Primitive::Mul => {
            let kind = broadcast_kind(name, xs[0], xs[1])?;
            xs[0].with_data(broadcast_zip(xs[0], xs[1], kind, |x, y| x * y))
        }
        Primitive::Scale(c) => xs[0].with_data(xs[0].data().iter().map(|x| x * c).collect()),
        Primitive::Sum(None) => Tensor::scalar(xs[0].data().iter().sum()),
        Primitive::Mean(None) => {
            let n = xs[0].numel();
            if n == 0 {
                return Err(Error::Domain { op: name, detail: "mean of empty tensor".into() });
            }
            Tensor::scalar(xs[0].data().iter().sum::<f64>() / n as f64)
        }
        Primitive::Sum(Some(axis)) | Primitive::Mean(Some(axis)) => {
            let (r, c) = axis_dims(name, xs[0], *axis)?;
            let d = xs[0].data();
            let mean = matches!(prim, Primitive::Mean(_));
            let out = if *axis == 0 {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += d[i * c + j];
                    }
                }
                if mean {
                    out.iter_mut().for_each(|v| *v /= r as f64);
                }
                out
            } else {
                let mut out: Vec<f64> = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect();
                if mean {
                    out.iter_mut().for_each(|v| *v /= c as f64);
                }
                out
            };
            if (mean && (r == 0 || c == 0)) || out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain { op: name, detail: "empty reduction".into() });
            }
            Tensor::vector(out)
        }
        Primitive::Concat => {
            let tail = &xs[0].shape()[1.min(xs[0].shape().len())..];
            let mut lead = 0;
            let mut data = Vec::new();
            for x in xs {
                if x.shape().is_empty() || &x.shape()[1..] != tail {
                    return Err(Error::shape(name, xs[0].shape(), x.shape()));
                }
                lead += x.shape()[0];
                data.extend_from_slice(x.data());
            }
            let mut shape = vec![lead];
            shape.extend_from_slice(tail);
            Tensor::new(shape, data)?
        }
        Primitive::Embedding(ids) => {
            let [v, e] = xs[0].shape() else {
                return Err(Error::shape(name, xs[0].shape(), &[]));
            };
            let (v, e) = (*v, *e);
            let mut data = Vec::with_capacity(ids.len() * e);
            for &id in ids {
                if id >= v {
                    return Err(Error::Domain { op: name, detail: format!("id {id} >= vocab {v}") });
                }
                data.extend_from_slice(&xs[0].data()[id * e..(id + 1) * e]);
            }
            Tensor::new(vec![ids.len(), e], data)?
        }
        Primitive::Softmax => {
            let (r, c) = xs[0].as_2d();
            let d = xs[0].data();
            let mut out = vec![0.0; d.len()];
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o = (x - max).exp();
                    z += *o;
                }
                out[i * c..(i + 1) * c].iter_mut().for_each(|o| *o /= z);
            }
            xs[0].with_data(out)
        }
        Primitive::Sigmoid => xs[0].with_data(xs[0].data().iter().map(|x| sigmoid(*x)).collect()),
        Primitive::Tanh => xs[0].with_data(xs[0].data().iter().map(|x| x.tanh()).collect()),
        Primitive::MaskedFill(mask) => {
            if mask.len() != xs[0].numel() {
                return Err(Error::shape(name, xs[0].shape(), &[mask.len()]));
            }
            xs[0].with_data(
                xs[0]
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(x, m)| if *m { MASK_FILL } else { *x })
                    .collect(),
            )
        }
        Primitive::Cosine => {
            if xs[0].numel() != xs[1].numel() {
                return Err(Error::shape(name, xs[0].shape(), xs[1].shape()));
            }
            let (dot, na, nb) = cosine_parts(xs[0].data(), xs[1].data());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Domain { op: name, detail: "zero-norm operand".into() });
            }
            Tensor::scalar(dot / (na * nb))
        }
        Primitive::Log => {
            if let Some(x) = xs[0].data().iter().find(|x| x.is_nan() || **x <= 0.0) {
                return Err(Error::Domain { op: name, detail: format!("log of {x}") });
            }
            xs[0].with_data(xs[0].data().iter().map(|x| x.ln()).collect())
        }
        Primitive::Exp => {
            if let Some(x) = xs[0].data().iter().find(|x| x.is_nan() || **x > EXP_MAX) {
                return Err(Error::Domain { op: name, detail: format!("exp of {x} overflows") });
            }
            xs[0].with_data(xs[0].data().iter().map(|x| x.exp()).collect())
        }
        Primitive::Softplus => xs[0].with_data(xs[0].data().iter().map(|x| softplus(*x)).collect()),
        Primitive::Select(indices) => {
            let d = xs[0].data();
            let mut out = Vec::with_capacity(indices.len());
            for &i in indices {
                if i >= d.len() {
                    return Err(Error::Domain { op: name, detail: format!("index {i} >= {}", d.len()) });
                }
                out.push(d[i]);
            }
            Tensor::vector(out)
        }
        Primitive::Reshape(shape) => {
            if shape.iter().product::<usize>() != xs[0].numel() {
                return Err(Error::shape(name, xs[0].shape(), shape));
            }
            Tensor::new(shape.clone(), xs[0].data().to_vec())?
        }
    };
    Ok(out)
}

fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

fn backward_local(
    prim: &Primitive,
    xs: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let gd = g.data();
    match prim {
        Primitive::MatMul => {
            let (m, k, n) = matmul_dims(xs[0], xs[1]).expect("validated in forward");
            let a = xs[0].data();
            let b = xs[1].data();
            let ga = needs[0].then(|| {
                // dA = dC B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                xs[0].with_data(da)
            });
            let gb = needs[1].then(|| {
                // dB = A^T dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * x;
                        }
                    }
                }
                xs[1].with_data(db)
            });
            vec![ga, gb]
        }
        Primitive::Add => {
            let kind = broadcast_kind("add", xs[0], xs[1]).expect("validated in forward");
            vec![
                needs[0].then(|| xs[0].with_data(gd.to_vec())),
                needs[1].then(|| reduce_broadcast(gd, xs[1], kind)),
            ]
        }
        Primitive::Mul => {
            let kind = broadcast_kind("mul", xs[0], xs[1]).expect("validated in forward");
            let ga = needs[0].then(|| {
                let prod: Vec<f64> = broadcast_zip(g, xs[1], kind, |x, y| x * y);
                xs[0].with_data(prod)
            });
            let gb = needs[1].then(|| {
                let full: Vec<f64> = gd.iter().zip(xs[0].data()).map(|(x, y)| x * y).collect();
                reduce_broadcast(&full, xs[1], kind)
            });
            vec![ga, gb]
        }
        Primitive::Scale(c) => vec![Some(xs[0].with_data(gd.iter().map(|x| x * c).collect()))],
        Primitive::Sum(None) => vec![Some(Tensor::filled(xs[0].shape(), gd[0]))],
        Primitive::Mean(None) => {
            let n = xs[0].numel() as f64;
            vec![Some(Tensor::filled(xs[0].shape(), gd[0] / n))]
        }
        Primitive::Sum(Some(axis)) | Primitive::Mean(Some(axis)) => {
            let (r, c) = axis_dims("sum", xs[0], *axis).expect("validated in forward");
            let mean = matches!(prim, Primitive::Mean(_));
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = if *axis == 0 {
                        if mean { gd[j] / r as f64 } else { gd[j] }
                    } else if mean {
                        gd[i] / c as f64
                    } else {
                        gd[i]
                    };
                }
            }
            vec![Some(xs[0].with_data(out))]
        }
        Primitive::Concat => {
            let mut offset = 0;
            xs.iter()
                .zip(needs)
                .map(|(x, need)| {
                    let n = x.numel();
                    let piece = need.then(|| x.with_data(gd[offset..offset + n].to_vec()));
                    offset += n;
                    piece
                })
                .collect()
        }
        Primitive::Embedding(ids) => {
            let e = xs[0].shape()[1];
            let mut table = vec![0.0; xs[0].numel()];
            for (row, &id) in ids.iter().enumerate() {
                for j in 0..e {
                    table[id * e + j] += gd[row * e + j];
                }
            }
            vec![Some(xs[0].with_data(table))]
        }
        Primitive::Softmax => {
            let (r, c) = out.as_2d();
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for i in 0..r {
                let ys = &y[i * c..(i + 1) * c];
                let gs = &gd[i * c..(i + 1) * c];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dx[i * c + j] = ys[j] * (gs[j] - dot);
                }
            }
            vec![Some(xs[0].with_data(dx))]
        }
        Primitive::Sigmoid => vec![Some(
            xs[0].with_data(out.data().iter().zip(gd).map(|(s, g)| g * s * (1.0 - s)).collect()),
        )],
        Primitive::Tanh => vec![Some(
            xs[0].with_data(out.data().iter().zip(gd).map(|(t, g)| g * (1.0 - t * t)).collect()),
        )],
        Primitive::MaskedFill(mask) => vec![Some(
            xs[0].with_data(gd.iter().zip(mask).map(|(g, m)| if *m { 0.0 } else { *g }).collect()),
        )],
        Primitive::Cosine => {
            let (a, b) = (xs[0].data(), xs[1].data());
            let (dot, na, nb) = cosine_parts(a, b);
            let cos = dot / (na * nb);
            let gd0 = gd[0];
            // d cos / da = b / (|a||b|) - cos * a / |a|^2
            let ga = needs[0].then(|| {
                xs[0].with_data(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| gd0 * (y / (na * nb) - cos * x / (na * na)))
                        .collect(),
                )
            });
            let gb = needs[1].then(|| {
                xs[1].with_data(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| gd0 * (x / (na * nb) - cos * y / (nb * nb)))
                        .collect(),
                )
            });
            vec![ga, gb]
        }
        Primitive::Log => vec![Some(
            xs[0].with_data(xs[0].data().iter().zip(gd).map(|(x, g)| g / x).collect()),
        )],
        Primitive::Exp => vec![Some(
            xs[0].with_data(out.data().iter().zip(gd).map(|(y, g)| g * y).collect()),
        )],
        Primitive::Softplus => vec![Some(
            xs[0].with_data(xs[0].data().iter().zip(gd).map(|(x, g)| g * sigmoid(*x)).collect()),
        )],
        Primitive::Select(indices) => {
            let mut dx = vec![0.0; xs[0].numel()];
            for (k, &i) in indices.iter().enumerate() {
                dx[i] += gd[k];
            }
            vec![Some(xs[0].with_data(dx))]
        }
        Primitive::Reshape(_) => vec![Some(xs[0].with_data(gd.to_vec()))],
    }
}
