use std::collections::BTreeMap;

use super::tensor::{gemm, gemm_acc, Tensor};
use super::{GradientMap, ParamId};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    /// `a * [b_1 | b_2 | ...]`, the products side by side.
    MatMulCat(Var, Vec<Var>),
    /// Columns `[start, start + width)` of a matrix.
    Cols(Var, usize, usize),
}

impl Op {
    fn operands(&self) -> impl Iterator<Item = Var> + '_ {
        use Op::*;
        let (pair, rest): ([Option<Var>; 2], &[Var]) = match self {
            Constant | Param(_) => ([None, None], &[]),
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => ([Some(*a), Some(*b)], &[]),
            Scale(a, _) | AddScalar(a, _) | Tanh(a) | Relu(a) | Square(a) | Exp(a) | Log(a)
            | Sum(a) | Mean(a) | Cols(a, _, _) => ([Some(*a), None], &[]),
            MatMulCat(a, bs) => ([Some(*a), None], bs.as_slice()),
        };
        pair.into_iter().flatten().chain(rest.iter().copied())
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run gradient tape. Every primitive appends one node whose
/// operands were recorded earlier, so node order is a topological order.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result shape of an elementwise binary op: equal shapes, or one side holds
/// a single element.
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(shape: Vec<usize>, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = match (ad.len() == n, bd.len() == n) {
        (true, true) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        (true, false) => ad.iter().map(|&x| f(x, bd[0])).collect(),
        (false, true) => bd.iter().map(|&y| f(ad[0], y)).collect(),
        (false, false) => vec![f(ad[0], bd[0])],
    };
    Tensor::from_parts(shape, data)
}

fn eval(op: &Op, nodes: &[Node]) -> Tensor {
    let v = |x: Var| &nodes[x.0].value;
    match *op {
        Op::Constant | Op::Param(_) => unreachable!("leaves carry their own values"),
        Op::MatMulCat(a, ref bs) => {
            let parts: Vec<&Tensor> = bs.iter().map(|&b| v(b)).collect();
            gemm(v(a), false, &concat_cols(&parts), false)
        }
        Op::Cols(a, start, width) => {
            let src = v(a);
            let cols = src.cols();
            let mut data = Vec::with_capacity(src.rows() * width);
            for row in src.data().chunks_exact(cols) {
                data.extend_from_slice(&row[start..start + width]);
            }
            Tensor::from_parts(vec![src.rows(), width], data)
        }
        Op::MatMul(a, b) => gemm(v(a), false, v(b), false),
        Op::Add(a, b) => {
            let shape = broadcast_shape("add", v(a), v(b)).expect("checked at record time");
            zip_broadcast(shape, v(a), v(b), |x, y| x + y)
        }
        Op::Sub(a, b) => {
            let shape = broadcast_shape("sub", v(a), v(b)).expect("checked at record time");
            zip_broadcast(shape, v(a), v(b), |x, y| x - y)
        }
        Op::Mul(a, b) => {
            let shape = broadcast_shape("mul", v(a), v(b)).expect("checked at record time");
            zip_broadcast(shape, v(a), v(b), |x, y| x * y)
        }
        Op::Scale(a, c) => v(a).map(|x| x * c),
        Op::AddScalar(a, c) => v(a).map(|x| x + c),
        Op::Tanh(a) => v(a).map(f64::tanh),
        Op::Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Square(a) => v(a).map(|x| x * x),
        Op::Exp(a) => v(a).map(f64::exp),
        Op::Log(a) => v(a).map(f64::ln),
        Op::Sum(a) => Tensor::scalar(v(a).sum()),
        Op::Mean(a) => Tensor::scalar(v(a).sum() / v(a).len() as f64),
    }
}

/// Matrices with equal row counts laid side by side.
fn concat_cols(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|t| t.cols()).sum();
    let mut out = vec![0.0; rows * total];
    let mut offset = 0;
    for t in parts {
        let w = t.cols();
        for (r, src) in t.data().chunks_exact(w).enumerate() {
            out[r * total + offset..r * total + offset + w].copy_from_slice(src);
        }
        offset += w;
    }
    Tensor::from_parts(vec![rows, total], out)
}

/// Reduces an output-shaped gradient back onto an operand that may have been
/// scalar-broadcast.
fn unbroadcast(grad: Tensor, operand: &Tensor) -> Tensor {
    if grad.len() == operand.len() {
        grad
    } else {
        Tensor::full(operand.shape(), grad.sum())
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => existing.axpy(1.0, &grad),
        None => *slot = Some(grad),
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.value(var).data()[0]
    }

    fn push(&mut self, op: Op) -> Var {
        let value = eval(&op, &self.nodes);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(Op::Constant, value)
    }

    /// Records a trainable parameter.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push_leaf(Op::Param(id), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(self.push(Op::MatMul(a, b)))
    }

    /// `a * [b_1 | b_2 | ...]`: every product in one node, side by side.
    /// Use [`Tape::cols`] to take the individual products back out.
    pub fn matmul_cat(&mut self, a: Var, bs: &[Var]) -> Result<Var> {
        let sa = self.value(a).shape();
        let bad = |sb: &[usize]| Error::Shape {
            op: "matmul_cat",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if bs.is_empty() {
            return Err(bad(&[]));
        }
        for &b in bs {
            let sb = self.value(b).shape();
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(bad(sb));
            }
        }
        Ok(self.push(Op::MatMulCat(a, bs.to_vec())))
    }

    /// Columns `[start, start + width)` of a matrix.
    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let sa = self.value(a).shape();
        if sa.len() != 2 || width == 0 || start + width > sa[1] {
            return Err(Error::Shape {
                op: "cols",
                lhs: sa.to_vec(),
                rhs: vec![start, width],
            });
        }
        Ok(self.push(Op::Cols(a, start, width)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("add", self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("sub", self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("mul", self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.push(Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::AddScalar(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a))
    }

    /// Parameters recorded on this tape, in recording order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    /// Recomputes every non-leaf node from the stored leaves.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                ref op => eval(op, &fresh),
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        fresh.into_iter().map(|n| n.value).collect()
    }

    /// Gradient of a scalar output with respect to every parameter on the tape.
    pub fn backward(&self, output: Var) -> Result<GradientMap> {
        let all: Vec<ParamId> = self.params().map(|(id, _)| id).collect();
        self.backward_wrt(output, &all)
    }

    /// Gradient of a scalar output with respect to a subset of parameters.
    ///
    /// Only nodes that lie on a path from one of `wrt` to `output` are
    /// visited, so asking for a single layer is much cheaper than a full
    /// backward pass. Parameters that do not reach `output` get zeros.
    pub fn backward_wrt(&self, output: Var, wrt: &[ParamId]) -> Result<GradientMap> {
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(Error::NotScalar(out_value.shape().to_vec()));
        }
        let mut by_id: BTreeMap<ParamId, Vec<Var>> = BTreeMap::new();
        for (pid, var) in self.params() {
            by_id.entry(pid).or_default().push(var);
        }
        let mut wanted = vec![false; self.nodes.len()];
        for id in wrt {
            let vars = by_id.get(id).ok_or(Error::UnknownParam(*id))?;
            for var in vars {
                wanted[var.0] = true;
            }
        }
        // Forward sweep: a node needs a gradient if any operand does.
        let mut needs = wanted.clone();
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if node.op.operands().any(|v| needs[v.0]) {
                needs[i] = true;
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        if needs[output.0] {
            grads[output.0] = Some(Tensor::full(out_value.shape(), 1.0));
        }
        // Products sharing a left operand are deferred until the sweep
        // reaches that operand, then done as one wide product.
        // Column slices are collected the same way, so a side-by-side
        // product only works on the blocks that received a gradient.
        let mut pending: Vec<Vec<(Var, Tensor)>> = vec![Vec::new(); output.0 + 1];
        let mut slices: Vec<Vec<(usize, Tensor)>> = vec![Vec::new(); output.0 + 1];
        for i in (0..=output.0).rev() {
            if !pending[i].is_empty() {
                let group = std::mem::take(&mut pending[i]);
                self.flush_products(Var(i), group, &needs, &mut grads);
            }
            if !needs[i] {
                continue;
            }
            if let Op::MatMulCat(a, ref bs) = self.nodes[i].op {
                let parts = std::mem::take(&mut slices[i]);
                self.split_slices(a, bs, parts, grads[i].take(), &mut pending);
                continue;
            }
            for (start, g) in std::mem::take(&mut slices[i]) {
                let shape = self.nodes[i].value.shape();
                let (rows, total) = (shape[0], shape[1]);
                let slot = grads[i].get_or_insert_with(|| Tensor::zeros(&[rows, total]));
                let w = g.cols();
                for (r, src) in g.data().chunks_exact(w).enumerate() {
                    let dst = &mut slot.data_mut()[r * total + start..r * total + start + w];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Param(_) = node.op {
                grads[i] = Some(g);
                continue;
            }
            match node.op {
                Op::MatMul(a, b) => pending[a.0].push((b, g)),
                Op::Cols(a, start, _) => slices[a.0].push((start, g)),
                _ => self.propagate(node, g, &needs, &mut grads),
            }
        }

        let mut map = GradientMap::new();
        for id in wrt {
            for var in &by_id[id] {
                let g = grads
                    .get_mut(var.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.value(*var).shape()));
                map.accumulate(*id, g);
            }
        }
        Ok(map)
    }

    /// Routes the gradient of a side-by-side product to its blocks: each
    /// slice gradient lands on the block it covers, and a dense gradient
    /// (from a consumer of the whole product) is cut into blocks.
    fn split_slices(
        &self,
        a: Var,
        bs: &[Var],
        parts: Vec<(usize, Tensor)>,
        dense: Option<Tensor>,
        pending: &mut [Vec<(Var, Tensor)>],
    ) {
        let mut starts = Vec::with_capacity(bs.len());
        let mut offset = 0;
        for &b in bs {
            starts.push(offset);
            offset += self.value(b).cols();
        }
        let block = |start: usize| starts.partition_point(|&s| s <= start) - 1;
        let mut per_block: Vec<Option<Tensor>> = vec![None; bs.len()];
        for (start, g) in parts {
            let t = block(start);
            let w = self.value(bs[t]).cols();
            if start == starts[t] && g.cols() == w {
                accumulate(&mut per_block[t], g);
            } else {
                // A slice that is not exactly one block: widen it to the
                // product's shape and cut it like a dense gradient.
                let rows = g.rows();
                let mut full = vec![0.0; rows * offset];
                for (r, src) in g.data().chunks_exact(g.cols()).enumerate() {
                    full[r * offset + start..r * offset + start + g.cols()].copy_from_slice(src);
                }
                self.cut_dense(&Tensor::from_parts(vec![rows, offset], full), &starts, bs, &mut per_block);
            }
        }
        if let Some(d) = dense {
            self.cut_dense(&d, &starts, bs, &mut per_block);
        }
        for (&b, g) in bs.iter().zip(per_block) {
            if let Some(g) = g {
                pending[a.0].push((b, g));
            }
        }
    }

    fn cut_dense(&self, d: &Tensor, starts: &[usize], bs: &[Var], per_block: &mut [Option<Tensor>]) {
        let total = d.cols();
        for (t, &b) in bs.iter().enumerate() {
            let w = self.value(b).cols();
            let mut data = Vec::with_capacity(d.rows() * w);
            for row in d.data().chunks_exact(total) {
                data.extend_from_slice(&row[starts[t]..starts[t] + w]);
            }
            accumulate(&mut per_block[t], Tensor::from_parts(vec![d.rows(), w], data));
        }
    }

    /// Gradients of every product `a * b_t` in `group`, given each output
    /// gradient `g_t`. With several products the `g_t` and `b_t` are laid
    /// side by side so that both gradients come from one matrix product each.
    fn flush_products(&self, a: Var, group: Vec<(Var, Tensor)>, needs: &[bool], grads: &mut [Option<Tensor>]) {
        let av = self.value(a);
        let add_to = |slot: &mut Option<Tensor>, lhs: &Tensor, ta: bool, rhs: &Tensor, tb: bool| match slot {
            Some(acc) => gemm_acc(lhs, ta, rhs, tb, acc.data_mut()),
            None => *slot = Some(gemm(lhs, ta, rhs, tb)),
        };
        if group.len() == 1 {
            let (b, g) = &group[0];
            if needs[a.0] {
                add_to(&mut grads[a.0], g, false, self.value(*b), true);
            }
            if needs[b.0] {
                add_to(&mut grads[b.0], av, true, g, false);
            }
            return;
        }
        let rows = av.rows();
        let inner = av.cols();
        let widths: Vec<usize> = group.iter().map(|(_, g)| g.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut g_cat = vec![0.0; rows * total];
        let mut offset = 0;
        for ((_, g), &w) in group.iter().zip(&widths) {
            for (r, src) in g.data().chunks_exact(w).enumerate() {
                g_cat[r * total + offset..r * total + offset + w].copy_from_slice(src);
            }
            offset += w;
        }
        let g_cat = Tensor::from_parts(vec![rows, total], g_cat);
        if needs[a.0] {
            let mut b_cat = vec![0.0; inner * total];
            let mut offset = 0;
            for ((b, _), &w) in group.iter().zip(&widths) {
                for (r, src) in self.value(*b).data().chunks_exact(w).enumerate() {
                    b_cat[r * total + offset..r * total + offset + w].copy_from_slice(src);
                }
                offset += w;
            }
            let b_cat = Tensor::from_parts(vec![inner, total], b_cat);
            add_to(&mut grads[a.0], &g_cat, false, &b_cat, true);
        }
        if group.iter().any(|(b, _)| needs[b.0]) {
            let gb = gemm(av, true, &g_cat, false);
            let mut offset = 0;
            for ((b, _), &w) in group.iter().zip(&widths) {
                if needs[b.0] {
                    let mut part = Vec::with_capacity(inner * w);
                    for r in 0..inner {
                        part.extend_from_slice(&gb.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(&mut grads[b.0], Tensor::from_parts(vec![inner, w], part));
                }
                offset += w;
            }
        }
    }

    fn propagate(&self, node: &Node, g: Tensor, needs: &[bool], grads: &mut [Option<Tensor>]) {
        let v = |x: Var| &self.nodes[x.0].value;
        let send = |x: Var, grad: Tensor, grads: &mut [Option<Tensor>]| {
            if needs[x.0] {
                accumulate(&mut grads[x.0], grad);
            }
        };
        match node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(..) | Op::MatMulCat(..) | Op::Cols(..) => unreachable!("products are flushed in groups"),
            Op::Add(a, b) => {
                if needs[a.0] {
                    send(a, unbroadcast(g.clone(), v(a)), grads);
                }
                if needs[b.0] {
                    send(b, unbroadcast(g, v(b)), grads);
                }
            }
            Op::Sub(a, b) => {
                if needs[a.0] {
                    send(a, unbroadcast(g.clone(), v(a)), grads);
                }
                if needs[b.0] {
                    send(b, unbroadcast(g.map(|x| -x), v(b)), grads);
                }
            }
            Op::Mul(a, b) => {
                let shape = node.value.shape().to_vec();
                if needs[a.0] {
                    let ga = zip_broadcast(shape.clone(), &g, v(b), |x, y| x * y);
                    send(a, unbroadcast(ga, v(a)), grads);
                }
                if needs[b.0] {
                    let gb = zip_broadcast(shape, &g, v(a), |x, y| x * y);
                    send(b, unbroadcast(gb, v(b)), grads);
                }
            }
            Op::Scale(a, c) => send(a, g.map(|x| x * c), grads),
            Op::AddScalar(a, _) => send(a, g, grads),
            Op::Tanh(a) => {
                let gy = zip_broadcast(g.shape().to_vec(), &g, &node.value, |x, y| x * (1.0 - y * y));
                send(a, gy, grads)
            }
            Op::Relu(a) => {
                let gx = zip_broadcast(g.shape().to_vec(), &g, v(a), |x, y| if y > 0.0 { x } else { 0.0 });
                send(a, gx, grads)
            }
            Op::Square(a) => {
                let gx = zip_broadcast(g.shape().to_vec(), &g, v(a), |x, y| 2.0 * x * y);
                send(a, gx, grads)
            }
            Op::Exp(a) => {
                let gx = zip_broadcast(g.shape().to_vec(), &g, &node.value, |x, y| x * y);
                send(a, gx, grads)
            }
            Op::Log(a) => {
                let gx = zip_broadcast(g.shape().to_vec(), &g, v(a), |x, y| x / y);
                send(a, gx, grads)
            }
            Op::Sum(a) => send(a, Tensor::full(v(a).shape(), g.data()[0]), grads),
            Op::Mean(a) => {
                let n = v(a).len() as f64;
                send(a, Tensor::full(v(a).shape(), g.data()[0] / n), grads)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let y = tape.tanh(x);
        assert_eq!(tape.value(y), &Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn matmul_shape_rule() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2, 3], 1.0));
        let b = tape.constant(Tensor::full(&[3, 1], 1.0));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        let err = tape.matmul(b, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn wide_product_shape_rules() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2, 3], 1.0));
        let b = tape.constant(Tensor::full(&[3, 1], 1.0));
        let c = tape.constant(Tensor::full(&[3, 4], 2.0));
        let w = tape.matmul_cat(a, &[b, c]).unwrap();
        assert_eq!(tape.value(w).shape(), &[2, 5]);
        assert_eq!(tape.value(w).data()[..5], [3.0, 6.0, 6.0, 6.0, 6.0]);
        assert!(tape.matmul_cat(a, &[]).unwrap_err().to_string().contains("matmul_cat"));
        assert!(tape.matmul_cat(a, &[b, a]).is_err());
        let s = tape.cols(w, 3, 2).unwrap();
        assert_eq!(tape.value(s).shape(), &[2, 2]);
        assert!(tape.cols(w, 4, 2).unwrap_err().to_string().contains("cols"));
        assert!(tape.cols(w, 0, 0).is_err());
    }

    #[test]
    fn mean_of_vector() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[2.0, 4.0, 6.0]).unwrap());
        let m = tape.mean(x);
        assert_eq!(tape.scalar(m), 4.0);
    }

    #[test]
    fn elementwise_shape_mismatch_names_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
        assert!(tape.mul(a, b).is_err());
        assert!(tape.sub(a, b).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(0.0));
        let y = tape.tanh(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[1.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(2.0));
        let _unused = tape.param(ParamId(1), Tensor::zeros(&[2, 2]));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(1)).unwrap(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn unknown_wrt_param_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(2.0));
        assert!(matches!(
            tape.backward_wrt(x, &[ParamId(7)]),
            Err(Error::UnknownParam(ParamId(7)))
        ));
    }

    #[test]
    fn scalar_broadcast_gradients() {
        // f(s, v) = sum(s * v + s) with scalar s
        let mut tape = Tape::new();
        let s = tape.param(ParamId(0), Tensor::scalar(2.0));
        let v = tape.param(ParamId(1), Tensor::vector(&[1.0, 2.0, 3.0]).unwrap());
        let sv = tape.mul(s, v).unwrap();
        let svs = tape.add(sv, s).unwrap();
        let out = tape.sum(svs);
        assert_eq!(tape.scalar(out), 18.0);
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[9.0]);
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn log_exp_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::vector(&[0.5, 2.0]).unwrap());
        let e = tape.exp(x);
        let l = tape.log(x);
        let s = tape.add(e, l).unwrap();
        let out = tape.sum(s);
        let g = tape.backward(out).unwrap();
        let d = g.get(ParamId(0)).unwrap().data();
        assert!((d[0] - (0.5f64.exp() + 2.0)).abs() < 1e-15);
        assert!((d[1] - (2.0f64.exp() + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![0.3, -1.2, 2.5, 0.7]).unwrap());
        let w = tape.param(ParamId(0), Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap());
        let h = tape.matmul(x, w).unwrap();
        let a = tape.tanh(h);
        let r = tape.relu(a);
        let s = tape.square(r);
        let w2 = tape.param(ParamId(1), Tensor::matrix(2, 1, vec![0.5, -0.6]).unwrap());
        let wide = tape.matmul_cat(s, &[w, w2]).unwrap();
        let c = tape.cols(wide, 1, 2).unwrap();
        let _ = tape.mean(c);
        let replayed = tape.replay();
        for (i, t) in replayed.iter().enumerate() {
            assert_eq!(t, tape.value(Var(i)));
        }
    }

    #[test]
    fn operands_precede_results() {
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), Tensor::scalar(1.0));
        let b = tape.exp(a);
        let c = tape.mul(a, b).unwrap();
        let _ = tape.log(c);
        for (i, node) in tape.nodes.iter().enumerate() {
            for v in node.op.operands() {
                assert!(v.0 < i);
            }
        }
    }
}
