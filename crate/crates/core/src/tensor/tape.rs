use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Linear(Var, Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Select(Var, usize),
    Stack(Vec<Var>),
    Clamp(Var, f64, f64),
    KlDiag {
        mean_q: Var,
        logvar_q: Var,
        mean_p: Var,
        logvar_p: Var,
    },
    GaussLogPdf {
        x: Var,
        mean: Var,
        logvar: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Linear record of one forward pass. Nodes are appended in evaluation
/// order, so every node comes after its parents.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

/// How the second operand of a binary op lines up with the first.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `b` is repeated along the leading dimension of `a`.
    RhsRows,
    /// `a` is repeated along the leading dimension of `b`.
    LhsRows,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    if a == b {
        Ok(Bcast::Same)
    } else if a.len() == b.len() + 1 && a[1..] == *b {
        Ok(Bcast::RhsRows)
    } else if b.len() == a.len() + 1 && b[1..] == *a {
        Ok(Bcast::LhsRows)
    } else {
        Err(TensorError::Shape {
            op,
            expected: shape_str(a),
            got: shape_str(b),
        })
    }
}

fn binary_map(a: &Tensor, b: &Tensor, mode: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (shape, data) = match mode {
        Bcast::Same => (
            a.shape.clone(),
            a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
        ),
        Bcast::RhsRows => {
            let n = b.data.len();
            (
                a.shape.clone(),
                a.data
                    .iter()
                    .enumerate()
                    .map(|(i, x)| f(*x, b.data[i % n]))
                    .collect(),
            )
        }
        Bcast::LhsRows => {
            let n = a.data.len();
            (
                b.shape.clone(),
                b.data
                    .iter()
                    .enumerate()
                    .map(|(i, y)| f(a.data[i % n], *y))
                    .collect(),
            )
        }
    };
    Tensor { shape, data }
}

/// Sum a full-size gradient down to an operand of `len` values that was
/// repeated along the leading dimension.
fn reduce_rows(g: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, v) in g.iter().enumerate() {
        out[i % len] += v;
    }
    out
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape.last().unwrap_or(&1)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node_op(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        check_finite(op_name, &value.data)?;
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// Register an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((r, s), (s2, c)) = match (av.dims2(), bv.dims2()) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(TensorError::Shape {
                    op: "matmul",
                    expected: "two rank-2 operands".into(),
                    got: format!("{} and {}", shape_str(&av.shape), shape_str(&bv.shape)),
                })
            }
        };
        if s != s2 {
            return Err(TensorError::Shape {
                op: "matmul",
                expected: format!("inner dimension {s}"),
                got: format!("{s2}"),
            });
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for p in 0..s {
                let x = av.data[i * s + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv.data[p * c..(p + 1) * c];
                let orow = &mut out[i * c..(i + 1) * c];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor {
            shape: vec![r, c],
            data: out,
        };
        self.node_op("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn matvec_value(&self, op: &'static str, w: Var, x: Var) -> Result<Vec<f64>> {
        let (wv, xv) = (self.value(w), self.value(x));
        let (r, c) = wv.dims2().ok_or_else(|| TensorError::Shape {
            op,
            expected: "rank-2 weight".into(),
            got: shape_str(&wv.shape),
        })?;
        if xv.shape != [c] {
            return Err(TensorError::Shape {
                op,
                expected: format!("[{c}]"),
                got: shape_str(&xv.shape),
            });
        }
        Ok((0..r)
            .map(|i| {
                wv.data[i * c..(i + 1) * c]
                    .iter()
                    .zip(&xv.data)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    /// `w · x` for `w: [r×c]`, `x: [c]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = self.matvec_value("matvec", w, x)?;
        let value = Tensor::vector(out);
        self.node_op("matvec", value, Op::MatVec(w, x), &[w, x])
    }

    /// `w · x + b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let mut out = self.matvec_value("linear", w, x)?;
        let bv = self.value(b);
        if bv.shape != [out.len()] {
            return Err(TensorError::Shape {
                op: "linear",
                expected: format!("bias [{}]", out.len()),
                got: shape_str(&bv.shape),
            });
        }
        for (o, bi) in out.iter_mut().zip(&bv.data) {
            *o += bi;
        }
        let value = Tensor::vector(out);
        self.node_op("linear", value, Op::Linear(w, x, b), &[w, x, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2().ok_or_else(|| TensorError::Shape {
            op: "transpose",
            expected: "rank-2 operand".into(),
            got: shape_str(&av.shape),
        })?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data[i * c + j];
            }
        }
        let value = Tensor {
            shape: vec![c, r],
            data: out,
        };
        self.node_op("transpose", value, Op::Transpose(a), &[a])
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = broadcast("add", &self.value(a).shape, &self.value(b).shape)?;
        let value = binary_map(self.value(a), self.value(b), mode, |x, y| x + y);
        self.node_op("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = broadcast("sub", &self.value(a).shape, &self.value(b).shape)?;
        let value = binary_map(self.value(a), self.value(b), mode, |x, y| x - y);
        self.node_op("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = broadcast("mul", &self.value(a).shape, &self.value(b).shape)?;
        let value = binary_map(self.value(a), self.value(b), mode, |x, y| x * y);
        self.node_op("mul", value, Op::Mul(a, b), &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let av = self.value(a);
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|x| f(*x)).collect(),
        };
        self.node_op(name, value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + s)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data.iter().find(|x| **x <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = last_dim(av);
        let mut data = av.data.clone();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        self.node_op("softmax", value, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = last_dim(av);
        let mut data = av.data.clone();
        for row in data.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        self.node_op("log_softmax", value, Op::LogSoftmax(a), &[a])
    }

    // ---- reductions and structure --------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        self.node_op("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Flattening concatenation into a 1-D vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat of zero tensors".into()));
        }
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.value(*p).data.iter().cloned())
            .collect();
        let value = Tensor::vector(data);
        self.node_op("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    /// `len` consecutive values of the flattened input, as a 1-D vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if len == 0 || start + len > av.data.len() {
            return Err(TensorError::Shape {
                op: "slice",
                expected: format!("range within {} values", av.data.len()),
                got: format!("{start}..{}", start + len),
            });
        }
        let value = Tensor::vector(av.data[start..start + len].to_vec());
        self.node_op("slice", value, Op::Slice(a, start), &[a])
    }

    /// One element of the flattened input, as a scalar.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let av = self.value(a);
        if index >= av.data.len() {
            return Err(TensorError::Shape {
                op: "select",
                expected: format!("index < {}", av.data.len()),
                got: index.to_string(),
            });
        }
        let value = Tensor::scalar(av.data[index]);
        self.node_op("select", value, Op::Select(a, index), &[a])
    }

    /// Stack equally shaped 1-D vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| TensorError::Contract("stack of zero tensors".into()))?;
        let width = self.value(*first).shape.clone();
        if width.len() != 1 {
            return Err(TensorError::Shape {
                op: "stack",
                expected: "1-D rows".into(),
                got: shape_str(&width),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * width[0]);
        for r in rows {
            let rv = self.value(*r);
            if rv.shape != width {
                return Err(TensorError::Shape {
                    op: "stack",
                    expected: shape_str(&width),
                    got: shape_str(&rv.shape),
                });
            }
            data.extend_from_slice(&rv.data);
        }
        let value = Tensor {
            shape: vec![rows.len(), width[0]],
            data,
        };
        self.node_op("stack", value, Op::Stack(rows.to_vec()), rows)
    }

    // ---- fused densities -----------------------------------------------

    fn check_same(&self, op: &'static str, vars: &[Var]) -> Result<()> {
        let s = &self.value(vars[0]).shape;
        for v in &vars[1..] {
            if self.value(*v).shape != *s {
                return Err(TensorError::Shape {
                    op,
                    expected: shape_str(s),
                    got: shape_str(&self.value(*v).shape),
                });
            }
        }
        Ok(())
    }

    /// KL(N(mean_q, exp(logvar_q)) ‖ N(mean_p, exp(logvar_p))) for diagonal
    /// Gaussians, summed over dimensions.
    pub fn kl_diag_gaussian(&mut self, mean_q: Var, logvar_q: Var, mean_p: Var, logvar_p: Var) -> Result<Var> {
        self.check_same("kl_diag_gaussian", &[mean_q, logvar_q, mean_p, logvar_p])?;
        let (mq, lq, mp, lp) = (
            &self.value(mean_q).data,
            &self.value(logvar_q).data,
            &self.value(mean_p).data,
            &self.value(logvar_p).data,
        );
        let mut kl = 0.0;
        for d in 0..mq.len() {
            let diff = mq[d] - mp[d];
            kl += 0.5 * ((lq[d] - lp[d]).exp() + diff * diff * (-lp[d]).exp() - 1.0 + lp[d] - lq[d]);
        }
        let op = Op::KlDiag {
            mean_q,
            logvar_q,
            mean_p,
            logvar_p,
        };
        self.node_op("kl_diag_gaussian", Tensor::scalar(kl), op, &[mean_q, logvar_q, mean_p, logvar_p])
    }

    /// Σ_d log N(x_d; mean_d, exp(logvar_d)).
    pub fn gaussian_log_pdf(&mut self, x: Var, mean: Var, logvar: Var) -> Result<Var> {
        self.check_same("gaussian_log_pdf", &[x, mean, logvar])?;
        let (xv, mv, lv) = (&self.value(x).data, &self.value(mean).data, &self.value(logvar).data);
        let mut ll = 0.0;
        for d in 0..xv.len() {
            let diff = xv[d] - mv[d];
            ll -= 0.5 * (LN_2PI + lv[d] + diff * diff * (-lv[d]).exp());
        }
        let op = Op::GaussLogPdf { x, mean, logvar };
        self.node_op("gaussian_log_pdf", Tensor::scalar(ll), op, &[x, mean, logvar])
    }

    // ---- reverse pass --------------------------------------------------

    /// Accumulate ∂loss/∂leaf into every reachable `requires_grad` leaf.
    /// Repeated calls add onto existing leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value.data;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (r, s) = av.dims2().unwrap();
                let c = bv.shape[1];
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; r * s];
                    for i in 0..r {
                        for p in 0..s {
                            da[i * s + p] = (0..c).map(|j| g[i * c + j] * bv.data[p * c + j]).sum();
                        }
                    }
                    send(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; s * c];
                    for i in 0..r {
                        for p in 0..s {
                            let x = av.data[i * s + p];
                            for j in 0..c {
                                db[p * c + j] += x * g[i * c + j];
                            }
                        }
                    }
                    send(*b, db);
                }
            }
            Op::MatVec(w, x) | Op::Linear(w, x, _) => {
                let (wv, xv) = (val(*w), val(*x));
                let (r, c) = wv.dims2().unwrap();
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; r * c];
                    for i in 0..r {
                        let gi = g[i];
                        for (d, xj) in dw[i * c..(i + 1) * c].iter_mut().zip(&xv.data) {
                            *d = gi * xj;
                        }
                    }
                    send(*w, dw);
                }
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; c];
                    for i in 0..r {
                        let gi = g[i];
                        for (d, wij) in dx.iter_mut().zip(&wv.data[i * c..(i + 1) * c]) {
                            *d += gi * wij;
                        }
                    }
                    send(*x, dx);
                }
                if let Op::Linear(_, _, b) = &node.op {
                    send(*b, g.to_vec());
                }
            }
            Op::Transpose(a) => {
                let (r, c) = val(*a).dims2().unwrap();
                // g is [c×r]
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                send(*a, da);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (la, lb) = (val(*a).len(), val(*b).len());
                let ga = if la == g.len() { g.to_vec() } else { reduce_rows(g, la) };
                let mut gb = if lb == g.len() { g.to_vec() } else { reduce_rows(g, lb) };
                if sign < 0.0 {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (la, lb) = (av.len(), bv.len());
                if self.nodes[a.0].requires_grad {
                    let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * bv.data[i % lb]).collect();
                    send(*a, if la == g.len() { full } else { reduce_rows(&full, la) });
                }
                if self.nodes[b.0].requires_grad {
                    let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * av.data[i % la]).collect();
                    send(*b, if lb == g.len() { full } else { reduce_rows(&full, lb) });
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::Exp(a) => send(*a, g.iter().zip(out).map(|(gi, o)| gi * o).collect()),
            Op::Log(a) => send(*a, g.iter().zip(&val(*a).data).map(|(gi, x)| gi / x).collect()),
            Op::Tanh(a) => send(*a, g.iter().zip(out).map(|(gi, o)| gi * (1.0 - o * o)).collect()),
            Op::Sigmoid(a) => send(*a, g.iter().zip(out).map(|(gi, o)| gi * o * (1.0 - o)).collect()),
            Op::Clamp(a, lo, hi) => send(
                *a,
                g.iter()
                    .zip(&val(*a).data)
                    .map(|(gi, x)| if *x >= *lo && *x <= *hi { *gi } else { 0.0 })
                    .collect(),
            ),
            Op::Softmax(a) => {
                let n = last_dim(&node.value);
                let mut da = vec![0.0; g.len()];
                for ((drow, grow), orow) in da.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: f64 = grow.iter().zip(orow).map(|(x, y)| x * y).sum();
                    for ((d, gi), o) in drow.iter_mut().zip(grow).zip(orow) {
                        *d = o * (gi - dot);
                    }
                }
                send(*a, da);
            }
            Op::LogSoftmax(a) => {
                let n = last_dim(&node.value);
                let mut da = vec![0.0; g.len()];
                for ((drow, grow), orow) in da.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let gsum: f64 = grow.iter().sum();
                    for ((d, gi), o) in drow.iter_mut().zip(grow).zip(orow) {
                        *d = gi - o.exp() * gsum;
                    }
                }
                send(*a, da);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    send(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                let mut da = vec![0.0; val(*a).len()];
                da[*start..*start + g.len()].copy_from_slice(g);
                send(*a, da);
            }
            Op::Select(a, index) => {
                let mut da = vec![0.0; val(*a).len()];
                da[*index] = g[0];
                send(*a, da);
            }
            Op::KlDiag {
                mean_q,
                logvar_q,
                mean_p,
                logvar_p,
            } => {
                let (mq, lq, mp, lp) = (
                    &val(*mean_q).data,
                    &val(*logvar_q).data,
                    &val(*mean_p).data,
                    &val(*logvar_p).data,
                );
                let g0 = g[0];
                let d = mq.len();
                let (mut dmq, mut dlq, mut dmp, mut dlp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                for k in 0..d {
                    let diff = mq[k] - mp[k];
                    let inv_p = (-lp[k]).exp();
                    let ratio = (lq[k] - lp[k]).exp();
                    dmq[k] = g0 * diff * inv_p;
                    dmp[k] = -dmq[k];
                    dlq[k] = g0 * 0.5 * (ratio - 1.0);
                    dlp[k] = g0 * 0.5 * (1.0 - ratio - diff * diff * inv_p);
                }
                send(*mean_q, dmq);
                send(*logvar_q, dlq);
                send(*mean_p, dmp);
                send(*logvar_p, dlp);
            }
            Op::GaussLogPdf { x, mean, logvar } => {
                let (xv, mv, lv) = (&val(*x).data, &val(*mean).data, &val(*logvar).data);
                let g0 = g[0];
                let d = xv.len();
                let (mut dx, mut dm, mut dl) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                for k in 0..d {
                    let diff = xv[k] - mv[k];
                    let prec = (-lv[k]).exp();
                    dx[k] = -g0 * diff * prec;
                    dm[k] = -dx[k];
                    dl[k] = g0 * 0.5 * (diff * diff * prec - 1.0);
                }
                send(*x, dx);
                send(*mean, dm);
                send(*logvar, dl);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let col = t.constant(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap());
        let out = t.matmul(i2, col).unwrap();
        assert_eq!(t.value(out).data(), &[2.0, 3.0]);

        let row = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let col = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let out = t.matmul(row, col).unwrap();
        assert_eq!(t.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let mut expected = [0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for p in 0..4 {
                    expected[i * 2 + j] += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
            }
        }
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a), t.constant(b));
        let out = t.matmul(av, bv).unwrap();
        for (x, y) in t.value(out).data().iter().zip(expected) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn sigmoid_and_softmax_values() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0.0]));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);
        let z3 = t.constant(Tensor::vector(vec![0.0; 3]));
        let sm = t.softmax(z3).unwrap();
        for v in t.value(sm).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let sm = t.softmax(z).unwrap();
        assert_eq!(t.value(sm).data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(z), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn nonfinite_forward_is_an_error() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![800.0]));
        assert!(matches!(t.exp(z), Err(TensorError::NonFinite { op: "exp" })));
    }

    #[test]
    fn tanh_gradient_matches_finite_difference() {
        let x = Tensor::vector(vec![0.7]);
        let err = finite_diff_check(
            |t, v| {
                let y = t.tanh(v)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 3]), true);
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_square_sum_and_accumulation() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[4.0, 8.0, 12.0]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let y = t.scale(x, 2.0).unwrap();
        assert!(matches!(t.backward(y), Err(TensorError::Contract(_))));
    }

    #[test]
    fn leading_dim_broadcast_add_and_grad() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), true);
        let b = t.leaf(Tensor::vector(vec![10.0, 20.0, 30.0]), true);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let m = t.mul(c, b).unwrap();
        let s = t.sum(m).unwrap();
        t.backward(s).unwrap();
        // d/da = b broadcast, d/db = sum_rows(c) + sum_rows(b) = sum_rows(a) + 4 b
        assert_eq!(t.grad(a).unwrap().data(), &[10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[45.0, 87.0, 129.0]);
        let bad = t.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.add(a, bad).is_err());
    }

    #[test]
    fn linearity_of_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_tensor(&mut rng, &[5]);
        let grad_of = |w_f: f64, w_g: f64| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone(), true);
            let f = {
                let e = t.tanh(x).unwrap();
                t.sum(e).unwrap()
            };
            let gq = {
                let s = t.sigmoid(x).unwrap();
                let sq = t.mul(s, x).unwrap();
                t.sum(sq).unwrap()
            };
            let a = t.scale(f, w_f).unwrap();
            let b = t.scale(gq, w_g).unwrap();
            let l = t.add(a, b).unwrap();
            t.backward(l).unwrap();
            t.grad(x).unwrap().into_data()
        };
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let combo = grad_of(2.5, -1.5);
        for i in 0..5 {
            assert!((combo[i] - (2.5 * gf[i] - 1.5 * gg[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn every_op_passes_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tol = 1e-4;
        for trial in 0..5 {
            let v = rand_tensor(&mut rng, &[6]);
            let w = rand_tensor(&mut rng, &[3, 6]);
            let b = rand_tensor(&mut rng, &[3]);
            let m = rand_tensor(&mut rng, &[2, 3]);
            let pos = Tensor::vector(v.data().iter().map(|x| x.abs() + 0.5).collect());
            let checks: Vec<(&str, Box<dyn Fn(&mut Tape, Var) -> Result<Var>>, Tensor)> = vec![
                ("exp", Box::new(|t, x| { let y = t.exp(x)?; t.sum(y) }), v.clone()),
                ("log", Box::new(|t, x| { let y = t.log(x)?; t.sum(y) }), pos.clone()),
                ("sigmoid", Box::new(|t, x| { let y = t.sigmoid(x)?; let y = t.mul(y, x)?; t.sum(y) }), v.clone()),
                (
                    "softmax",
                    Box::new(|t, x| {
                        let y = t.softmax(x)?;
                        let c = t.constant(Tensor::vector((0..6).map(|i| i as f64).collect()));
                        let y = t.mul(y, c)?;
                        t.sum(y)
                    }),
                    v.clone(),
                ),
                (
                    "log_softmax",
                    Box::new(|t, x| { let y = t.log_softmax(x)?; t.select(y, 2) }),
                    v.clone(),
                ),
                (
                    "linear",
                    {
                        let (w, b) = (w.clone(), b.clone());
                        Box::new(move |t, x| {
                            let wv = t.constant(w.clone());
                            let bv = t.constant(b.clone());
                            let y = t.linear(wv, x, bv)?;
                            let y = t.tanh(y)?;
                            t.sum(y)
                        })
                    },
                    v.clone(),
                ),
                (
                    "linear-weight",
                    {
                        let (v, b) = (v.clone(), b.clone());
                        Box::new(move |t, wv| {
                            let x = t.constant(v.clone());
                            let bv = t.constant(b.clone());
                            let y = t.linear(wv, x, bv)?;
                            let y = t.mul(y, y)?;
                            t.sum(y)
                        })
                    },
                    w.clone(),
                ),
                (
                    "matmul-transpose",
                    {
                        let m = m.clone();
                        Box::new(move |t, wv| {
                            let mv = t.constant(m.clone());
                            let y = t.matmul(mv, wv)?;
                            let y = t.transpose(y)?;
                            let y = t.sigmoid(y)?;
                            t.sum(y)
                        })
                    },
                    w.clone(),
                ),
                (
                    "stack-slice-concat",
                    Box::new(|t, x| {
                        let a = t.slice(x, 0, 3)?;
                        let b = t.slice(x, 3, 3)?;
                        let s = t.stack(&[b, a])?;
                        let s = t.tanh(s)?;
                        let c = t.concat(&[s, a])?;
                        let c = t.mul(c, c)?;
                        t.sum(c)
                    }),
                    v.clone(),
                ),
                (
                    "kl",
                    Box::new(|t, x| {
                        let mq = t.slice(x, 0, 3)?;
                        let lq = t.slice(x, 3, 3)?;
                        let mp = t.scale(lq, 0.3)?;
                        let lp = t.tanh(mq)?;
                        t.kl_diag_gaussian(mq, lq, mp, lp)
                    }),
                    v.clone(),
                ),
                (
                    "logpdf",
                    Box::new(|t, x| {
                        let m = t.slice(x, 0, 3)?;
                        let l = t.slice(x, 3, 3)?;
                        let obs = t.tanh(l)?;
                        t.gaussian_log_pdf(obs, m, l)
                    }),
                    v.clone(),
                ),
            ];
            for (name, f, x) in checks {
                let err = finite_diff_check(|t, x| f(t, x), &x, 1e-6).unwrap();
                assert!(err <= tol, "{name} trial {trial}: rel err {err}");
            }
        }
    }

    #[test]
    fn identical_inputs_are_bit_identical() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::vector(vec![0.3, -1.2, 0.9]), true);
            let y = t.softmax(x).unwrap();
            let y = t.tanh(y).unwrap();
            let s = t.sum(y).unwrap();
            t.value(s).item().unwrap().to_bits()
        };
        assert_eq!(run(), run());
    }
}
