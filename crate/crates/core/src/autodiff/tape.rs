use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise functions with a known derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu {
        slope: f64,
    },
    Elu {
        alpha: f64,
    },
    Sigmoid,
    Tanh,
    /// `max(0, x)`.
    Max0,
    Ln,
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `scale * x + shift`.
    Affine {
        scale: f64,
        shift: f64,
    },
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Max0 => x.max(0.0),
            Unary::Ln => x.ln(),
            Unary::Clamp { lo, hi } => x.clamp(lo, hi),
            Unary::Affine { scale, shift } => scale * x + shift,
        }
    }

    /// Derivative given the input `x` and output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    y + alpha
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Max0 => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Ln => 1.0 / x,
            Unary::Clamp { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Affine { scale, .. } => scale,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGradient,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    OuterSum(Var, Var),
    RowNormalize {
        x: Var,
        denom: Vec<f64>,
        fallback: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
    GatherRows {
        table: Var,
        groups: Vec<Vec<usize>>,
    },
    GatherEntries {
        x: Var,
        positions: Vec<(usize, usize)>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// What `stop_gradient` does with the values flowing through it.
#[derive(Debug, Default)]
enum Frozen {
    #[default]
    Off,
    Capture(Vec<Tensor>),
    Replay {
        values: Vec<Tensor>,
        cursor: usize,
    },
}

/// Reverse-mode recording of dense matrix operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` only has to walk it in reverse.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    stop_gradient_enabled: bool,
    frozen: Frozen,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            stop_gradient_enabled: true,
            frozen: Frozen::Off,
        }
    }

    /// A tape whose `stop_gradient` nodes return `values` in order instead of
    /// their live inputs. Used by finite-difference checks: a perturbed pass
    /// sees the detached quantities of the unperturbed pass, which is exactly
    /// the function the analytic gradient differentiates.
    pub fn replaying(values: Vec<Tensor>) -> Self {
        Tape {
            frozen: Frozen::Replay { values, cursor: 0 },
            ..Self::new()
        }
    }

    /// Start recording every value that passes through `stop_gradient`.
    pub fn capture_stop_gradients(&mut self) {
        self.frozen = Frozen::Capture(Vec::new());
    }

    pub fn take_captured(&mut self) -> Vec<Tensor> {
        match std::mem::take(&mut self.frozen) {
            Frozen::Capture(v) => v,
            other => {
                self.frozen = other;
                Vec::new()
            }
        }
    }

    /// Debug switch: when disabled, `stop_gradient` is the identity including
    /// its derivative.
    pub fn set_stop_gradient_enabled(&mut self, enabled: bool) {
        self.stop_gradient_enabled = enabled;
    }

    pub fn stop_gradient_enabled(&self) -> bool {
        self.stop_gradient_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Accumulated gradient, if `backward` reached this node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Accumulated gradient, or zeros of the right shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Forward value is `x`; the derivative with respect to `x` is zero.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        if !self.stop_gradient_enabled {
            return x;
        }
        let value = match &mut self.frozen {
            Frozen::Off => self.nodes[x.0].value.clone(),
            Frozen::Capture(store) => {
                let v = self.nodes[x.0].value.clone();
                store.push(v.clone());
                v
            }
            Frozen::Replay { values, cursor } => {
                let v = values
                    .get(*cursor)
                    .cloned()
                    .unwrap_or_else(|| self.nodes[x.0].value.clone());
                *cursor += 1;
                v
            }
        };
        self.push(value, false, Op::StopGradient)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, f)
        } else if vb.is_scalar() {
            let s = vb.item();
            va.map(|x| f(x, s))
        } else if va.is_scalar() {
            let s = va.item();
            vb.map(|y| f(s, y))
        } else {
            return Err(Error::Shape {
                op: name,
                left: va.shape(),
                right: vb.shape(),
            });
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Binary(kind, a, b)))
    }

    /// Elementwise sum; same shapes or one side `1 x 1`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn unary(&mut self, f: Unary, x: Var) -> Var {
        let value = self.value(x).map(|v| f.apply(v));
        let rg = self.needs(x);
        self.push(value, rg, Op::Unary(f, x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu { slope }, x)
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(Unary::Elu { alpha }, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn max0(&mut self, x: Var) -> Var {
        self.unary(Unary::Max0, x)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Unary::Ln, x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(Unary::Clamp { lo, hi }, x)
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(Unary::Affine { scale, shift }, x)
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n x 1) and `b` (m x 1).
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != 1 || vb.cols() != 1 {
            return Err(Error::Shape {
                op: "outer_sum",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let value = Tensor::from_fn(va.rows(), vb.rows(), |i, j| va[(i, 0)] + vb[(j, 0)]);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::OuterSum(a, b)))
    }

    /// Divide each row by its sum plus `eps`. A row whose sum has magnitude
    /// below `eps` becomes uniform `1/cols` and passes no gradient.
    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let mut value = Tensor::zeros(rows, cols);
        let mut denom = Vec::with_capacity(rows);
        let mut fallback = Vec::with_capacity(rows);
        for i in 0..rows {
            let raw = vx.row(i).iter().sum::<f64>();
            let degenerate = raw.abs() < eps;
            let s = raw + eps;
            for j in 0..cols {
                value[(i, j)] = if degenerate {
                    1.0 / cols as f64
                } else {
                    vx[(i, j)] / s
                };
            }
            denom.push(s);
            fallback.push(degenerate);
        }
        let rg = self.needs(x);
        self.push(value, rg, Op::RowNormalize { x, denom, fallback })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.needs(x);
        self.push(value, rg, Op::Mean(x))
    }

    /// Sum a non-empty list of same-shape values.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::contract("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Row `r` of the output is the mean of `table` rows listed in `groups[r]`.
    /// With singleton groups this is a plain embedding lookup.
    pub fn gather_rows(&mut self, table: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let vt = self.value(table);
        if groups.is_empty() {
            return Err(Error::contract("gather_rows needs at least one group"));
        }
        let mut value = Tensor::zeros(groups.len(), vt.cols());
        for (r, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::contract(format!("gather_rows: group {r} is empty")));
            }
            let w = 1.0 / group.len() as f64;
            for &t in group {
                if t >= vt.rows() {
                    return Err(Error::contract(format!(
                        "gather_rows: row {t} outside table of {} rows",
                        vt.rows()
                    )));
                }
                for j in 0..vt.cols() {
                    value[(r, j)] += w * vt[(t, j)];
                }
            }
        }
        let rg = self.needs(table);
        Ok(self.push(value, rg, Op::GatherRows { table, groups }))
    }

    /// Column vector of the entries of `x` at `positions`.
    pub fn gather_entries(&mut self, x: Var, positions: Vec<(usize, usize)>) -> Result<Var> {
        let vx = self.value(x);
        if positions.is_empty() {
            return Err(Error::contract(
                "gather_entries needs at least one position",
            ));
        }
        let mut vals = Vec::with_capacity(positions.len());
        for &(i, j) in &positions {
            if i >= vx.rows() || j >= vx.cols() {
                return Err(Error::contract(format!(
                    "gather_entries: ({i}, {j}) outside {:?}",
                    vx.shape()
                )));
            }
            vals.push(vx[(i, j)]);
        }
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::column(&vals),
            rg,
            Op::GatherEntries { x, positions },
        ))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if len == 0 || start + len > vx.rows() {
            return Err(Error::contract(format!(
                "slice_rows {start}..{} of {:?}",
                start + len,
                vx.shape()
            )));
        }
        let value = Tensor::from_fn(len, vx.cols(), |i, j| vx[(start + i, j)]);
        let rg = self.needs(x);
        Ok(self.push(value, rg, Op::SliceRows { x, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let rg = self.needs(x);
        self.push(value, rg, Op::Transpose(x))
    }

    /// Accumulate `d root / d node` into every node that requires a gradient.
    /// Calling it again without [`Tape::zero_grad`] adds to the stored buffers.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            local[root.0] = Some(Tensor::scalar(1.0));
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = local[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.pullback(node, &g);
            for (input, delta) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut local[input.0] {
                    Some(acc) => acc.add_assign(&delta),
                    slot => *slot = Some(delta),
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products for one node.
    fn pullback(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::StopGradient => Vec::new(),
            Op::MatMul(a, b) => {
                let da = g.matmul(&val(*b).transpose()).expect("shapes checked");
                let db = val(*a).transpose().matmul(g).expect("shapes checked");
                vec![(*a, da), (*b, db)]
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (mut da, mut db) = match kind {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.scale(-1.0)),
                    Binary::Mul => (broadcast_mul(g, vb), broadcast_mul(g, va)),
                };
                if va.shape() != g.shape() {
                    da = Tensor::scalar(da.sum());
                }
                if vb.shape() != g.shape() {
                    db = Tensor::scalar(db.sum());
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Unary(f, x) => {
                let vx = val(*x);
                let y = &node.value;
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(vx.data()).zip(y.data()) {
                    *d *= f.derivative(xi, yi);
                }
                vec![(*x, dx)]
            }
            Op::OuterSum(a, b) => {
                let (n, m) = g.shape();
                let da = Tensor::from_fn(n, 1, |i, _| g.row(i).iter().sum());
                let db = Tensor::from_fn(m, 1, |j, _| (0..n).map(|i| g[(i, j)]).sum());
                vec![(*a, da), (*b, db)]
            }
            Op::RowNormalize { x, denom, fallback } => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut dx = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    if fallback[i] {
                        continue;
                    }
                    let gy: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for k in 0..cols {
                        dx[(i, k)] = (g[(i, k)] - gy) / denom[i];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, Tensor::filled(r, c, g.item()))]
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, Tensor::filled(r, c, g.item() / (r * c) as f64))]
            }
            Op::GatherRows { table, groups } => {
                let (r, c) = val(*table).shape();
                let mut dt = Tensor::zeros(r, c);
                for (row, group) in groups.iter().enumerate() {
                    let w = 1.0 / group.len() as f64;
                    for &t in group {
                        for j in 0..c {
                            dt[(t, j)] += w * g[(row, j)];
                        }
                    }
                }
                vec![(*table, dt)]
            }
            Op::GatherEntries { x, positions } => {
                let (r, c) = val(*x).shape();
                let mut dx = Tensor::zeros(r, c);
                for (q, &(i, j)) in positions.iter().enumerate() {
                    dx[(i, j)] += g[(q, 0)];
                }
                vec![(*x, dx)]
            }
            Op::SliceRows { x, start } => {
                let (r, c) = val(*x).shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..g.rows() {
                    for j in 0..c {
                        dx[(start + i, j)] = g[(i, j)];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Transpose(x) => vec![(*x, g.transpose())],
        }
    }
}

fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    if other.shape() == g.shape() {
        g.zip_map(other, |a, b| a * b)
    } else {
        g.scale(other.item())
    }
}
