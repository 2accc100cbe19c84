use super::{NdiffError, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Expr {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    SoftmaxRow(NodeId),
    Sum(NodeId),
    ConcatCols(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Clamp(NodeId, f64, f64),
}

struct Node {
    expr: Expr,
    value: Tensor,
}

/// Wengert list: forward ops append nodes in topological order, backward
/// replays them once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a tape after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Tensor>,
}

impl Gradients {
    /// Gradient of the backward output with respect to the given node.
    pub fn wrt(&self, id: NodeId) -> &Tensor {
        &self.adjoints[id.0]
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NdiffError {
    NdiffError::ShapeMismatch {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row_values(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for i in 0..t.rows() {
        let row = t.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let e = (x - max).exp();
            out.set(i, j, e);
            denom += e;
        }
        for j in 0..t.cols() {
            out.set(i, j, out.get(i, j) / denom);
        }
    }
    out
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, expr: Expr, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { expr, value });
        id
    }

    /// Insert an input node. Parameters and constants are both leaves; the
    /// caller decides which gradients it cares about.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Expr::Leaf, value)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err("add", va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(Expr::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err("sub", va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(Expr::Sub(a, b), value))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err("mul", va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(Expr::Mul(a, b), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let (n, k, m) = (va.rows(), va.cols(), vb.cols());
        let mut value = Tensor::zeros(n, m);
        for i in 0..n {
            for p in 0..k {
                let x = va.get(i, p);
                if x == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let v = value.get(i, j) + x * vb.get(p, j);
                    value.set(i, j, v);
                }
            }
        }
        Ok(self.push(Expr::MatMul(a, b), value))
    }

    /// Add a 1×C row vector to every row of an R×C matrix.
    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, NdiffError> {
        let (vm, vv) = (self.value(m), self.value(v));
        if vv.rows() != 1 || vv.cols() != vm.cols() {
            return Err(shape_err("add_row", vm, vv));
        }
        let mut value = vm.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                let x = value.get(i, j) + vv.get(0, j);
                value.set(i, j, x);
            }
        }
        Ok(self.push(Expr::AddRow(m, v), value))
    }

    /// Multiply every row of an R×C matrix elementwise by a 1×C row vector.
    pub fn mul_row(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, NdiffError> {
        let (vm, vv) = (self.value(m), self.value(v));
        if vv.rows() != 1 || vv.cols() != vm.cols() {
            return Err(shape_err("mul_row", vm, vv));
        }
        let mut value = vm.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                let x = value.get(i, j) * vv.get(0, j);
                value.set(i, j, x);
            }
        }
        Ok(self.push(Expr::MulRow(m, v), value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.push(Expr::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.tanh()).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.push(Expr::Tanh(a), value)
    }

    /// Natural log; the input must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, NdiffError> {
        let va = self.value(a);
        if let Some(&bad) = va.data().iter().find(|v| **v <= 0.0) {
            return Err(NdiffError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let data = va.data().iter().map(|&x| x.ln()).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(Expr::Log(a), value))
    }

    /// Row-wise softmax, stabilized by subtracting the row max.
    ///
    /// Entries stay strictly inside (0, 1) as long as the logit gap within a
    /// row is below ~36; beyond that the largest entry rounds to 1.0 in f64.
    pub fn softmax_row(&mut self, a: NodeId) -> NodeId {
        let value = softmax_row_values(self.value(a));
        self.push(Expr::SoftmaxRow(a), value)
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Expr::Sum(a), Tensor::scalar(total))
    }

    /// Concatenate two matrices with the same row count along columns.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(shape_err("concat_cols", va, vb));
        }
        let mut value = Tensor::zeros(va.rows(), va.cols() + vb.cols());
        for i in 0..va.rows() {
            for j in 0..va.cols() {
                value.set(i, j, va.get(i, j));
            }
            for j in 0..vb.cols() {
                value.set(i, va.cols() + j, vb.get(i, j));
            }
        }
        Ok(self.push(Expr::ConcatCols(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.push(Expr::Scale(a, factor), value)
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x + offset).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.push(Expr::AddScalar(a, offset), value)
    }

    /// Clamp into [lo, hi]. Gradient passes through strictly inside the
    /// interval and is zero where the value was clamped.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.push(Expr::Clamp(a, lo, hi), value)
    }

    /// Reverse pass from a scalar output. Visits nodes once, in reverse
    /// recording order, and returns an adjoint per node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, NdiffError> {
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(NdiffError::NonScalarOutput {
                rows: out_value.rows(),
                cols: out_value.cols(),
            });
        }
        let mut adjoints: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows(), n.value.cols()))
            .collect();
        adjoints[output.0].set(0, 0, 1.0);

        for idx in (0..=output.0).rev() {
            let grad = adjoints[idx].clone();
            match &self.nodes[idx].expr {
                Expr::Leaf => {}
                Expr::Add(a, b) => {
                    accumulate(&mut adjoints[a.0], grad.data());
                    accumulate(&mut adjoints[b.0], grad.data());
                }
                Expr::Sub(a, b) => {
                    accumulate(&mut adjoints[a.0], grad.data());
                    for (acc, g) in adjoints[b.0].data_mut().iter_mut().zip(grad.data()) {
                        *acc -= g;
                    }
                }
                Expr::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                    for ((acc, g), y) in
                        adjoints[a.0].data_mut().iter_mut().zip(grad.data()).zip(vb.data())
                    {
                        *acc += g * y;
                    }
                    for ((acc, g), x) in
                        adjoints[b.0].data_mut().iter_mut().zip(grad.data()).zip(va.data())
                    {
                        *acc += g * x;
                    }
                }
                Expr::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = matmul_plain(&grad, &vb.transposed());
                    let db = matmul_plain(&va.transposed(), &grad);
                    accumulate(&mut adjoints[a.0], da.data());
                    accumulate(&mut adjoints[b.0], db.data());
                }
                Expr::AddRow(m, v) => {
                    accumulate(&mut adjoints[m.0], grad.data());
                    let dv = adjoints[v.0].data_mut();
                    for i in 0..grad.rows() {
                        for (j, slot) in dv.iter_mut().enumerate() {
                            *slot += grad.get(i, j);
                        }
                    }
                }
                Expr::MulRow(m, v) => {
                    let (vm, vv) = (self.value(*m).clone(), self.value(*v).clone());
                    {
                        let dm = adjoints[m.0].data_mut();
                        for i in 0..grad.rows() {
                            for j in 0..grad.cols() {
                                dm[i * grad.cols() + j] += grad.get(i, j) * vv.get(0, j);
                            }
                        }
                    }
                    let dv = adjoints[v.0].data_mut();
                    for i in 0..grad.rows() {
                        for (j, slot) in dv.iter_mut().enumerate() {
                            *slot += grad.get(i, j) * vm.get(i, j);
                        }
                    }
                }
                Expr::Sigmoid(a) => {
                    let y = self.nodes[idx].value.clone();
                    for ((acc, g), &s) in
                        adjoints[a.0].data_mut().iter_mut().zip(grad.data()).zip(y.data())
                    {
                        *acc += g * s * (1.0 - s);
                    }
                }
                Expr::Tanh(a) => {
                    let y = self.nodes[idx].value.clone();
                    for ((acc, g), &t) in
                        adjoints[a.0].data_mut().iter_mut().zip(grad.data()).zip(y.data())
                    {
                        *acc += g * (1.0 - t * t);
                    }
                }
                Expr::Log(a) => {
                    let va = self.value(*a).clone();
                    for ((acc, g), &x) in
                        adjoints[a.0].data_mut().iter_mut().zip(grad.data()).zip(va.data())
                    {
                        *acc += g / x;
                    }
                }
                Expr::SoftmaxRow(a) => {
                    // dx_j = y_j * (g_j - sum_k g_k y_k), per row
                    let y = self.nodes[idx].value.clone();
                    let da = adjoints[a.0].data_mut();
                    for i in 0..y.rows() {
                        let dot: f64 = (0..y.cols()).map(|k| grad.get(i, k) * y.get(i, k)).sum();
                        for j in 0..y.cols() {
                            da[i * y.cols() + j] += y.get(i, j) * (grad.get(i, j) - dot);
                        }
                    }
                }
                Expr::Sum(a) => {
                    let g = grad.get(0, 0);
                    for acc in adjoints[a.0].data_mut() {
                        *acc += g;
                    }
                }
                Expr::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    {
                        let da = adjoints[a.0].data_mut();
                        for i in 0..grad.rows() {
                            for j in 0..ca {
                                da[i * ca + j] += grad.get(i, j);
                            }
                        }
                    }
                    let db = adjoints[b.0].data_mut();
                    for i in 0..grad.rows() {
                        for j in 0..cb {
                            db[i * cb + j] += grad.get(i, ca + j);
                        }
                    }
                }
                Expr::Scale(a, factor) => {
                    let f = *factor;
                    for (acc, g) in adjoints[a.0].data_mut().iter_mut().zip(grad.data()) {
                        *acc += g * f;
                    }
                }
                Expr::AddScalar(a, _) => {
                    accumulate(&mut adjoints[a.0], grad.data());
                }
                Expr::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let va = self.value(*a).clone();
                    for ((acc, g), &x) in
                        adjoints[a.0].data_mut().iter_mut().zip(grad.data()).zip(va.data())
                    {
                        if x > lo && x < hi {
                            *acc += g;
                        }
                    }
                }
            }
        }
        Ok(Gradients { adjoints })
    }
}

fn accumulate(target: &mut Tensor, values: &[f64]) {
    for (acc, v) in target.data_mut().iter_mut().zip(values) {
        *acc += v;
    }
}

fn matmul_plain(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.cols(), b.rows());
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        for p in 0..k {
            let x = a.get(i, p);
            if x == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = out.get(i, j) + x * b.get(p, j);
                out.set(i, j, v);
            }
        }
    }
    out
}
