use crate::kernels::{self, ConvGeometry};
use crate::tape::{Node, NodeId, Op};
use crate::{EngineError, Real, Result, Tape, Tensor, Var};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(EngineError::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    /// 2-D cross-correlation. `weight` may be any node, including filters
    /// synthesized by upstream operations.
    pub fn conv2d(&self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let nodes = self.nodes.borrow();
        let x = &nodes[input.node_id().0].value;
        let w = &nodes[weight.node_id().0].value;
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(EngineError::shape(OP, format!("input {xs:?} and weight {ws:?} must both be 4-D")));
        }
        let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        if ws[1] != c_in {
            return Err(EngineError::shape(
                OP,
                format!("weight expects {} input channels, input has {c_in} (input {xs:?}, weight {ws:?})", ws[1]),
            ));
        }
        if stride == 0 {
            return Err(EngineError::contract(OP, "stride must be at least 1"));
        }
        if kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(EngineError::shape(
                OP,
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, wd + 2 * pad),
            ));
        }
        if let Some(b) = bias {
            let bs = nodes[b.node_id().0].value.shape();
            if bs != [c_out] {
                return Err(EngineError::shape(OP, format!("bias {bs:?} does not match {c_out} output channels")));
            }
        }
        let geom = ConvGeometry {
            c_in,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (wd + 2 * pad - kw) / stride + 1,
        };
        let (k, p) = (geom.patch_len(), geom.out_len());
        let mut out = vec![T::zero(); n * c_out * p];
        let mut cols = vec![T::zero(); k * p];
        let img_len = c_in * h * wd;
        for s in 0..n {
            kernels::im2col(&geom, &x.data()[s * img_len..(s + 1) * img_len], &mut cols);
            let dst = &mut out[s * c_out * p..(s + 1) * c_out * p];
            kernels::gemm_nn(c_out, k, p, w.data(), &cols, dst);
            if let Some(b) = bias {
                let bv = nodes[b.node_id().0].value.data();
                for (co, plane) in dst.chunks_exact_mut(p).enumerate() {
                    for v in plane {
                        *v = *v + bv[co];
                    }
                }
            }
        }
        let value = Tensor::new([n, c_out, geom.out_h, geom.out_w], out)?;
        drop(nodes);
        let op = Op::Conv2d { input: input.node_id(), weight: weight.node_id(), bias: bias.map(|b| b.node_id()), geom };
        Ok(self.record(value, op))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.node_id().0].value, &nodes[b.node_id().0].value);
        let (s_a, s_b) = (av.shape(), bv.shape());
        if s_a.len() != 2 || s_b.len() != 2 || s_a[1] != s_b[0] {
            return Err(EngineError::shape("matmul", format!("cannot multiply {s_a:?} by {s_b:?}")));
        }
        let (m, k, n) = (s_a[0], s_a[1], s_b[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, av.data(), bv.data(), &mut out);
        let value = Tensor::new([m, n], out)?;
        drop(nodes);
        Ok(self.record(value, Op::Matmul { a: a.node_id(), b: b.node_id() }))
    }

    /// `x·w + b` for `x [N,F]`, `w [F,O]`, `b [O]`; the bias is added to every row.
    pub fn affine(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let nodes = self.nodes.borrow();
        let (xv, wv, bv) = (&nodes[x.node_id().0].value, &nodes[w.node_id().0].value, &nodes[b.node_id().0].value);
        let (xs, ws, bs) = (xv.shape(), wv.shape(), bv.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(EngineError::shape("affine", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, f, o) = (xs[0], xs[1], ws[1]);
        let mut out: Vec<T> = bv.data().repeat(n);
        kernels::gemm_nn(n, f, o, xv.data(), wv.data(), &mut out);
        let value = Tensor::new([n, o], out)?;
        drop(nodes);
        Ok(self.record(value, Op::Affine { x: x.node_id(), w: w.node_id(), b: b.node_id() }))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        self.check(logits)?;
        let nodes = self.nodes.borrow();
        let lv = &nodes[logits.node_id().0].value;
        let s = lv.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(EngineError::shape(OP, format!("logits {s:?} with {} labels", labels.len())));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(EngineError::contract(OP, format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for (i, row) in lv.data().chunks_exact(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs[i * c..(i + 1) * c];
            let mut z = T::zero();
            for (pv, &l) in p.iter_mut().zip(row) {
                *pv = (l - max).exp();
                z = z + *pv;
            }
            for pv in p.iter_mut() {
                *pv = *pv / z;
            }
            total = total + (z.ln() - (row[labels[i]] - max));
        }
        let loss = total / T::from_usize(n).unwrap();
        drop(nodes);
        let op = Op::SoftmaxCrossEntropy { logits: logits.node_id(), labels: labels.to_vec(), probs };
        Ok(self.record(Tensor::scalar(loss), op))
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.node_id().0].value, &nodes[b.node_id().0].value);
        same_shape(name, av.shape(), bv.shape())?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.record(v, Op::Add { a: a.node_id(), b: b.node_id() }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.record(v, Op::Sub { a: a.node_id(), b: b.node_id() }))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.record(v, Op::Mul { a: a.node_id(), b: b.node_id() }))
    }

    /// Multiplies by a constant.
    pub fn scale(&self, x: Var, factor: f64) -> Result<Var> {
        let factor = T::from_f64_lossy(factor);
        let v = self.value(x)?.map(|e| e * factor);
        Ok(self.record(v, Op::Scale { x: x.node_id(), factor }))
    }

    /// Scalar node times tensor node; the only broadcasting the engine allows.
    pub fn scalar_mul(&self, s: Var, x: Var) -> Result<Var> {
        let sv = self.value(s)?;
        if !sv.is_scalar() {
            return Err(EngineError::shape("scalar_mul", format!("left operand {:?} is not a scalar", sv.shape())));
        }
        let k = sv.item();
        drop(sv);
        let v = self.value(x)?.map(|e| k * e);
        Ok(self.record(v, Op::ScalarMul { s: s.node_id(), x: x.node_id() }))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let v = self.value(x)?.map(|e| if e > T::zero() { e } else { T::zero() });
        Ok(self.record(v, Op::Relu { x: x.node_id() }))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let xv = self.value(x)?;
        let m = xv.sum_all() / T::from_usize(xv.numel()).unwrap();
        drop(xv);
        Ok(self.record(Tensor::scalar(m), Op::Mean { x: x.node_id() }))
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.value(x)?.sum_all();
        Ok(self.record(Tensor::scalar(s), Op::Sum { x: x.node_id() }))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value_of(x)?.reshaped(shape.to_vec())?;
        Ok(self.record(v, Op::Reshape { x: x.node_id() }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let first = *inputs.first().ok_or_else(|| EngineError::contract(OP, "no inputs"))?;
        for &v in inputs {
            self.check(v)?;
        }
        let nodes = self.nodes.borrow();
        let base = nodes[first.node_id().0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(EngineError::shape(OP, format!("axis {axis} out of range for {base:?}")));
        }
        let mut extent = 0;
        for &v in inputs {
            let s = nodes[v.node_id().0].value.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(EngineError::shape(OP, format!("{s:?} incompatible with {base:?} along axis {axis}")));
            }
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = &nodes[v.node_id().0].value;
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, out)?;
        drop(nodes);
        Ok(self.record(value, Op::Concat { inputs: inputs.iter().map(|v| v.node_id()).collect(), axis }))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x)?;
        let s = xv.shape().to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(EngineError::shape("slice", format!("range {start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, ext, inner) = axis_split(&s, axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * ext * inner;
            out.extend_from_slice(&xv.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        drop(xv);
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::Slice { x: x.node_id(), axis, start }))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xv = self.value(x)?;
        let s = xv.shape().to_vec();
        if s.len() != 4 {
            return Err(EngineError::shape("global_avg_pool", format!("expected 4-D input, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out = xv.data().chunks_exact(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        drop(xv);
        let value = Tensor::new([s[0], s[1]], out)?;
        Ok(self.record(value, Op::GlobalAvgPool { x: x.node_id() }))
    }
}

fn accumulate<T: Real>(nodes: &[Node<T>], slots: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
    if !nodes[id.0].requires_grad {
        return Ok(());
    }
    match &mut slots[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn slot_mut<'a, T: Real>(nodes: &[Node<T>], slots: &'a mut [Option<Tensor<T>>], id: NodeId) -> &'a mut Tensor<T> {
    slots[id.0].get_or_insert_with(|| Tensor::zeros(nodes[id.0].value.shape().to_vec()))
}

pub(crate) fn backward_node<T: Real>(
    nodes: &[Node<T>],
    id: usize,
    grad: &Tensor<T>,
    slots: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let needs = |n: NodeId| nodes[n.0].requires_grad;
    let val = |n: NodeId| &nodes[n.0].value;
    let g = grad.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Conv2d { input, weight, bias, geom } => {
            let x = val(*input);
            let w = val(*weight);
            let n = x.shape()[0];
            let c_out = w.shape()[0];
            let (k, p) = (geom.patch_len(), geom.out_len());
            let img_len = geom.c_in * geom.h * geom.w;
            let mut dw = needs(*weight).then(|| vec![T::zero(); c_out * k]);
            let mut dx = needs(*input).then(|| vec![T::zero(); x.numel()]);
            if dw.is_some() || dx.is_some() {
                let mut cols = vec![T::zero(); k * p];
                let mut dcols = vec![T::zero(); k * p];
                for s in 0..n {
                    let g_s = &g[s * c_out * p..(s + 1) * c_out * p];
                    if let Some(dw) = dw.as_mut() {
                        kernels::im2col(geom, &x.data()[s * img_len..(s + 1) * img_len], &mut cols);
                        kernels::gemm_nt(c_out, p, k, g_s, &cols, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        kernels::gemm_tn_set(k, c_out, p, w.data(), g_s, &mut dcols);
                        kernels::col2im(geom, &dcols, &mut dx[s * img_len..(s + 1) * img_len]);
                    }
                }
            }
            if let Some(dw) = dw {
                accumulate(nodes, slots, *weight, Tensor::new(w.shape().to_vec(), dw)?)?;
            }
            if let Some(dx) = dx {
                accumulate(nodes, slots, *input, Tensor::new(x.shape().to_vec(), dx)?)?;
            }
            if let Some(b) = bias.filter(|b| needs(*b)) {
                let mut db = vec![T::zero(); c_out];
                for (i, plane) in g.chunks_exact(p).enumerate() {
                    db[i % c_out] = db[i % c_out] + plane.iter().copied().sum::<T>();
                }
                accumulate(nodes, slots, b, Tensor::new([c_out], db)?)?;
            }
        }
        Op::Matmul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if needs(*a) {
                let mut da = vec![T::zero(); m * k];
                kernels::gemm_nt(m, n, k, g, bv.data(), &mut da);
                accumulate(nodes, slots, *a, Tensor::new([m, k], da)?)?;
            }
            if needs(*b) {
                let mut db = vec![T::zero(); k * n];
                kernels::gemm_tn(k, m, n, av.data(), g, &mut db);
                accumulate(nodes, slots, *b, Tensor::new([k, n], db)?)?;
            }
        }
        Op::Affine { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, f, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
            if needs(*x) {
                let mut dx = vec![T::zero(); n * f];
                kernels::gemm_nt(n, o, f, g, wv.data(), &mut dx);
                accumulate(nodes, slots, *x, Tensor::new([n, f], dx)?)?;
            }
            if needs(*w) {
                let mut dw = vec![T::zero(); f * o];
                kernels::gemm_tn(f, n, o, xv.data(), g, &mut dw);
                accumulate(nodes, slots, *w, Tensor::new([f, o], dw)?)?;
            }
            if needs(*b) {
                let mut db = vec![T::zero(); o];
                for row in g.chunks_exact(o) {
                    kernels::axpy(T::one(), row, &mut db);
                }
                accumulate(nodes, slots, *b, Tensor::new([o], db)?)?;
            }
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs } => {
            if needs(*logits) {
                let shape = val(*logits).shape().to_vec();
                let c = shape[1];
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] = d[i * c + l] - T::one();
                }
                for v in d.iter_mut() {
                    *v = *v * scale;
                }
                accumulate(nodes, slots, *logits, Tensor::new(shape, d)?)?;
            }
        }
        Op::Add { a, b } => {
            accumulate(nodes, slots, *a, grad.clone())?;
            accumulate(nodes, slots, *b, grad.clone())?;
        }
        Op::Sub { a, b } => {
            accumulate(nodes, slots, *a, grad.clone())?;
            if needs(*b) {
                accumulate(nodes, slots, *b, grad.map(|v| -v))?;
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let d = g.iter().zip(bv.data()).map(|(&gv, &y)| gv * y).collect();
                accumulate(nodes, slots, *a, Tensor::new(av.shape().to_vec(), d)?)?;
            }
            if needs(*b) {
                let d = g.iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                accumulate(nodes, slots, *b, Tensor::new(bv.shape().to_vec(), d)?)?;
            }
        }
        Op::Scale { x, factor } => {
            if needs(*x) {
                accumulate(nodes, slots, *x, grad.map(|v| v * *factor))?;
            }
        }
        Op::ScalarMul { s, x } => {
            let (sv, xv) = (val(*s), val(*x));
            if needs(*s) {
                let d: T = g.iter().zip(xv.data()).map(|(&gv, &e)| gv * e).sum();
                accumulate(nodes, slots, *s, Tensor::new(sv.shape().to_vec(), vec![d])?)?;
            }
            if needs(*x) {
                let k = sv.item();
                accumulate(nodes, slots, *x, grad.map(|v| v * k))?;
            }
        }
        Op::Relu { x } => {
            if needs(*x) {
                let xv = val(*x);
                let d = g
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &e)| if e > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(nodes, slots, *x, Tensor::new(xv.shape().to_vec(), d)?)?;
            }
        }
        Op::Mean { x } => {
            if needs(*x) {
                let xv = val(*x);
                let v = g[0] / T::from_usize(xv.numel()).unwrap();
                accumulate(nodes, slots, *x, Tensor::full(xv.shape().to_vec(), v))?;
            }
        }
        Op::Sum { x } => {
            if needs(*x) {
                accumulate(nodes, slots, *x, Tensor::full(val(*x).shape().to_vec(), g[0]))?;
            }
        }
        Op::Reshape { x } => {
            if needs(*x) {
                accumulate(nodes, slots, *x, grad.clone().reshaped(val(*x).shape().to_vec())?)?;
            }
        }
        Op::Concat { inputs, axis } => {
            let out_shape = grad.shape();
            let (outer, ext, inner) = axis_split(out_shape, *axis);
            let mut offset = 0;
            for &input in inputs {
                let s = val(input).shape().to_vec();
                let width = s[*axis];
                if needs(input) {
                    let mut d = Vec::with_capacity(outer * width * inner);
                    for o in 0..outer {
                        let base = (o * ext + offset) * inner;
                        d.extend_from_slice(&g[base..base + width * inner]);
                    }
                    accumulate(nodes, slots, input, Tensor::new(s, d)?)?;
                }
                offset += width;
            }
        }
        Op::Slice { x, axis, start } => {
            if needs(*x) {
                let in_shape = val(*x).shape().to_vec();
                let (outer, ext, inner) = axis_split(&in_shape, *axis);
                let width = grad.shape()[*axis];
                let acc = slot_mut(nodes, slots, *x).data_mut();
                for o in 0..outer {
                    let dst = &mut acc[(o * ext + start) * inner..(o * ext + start + width) * inner];
                    kernels::axpy(T::one(), &g[o * width * inner..(o + 1) * width * inner], dst);
                }
            }
        }
        Op::GlobalAvgPool { x } => {
            if needs(*x) {
                let xv = val(*x);
                let s = xv.shape();
                let hw = s[2] * s[3];
                let inv = T::one() / T::from_usize(hw).unwrap();
                let mut d = Vec::with_capacity(xv.numel());
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv * inv, hw));
                }
                accumulate(nodes, slots, *x, Tensor::new(s.to_vec(), d)?)?;
            }
        }
        Op::Custom { inputs, op } => {
            let values: Vec<&Tensor<T>> = inputs.iter().map(|&i| val(i)).collect();
            let grads = op.backward(&values, &nodes[id].value, grad);
            if grads.len() != inputs.len() {
                return Err(EngineError::contract(
                    "custom",
                    format!("{} returned {} gradients for {} inputs", op.name(), grads.len(), inputs.len()),
                ));
            }
            for (&input, gi) in inputs.iter().zip(grads) {
                if let Some(gi) = gi {
                    if gi.shape() != val(input).shape() {
                        return Err(EngineError::shape(
                            "custom",
                            format!("{} gradient {:?} for input {:?}", op.name(), gi.shape(), val(input).shape()),
                        ));
                    }
                    accumulate(nodes, slots, input, gi)?;
                }
            }
        }
    }
    Ok(())
}
