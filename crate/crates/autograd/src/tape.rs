use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::kernels::{self, ConvGeom, DeformTaps};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Clamp01(usize),
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    DeformConv2d { x: usize, offsets: usize, w: usize, b: Option<usize>, kernel: usize },
    PixelShuffle { x: usize, r: usize },
    Reshape(usize),
    Concat(Vec<usize>),
    Slice { x: usize, start: usize },
    Linear { x: usize, w: usize, b: Option<usize> },
    SpatialMean(usize),
    ChannelScale { x: usize, s: usize },
    SpatialScale { x: usize, m: usize },
    ChannelDot(usize, usize),
    Tile { v: usize },
    Sum(usize),
    Mean(usize),
    L1Mean { x: usize, target: Rc<Tensor> },
    SquaredDistance { x: usize, target: Rc<Tensor> },
    NegLog { x: usize, eps: f64, complement: bool },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation so that [`Tape::backward`] can replay it in reverse.
///
/// Every forward pass builds a fresh tape; values live as long as the tape.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, x: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.requires(x);
        self.push(value, op, rg)
    }

    fn nary(&self, parents: &[usize], value: Tensor, op: Op) -> Var<'_> {
        let rg = parents.iter().any(|&p| self.requires(p));
        self.push(value, op, rg)
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape().to_vec(), 1.0));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &*nodes[i].value;
    let need = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if need(*a) {
                accumulate(grads, *a, g.clone());
            }
            if need(*b) {
                accumulate(grads, *b, g.clone());
            }
        }
        Op::Sub(a, b) => {
            if need(*a) {
                accumulate(grads, *a, g.clone());
            }
            if need(*b) {
                accumulate(grads, *b, g.map(|v| -v));
            }
        }
        Op::Mul(a, b) => {
            if need(*a) {
                accumulate(grads, *a, g.zip_map(val(*b), |g, y| g * y));
            }
            if need(*b) {
                accumulate(grads, *b, g.zip_map(val(*a), |g, x| g * x));
            }
        }
        Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
        Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
        Op::Relu(a) => accumulate(grads, *a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
        Op::LeakyRelu(a, slope) => {
            accumulate(grads, *a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * slope }))
        }
        Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |g, y| g * y * (1.0 - y))),
        Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |g, y| g * (1.0 - y * y))),
        Op::Clamp01(a) => accumulate(
            grads,
            *a,
            g.zip_map(val(*a), |g, x| if (0.0..=1.0).contains(&x) { g } else { 0.0 }),
        ),
        Op::Conv2d { x, w, b, geom } => {
            let wt = val(*w);
            let out_ch = wt.shape()[0];
            let cg = kernels::conv2d_backward(
                val(*x).data(),
                wt.data(),
                g.data(),
                out_ch,
                *geom,
                (need(*x), need(*w), b.is_some_and(need)),
            );
            if let Some(dx) = cg.dx {
                accumulate(grads, *x, Tensor::new(val(*x).shape().to_vec(), dx));
            }
            if let Some(dw) = cg.dw {
                accumulate(grads, *w, Tensor::new(wt.shape().to_vec(), dw));
            }
            if let (Some(b), Some(db)) = (b, cg.db) {
                accumulate(grads, *b, Tensor::new(vec![out_ch], db));
            }
        }
        Op::DeformConv2d { x, offsets, w, b, kernel } => {
            let xv = val(*x);
            let (c, h, wd) = xv.dims3();
            let wt = val(*w);
            let out_ch = wt.shape()[0];
            let plane = h * wd;
            let ckk = c * kernel * kernel;
            let taps = DeformTaps::new(val(*offsets).data(), h, wd, *kernel);
            if need(*w) {
                let cols = taps.columns(xv.data(), c);
                let mut dw = vec![0.0; out_ch * ckk];
                kernels::gemm(out_ch, plane, ckk, g.data(), false, &cols, true, &mut dw, 0.0);
                accumulate(grads, *w, Tensor::new(wt.shape().to_vec(), dw));
            }
            if let Some(b) = b.filter(|b| need(*b)) {
                let db = (0..out_ch).map(|o| g.data()[o * plane..(o + 1) * plane].iter().sum()).collect();
                accumulate(grads, b, Tensor::new(vec![out_ch], db));
            }
            if need(*x) || need(*offsets) {
                let mut dcols = vec![0.0; ckk * plane];
                kernels::gemm(ckk, out_ch, plane, wt.data(), true, g.data(), false, &mut dcols, 0.0);
                if need(*x) {
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), taps.input_grad(&dcols, c)));
                }
                if need(*offsets) {
                    let doff = taps.offset_grad(xv.data(), &dcols, c);
                    accumulate(grads, *offsets, Tensor::new(val(*offsets).shape().to_vec(), doff));
                }
            }
        }
        Op::PixelShuffle { x, r } => {
            let (c, h, w) = val(*x).dims3();
            let d = kernels::pixel_unshuffle(g.data(), c / (r * r), h, w, *r);
            accumulate(grads, *x, Tensor::new(vec![c, h, w], d));
        }
        Op::Reshape(a) => accumulate(grads, *a, g.clone().reshape(val(*a).shape().to_vec())),
        Op::Concat(parts) => {
            let mut start = 0;
            for &p in parts {
                let n = val(p).len();
                if need(p) {
                    let piece = g.data()[start..start + n].to_vec();
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), piece));
                }
                start += n;
            }
        }
        Op::Slice { x, start } => {
            let xv = val(*x);
            let inner: usize = xv.shape()[1..].iter().product();
            let mut d = Tensor::zeros(xv.shape().to_vec());
            d.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
            accumulate(grads, *x, d);
        }
        Op::Linear { x, w, b } => {
            let wt = val(*w);
            let (m, n) = (wt.shape()[0], wt.shape()[1]);
            if need(*x) {
                let mut dx = vec![0.0; n];
                kernels::gemm(1, m, n, g.data(), false, wt.data(), false, &mut dx, 0.0);
                accumulate(grads, *x, Tensor::new(vec![n], dx));
            }
            if need(*w) {
                let mut dw = vec![0.0; m * n];
                kernels::gemm(m, 1, n, g.data(), false, val(*x).data(), false, &mut dw, 0.0);
                accumulate(grads, *w, Tensor::new(vec![m, n], dw));
            }
            if let Some(b) = b.filter(|b| need(*b)) {
                accumulate(grads, b, g.clone());
            }
        }
        Op::SpatialMean(a) => {
            let (c, h, w) = val(*a).dims3();
            let plane = h * w;
            let inv = 1.0 / plane as f64;
            let d = Tensor::from_fn(vec![c, h, w], |i| g.data()[i / plane] * inv);
            accumulate(grads, *a, d);
        }
        Op::ChannelScale { x, s } => {
            let xv = val(*x);
            let sv = val(*s);
            let (c, h, w) = xv.dims3();
            let plane = h * w;
            if need(*x) {
                let d = Tensor::from_fn(vec![c, h, w], |i| g.data()[i] * sv.data()[i / plane]);
                accumulate(grads, *x, d);
            }
            if need(*s) {
                let d = (0..c)
                    .map(|ch| {
                        g.channel(ch).iter().zip(xv.channel(ch)).map(|(a, b)| a * b).sum()
                    })
                    .collect();
                accumulate(grads, *s, Tensor::new(vec![c], d));
            }
        }
        Op::SpatialScale { x, m } => {
            let xv = val(*x);
            let mv = val(*m);
            let (c, h, w) = xv.dims3();
            let plane = h * w;
            if need(*x) {
                let d = Tensor::from_fn(vec![c, h, w], |i| g.data()[i] * mv.data()[i % plane]);
                accumulate(grads, *x, d);
            }
            if need(*m) {
                let mut d = vec![0.0; plane];
                for ch in 0..c {
                    for (p, (gv, xv)) in g.channel(ch).iter().zip(xv.channel(ch)).enumerate() {
                        d[p] += gv * xv;
                    }
                }
                accumulate(grads, *m, Tensor::new(vec![h, w], d));
            }
        }
        Op::ChannelDot(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (c, h, w) = av.dims3();
            let plane = h * w;
            if need(*a) {
                let d = Tensor::from_fn(vec![c, h, w], |i| g.data()[i % plane] * bv.data()[i]);
                accumulate(grads, *a, d);
            }
            if need(*b) {
                let d = Tensor::from_fn(vec![c, h, w], |i| g.data()[i % plane] * av.data()[i]);
                accumulate(grads, *b, d);
            }
        }
        Op::Tile { v } => {
            let (c, h, w) = out.dims3();
            let d = (0..c).map(|ch| g.data()[ch * h * w..(ch + 1) * h * w].iter().sum()).collect();
            accumulate(grads, *v, Tensor::new(vec![c], d));
        }
        Op::Sum(a) => {
            let s = g.item();
            accumulate(grads, *a, Tensor::full(val(*a).shape().to_vec(), s));
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            let s = g.item() / n;
            accumulate(grads, *a, Tensor::full(val(*a).shape().to_vec(), s));
        }
        Op::L1Mean { x, target } => {
            let n = val(*x).len() as f64;
            let s = g.item() / n;
            let d = val(*x).zip_map(target, |a, t| {
                let diff = a - t;
                if diff > 0.0 {
                    s
                } else if diff < 0.0 {
                    -s
                } else {
                    0.0
                }
            });
            accumulate(grads, *x, d);
        }
        Op::SquaredDistance { x, target } => {
            let s = g.item();
            accumulate(grads, *x, val(*x).zip_map(target, |a, t| 2.0 * s * (a - t)));
        }
        Op::NegLog { x, eps, complement } => {
            let eps = *eps;
            let d = g.zip_map(val(*x), |g, p| {
                let q = if *complement { 1.0 - p } else { p };
                if q <= eps {
                    0.0
                } else if *complement {
                    g / q
                } else {
                    -g / q
                }
            });
            accumulate(grads, *x, d);
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// Logistic function kept strictly inside `(0, 1)` even where it saturates.
fn sigmoid(v: f64) -> f64 {
    let y = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Var<'t> {
        let v = self.value();
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node { value: v, op: Op::Leaf, requires_grad: false });
        Var { tape: self.tape, id: nodes.len() - 1 }
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn add(self, o: Var<'t>) -> Var<'t> {
        self.same_tape(&o);
        let v = self.value().zip_map(&o.value(), |a, b| a + b);
        self.tape.nary(&[self.id, o.id], v, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Var<'t>) -> Var<'t> {
        self.same_tape(&o);
        let v = self.value().zip_map(&o.value(), |a, b| a - b);
        self.tape.nary(&[self.id, o.id], v, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Var<'t>) -> Var<'t> {
        self.same_tape(&o);
        let v = self.value().zip_map(&o.value(), |a, b| a * b);
        self.tape.nary(&[self.id, o.id], v, Op::Mul(self.id, o.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().map(|a| a * s);
        self.tape.unary(self.id, v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let v = self.value().map(|a| a + s);
        self.tape.unary(self.id, v, Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|a| a.max(0.0));
        self.tape.unary(self.id, v, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|a| if a > 0.0 { a } else { a * slope });
        self.tape.unary(self.id, v, Op::LeakyRelu(self.id, slope))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.tape.unary(self.id, v, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.tape.unary(self.id, v, Op::Tanh(self.id))
    }

    /// Clamp to `[0, 1]`; gradient passes only where the input was inside.
    pub fn clamp01(self) -> Var<'t> {
        let v = self.value().map(|a| a.clamp(0.0, 1.0));
        self.tape.unary(self.id, v, Op::Clamp01(self.id))
    }

    /// 2-D convolution of a `(C, H, W)` input with `(O, C, k, k)` weights.
    pub fn conv2d(self, w: Var<'t>, b: Option<Var<'t>>, stride: usize, pad: usize) -> Var<'t> {
        let x = self.value();
        let wv = w.value();
        let (c, h, wd) = x.dims3();
        let ws = wv.shape();
        assert!(ws.len() == 4 && ws[1] == c && ws[2] == ws[3], "conv weight {ws:?} vs input {:?}", x.shape());
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: ws[2], stride, pad };
        let out_ch = ws[0];
        let bv = b.map(|b| b.value());
        if let Some(bv) = &bv {
            assert_eq!(bv.shape(), [out_ch], "conv bias shape");
        }
        let y = kernels::conv2d_forward(x.data(), wv.data(), bv.as_ref().map(|b| b.data()), out_ch, geom);
        let shape = vec![out_ch, geom.out_height(), geom.out_width()];
        let mut parents = vec![self.id, w.id];
        parents.extend(b.map(|b| b.id));
        self.tape.nary(
            &parents,
            Tensor::new(shape, y),
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
        )
    }

    /// Stride-1 "same" deformable convolution with bilinear tap sampling.
    pub fn deform_conv2d(self, offsets: Var<'t>, w: Var<'t>, b: Option<Var<'t>>) -> Var<'t> {
        let x = self.value();
        let wv = w.value();
        let (c, h, wd) = x.dims3();
        let ws = wv.shape();
        let kernel = ws[2];
        assert!(ws.len() == 4 && ws[1] == c && ws[2] == ws[3] && kernel % 2 == 1, "deform weight {ws:?}");
        assert_eq!(offsets.shape(), vec![2 * kernel * kernel, h, wd], "offset shape");
        let out_ch = ws[0];
        let taps = DeformTaps::new(offsets.value().data(), h, wd, kernel);
        let cols = taps.columns(x.data(), c);
        let mut y = vec![0.0; out_ch * h * wd];
        kernels::gemm(out_ch, c * kernel * kernel, h * wd, wv.data(), false, &cols, false, &mut y, 0.0);
        if let Some(b) = b {
            let bv = b.value();
            for (o, bo) in bv.data().iter().enumerate() {
                y[o * h * wd..(o + 1) * h * wd].iter_mut().for_each(|v| *v += bo);
            }
        }
        let mut parents = vec![self.id, offsets.id, w.id];
        parents.extend(b.map(|b| b.id));
        self.tape.nary(
            &parents,
            Tensor::new(vec![out_ch, h, wd], y),
            Op::DeformConv2d { x: self.id, offsets: offsets.id, w: w.id, b: b.map(|b| b.id), kernel },
        )
    }

    /// `(C·r², H, W) -> (C, H·r, W·r)`.
    pub fn pixel_shuffle(self, r: usize) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        assert_eq!(c % (r * r), 0, "pixel shuffle needs channels divisible by r²");
        let y = kernels::pixel_shuffle(x.data(), c, h, w, r);
        self.tape.unary(self.id, Tensor::new(vec![c / (r * r), h * r, w * r], y), Op::PixelShuffle { x: self.id, r })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshape(shape.to_vec());
        self.tape.unary(self.id, v, Op::Reshape(self.id))
    }

    /// Concatenation along the leading axis.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let inner = &values[0].shape()[1..];
        let mut lead = 0;
        let mut data = Vec::with_capacity(values.iter().map(|v| v.len()).sum());
        for v in &values {
            assert_eq!(&v.shape()[1..], inner, "concat trailing dims differ");
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(inner);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.nary(&ids, Tensor::new(shape, data), Op::Concat(ids.clone()))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(self, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        assert!(start + len <= x.shape()[0], "slice out of range");
        let inner: usize = x.shape()[1..].iter().product();
        let mut shape = x.shape().to_vec();
        shape[0] = len;
        let data = x.data()[start * inner..(start + len) * inner].to_vec();
        self.tape.unary(self.id, Tensor::new(shape, data), Op::Slice { x: self.id, start })
    }

    /// `w · x + b` for a vector `x: (n)` and `w: (m, n)`.
    pub fn linear(self, w: Var<'t>, b: Option<Var<'t>>) -> Var<'t> {
        let x = self.value();
        let wv = w.value();
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(x.shape(), [n], "linear input {:?} vs weight {:?}", x.shape(), wv.shape());
        let mut y = vec![0.0; m];
        kernels::gemm(m, n, 1, wv.data(), false, x.data(), false, &mut y, 0.0);
        if let Some(b) = b {
            y.iter_mut().zip(b.value().data()).for_each(|(v, bb)| *v += bb);
        }
        let mut parents = vec![self.id, w.id];
        parents.extend(b.map(|b| b.id));
        self.tape.nary(&parents, Tensor::new(vec![m], y), Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) })
    }

    /// Global average pool `(C, H, W) -> (C)`.
    pub fn spatial_mean(self) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        let d = (0..c).map(|ch| x.channel(ch).iter().sum::<f64>() / (h * w) as f64).collect();
        self.tape.unary(self.id, Tensor::new(vec![c], d), Op::SpatialMean(self.id))
    }

    /// Scales channel `c` of a `(C, H, W)` map by `s[c]`.
    pub fn channel_scale(self, s: Var<'t>) -> Var<'t> {
        let x = self.value();
        let sv = s.value();
        let (c, h, w) = x.dims3();
        assert_eq!(sv.shape(), [c], "channel scale length");
        let plane = h * w;
        let y = Tensor::from_fn(vec![c, h, w], |i| x.data()[i] * sv.data()[i / plane]);
        self.tape.nary(&[self.id, s.id], y, Op::ChannelScale { x: self.id, s: s.id })
    }

    /// Multiplies every channel of a `(C, H, W)` map by the `(H, W)` map `m`.
    pub fn spatial_scale(self, m: Var<'t>) -> Var<'t> {
        let x = self.value();
        let mv = m.value();
        let (c, h, w) = x.dims3();
        assert_eq!(mv.shape(), [h, w], "spatial scale shape");
        let plane = h * w;
        let y = Tensor::from_fn(vec![c, h, w], |i| x.data()[i] * mv.data()[i % plane]);
        self.tape.nary(&[self.id, m.id], y, Op::SpatialScale { x: self.id, m: m.id })
    }

    /// Per-position inner product over channels: `(C, H, W) × (C, H, W) -> (H, W)`.
    pub fn channel_dot(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "channel_dot shapes");
        let (c, h, w) = a.dims3();
        let mut d = vec![0.0; h * w];
        for ch in 0..c {
            for (p, (x, y)) in a.channel(ch).iter().zip(b.channel(ch)).enumerate() {
                d[p] += x * y;
            }
        }
        self.tape.nary(&[self.id, o.id], Tensor::new(vec![h, w], d), Op::ChannelDot(self.id, o.id))
    }

    /// Broadcasts a `(C)` vector to constant `(C, H, W)` planes.
    pub fn tile(self, h: usize, w: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.rank(), 1, "tile expects a vector");
        let plane = h * w;
        let y = Tensor::from_fn(vec![v.len(), h, w], |i| v.data()[i / plane]);
        self.tape.unary(self.id, y, Op::Tile { v: self.id })
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.unary(self.id, Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let s = v.sum() / v.len() as f64;
        self.tape.unary(self.id, Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Mean absolute difference to a fixed target.
    pub fn l1_mean(self, target: Rc<Tensor>) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.shape(), target.shape(), "l1 target shape");
        let s = v.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / v.len() as f64;
        self.tape.unary(self.id, Tensor::scalar(s), Op::L1Mean { x: self.id, target })
    }

    /// `Σ (x - target)²` against a fixed target.
    pub fn squared_distance(self, target: Rc<Tensor>) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.shape(), target.shape(), "target shape");
        let s = v.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        self.tape.unary(self.id, Tensor::scalar(s), Op::SquaredDistance { x: self.id, target })
    }

    /// Elementwise `-ln(max(x, eps))`.
    pub fn neg_log(self, eps: f64) -> Var<'t> {
        let v = self.value().map(|p| -p.max(eps).ln());
        self.tape.unary(self.id, v, Op::NegLog { x: self.id, eps, complement: false })
    }

    /// Elementwise `-ln(max(1 - x, eps))`.
    pub fn neg_log_complement(self, eps: f64) -> Var<'t> {
        let v = self.value().map(|p| -(1.0 - p).max(eps).ln());
        self.tape.unary(self.id, v, Op::NegLog { x: self.id, eps, complement: true })
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self::Output {
        Var::add(self, o)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self::Output {
        Var::sub(self, o)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self::Output {
        Var::mul(self, o)
    }
}
