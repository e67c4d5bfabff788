//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! bookkeeping to run its exact backward. [`Tape::backward`] sweeps the nodes in
//! reverse creation order, which is a reverse topological order because a node
//! can only reference nodes created before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::kernels::conv::{self, ConvGeom, ConvShape, DeconvShape, DepthwiseShape};
use crate::kernels::resample;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Controls whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, used while fitting.
    Train,
    /// Dropout is the identity.
    Deterministic,
    /// Dropout active at inference (Monte-Carlo dropout).
    MonteCarlo,
}

impl Mode {
    pub fn dropout_active(self) -> bool {
        !matches!(self, Mode::Deterministic)
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        shape: ConvShape,
    },
    Depthwise {
        x: Var,
        w: Var,
        shape: DepthwiseShape,
    },
    Deconv {
        x: Var,
        w: Var,
        b: Option<Var>,
        shape: DeconvShape,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        x: Var,
    },
    Prelu {
        x: Var,
        a: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Sum {
        x: Var,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Deconv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Depthwise { x, w, .. } => vec![*x, *w],
            Op::MaxPool { x, .. } | Op::Upsample { x } | Op::Dropout { x, .. } | Op::Sum { x } => {
                vec![*x]
            }
            Op::Prelu { x, a } => vec![*x, *a],
            Op::Add { a, b } | Op::Concat { a, b } => vec![*a, *b],
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    scope: u16,
}

/// Recording context for one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
    rng: ChaCha8Rng,
    scope: u16,
    check_finite: bool,
}

impl<T: Real> Tape<T> {
    /// `seed` drives the dropout masks drawn on this tape.
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            param_vars: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scope: 0,
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Toggle the per-op non-finite check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Label subsequently created nodes with `scope` (used for graph introspection).
    pub fn set_scope(&mut self, scope: u16) {
        self.scope = scope;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scope_of(&self, v: Var) -> u16 {
        self.nodes[v.0].scope
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.param_id(v).is_some()
    }

    pub fn param_id(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Accumulated gradient of a leaf or parameter node after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    /// All data edges `(producer, consumer)` recorded on the tape.
    pub fn edges(&self) -> Vec<(Var, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.op.inputs().into_iter().map(move |src| (src, Var(i))))
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var, TensorError> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            ref other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            scope: self.scope,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record an input tensor; `requires_grad` makes its gradient observable.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            scope: self.scope,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bring a parameter onto the tape (once per tape; later calls reuse the node).
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let slot = id.index();
        if self.param_vars.len() <= slot {
            self.param_vars.resize(slot + 1, None);
        }
        if let Some(v) = self.param_vars[slot] {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
            scope: self.scope,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[slot] = Some(v);
        v
    }

    /// Add the gradients accumulated on this tape into the parameters' `grad`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (slot, var) in self.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            if let Some(g) = self.grad(*var) {
                store.get_mut(ParamId::from_index(slot)).grad.add_assign(g);
            }
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var, TensorError> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(shape_err("conv2d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err("conv2d", format!("bias shape {:?}", self.value(b).shape())));
            }
        }
        let (ho, wo) = geom
            .out_size(h, wd, kh, kw)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded {h}x{wd}")))?;
        let shape = ConvShape {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
            geom,
        };
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &shape,
            out.data_mut(),
        );
        self.push(out, Op::Conv2d { x, w, b, shape }, "conv2d")
    }

    /// Per-channel spatial filter; `w` is `[c, 1, kh, kw]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var, TensorError> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (wc, one, kh, kw) = self.value(w).dims4()?;
        if wc != c || one != 1 {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("weight {:?} for {c} channels", self.value(w).shape()),
            ));
        }
        let (ho, wo) = geom
            .out_size(h, wd, kh, kw)
            .ok_or_else(|| shape_err("depthwise_conv2d", "kernel larger than padded input".into()))?;
        let shape = DepthwiseShape {
            n,
            c,
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
            geom,
        };
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        conv::depthwise_forward(self.value(x).data(), self.value(w).data(), &shape, out.data_mut());
        self.push(out, Op::Depthwise { x, w, shape }, "depthwise_conv2d")
    }

    /// 2x2 stride-2 transposed convolution; `w` is `[cin, cout, 2, 2]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (wcin, cout, kh, kw) = self.value(w).dims4()?;
        if wcin != cin || kh != 2 || kw != 2 {
            return Err(shape_err(
                "conv_transpose2d",
                format!("weight {:?} for {cin} input channels", self.value(w).shape()),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err("conv_transpose2d", "bias shape".into()));
            }
        }
        let shape = DeconvShape {
            n,
            cin,
            cout,
            h,
            w: wd,
        };
        let mut out = Tensor::zeros(&[n, cout, 2 * h, 2 * wd]);
        conv::deconv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &shape,
            out.data_mut(),
        );
        self.push(out, Op::Deconv { x, w, b, shape }, "conv_transpose2d")
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("maxpool2d", format!("odd spatial size {h}x{w}")));
        }
        let mut out = Tensor::zeros(&[n, c, h / 2, w / 2]);
        let argmax = resample::maxpool2_forward(self.value(x).data(), n * c, h, w, out.data_mut());
        self.push(out, Op::MaxPool { x, argmax }, "maxpool2d")
    }

    pub fn upsample_bilinear2x(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        resample::upsample2_forward(self.value(x).data(), n * c, h, w, out.data_mut());
        self.push(out, Op::Upsample { x }, "upsample_bilinear2x")
    }

    /// `x` for `x >= 0`, `a[c] * x` otherwise; `a` has one slope per channel.
    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(a).shape() != [c] {
            return Err(shape_err("prelu", format!("slope shape {:?} for {c} channels", self.value(a).shape())));
        }
        let plane = h * w;
        let slopes = self.value(a).data();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let s = slopes[i % c];
            for v in chunk {
                if *v < T::zero() {
                    *v = *v * s;
                }
            }
        }
        let _ = n;
        self.push(out, Op::Prelu { x, a }, "prelu")
    }

    /// Inverted dropout. Identity (no node recorded) when inactive or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !self.mode.dropout_active() || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if self.rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        self.push(out, Op::Dropout { x, mask }, "dropout")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b }, "add")
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err("concat_channels", format!("({n},{h},{w}) vs ({nb},{hb},{wb})")));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&self.value(b).data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, h, w], data)?;
        self.push(out, Op::Concat { a, b }, "concat_channels")
    }

    /// Mean squared error over all elements; scalar output.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mse_loss", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = T::from_f64(p.numel().max(1) as f64);
        let s: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        self.push(Tensor::scalar(s / n), Op::Mse { pred, target }, "mse_loss")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, "sum")
    }

    /// Reverse sweep from `loss`, seeding its gradient with ones. Gradients of
    /// leaves and parameters accumulate across calls.
    pub fn backward(&mut self, loss: Var) {
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize_with(self.nodes.len(), || None);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
                Op::Conv2d { x, w, b, shape } => {
                    let mut dx = needs(*x).then(|| Tensor::zeros(val(*x).shape()));
                    let mut dw = needs(*w).then(|| Tensor::zeros(val(*w).shape()));
                    let mut db = b.filter(|b| needs(*b)).map(|b| Tensor::zeros(val(b).shape()));
                    conv::conv2d_backward(
                        val(*x).data(),
                        val(*w).data(),
                        g.data(),
                        shape,
                        dx.as_mut().map(|t| t.data_mut()),
                        dw.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Depthwise { x, w, shape } => {
                    let mut dx = needs(*x).then(|| Tensor::zeros(val(*x).shape()));
                    let mut dw = needs(*w).then(|| Tensor::zeros(val(*w).shape()));
                    conv::depthwise_backward(
                        val(*x).data(),
                        val(*w).data(),
                        g.data(),
                        shape,
                        dx.as_mut().map(|t| t.data_mut()),
                        dw.as_mut().map(|t| t.data_mut()),
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::Deconv { x, w, b, shape } => {
                    let mut dx = needs(*x).then(|| Tensor::zeros(val(*x).shape()));
                    let mut dw = needs(*w).then(|| Tensor::zeros(val(*w).shape()));
                    let mut db = b.filter(|b| needs(*b)).map(|b| Tensor::zeros(val(b).shape()));
                    conv::deconv_backward(
                        val(*x).data(),
                        val(*w).data(),
                        g.data(),
                        shape,
                        dx.as_mut().map(|t| t.data_mut()),
                        dw.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(val(*x).shape());
                    resample::maxpool2_backward(g.data(), argmax, dx.data_mut());
                    accumulate(&mut grads, *x, Some(dx));
                }
                Op::Upsample { x } => {
                    let (n, c, h, w) = val(*x).dims4().expect("rank checked in forward");
                    let mut dx = Tensor::zeros(val(*x).shape());
                    resample::upsample2_backward(g.data(), n * c, h, w, dx.data_mut());
                    accumulate(&mut grads, *x, Some(dx));
                }
                Op::Prelu { x, a } => {
                    let (_, c, h, w) = val(*x).dims4().expect("rank checked in forward");
                    let plane = h * w;
                    let slopes = val(*a).data();
                    let xs = val(*x).data();
                    let mut dx = needs(*x).then(|| g.clone());
                    let mut da = needs(*a).then(|| Tensor::zeros(&[c]));
                    for (blk, (xc, gc)) in xs.chunks(plane).zip(g.data().chunks(plane)).enumerate() {
                        let ch = blk % c;
                        let mut acc = T::zero();
                        for (j, (&xv, &gv)) in xc.iter().zip(gc).enumerate() {
                            if xv < T::zero() {
                                acc = acc + xv * gv;
                                if let Some(dx) = dx.as_mut() {
                                    dx.data_mut()[blk * plane + j] = gv * slopes[ch];
                                }
                            }
                        }
                        if let Some(da) = da.as_mut() {
                            da.data_mut()[ch] = da.data()[ch] + acc;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *a, da);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *v = *v * m;
                    }
                    accumulate(&mut grads, *x, Some(dx));
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if needs(b) {
                        accumulate(&mut grads, b, Some(g.clone()));
                    }
                    accumulate(&mut grads, a, Some(g));
                }
                Op::Concat { a, b } => {
                    let (n, ca, h, w) = val(*a).dims4().expect("rank checked in forward");
                    let cb = val(*b).shape()[1];
                    let plane = h * w;
                    let mut da = Vec::with_capacity(n * ca * plane);
                    let mut db = Vec::with_capacity(n * cb * plane);
                    for img in g.data().chunks((ca + cb) * plane) {
                        da.extend_from_slice(&img[..ca * plane]);
                        db.extend_from_slice(&img[ca * plane..]);
                    }
                    let da = Tensor::from_vec(val(*a).shape(), da).expect("sizes match");
                    let db = Tensor::from_vec(val(*b).shape(), db).expect("sizes match");
                    accumulate(&mut grads, *a, Some(da));
                    accumulate(&mut grads, *b, Some(db));
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (val(*pred), val(*target));
                    let scale = T::from_f64(2.0) * g.data()[0] / T::from_f64(p.numel().max(1) as f64);
                    let diff: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * scale).collect();
                    let dp = Tensor::from_vec(p.shape(), diff).expect("same shape");
                    if needs(*target) {
                        accumulate(&mut grads, *target, Some(dp.map(|v| -v)));
                    }
                    accumulate(&mut grads, *pred, Some(dp));
                }
                Op::Sum { x } => {
                    let dx = Tensor::full(val(*x).shape(), g.data()[0]);
                    accumulate(&mut grads, *x, Some(dx));
                }
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Tensor<T>>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&shape, data).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new(Mode::Deterministic, 0);
        let x = tape.input(t4([1, 1, 2, 2], vec![1.0, -2.0, 3.0, 4.0]), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_twice_accumulates_double() {
        let mut tape = Tape::<f64>::new(Mode::Deterministic, 0);
        let x = tape.input(t4([1, 1, 1, 3], vec![1.0, 2.0, 3.0]), true);
        let z = tape.input(t4([1, 1, 1, 3], vec![0.0; 3]), false);
        let l = tape.mse_loss(x, z).unwrap();
        tape.backward(l);
        let once = tape.grad(x).unwrap().clone();
        tape.backward(l);
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::<f64>::new(Mode::Deterministic, 0);
        let a = tape.input(Tensor::scalar(0.0), false);
        let b = tape.input(Tensor::scalar(2.0), false);
        let l = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.value(l).data(), &[4.0]);
        let l = tape.mse_loss(a, a).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
    }

    #[test]
    fn concat_adds_channels() {
        let mut tape = Tape::<f32>::new(Mode::Deterministic, 0);
        let a = tape.input(Tensor::zeros(&[2, 3, 4, 4]), false);
        let b = tape.input(Tensor::zeros(&[2, 5, 4, 4]), false);
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 8, 4, 4]);
    }

    #[test]
    fn dropout_inactive_or_zero_is_identity() {
        let mut tape = Tape::<f32>::new(Mode::Deterministic, 1);
        let x = tape.input(Tensor::full(&[1, 1, 4, 4], 3.0), false);
        assert_eq!(tape.dropout(x, 0.5).unwrap(), x);
        let mut tape = Tape::<f32>::new(Mode::Train, 1);
        let x = tape.input(Tensor::full(&[1, 1, 4, 4], 3.0), false);
        assert_eq!(tape.dropout(x, 0.0).unwrap(), x);
        assert!(tape.dropout(x, 1.0).is_err());
    }

    #[test]
    fn prelu_passes_nonnegative_and_relu_at_zero_slope() {
        let mut tape = Tape::<f64>::new(Mode::Deterministic, 0);
        let x = tape.input(t4([1, 1, 1, 4], vec![0.0, 1.5, -2.0, 3.0]), false);
        let a = tape.input(Tensor::from_vec(&[1], vec![0.0]).unwrap(), false);
        let y = tape.prelu(x, a).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 1.5, 0.0, 3.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::<f32>::new(Mode::Deterministic, 0);
        let x = tape.input(Tensor::zeros(&[1, 3, 4, 4]), false);
        let w = tape.input(Tensor::zeros(&[2, 2, 1, 1]), false);
        assert!(matches!(
            tape.conv2d(x, w, None, ConvGeom::unit()),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let odd = tape.input(Tensor::zeros(&[1, 1, 3, 3]), false);
        assert!(tape.maxpool2d(odd).is_err());
    }

    #[test]
    fn non_finite_is_surfaced_when_checking() {
        let mut tape = Tape::<f32>::new(Mode::Deterministic, 0);
        tape.set_check_finite(true);
        let x = tape.input(Tensor::full(&[1, 1, 2, 2], f32::NAN), false);
        let y = tape.input(Tensor::zeros(&[1, 1, 2, 2]), false);
        assert!(matches!(tape.add(x, y), Err(TensorError::NonFinite { op: "add" })));
    }
}
