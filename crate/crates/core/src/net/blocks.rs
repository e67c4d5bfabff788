//! Layers and the residual blocks they compose into.

use dicforge_tensor::{kaiming_uniform, ConvGeom, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::NetError;

/// Registers parameters under a dotted prefix.
pub(crate) struct Builder<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub prefix: String,
}

impl<T: Real> Builder<'_, T> {
    pub fn scoped(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.store
            .add(format!("{}.{name}", self.prefix), value)
            .expect("layer names are unique by construction")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize, k: (usize, usize), geom: ConvGeom) -> Self {
        let mut b = b.scoped(name);
        let w = kaiming_uniform(&[cout, cin, k.0, k.1], cin * k.0 * k.1, b.rng);
        Self {
            weight: b.add("weight", w),
            bias: b.add("bias", Tensor::zeros(&[cout])),
            geom,
        }
    }

    pub(crate) fn pointwise<T: Real>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(b, name, cin, cout, (1, 1), ConvGeom::unit())
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let w = t.param(s, self.weight);
        let b = t.param(s, self.bias);
        Ok(t.conv2d(x, w, Some(b), self.geom)?)
    }
}

/// 3x3 per-channel filter, padding 1, no bias.
#[derive(Debug, Clone, Copy)]
pub struct Depthwise {
    pub weight: ParamId,
}

impl Depthwise {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        let mut b = b.scoped(name);
        let w = kaiming_uniform(&[c, 1, 3, 3], 9, b.rng);
        Self { weight: b.add("weight", w) }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let w = t.param(s, self.weight);
        Ok(t.depthwise_conv2d(x, w, ConvGeom::new((1, 1), (1, 1)))?)
    }
}

/// 2x2 stride-2 transposed convolution.
#[derive(Debug, Clone, Copy)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Deconv {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Self {
        let mut b = b.scoped(name);
        let w = kaiming_uniform(&[cin, cout, 2, 2], cout * 4, b.rng);
        Self {
            weight: b.add("weight", w),
            bias: b.add("bias", Tensor::zeros(&[cout])),
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let w = t.param(s, self.weight);
        let b = t.param(s, self.bias);
        Ok(t.conv_transpose2d(x, w, Some(b))?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        let mut b = b.scoped(name);
        Self {
            slope: b.add("slope", Tensor::full(&[c], T::from_f64(0.25))),
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let a = t.param(s, self.slope);
        Ok(t.prelu(x, a)?)
    }
}

fn residual<T: Real>(
    t: &mut Tape<T>,
    s: &ParamStore<T>,
    main: Var,
    skip: Var,
    proj: Option<&Conv>,
    act: &Prelu,
) -> Result<Var, NetError> {
    let skip = match proj {
        Some(p) => p.forward(t, s, skip)?,
        None => skip,
    };
    let sum = t.add(main, skip)?;
    act.forward(t, s, sum)
}

/// Halves the resolution: strided bottleneck branch plus max-pooled residual.
#[derive(Debug, Clone)]
pub struct DownBlock {
    pub reduce: Conv,
    pub down: Conv,
    pub expand: Conv,
    pub proj: Option<Conv>,
    pub act: Prelu,
}

impl DownBlock {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, cin: usize, cout: usize, mid: usize) -> Self {
        let mut b = b.scoped("down");
        Self {
            reduce: Conv::pointwise(&mut b, "reduce", cin, mid),
            down: Conv::new(&mut b, "conv", mid, mid, (2, 2), ConvGeom::new((2, 2), (0, 0))),
            expand: Conv::pointwise(&mut b, "expand", mid, cout),
            proj: (cin != cout).then(|| Conv::pointwise(&mut b, "proj", cin, cout)),
            act: Prelu::new(&mut b, "act", cout),
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let (_, _, h, w) = t.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NetError::Shape(format!("down block needs even size, got {h}x{w}")));
        }
        let m = self.reduce.forward(t, s, x)?;
        let m = self.down.forward(t, s, m)?;
        let m = self.expand.forward(t, s, m)?;
        let pooled = t.maxpool2d(x)?;
        residual(t, s, m, pooled, self.proj.as_ref(), &self.act)
    }
}

/// Doubles the resolution: deconvolution branch plus bilinear residual.
#[derive(Debug, Clone)]
pub struct UpBlock {
    pub reduce: Conv,
    pub deconv: Deconv,
    pub expand: Conv,
    pub proj: Option<Conv>,
    pub act: Prelu,
}

impl UpBlock {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, cin: usize, cout: usize, mid: usize) -> Self {
        let mut b = b.scoped("up");
        Self {
            reduce: Conv::pointwise(&mut b, "reduce", cin, mid),
            deconv: Deconv::new(&mut b, "deconv", mid, mid),
            expand: Conv::pointwise(&mut b, "expand", mid, cout),
            proj: (cin != cout).then(|| Conv::pointwise(&mut b, "proj", cin, cout)),
            act: Prelu::new(&mut b, "act", cout),
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let m = self.reduce.forward(t, s, x)?;
        let m = self.deconv.forward(t, s, m)?;
        let m = self.expand.forward(t, s, m)?;
        let up = t.upsample_bilinear2x(x)?;
        residual(t, s, m, up, self.proj.as_ref(), &self.act)
    }
}

/// Pointwise squeeze, 3x3 depthwise, dropout, pointwise expand, residual add.
#[derive(Debug, Clone)]
pub struct SmallBlock {
    pub reduce: Conv,
    pub spatial: Depthwise,
    pub expand: Conv,
    pub act: Prelu,
    pub p: f64,
}

impl SmallBlock {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, name: &str, c: usize, mid: usize, p: f64) -> Self {
        let mut b = b.scoped(name);
        Self {
            reduce: Conv::pointwise(&mut b, "reduce", c, mid),
            spatial: Depthwise::new(&mut b, "dw", mid),
            expand: Conv::pointwise(&mut b, "expand", mid, c),
            act: Prelu::new(&mut b, "act", c),
            p,
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let m = self.reduce.forward(t, s, x)?;
        let m = self.spatial.forward(t, s, m)?;
        let m = t.dropout(m, self.p)?;
        let m = self.expand.forward(t, s, m)?;
        residual(t, s, m, x, None, &self.act)
    }
}

/// Same shape as [`SmallBlock`] with a factorized 5x1 / 1x5 spatial stage.
#[derive(Debug, Clone)]
pub struct WideBlock {
    pub reduce: Conv,
    pub col: Conv,
    pub row: Conv,
    pub expand: Conv,
    pub act: Prelu,
    pub p: f64,
}

impl WideBlock {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, name: &str, c: usize, mid: usize, p: f64) -> Self {
        let mut b = b.scoped(name);
        Self {
            reduce: Conv::pointwise(&mut b, "reduce", c, mid),
            col: Conv::new(&mut b, "col", mid, mid, (5, 1), ConvGeom::new((1, 1), (2, 0))),
            row: Conv::new(&mut b, "row", mid, mid, (1, 5), ConvGeom::new((1, 1), (0, 2))),
            expand: Conv::pointwise(&mut b, "expand", mid, c),
            act: Prelu::new(&mut b, "act", c),
            p,
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let m = self.reduce.forward(t, s, x)?;
        let m = self.col.forward(t, s, m)?;
        let m = self.row.forward(t, s, m)?;
        let m = t.dropout(m, self.p)?;
        let m = self.expand.forward(t, s, m)?;
        residual(t, s, m, x, None, &self.act)
    }
}

/// Merges upsampled global features with the detail skip.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub spatial: Depthwise,
    pub squeeze: Conv,
    pub small: SmallBlock,
}

impl FusionBlock {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, c: usize, mid: usize, p: f64) -> Self {
        let mut b = b.scoped("fusion");
        Self {
            spatial: Depthwise::new(&mut b, "dw", 2 * c),
            squeeze: Conv::pointwise(&mut b, "squeeze", 2 * c, c),
            small: SmallBlock::new(&mut b, "small", c, mid, p),
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, up: Var, detail: Var) -> Result<Var, NetError> {
        let x = t.concat_channels(up, detail)?;
        let x = self.spatial.forward(t, s, x)?;
        let x = self.squeeze.forward(t, s, x)?;
        self.small.forward(t, s, x)
    }
}

/// Deconvolution to full resolution, then pointwise and 3x3 convolutions. Linear output.
#[derive(Debug, Clone)]
pub struct Head {
    pub deconv: Deconv,
    pub pointwise: Conv,
    pub out: Conv,
}

impl Head {
    pub(crate) fn new<T: Real>(b: &mut Builder<T>, cin: usize, mid: usize) -> Self {
        let mut b = b.scoped("head");
        Self {
            deconv: Deconv::new(&mut b, "deconv", cin, mid),
            pointwise: Conv::pointwise(&mut b, "pw", mid, mid),
            out: Conv::new(&mut b, "out", mid, 2, (3, 3), ConvGeom::new((1, 1), (1, 1))),
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NetError> {
        let x = self.deconv.forward(t, s, x)?;
        let x = self.pointwise.forward(t, s, x)?;
        self.out.forward(t, s, x)
    }
}
