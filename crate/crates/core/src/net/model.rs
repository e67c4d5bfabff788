use dicforge_tensor::{Checkpoint, Mode, ParamStore, Real, Tape, Tensor, Var};

use super::blocks::{Builder, DownBlock, FusionBlock, Head, SmallBlock, UpBlock, WideBlock};
use super::config::NetworkConfig;
use super::NetError;
use crate::grid::{DisplacementField, Grid};
use crate::seed;

/// Tape scopes, one per stage, so graph edges can be attributed.
pub mod scope {
    pub const INPUT: u16 = 0;
    pub const D1: u16 = 1;
    pub const D2: u16 = 2;
    pub const G1: u16 = 3;
    pub const G2: u16 = 4;
    pub const U1: u16 = 5;
    pub const U2: u16 = 6;
    pub const U3: u16 = 7;
    pub const HEAD: u16 = 8;
    pub const LOSS: u16 = 9;
}

/// A down block followed by residual blocks.
#[derive(Debug, Clone)]
pub struct EncoderStage {
    pub down: DownBlock,
    pub small: Vec<SmallBlock>,
    pub wide: Vec<WideBlock>,
}

impl EncoderStage {
    fn new<T: Real>(b: &mut Builder<T>, cin: usize, cout: usize, repeats: usize, cfg: &NetworkConfig) -> Self {
        let mid = cfg.bottleneck(cout);
        let p = cfg.dropout_p;
        let down = DownBlock::new(b, cin, cout, mid);
        let name = |kind: &str, i: usize| if repeats == 1 { kind.to_string() } else { format!("{kind}{i}") };
        let small = (0..repeats).map(|i| SmallBlock::new(b, &name("small", i), cout, mid, p)).collect();
        let wide = (0..repeats).map(|i| WideBlock::new(b, &name("wide", i), cout, mid, p)).collect();
        Self { down, small, wide }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, super::NetError> {
        let mut x = self.down.forward(t, s, x)?;
        for b in &self.small {
            x = b.forward(t, s, x)?;
        }
        for b in &self.wide {
            x = b.forward(t, s, x)?;
        }
        Ok(x)
    }
}

/// An up block, then either a small block or the fusion with the detail skip,
/// then a wide block.
#[derive(Debug, Clone)]
pub struct DecoderStage {
    pub up: UpBlock,
    pub small: Option<SmallBlock>,
    pub fusion: Option<FusionBlock>,
    pub wide: WideBlock,
}

impl DecoderStage {
    fn new<T: Real>(b: &mut Builder<T>, cin: usize, cout: usize, fuse: bool, cfg: &NetworkConfig) -> Self {
        let mid = cfg.bottleneck(cout);
        let p = cfg.dropout_p;
        let up = UpBlock::new(b, cin, cout, mid);
        let (small, fusion) = if fuse {
            (None, Some(FusionBlock::new(b, cout, mid, p)))
        } else {
            (Some(SmallBlock::new(b, "small", cout, mid, p)), None)
        };
        let wide = WideBlock::new(b, "wide", cout, mid, p);
        Self { up, small, fusion, wide }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var, skip: Option<Var>) -> Result<Var, NetError> {
        let x = self.up.forward(t, s, x)?;
        let x = match (&self.fusion, &self.small, skip) {
            (Some(f), _, Some(d)) => f.forward(t, s, x, d)?,
            (None, Some(b), None) => b.forward(t, s, x)?,
            _ => return Err(NetError::Shape("decoder stage skip wiring mismatch".into())),
        };
        self.wide.forward(t, s, x)
    }
}

/// The encoder-decoder with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub d1: EncoderStage,
    pub d2: EncoderStage,
    pub g1: EncoderStage,
    pub g2: EncoderStage,
    pub u1: DecoderStage,
    pub u2: DecoderStage,
    pub u3: DecoderStage,
    pub head: Head,
}

impl<T: Real> Model<T> {
    pub fn new(config: NetworkConfig, init_seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seed::rng(init_seed);
        let [c1, c2, c3, c4] = config.channels;
        let mut root = Builder {
            store: &mut params,
            rng: &mut rng,
            prefix: String::new(),
        };
        let d1 = EncoderStage::new(&mut root.scoped("d1"), config.in_channels, c1, 1, &config);
        let d2 = EncoderStage::new(&mut root.scoped("d2"), c1, c2, 1, &config);
        let g1 = EncoderStage::new(&mut root.scoped("g1"), c2, c3, 2, &config);
        let g2 = EncoderStage::new(&mut root.scoped("g2"), c3, c4, 2, &config);
        let u1 = DecoderStage::new(&mut root.scoped("u1"), c4, c3, false, &config);
        let u2 = DecoderStage::new(&mut root.scoped("u2"), c3, c2, true, &config);
        let u3 = DecoderStage::new(&mut root.scoped("u3"), c2, c1, false, &config);
        let head = Head::new(&mut root, c1, config.head_mid);
        Ok(Self {
            config,
            params,
            d1,
            d2,
            g1,
            g2,
            u1,
            u2,
            u3,
            head,
        })
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut params = self.params.cast::<U>();
        for (dst, src) in params.iter_mut().zip(self.params.iter()) {
            dst.adam.step = src.adam.step;
        }
        Model {
            config: self.config.clone(),
            params,
            d1: self.d1.clone(),
            d2: self.d2.clone(),
            g1: self.g1.clone(),
            g2: self.g2.clone(),
            u1: self.u1.clone(),
            u2: self.u2.clone(),
            u3: self.u3.clone(),
            head: self.head.clone(),
        }
    }

    /// Input is `(N, in_channels, H, W)` with `H` and `W` divisible by 16;
    /// output is `(N, 2, H, W)`.
    pub fn forward(&self, t: &mut Tape<T>, x: Var) -> Result<Var, NetError> {
        let (_, c, h, w) = t.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(NetError::Shape(format!("{c} input channels, expected {}", self.config.in_channels)));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(NetError::Shape(format!("spatial size {h}x{w} must be a positive multiple of 16")));
        }
        t.set_scope(scope::D1);
        let x = self.d1.forward(t, &self.params, x)?;
        t.set_scope(scope::D2);
        let detail = self.d2.forward(t, &self.params, x)?;
        t.set_scope(scope::G1);
        let x = self.g1.forward(t, &self.params, detail)?;
        t.set_scope(scope::G2);
        let x = self.g2.forward(t, &self.params, x)?;
        t.set_scope(scope::U1);
        let x = self.u1.forward(t, &self.params, x, None)?;
        t.set_scope(scope::U2);
        let x = self.u2.forward(t, &self.params, x, Some(detail))?;
        t.set_scope(scope::U3);
        let x = self.u3.forward(t, &self.params, x, None)?;
        t.set_scope(scope::HEAD);
        let y = self.head.forward(t, &self.params, x)?;
        t.set_scope(scope::INPUT);
        Ok(y)
    }

    /// Single-pair prediction. `mode` selects whether dropout is active and
    /// `seed` drives its masks.
    pub fn predict(&self, reference: &Grid, deformed: &Grid, mode: Mode, seed: u64) -> Result<DisplacementField, NetError> {
        let x = stack_pairs::<T>(&[(reference, deformed)])?;
        let mut tape = Tape::new(mode, seed);
        let xv = tape.input(x, false);
        let y = self.forward(&mut tape, xv)?;
        Ok(split_field(tape.value(y), 0))
    }

    pub fn checkpoint(&self, with_adam: bool) -> Checkpoint {
        Checkpoint::from_store(&self.params, with_adam)
    }

    /// Rebuild a model from a checkpoint, inferring widths from parameter shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint, dropout_p: f64) -> Result<Self, NetError> {
        let config = NetworkConfig {
            dropout_p,
            ..NetworkConfig::from_checkpoint(ckpt)?
        };
        let mut m = Self::new(config, 0)?;
        ckpt.apply_to(&mut m.params)?;
        Ok(m)
    }

    pub fn load(path: &std::path::Path, dropout_p: f64) -> Result<Self, NetError> {
        let f = std::io::BufReader::new(std::fs::File::open(path).map_err(NetError::Io)?);
        Self::from_checkpoint(&Checkpoint::read(f)?, dropout_p)
    }

    pub fn save(&self, path: &std::path::Path, with_adam: bool) -> Result<(), NetError> {
        let tmp = path.with_extension("tmp");
        {
            let f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(NetError::Io)?);
            self.checkpoint(with_adam).write(f)?;
        }
        std::fs::rename(&tmp, path).map_err(NetError::Io)
    }
}

/// Stack `(reference, deformed)` pairs into an `(N, 2, H, W)` tensor.
pub fn stack_pairs<T: Real>(pairs: &[(&Grid, &Grid)]) -> Result<Tensor<T>, NetError> {
    let (h, w) = pairs
        .first()
        .map(|p| p.0.dims())
        .ok_or_else(|| NetError::Shape("no pairs to stack".into()))?;
    let mut data = Vec::with_capacity(pairs.len() * 2 * h * w);
    for (r, d) in pairs {
        if r.dims() != (h, w) || d.dims() != (h, w) {
            return Err(NetError::Shape(format!("pair sizes {:?}/{:?}, expected {h}x{w}", r.dims(), d.dims())));
        }
        data.extend(r.data().iter().chain(d.data()).map(|&v| T::from_f64(v as f64)));
    }
    Ok(Tensor::from_vec(&[pairs.len(), 2, h, w], data)?)
}

/// Stack displacement fields into an `(N, 2, H, W)` target tensor.
pub fn stack_fields<T: Real>(fields: &[&DisplacementField]) -> Result<Tensor<T>, NetError> {
    let (h, w) = fields
        .first()
        .map(|f| f.dims())
        .ok_or_else(|| NetError::Shape("no fields to stack".into()))?;
    let mut data = Vec::with_capacity(fields.len() * 2 * h * w);
    for f in fields {
        if f.dims() != (h, w) {
            return Err(NetError::Shape(format!("field size {:?}, expected {h}x{w}", f.dims())));
        }
        data.extend(f.u.data().iter().chain(f.v.data()).map(|&v| T::from_f64(v as f64)));
    }
    Ok(Tensor::from_vec(&[fields.len(), 2, h, w], data)?)
}

/// Batch element `i` of an `(N, 2, H, W)` tensor as a field.
pub fn split_field<T: Real>(y: &Tensor<T>, i: usize) -> DisplacementField {
    let s = y.shape();
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let base = i * 2 * plane;
    let grab = |off: usize| {
        Grid::from_vec(
            h,
            w,
            y.data()[base + off..base + off + plane]
                .iter()
                .map(|v| v.as_f64() as f32)
                .collect(),
        )
    };
    DisplacementField::new(grab(0), grab(plane))
}
