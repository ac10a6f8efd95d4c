//! Parameterized blocks that record themselves into a [`Graph`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::SparseDepthMap;
use crate::nn::conv::kaiming_uniform;
use crate::nn::{Graph, Padding, ParamId, ParamStore, Var};
use crate::tensor::{Scalar, Tensor, ValidityMask};

/// Registered convolution: handles into the parameter store plus geometry.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: Padding,
}

/// Context for registering parameters under a path prefix.
pub struct Builder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    pub fn conv(
        &mut self,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Conv> {
        let weight = self.store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_c, in_c, k, k], self.rng),
        )?;
        let bias = self
            .store
            .add(format!("{name}.bias"), Tensor::zeros(&[out_c]))?;
        Ok(Conv {
            weight,
            bias,
            stride,
            padding,
        })
    }
}

/// How parameters enter a recording: tracked for training, constant for inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub(crate) fn param<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    id: ParamId,
    mode: Mode,
) -> Var {
    match mode {
        Mode::Train => g.param(store, id),
        Mode::Infer => g.constant(store.get(id).clone()),
    }
}

impl Conv {
    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = param(g, store, self.weight, mode);
        let b = param(g, store, self.bias, mode);
        g.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn apply_sparse<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &ValidityMask,
        eps: T,
        mode: Mode,
    ) -> Result<(Var, ValidityMask)> {
        let w = param(g, store, self.weight, mode);
        let b = param(g, store, self.bias, mode);
        g.si_conv2d(x, mask, w, b, self.stride, eps)
    }
}

#[derive(Clone, Debug)]
pub struct Residual {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl Residual {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: b.conv(&format!("{name}.conv1"), c, c, 3, 1, Padding::Zero)?,
            conv2: b.conv(&format!("{name}.conv2"), c, c, 3, 1, Padding::Zero)?,
        })
    }

    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let h = self.conv1.apply(g, store, x, mode)?;
        let h = g.relu(h)?;
        let h = self.conv2.apply(g, store, h, mode)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Conv,
    merge: Conv,
    res: Residual,
}

/// U-shaped encoder-decoder: `depth` stride-2 stages down, nearest-neighbour
/// stages up, encoder features concatenated into the matching decoder stage,
/// and a 1x1 head.
#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    stem: Conv,
    encoder: Vec<(Residual, Conv)>,
    bottleneck: Residual,
    decoder: Vec<DecoderStage>,
    head: Conv,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl EncoderDecoder {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        base_width: usize,
        depth: usize,
    ) -> Result<Self> {
        if depth == 0 || base_width == 0 {
            return Err(Error::InvalidArgument(
                "encoder-decoder needs depth >= 1 and width >= 1".into(),
            ));
        }
        let widths: Vec<usize> = (0..depth).map(|i| base_width << i).collect();
        let bottom = widths[depth - 1];
        let width_at = |i: usize| if i < depth { widths[i] } else { bottom };
        let stem = b.conv(
            &format!("{name}.stem"),
            widths[0],
            in_channels,
            3,
            1,
            Padding::Zero,
        )?;
        let mut encoder = Vec::with_capacity(depth);
        for i in 0..depth {
            let res = Residual::new(b, &format!("{name}.enc{i}.res"), widths[i])?;
            let down = b.conv(
                &format!("{name}.enc{i}.down"),
                width_at(i + 1),
                widths[i],
                3,
                2,
                Padding::Replicate,
            )?;
            encoder.push((res, down));
        }
        let bottleneck = Residual::new(b, &format!("{name}.mid"), bottom)?;
        let mut decoder = Vec::with_capacity(depth);
        for i in (0..depth).rev() {
            decoder.push(DecoderStage {
                up: b.conv(
                    &format!("{name}.dec{i}.up"),
                    widths[i],
                    width_at(i + 1),
                    3,
                    1,
                    Padding::Replicate,
                )?,
                merge: b.conv(
                    &format!("{name}.dec{i}.merge"),
                    widths[i],
                    2 * widths[i],
                    1,
                    1,
                    Padding::Zero,
                )?,
                res: Residual::new(b, &format!("{name}.dec{i}.res"), widths[i])?,
            });
        }
        let head = b.conv(
            &format!("{name}.head"),
            out_channels,
            widths[0],
            1,
            1,
            Padding::Zero,
        )?;
        Ok(Self {
            stem,
            encoder,
            bottleneck,
            decoder,
            head,
            in_channels,
            out_channels,
        })
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn head(&self) -> &Conv {
        &self.head
    }

    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let (c, h, w) = g.value(x).chw()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "encoder-decoder expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let factor = 1 << self.depth();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "spatial size {h}x{w} is not a multiple of {factor}"
            )));
        }
        let mut x = self.stem.apply(g, store, x, mode)?;
        x = g.relu(x)?;
        let mut skips = Vec::with_capacity(self.depth());
        for (res, down) in &self.encoder {
            x = res.apply(g, store, x, mode)?;
            skips.push(x);
            x = down.apply(g, store, x, mode)?;
            x = g.relu(x)?;
        }
        x = self.bottleneck.apply(g, store, x, mode)?;
        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per stage");
            x = g.upsample_nearest2x(x)?;
            x = stage.up.apply(g, store, x, mode)?;
            x = g.relu(x)?;
            x = g.concat(&[x, skip])?;
            x = stage.merge.apply(g, store, x, mode)?;
            x = g.relu(x)?;
            x = stage.res.apply(g, store, x, mode)?;
        }
        self.head.apply(g, store, x, mode)
    }
}

/// Shallow feature fusion: conventional convolutions on the dense input,
/// sparsity-invariant convolutions on the sparse depth, and a 1x1 fusion of
/// the concatenated features.
#[derive(Clone, Debug)]
pub struct Sffm {
    dense_branch: Vec<Conv>,
    sparse_branch: Vec<Conv>,
    fusion: Conv,
    pub dense_channels: usize,
    pub out_channels: usize,
}

impl Sffm {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        dense_channels: usize,
        width: usize,
        layers: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidArgument(
                "SFFM branches need at least one layer".into(),
            ));
        }
        let mut dense_branch = Vec::with_capacity(layers);
        let mut sparse_branch = Vec::with_capacity(layers);
        for i in 0..layers {
            let (din, sin) = if i == 0 {
                (dense_channels, 1)
            } else {
                (width, width)
            };
            dense_branch.push(b.conv(
                &format!("{name}.dense{i}"),
                width,
                din,
                3,
                1,
                Padding::Zero,
            )?);
            sparse_branch.push(b.conv(
                &format!("{name}.sparse{i}"),
                width,
                sin,
                3,
                1,
                Padding::Zero,
            )?);
        }
        let fusion = b.conv(
            &format!("{name}.fusion"),
            out_channels,
            2 * width,
            1,
            1,
            Padding::Zero,
        )?;
        Ok(Self {
            dense_branch,
            sparse_branch,
            fusion,
            dense_channels,
            out_channels,
        })
    }

    /// `dense` is `C x H x W`; `sparse` is the (already scaled) `1 x H x W`
    /// depth whose validity comes from `mask`.
    #[allow(clippy::too_many_arguments)]
    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        dense: Var,
        sparse: Var,
        mask: &ValidityMask,
        eps: T,
        mode: Mode,
    ) -> Result<Var> {
        let (_, dh, dw) = g.value(dense).chw()?;
        let (_, sh, sw) = g.value(sparse).chw()?;
        if (dh, dw) != (sh, sw) {
            return Err(Error::Shape(format!("SFFM inputs {dh}x{dw} vs {sh}x{sw}")));
        }
        let mut d = dense;
        for conv in &self.dense_branch {
            d = conv.apply(g, store, d, mode)?;
            d = g.relu(d)?;
        }
        let mut s = sparse;
        let mut m = mask.clone();
        for conv in &self.sparse_branch {
            let (out, out_mask) = conv.apply_sparse(g, store, s, &m, eps, mode)?;
            s = g.relu(out)?;
            m = out_mask;
        }
        let cat = g.concat(&[d, s])?;
        self.fusion.apply(g, store, cat, mode)
    }
}

/// Depth map scaled into network units.
pub(crate) fn scaled_depth<T: Scalar>(map: &SparseDepthMap<T>, scale: f64) -> Tensor<T> {
    let inv = T::lit(1.0 / scale);
    map.depth().map(|d| d * inv)
}
