//! Tape recorder for the op set the depth network needs, with reverse-mode
//! gradients.
//!
//! Every forward op appends a node holding its output value and whatever the
//! backward pass needs (unfolded columns, softmax weights, ...). Nodes that do
//! not depend on a gradient-tracked leaf are skipped on the way back.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::fusion::{self, GuidanceCache, GuidanceConfig};
use crate::loss;
use crate::nn::conv::{self, ConvGeom, Padding};
use crate::nn::layers;
use crate::nn::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor, ValidityMask};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    graph: u64,
}

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    SiConv {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        cols: Vec<T>,
        norm: Vec<T>,
        mask: ValidityMask,
    },
    Relu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Concat {
        parts: Vec<usize>,
    },
    Slice {
        x: usize,
        start: usize,
    },
    Upsample {
        x: usize,
    },
    Fuse {
        d1: usize,
        d2: usize,
        c1: usize,
        c2: usize,
        w1: Vec<T>,
    },
    Guidance {
        d: usize,
        cache: GuidanceCache<T>,
    },
    MaskedMse {
        pred: usize,
        gt: Vec<T>,
        count: usize,
    },
    SumSquares {
        x: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients produced by [`Graph::backward`] for the graph's leaves.
pub struct Gradients<T> {
    graph: u64,
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf (input or parameter). `None` for untracked leaves,
    /// interior nodes, or leaves unreachable from the output.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.graph != self.graph {
            return None;
        }
        self.leaves.get(var.index).and_then(Option::as_ref)
    }

    /// Parameter gradients in the order the parameters entered the graph.
    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
    }
}

pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "variable {v:?} was not recorded by this graph"
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let tracked = match op {
            Op::Leaf { .. } => false,
            _ => inputs.iter().any(|&i| self.nodes[i].tracked),
        };
        self.nodes.push(Node { value, op, tracked });
        Var {
            index: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("foreign variable")].value
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf { param: None }, &[]);
        self.nodes[v.index].tracked = true;
        v
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { param: None }, &[])
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf { param: Some(id) }, &[]);
        self.nodes[v.index].tracked = true;
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (wv, bv) = (&self.nodes[wi].value, &self.nodes[bi].value);
        let k = wv.shape().get(2).copied().unwrap_or(1);
        let geom = ConvGeom::resolve(
            self.nodes[xi].value.shape(),
            wv.shape(),
            stride,
            (k - 1) / 2,
            padding,
        )?;
        if bv.shape() != [geom.out_c] {
            return Err(Error::Shape(format!(
                "bias {:?} for {} output channels",
                bv.shape(),
                geom.out_c
            )));
        }
        let cols = conv::im2col(self.nodes[xi].value.data(), &geom);
        let mut out = conv::weight_times_cols(wv.data(), &cols, &geom);
        conv::add_bias(&mut out, bv.data(), geom.positions());
        let value = Tensor::from_vec(&[geom.out_c, geom.ho, geom.wo], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x: xi,
                w: wi,
                b: bi,
                geom,
                cols,
            },
            &[xi, wi, bi],
        ))
    }

    /// Sparsity-invariant convolution; returns the output and its dilated mask.
    pub fn si_conv2d(
        &mut self,
        x: Var,
        mask: &ValidityMask,
        w: Var,
        b: Var,
        stride: usize,
        eps: T,
    ) -> Result<(Var, ValidityMask)> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (wv, bv) = (&self.nodes[wi].value, &self.nodes[bi].value);
        let k = wv.shape().get(2).copied().unwrap_or(1);
        let geom = ConvGeom::resolve(
            self.nodes[xi].value.shape(),
            wv.shape(),
            stride,
            (k - 1) / 2,
            Padding::Zero,
        )?;
        conv::check_mask(mask, &geom)?;
        let fwd = conv::si_forward(
            self.nodes[xi].value.data(),
            mask,
            wv.data(),
            bv.data(),
            &geom,
            eps,
        );
        let value = Tensor::from_vec(&[geom.out_c, geom.ho, geom.wo], fwd.out)?;
        let op = Op::SiConv {
            x: xi,
            w: wi,
            b: bi,
            geom,
            cols: fwd.cols,
            norm: fwd.norm,
            mask: mask.clone(),
        };
        Ok((self.push(value, op, &[xi, wi, bi]), fwd.out_mask))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = layers::relu(&self.nodes[xi].value);
        Ok(self.push(value, Op::Relu { x: xi }, &[xi]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let value = layers::add(&self.nodes[ai].value, &self.nodes[bi].value)?;
        Ok(self.push(value, Op::Add { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "sub: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(value, Op::Sub { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.map(|v| v * factor);
        Ok(self.push(value, Op::Scale { x: xi, factor }, &[xi]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = Tensor::concat_channels(&refs)?;
        Ok(self.push(value, Op::Concat { parts: idx.clone() }, &idx))
    }

    /// Channels `start .. start + count`.
    pub fn slice_channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let (c, h, w) = self.nodes[xi].value.chw()?;
        if count == 0 || start + count > c {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} of {c}",
                start + count
            )));
        }
        let plane = h * w;
        let data = self.nodes[xi].value.data()[start * plane..(start + count) * plane].to_vec();
        let value = Tensor::from_vec(&[count, h, w], data)?;
        Ok(self.push(value, Op::Slice { x: xi, start }, &[xi]))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = layers::upsample_nearest2x(&self.nodes[xi].value)?;
        Ok(self.push(value, Op::Upsample { x: xi }, &[xi]))
    }

    /// Two-branch confidence-weighted fusion.
    pub fn fuse(&mut self, d1: Var, d2: Var, c1: Var, c2: Var) -> Result<Var> {
        let ids = [self.idx(d1)?, self.idx(d2)?, self.idx(c1)?, self.idx(c2)?];
        let [a, b, c, d] = ids.map(|i| &self.nodes[i].value);
        let (out, w1) = fusion::fuse_kernel(a, b, c, d)?;
        Ok(self.push(
            out,
            Op::Fuse {
                d1: ids[0],
                d2: ids[1],
                c1: ids[2],
                c2: ids[3],
                w1,
            },
            &ids,
        ))
    }

    /// `alpha * (boundary + farness)` of a coarse depth map.
    pub fn guidance(&mut self, d: Var, cfg: &GuidanceConfig) -> Result<Var> {
        let di = self.idx(d)?;
        let (value, cache) = fusion::guidance_forward(&self.nodes[di].value, cfg)?;
        Ok(self.push(value, Op::Guidance { d: di, cache }, &[di]))
    }

    /// Confidence guidance: returns the adjusted `(c_cr, c_dr)`.
    pub fn cgm(
        &mut self,
        d_c: Var,
        c_cr: Var,
        c_dr: Var,
        cfg: &GuidanceConfig,
    ) -> Result<(Var, Var)> {
        let g = self.guidance(d_c, cfg)?;
        Ok((self.add(c_cr, g)?, self.sub(c_dr, g)?))
    }

    /// Mean squared error over pixels where `gt > 0`.
    pub fn masked_mse(&mut self, pred: Var, gt: &Tensor<T>) -> Result<Var> {
        let pi = self.idx(pred)?;
        let (loss, count) = loss::masked_mse_value(&self.nodes[pi].value, gt)?;
        let op = Op::MaskedMse {
            pred: pi,
            gt: gt.data().to_vec(),
            count,
        };
        Ok(self.push(Tensor::full(&[1], loss), op, &[pi]))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.data().iter().map(|&v| v * v).sum();
        Ok(self.push(Tensor::full(&[1], s), Op::SumSquares { x: xi }, &[xi]))
    }

    /// Reverse pass from `output` seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: &Tensor<T>) -> Result<Gradients<T>> {
        let out = self.idx(output)?;
        if seed.shape() != self.nodes[out].value.shape() {
            return Err(Error::Shape(format!(
                "seed {:?} does not match output {:?}",
                seed.shape(),
                self.nodes[out].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=out).map(|_| None).collect();
        grads[out] = Some(seed.data().to_vec());

        for i in (0..=out).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }

        let mut leaves: Vec<Option<Tensor<T>>> = Vec::with_capacity(grads.len());
        let mut params = Vec::new();
        for (i, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            let leaf = match (&node.op, g) {
                (Op::Leaf { param }, Some(g)) if node.tracked => {
                    let t = Tensor::from_vec(node.value.shape(), g)?;
                    if let Some(id) = param {
                        params.push((*id, t.clone()));
                    }
                    Some(t)
                }
                _ => None,
            };
            leaves.push(leaf);
        }
        Ok(Gradients {
            graph: self.id,
            leaves,
            params,
        })
    }

    /// Scalar output convenience: seed of one.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients<T>> {
        let shape = self.value(output).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::Shape(format!(
                "backward_scalar on non-scalar {shape:?}"
            )));
        }
        self.backward(output, &Tensor::full(&shape, T::one()))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let tracked = |j: usize| self.nodes[j].tracked;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (d_cols, d_w) = conv::conv_backward_gemm(
                    g,
                    cols,
                    self.nodes[*w].value.data(),
                    geom,
                    tracked(*x),
                );
                if let Some(d_cols) = d_cols {
                    accumulate(grads, *x, conv::col2im(&d_cols, geom));
                }
                if tracked(*w) {
                    accumulate(grads, *w, d_w);
                }
                if tracked(*b) {
                    accumulate(grads, *b, conv::bias_grad(g, geom.positions()));
                }
            }
            Op::SiConv {
                x,
                w,
                b,
                geom,
                cols,
                norm,
                mask,
            } => {
                let p = geom.positions();
                let scaled: Vec<T> = g
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v * norm[j % p])
                    .collect();
                let (d_cols, d_w) = conv::conv_backward_gemm(
                    &scaled,
                    cols,
                    self.nodes[*w].value.data(),
                    geom,
                    tracked(*x),
                );
                if let Some(d_cols) = d_cols {
                    let mut dx = conv::col2im(&d_cols, geom);
                    let plane = geom.h * geom.w;
                    let m = mask.data();
                    for (j, v) in dx.iter_mut().enumerate() {
                        if m[j % plane] == 0 {
                            *v = T::zero();
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if tracked(*w) {
                    accumulate(grads, *w, d_w);
                }
                if tracked(*b) {
                    accumulate(grads, *b, conv::bias_grad(g, p));
                }
            }
            Op::Relu { x } => {
                let y = self.nodes[i].value.data();
                let dx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if tracked(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if tracked(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if tracked(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if tracked(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Scale { x, factor } => {
                accumulate(grads, *x, g.iter().map(|&v| v * *factor).collect())
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    if tracked(p) {
                        accumulate(grads, p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                let src = &self.nodes[*x].value;
                let (_, h, w) = src.chw()?;
                let mut dx = vec![T::zero(); src.len()];
                let off = start * h * w;
                dx[off..off + g.len()].copy_from_slice(g);
                accumulate(grads, *x, dx);
            }
            Op::Upsample { x } => {
                let (c, h, w) = self.nodes[*x].value.chw()?;
                accumulate(grads, *x, layers::upsample_nearest2x_backward(g, c, h, w));
            }
            Op::Fuse { d1, d2, c1, c2, w1 } => {
                let v = |j: usize| self.nodes[j].value.data();
                let back = fusion::fuse_backward(g, v(*d1), v(*d2), w1);
                for (j, d) in [
                    (*d1, back.d1),
                    (*d2, back.d2),
                    (*c1, back.c1),
                    (*c2, back.c2),
                ] {
                    if tracked(j) {
                        accumulate(grads, j, d);
                    }
                }
            }
            Op::Guidance { d, cache } => accumulate(grads, *d, fusion::guidance_backward(g, cache)),
            Op::MaskedMse { pred, gt, count } => {
                let p = self.nodes[*pred].value.data();
                accumulate(grads, *pred, loss::masked_mse_backward(g[0], p, gt, *count));
            }
            Op::SumSquares { x } => {
                let xv = self.nodes[*x].value.data();
                let two = T::lit(2.0);
                accumulate(grads, *x, xv.iter().map(|&v| two * v * g[0]).collect());
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], j: usize, d: Vec<T>) {
    match &mut grads[j] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, v)| *e = *e + v),
        slot @ None => *slot = Some(d),
    }
}
