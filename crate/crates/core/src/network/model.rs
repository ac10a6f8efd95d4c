use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::GuidanceConfig;
use crate::io::SparseDepthMap;
use crate::network::blocks::{scaled_depth, Builder, EncoderDecoder, Mode, Sffm};
use crate::nn::{Graph, ParamStore, Var, SI_EPSILON};
use crate::tensor::{Scalar, Tensor};

/// Architecture variants of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Two stages, plain concatenated inputs, single-branch second stage.
    Baseline,
    /// Second stage replaced by colour- and depth-refinement branches.
    CrDr,
    /// CrDr with shallow feature fusion on the sparse inputs.
    CrDrSffm,
    /// CrDrSffm plus confidence guidance.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::CrDr,
        Variant::CrDrSffm,
        Variant::Full,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Baseline => "B",
            Variant::CrDr => "CRDR",
            Variant::CrDrSffm => "CRDR+SFFM",
            Variant::Full => "CRDR+SFFM+CGM",
        }
    }

    pub fn uses_sffm(self) -> bool {
        matches!(self, Variant::CrDrSffm | Variant::Full)
    }

    pub fn uses_guidance(self) -> bool {
        self == Variant::Full
    }

    pub fn has_refinement_branches(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', ' '], "");
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().replace(' ', "") == norm || (norm == "FULL" && *v == Variant::Full))
            .ok_or_else(|| {
                let tags: Vec<&str> = Variant::ALL.iter().map(|v| v.tag()).collect();
                Error::Config(format!(
                    "unknown variant {s:?}; valid tags: {}",
                    tags.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    /// Width of the first encoder stage; doubles per stage.
    pub base_width: usize,
    /// Number of down/up-sampling stages in each encoder-decoder.
    pub depth: usize,
    pub sffm_width: usize,
    pub sffm_layers: usize,
    /// Depths are divided by this before entering the network and depth
    /// heads are multiplied by it.
    pub depth_scale: f64,
    pub si_epsilon: f64,
    pub guidance: GuidanceConfig,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            base_width: 32,
            depth: 3,
            sffm_width: 16,
            sffm_layers: 2,
            depth_scale: 20.0,
            si_epsilon: SI_EPSILON,
            guidance: GuidanceConfig::default(),
            init_seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Small widths for CPU training at 64x256.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            base_width: 6,
            sffm_width: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.depth == 0 || self.sffm_width == 0 || self.sffm_layers == 0
        {
            return Err(Error::Config(
                "network widths, depth and SFFM layers must be positive".into(),
            ));
        }
        if !(self.depth_scale > 0.0) || !(self.si_epsilon > 0.0) {
            return Err(Error::Config(
                "depth_scale and si_epsilon must be positive".into(),
            ));
        }
        self.guidance.validate()
    }

    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Debug)]
enum Stage2 {
    Single(EncoderDecoder),
    Dual {
        cr: EncoderDecoder,
        dr: EncoderDecoder,
        dr_sffm: Option<Sffm>,
    },
}

/// Recorded outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub d_c: Var,
    pub d_final: Var,
    pub branches: Option<BranchVars>,
}

#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub d_cr: Var,
    pub c_cr: Var,
    pub d_dr: Var,
    pub c_dr: Var,
    pub c_cr_adj: Var,
    pub c_dr_adj: Var,
}

/// Refinement-branch maps; absent for the baseline variant.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput<T> {
    pub d_cr: Tensor<T>,
    pub d_dr: Tensor<T>,
    pub c_cr: Tensor<T>,
    pub c_dr: Tensor<T>,
    pub c_cr_adj: Tensor<T>,
    pub c_dr_adj: Tensor<T>,
}

/// Every intermediate map of one input pair, depths in metres.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<T> {
    pub d_c: Tensor<T>,
    pub d_final: Tensor<T>,
    pub branches: Option<BranchOutput<T>>,
}

impl<T: Scalar> NetworkOutput<T> {
    pub fn is_finite(&self) -> bool {
        let b = self.branches.as_ref().is_none_or(|b| {
            [&b.d_cr, &b.d_dr, &b.c_cr, &b.c_dr, &b.c_cr_adj, &b.c_dr_adj]
                .iter()
                .all(|t| t.is_finite())
        });
        b && self.d_c.is_finite() && self.d_final.is_finite()
    }
}

/// The two-stage depth completion network.
#[derive(Clone, Debug)]
pub struct DepthNet<T> {
    config: NetworkConfig,
    pub params: ParamStore<T>,
    cp: EncoderDecoder,
    cp_sffm: Option<Sffm>,
    stage2: Stage2,
}

fn split_head<T: Scalar>(g: &mut Graph<T>, head: Var, scale: T) -> Result<(Var, Var)> {
    let d = g.slice_channels(head, 0, 1)?;
    let d = g.scale(d, scale)?;
    let c = g.slice_channels(head, 1, 1)?;
    Ok((d, c))
}

impl<T: Scalar> DepthNet<T> {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let (w, depth) = (config.base_width, config.depth);
        let sffm = config.variant.uses_sffm();

        let (cp_sffm, cp_in) = if sffm {
            let block = Sffm::new(
                &mut b,
                "cp_sffm",
                3,
                config.sffm_width,
                config.sffm_layers,
                w,
            )?;
            (Some(block), w)
        } else {
            (None, 4)
        };
        let cp = EncoderDecoder::new(&mut b, "cp", cp_in, 1, w, depth)?;
        let stage2 = if config.variant.has_refinement_branches() {
            let cr = EncoderDecoder::new(&mut b, "cr", 4, 2, w, depth)?;
            let (dr_sffm, dr_in) = if sffm {
                (
                    Some(Sffm::new(
                        &mut b,
                        "dr_sffm",
                        1,
                        config.sffm_width,
                        config.sffm_layers,
                        w,
                    )?),
                    w,
                )
            } else {
                (None, 2)
            };
            let dr = EncoderDecoder::new(&mut b, "dr", dr_in, 2, w, depth)?;
            Stage2::Dual { cr, dr, dr_sffm }
        } else {
            Stage2::Single(EncoderDecoder::new(&mut b, "refine", 5, 1, w, depth)?)
        };
        Ok(Self {
            config,
            params,
            cp,
            cp_sffm,
            stage2,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Coarse-prediction encoder-decoder (for inspection and tests).
    pub fn cp(&self) -> &EncoderDecoder {
        &self.cp
    }

    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a multiple of {m}; pad by {ph} rows and {pw} columns"
            )));
        }
        Ok(())
    }

    fn check_pair(&self, color: &Tensor<T>, sparse: &SparseDepthMap<T>) -> Result<()> {
        let (c, h, w) = color.chw()?;
        if c != 3 {
            return Err(Error::Shape(format!(
                "colour image must be 3 x H x W, got {:?}",
                color.shape()
            )));
        }
        if (sparse.height(), sparse.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "sparse depth {}x{} vs image {h}x{w}",
                sparse.height(),
                sparse.width()
            )));
        }
        self.check_input_size(h, w)
    }

    fn eps(&self) -> T {
        T::lit(self.config.si_epsilon)
    }

    fn scale(&self) -> T {
        T::lit(self.config.depth_scale)
    }

    /// Record the coarse prediction; returns `D_c` in metres.
    pub fn record_cp(
        &self,
        g: &mut Graph<T>,
        color: Var,
        sparse: &SparseDepthMap<T>,
        mode: Mode,
    ) -> Result<Var> {
        let s = g.constant(scaled_depth(sparse, self.config.depth_scale));
        let input = match &self.cp_sffm {
            Some(block) => {
                block.apply(g, &self.params, color, s, sparse.mask(), self.eps(), mode)?
            }
            None => g.concat(&[color, s])?,
        };
        let head = self.cp.apply(g, &self.params, input, mode)?;
        g.scale(head, self.scale())
    }

    fn dual(&self) -> Result<(&EncoderDecoder, &EncoderDecoder, Option<&Sffm>)> {
        match &self.stage2 {
            Stage2::Dual { cr, dr, dr_sffm } => Ok((cr, dr, dr_sffm.as_ref())),
            Stage2::Single(_) => Err(Error::InvalidArgument(
                "baseline variant has no CR/DR branches".into(),
            )),
        }
    }

    /// Colour refinement on the raw concatenation of `D_c` and the image.
    pub fn record_cr(
        &self,
        g: &mut Graph<T>,
        d_c: Var,
        color: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let (cr, _, _) = self.dual()?;
        let dn = g.scale(d_c, T::one() / self.scale())?;
        let input = g.concat(&[dn, color])?;
        let head = cr.apply(g, &self.params, input, mode)?;
        split_head(g, head, self.scale())
    }

    /// Depth refinement on `D_c` fused with the sparse depth.
    pub fn record_dr(
        &self,
        g: &mut Graph<T>,
        d_c: Var,
        sparse: &SparseDepthMap<T>,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let (_, dr, dr_sffm) = self.dual()?;
        let dn = g.scale(d_c, T::one() / self.scale())?;
        let s = g.constant(scaled_depth(sparse, self.config.depth_scale));
        let input = match dr_sffm {
            Some(block) => block.apply(g, &self.params, dn, s, sparse.mask(), self.eps(), mode)?,
            None => g.concat(&[dn, s])?,
        };
        let head = dr.apply(g, &self.params, input, mode)?;
        split_head(g, head, self.scale())
    }

    /// Record the full forward pass.
    pub fn record(
        &self,
        g: &mut Graph<T>,
        color: &Tensor<T>,
        sparse: &SparseDepthMap<T>,
        mode: Mode,
    ) -> Result<ForwardVars> {
        self.check_pair(color, sparse)?;
        let color = g.constant(color.clone());
        let d_c = self.record_cp(g, color, sparse, mode)?;
        match &self.stage2 {
            Stage2::Single(refine) => {
                let dn = g.scale(d_c, T::one() / self.scale())?;
                let s = g.constant(scaled_depth(sparse, self.config.depth_scale));
                let input = g.concat(&[dn, color, s])?;
                let head = refine.apply(g, &self.params, input, mode)?;
                let d_final = g.scale(head, self.scale())?;
                Ok(ForwardVars {
                    d_c,
                    d_final,
                    branches: None,
                })
            }
            Stage2::Dual { .. } => {
                let (d_cr, c_cr) = self.record_cr(g, d_c, color, mode)?;
                let (d_dr, c_dr) = self.record_dr(g, d_c, sparse, mode)?;
                let (c_cr_adj, c_dr_adj) = if self.config.variant.uses_guidance() {
                    g.cgm(d_c, c_cr, c_dr, &self.config.guidance)?
                } else {
                    (c_cr, c_dr)
                };
                let d_final = g.fuse(d_cr, d_dr, c_cr_adj, c_dr_adj)?;
                let branches = BranchVars {
                    d_cr,
                    c_cr,
                    d_dr,
                    c_dr,
                    c_cr_adj,
                    c_dr_adj,
                };
                Ok(ForwardVars {
                    d_c,
                    d_final,
                    branches: Some(branches),
                })
            }
        }
    }

    /// Inference forward pass returning every intermediate map.
    pub fn forward(
        &self,
        color: &Tensor<T>,
        sparse: &SparseDepthMap<T>,
    ) -> Result<NetworkOutput<T>> {
        let mut g = Graph::new();
        let v = self.record(&mut g, color, sparse, Mode::Infer)?;
        let get = |x: Var| g.value(x).clone();
        Ok(NetworkOutput {
            d_c: get(v.d_c),
            d_final: get(v.d_final),
            branches: v.branches.map(|b| BranchOutput {
                d_cr: get(b.d_cr),
                d_dr: get(b.d_dr),
                c_cr: get(b.c_cr),
                c_dr: get(b.c_dr),
                c_cr_adj: get(b.c_cr_adj),
                c_dr_adj: get(b.c_dr_adj),
            }),
        })
    }

    /// `D_c = CP(SFFM(I_c, I_s))` (plain concatenation without SFFM).
    pub fn cp_forward(&self, color: &Tensor<T>, sparse: &SparseDepthMap<T>) -> Result<Tensor<T>> {
        self.check_pair(color, sparse)?;
        let mut g = Graph::new();
        let c = g.constant(color.clone());
        let d = self.record_cp(&mut g, c, sparse, Mode::Infer)?;
        Ok(g.value(d).clone())
    }

    /// `(D_cr, C_cr)` from a coarse depth and the image.
    pub fn cr_forward(&self, d_c: &Tensor<T>, color: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if d_c.shape()[1..] != color.shape()[1..] {
            return Err(Error::Shape(format!(
                "D_c {:?} vs image {:?}",
                d_c.shape(),
                color.shape()
            )));
        }
        let mut g = Graph::new();
        let (d, c) = (g.constant(d_c.clone()), g.constant(color.clone()));
        let (dv, cv) = self.record_cr(&mut g, d, c, Mode::Infer)?;
        Ok((g.value(dv).clone(), g.value(cv).clone()))
    }

    /// `(D_dr, C_dr)` from a coarse depth and the sparse depth.
    pub fn dr_forward(
        &self,
        d_c: &Tensor<T>,
        sparse: &SparseDepthMap<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if d_c.shape()[1..] != sparse.depth().shape()[1..] {
            return Err(Error::Shape(format!(
                "D_c {:?} vs sparse {:?}",
                d_c.shape(),
                sparse.depth().shape()
            )));
        }
        let mut g = Graph::new();
        let d = g.constant(d_c.clone());
        let (dv, cv) = self.record_dr(&mut g, d, sparse, Mode::Infer)?;
        Ok((g.value(dv).clone(), g.value(cv).clone()))
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> DepthNet<U> {
        DepthNet {
            config: self.config.clone(),
            params: self.params.cast(),
            cp: self.cp.clone(),
            cp_sffm: self.cp_sffm.clone(),
            stage2: self.stage2.clone(),
        }
    }
}

impl NetworkConfig {
    pub const KEYS: [&'static str; 11] = [
        "variant",
        "base_width",
        "depth",
        "sffm_width",
        "sffm_layers",
        "depth_scale",
        "si_epsilon",
        "guidance_alpha",
        "d_max",
        "boundary_percentile",
        "init_seed",
    ];

    pub fn write_kv(&self, kv: &mut crate::kv::KvMap, prefix: &str) {
        let p = |k: &str| format!("{prefix}{k}");
        kv.set(p("variant"), self.variant);
        kv.set(p("base_width"), self.base_width);
        kv.set(p("depth"), self.depth);
        kv.set(p("sffm_width"), self.sffm_width);
        kv.set(p("sffm_layers"), self.sffm_layers);
        kv.set(p("depth_scale"), self.depth_scale);
        kv.set(p("si_epsilon"), self.si_epsilon);
        kv.set(p("guidance_alpha"), self.guidance.alpha);
        kv.set(p("d_max"), self.guidance.d_max);
        kv.set(p("boundary_percentile"), self.guidance.percentile);
        kv.set(p("init_seed"), self.init_seed);
    }

    /// Read `prefix`-ed keys over `base`.
    pub fn read_kv(kv: &crate::kv::KvMap, prefix: &str, base: &Self) -> Result<Self> {
        let p = |k: &str| format!("{prefix}{k}");
        let cfg = Self {
            variant: kv.parse_or(&p("variant"), base.variant)?,
            base_width: kv.parse_or(&p("base_width"), base.base_width)?,
            depth: kv.parse_or(&p("depth"), base.depth)?,
            sffm_width: kv.parse_or(&p("sffm_width"), base.sffm_width)?,
            sffm_layers: kv.parse_or(&p("sffm_layers"), base.sffm_layers)?,
            depth_scale: kv.parse_or(&p("depth_scale"), base.depth_scale)?,
            si_epsilon: kv.parse_or(&p("si_epsilon"), base.si_epsilon)?,
            guidance: GuidanceConfig {
                alpha: kv.parse_or(&p("guidance_alpha"), base.guidance.alpha)?,
                d_max: kv.parse_or(&p("d_max"), base.guidance.d_max)?,
                percentile: kv.parse_or(&p("boundary_percentile"), base.guidance.percentile)?,
            },
            init_seed: kv.parse_or(&p("init_seed"), base.init_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
