use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::SparseDepthMap;
use crate::tensor::Tensor;

/// One training example: colour image, sparse LiDAR-like input and
/// semi-dense ground truth, all at the same resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub color: Tensor<f32>,
    pub sparse: SparseDepthMap<f32>,
    pub gt: SparseDepthMap<f32>,
}

impl Sample {
    pub fn new(
        color: Tensor<f32>,
        sparse: SparseDepthMap<f32>,
        gt: SparseDepthMap<f32>,
    ) -> Result<Self> {
        let (c, h, w) = color.chw()?;
        if c != 3 {
            return Err(Error::Shape(format!(
                "colour image must have 3 channels, got {:?}",
                color.shape()
            )));
        }
        for (name, m) in [("sparse", &sparse), ("ground truth", &gt)] {
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "{name} map is {}x{} but the image is {h}x{w}",
                    m.height(),
                    m.width()
                )));
            }
        }
        Ok(Self { color, sparse, gt })
    }

    pub fn height(&self) -> usize {
        self.color.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.color.shape()[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train | val | test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
