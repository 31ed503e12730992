//! Video datasets, class splits, frame sampling and episode sampling.
//!
//! A [`Dataset`] is immutable once built: generation and loading both go
//! through [`Dataset::new`], which validates every invariant up front so the
//! samplers never have to.

mod io;
mod sampler;
mod synthetic;

pub use io::{load_dataset, save_dataset, DATASET_MAGIC};
pub use sampler::{sample_episode, sparse_sample_frames, Episode, FrameMode};
pub use synthetic::{generate_synthetic, SyntheticSpec, TemporalPattern};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{FsarError, Result};

/// One labeled video: `L` raw frames of dimension `D_raw`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub video_id: u32,
    pub class_id: usize,
    /// `L x D_raw`, one row per frame.
    pub frames: Array2<f32>,
}

impl VideoSample {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Base,
    Novel,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Base => f.write_str("base"),
            Split::Novel => f.write_str("novel"),
        }
    }
}

impl FromStr for Split {
    type Err = FsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Split::Base),
            "novel" => Ok(Split::Novel),
            other => Err(FsarError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Class names indexed by class id, plus the disjoint base/novel partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    names: Vec<String>,
    base_ids: Vec<usize>,
    novel_ids: Vec<usize>,
}

impl ClassTable {
    /// Every class id in `0..names.len()` must appear in exactly one split.
    pub fn new(names: Vec<String>, mut base_ids: Vec<usize>, mut novel_ids: Vec<usize>) -> Result<Self> {
        base_ids.sort_unstable();
        novel_ids.sort_unstable();
        let mut seen = vec![0u8; names.len()];
        for &id in base_ids.iter().chain(novel_ids.iter()) {
            if id >= names.len() {
                return Err(FsarError::InvalidSpec(format!(
                    "class id {id} outside class table of {} entries",
                    names.len()
                )));
            }
            seen[id] += 1;
        }
        if let Some(id) = seen.iter().position(|&c| c != 1) {
            return Err(FsarError::InvalidSpec(format!(
                "class {id} must belong to exactly one of base/novel (found in {})",
                seen[id]
            )));
        }
        if names.iter().any(|n| n.is_empty() || n.contains(char::is_whitespace)) {
            return Err(FsarError::InvalidSpec(
                "class names must be nonempty and free of whitespace".into(),
            ));
        }
        Ok(Self {
            names,
            base_ids,
            novel_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class_id: usize) -> &str {
        &self.names[class_id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn base_ids(&self) -> &[usize] {
        &self.base_ids
    }

    pub fn novel_ids(&self) -> &[usize] {
        &self.novel_ids
    }

    pub fn split_ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Base => &self.base_ids,
            Split::Novel => &self.novel_ids,
        }
    }

    pub fn split_of(&self, class_id: usize) -> Split {
        if self.base_ids.binary_search(&class_id).is_ok() {
            Split::Base
        } else {
            Split::Novel
        }
    }
}

/// An immutable collection of videos sharing one class table and frame dim.
///
/// `descriptors`, when present, holds one `D_raw`-dim semantic vector per
/// class (the synthetic generator's latent class vectors). The text encoder
/// uses them as side information when `text_informativeness > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    frame_dim: usize,
    classes: ClassTable,
    samples: Vec<VideoSample>,
    descriptors: Option<Array2<f32>>,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        frame_dim: usize,
        classes: ClassTable,
        samples: Vec<VideoSample>,
        descriptors: Option<Array2<f32>>,
    ) -> Result<Self> {
        if frame_dim == 0 {
            return Err(FsarError::InvalidSpec("frame dim must be positive".into()));
        }
        if let Some(d) = &descriptors {
            if d.dim() != (classes.len(), frame_dim) {
                return Err(FsarError::InvalidSpec(format!(
                    "descriptor table is {:?}, expected ({}, {frame_dim})",
                    d.dim(),
                    classes.len()
                )));
            }
        }
        let mut by_class = vec![Vec::new(); classes.len()];
        for (idx, s) in samples.iter().enumerate() {
            if s.class_id >= classes.len() {
                return Err(FsarError::InvalidSpec(format!(
                    "video {} has class id {} outside the class table",
                    s.video_id, s.class_id
                )));
            }
            if s.frames.nrows() == 0 {
                return Err(FsarError::InvalidSpec(format!("video {} has no frames", s.video_id)));
            }
            if s.frames.ncols() != frame_dim {
                return Err(FsarError::InvalidSpec(format!(
                    "video {} has frame dim {}, dataset has {frame_dim}",
                    s.video_id,
                    s.frames.ncols()
                )));
            }
            if s.frames.iter().any(|v| !v.is_finite()) {
                return Err(FsarError::InvalidSpec(format!(
                    "video {} has non-finite frame values",
                    s.video_id
                )));
            }
            by_class[s.class_id].push(idx);
        }
        Ok(Self {
            frame_dim,
            classes,
            samples,
            descriptors,
            by_class,
        })
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    pub fn samples(&self) -> &[VideoSample] {
        &self.samples
    }

    pub fn sample(&self, idx: usize) -> &VideoSample {
        &self.samples[idx]
    }

    pub fn descriptors(&self) -> Option<&Array2<f32>> {
        self.descriptors.as_ref()
    }

    /// Indices into [`Dataset::samples`] for one class, in file order.
    pub fn class_samples(&self, class_id: usize) -> &[usize] {
        &self.by_class[class_id]
    }
}
