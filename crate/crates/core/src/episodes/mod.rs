//! Datasets, episode sampling and pool-restriction protocols.

mod io;
mod sampler;
mod synth;

pub use io::{load_dataset, save_png, write_dataset, ManifestRow};
pub use sampler::{
    binomial, enumerate_task_combinations, sample_episode, task_augment_rotation, EpisodeSampler,
    EpisodeSpec, PoolLimits, PoolMode,
};
pub use synth::{synth_shapes, synth_shapes_range, SHAPE_FAMILIES, SHAPE_VARIANTS};

use crate::augment::Image;
use crate::error::{Error, Result};

/// Which side of the meta-learning split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" | "meta-train" | "meta_train" => Ok(Split::Train),
            "test" | "meta-test" | "meta_test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classes with their images. Every class is non-empty and every image
/// shares one `C×H×W` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    split: Split,
    class_ids: Vec<String>,
    images: Vec<Vec<Image>>,
    dims: (usize, usize, usize),
}

impl Dataset {
    pub fn new(split: Split, classes: Vec<(String, Vec<Image>)>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Data("dataset has no classes".into()));
        }
        let dims = classes
            .iter()
            .find_map(|(_, imgs)| imgs.first())
            .map(Image::dims)
            .ok_or_else(|| Error::Data("dataset has no images".into()))?;
        let mut class_ids = Vec::with_capacity(classes.len());
        let mut images = Vec::with_capacity(classes.len());
        for (id, imgs) in classes {
            if imgs.is_empty() {
                return Err(Error::Data(format!("class '{id}' has no images")));
            }
            if let Some(bad) = imgs.iter().find(|im| im.dims() != dims) {
                return Err(Error::Data(format!(
                    "class '{id}' has an image of shape {:?}, expected {dims:?}",
                    bad.dims()
                )));
            }
            if class_ids.contains(&id) {
                return Err(Error::Data(format!("duplicate class id '{id}'")));
            }
            class_ids.push(id);
            images.push(imgs);
        }
        Ok(Self {
            split,
            class_ids,
            images,
            dims,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn class_images(&self, class: usize) -> &[Image] {
        &self.images[class]
    }

    pub fn image(&self, class: usize, index: usize) -> &Image {
        &self.images[class][index]
    }

    /// `(C, H, W)` shared by every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn total_images(&self) -> usize {
        self.images.iter().map(Vec::len).sum()
    }

    pub fn min_class_size(&self) -> usize {
        self.images.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

/// One dataset item: `(class index, image index within the class)`.
pub type ItemId = (usize, usize);

/// One N-way K-shot task. Labels are episode-local indices `0..n_way`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<(Image, usize)>,
    pub query: Vec<(Image, usize)>,
    /// Episode-local index → dataset class index.
    pub class_map: Vec<usize>,
    pub support_items: Vec<ItemId>,
    pub query_items: Vec<ItemId>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    /// True when no dataset item appears in both the support and query set.
    pub fn is_disjoint(&self) -> bool {
        self.support_items.iter().all(|s| !self.query_items.contains(s))
    }
}
