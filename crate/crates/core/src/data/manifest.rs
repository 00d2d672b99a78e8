use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::exec;
use crate::tensor::Tensor;

use super::{load_image, resize_bilinear, DataError};

const HEADER: [&str; 4] = ["path", "identity", "camera", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One labeled image record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub image_path: String,
    pub identity: u64,
    pub camera: u32,
    pub split: Split,
}

/// All samples of a dataset plus the contiguous class index of every
/// training identity (in order of first appearance).
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    class_index: HashMap<u64, usize>,
    num_classes: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Training class index of a raw identity.
    pub fn class_of(&self, identity: u64) -> Option<usize> {
        self.class_index.get(&identity).copied()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        let p = Path::new(&sample.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Decode every image of `split`, resized to `height x width`.
    pub fn load_split(&self, split: Split, height: usize, width: usize) -> Result<LoadedSplit, DataError> {
        let samples: Vec<&Sample> = self.split(split).collect();
        let images = exec::map_slice(&samples, |s| -> Result<Tensor, DataError> {
            let img = load_image(&self.resolve(s))?;
            Ok(resize_bilinear(&img, height, width)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        let labels = samples
            .iter()
            .map(|s| self.class_of(s.identity).unwrap_or(usize::MAX))
            .collect();
        Ok(LoadedSplit {
            images,
            labels,
            identities: samples.iter().map(|s| s.identity).collect(),
            cameras: samples.iter().map(|s| s.camera).collect(),
            paths: samples.iter().map(|s| s.image_path.clone()).collect(),
        })
    }
}

/// Decoded images of one split with their labels.
///
/// `labels` holds training class indices; entries for identities absent
/// from the training split are `usize::MAX`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSplit {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub identities: Vec<u64>,
    pub cameras: Vec<u32>,
    pub paths: Vec<String>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Read a `path,identity,camera,split` CSV. Relative image paths resolve
/// against the manifest's directory.
pub fn load_manifest(csv_path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(csv_path)?;
    let root = csv_path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &csv_path.display().to_string(), root)
}

/// Parse manifest text; `source` names the input in error messages.
pub fn parse_manifest(text: &str, source: &str, root: PathBuf) -> Result<DatasetManifest, DataError> {
    let malformed = |line: u64, message: String| DataError::Malformed {
        path: source.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(malformed(1, format!("expected header {:?}", HEADER.join(","))));
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut class_index = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or_default();
        let path = field(0);
        if path.is_empty() {
            return Err(malformed(line, "empty path".into()));
        }
        let identity: u64 = field(1)
            .parse()
            .map_err(|_| malformed(line, format!("identity {:?} is not a non-negative integer", field(1))))?;
        let camera: u32 = field(2)
            .parse()
            .map_err(|_| malformed(line, format!("camera {:?} is not a non-negative integer", field(2))))?;
        let split: Split = field(3).parse().map_err(|e| malformed(line, e))?;
        if !seen.insert(path.to_string()) {
            return Err(DataError::DuplicatePath(path.to_string()));
        }
        if split == Split::Train {
            let next = class_index.len();
            class_index.entry(identity).or_insert(next);
        }
        samples.push(Sample {
            image_path: path.to_string(),
            identity,
            camera,
            split,
        });
    }
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    let num_classes = class_index.len();
    Ok(DatasetManifest {
        root,
        samples,
        class_index,
        num_classes,
    })
}
