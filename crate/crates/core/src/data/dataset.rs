//! Directory datasets: `<root>/<split>/{A,B,label}/<id>.png`, or list files
//! `<root>/list/<split>.txt` naming ids under `<root>/{A,B,label}`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::image_io::{read_label, read_rgb};
use crate::error::{Error, Result};
use crate::pseudo_video::BiTemporalPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
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
            _ => Err(Error::Config(format!("unknown split {:?} (expected train, val or test)", s))),
        }
    }
}

/// Indexed collection of validated pairs.
pub trait Samples {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<BiTemporalPair>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load_all(&self) -> Result<Vec<BiTemporalPair>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

impl Samples for [BiTemporalPair] {
    fn len(&self) -> usize {
        <[BiTemporalPair]>::len(self)
    }

    fn get(&self, index: usize) -> Result<BiTemporalPair> {
        <[BiTemporalPair]>::get(self, index)
            .cloned()
            .ok_or_else(|| Error::Data(format!("sample {} out of range", index)))
    }
}

impl Samples for Vec<BiTemporalPair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<BiTemporalPair> {
        Samples::get(self.as_slice(), index)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub split: Split,
    a_dir: PathBuf,
    b_dir: PathBuf,
    label_dir: Option<PathBuf>,
    /// (id, file name), sorted by id.
    items: Vec<(String, String)>,
}

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

fn image_files(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, name));
        }
    }
    out.sort();
    Ok(out)
}

fn find_file(dir: &Path, id: &str) -> Option<String> {
    EXTENSIONS.iter().map(|e| format!("{}.{}", id, e)).find(|n| dir.join(n).is_file())
}

impl Dataset {
    pub fn open(root: &Path, split: Split) -> Result<Self> {
        let split_dir = root.join(split.as_str());
        let list = root.join("list").join(format!("{}.txt", split));
        if split_dir.join("A").is_dir() {
            Self::from_dirs(root, split, &split_dir, None)
        } else if list.is_file() {
            let text = std::fs::read_to_string(&list)?;
            let ids: BTreeSet<String> = text
                .lines()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .map(|l| Path::new(l).file_stem().and_then(|s| s.to_str()).unwrap_or(l).to_string())
                .collect();
            Self::from_dirs(root, split, root, Some(ids))
        } else {
            Err(Error::Layout(format!(
                "{} has neither {}/A nor list/{}.txt",
                root.display(),
                split,
                split
            )))
        }
    }

    fn from_dirs(root: &Path, split: Split, base: &Path, only: Option<BTreeSet<String>>) -> Result<Self> {
        let a_dir = base.join("A");
        let b_dir = base.join("B");
        let label_dir = base.join("label");
        for d in [&a_dir, &b_dir] {
            if !d.is_dir() {
                return Err(Error::Layout(format!("missing directory {}", d.display())));
            }
        }
        let label_dir = label_dir.is_dir().then_some(label_dir);
        let items = match &only {
            Some(ids) => {
                let mut items = Vec::new();
                for id in ids {
                    let name = find_file(&a_dir, id)
                        .ok_or_else(|| Error::Layout(format!("id {} is listed but missing from {}", id, a_dir.display())))?;
                    items.push((id.clone(), name));
                }
                items
            }
            None => image_files(&a_dir)?,
        };
        for (id, _) in &items {
            if find_file(&b_dir, id).is_none() {
                return Err(Error::Layout(format!("id {} is missing from {}", id, b_dir.display())));
            }
            if let Some(l) = &label_dir {
                if find_file(l, id).is_none() {
                    return Err(Error::Layout(format!("id {} is missing from {}", id, l.display())));
                }
            }
        }
        if only.is_none() {
            let a_ids: BTreeSet<_> = items.iter().map(|(id, _)| id.clone()).collect();
            for (id, _) in image_files(&b_dir)? {
                if !a_ids.contains(&id) {
                    return Err(Error::Layout(format!("id {} is missing from {}", id, a_dir.display())));
                }
            }
        }
        Ok(Self { root: root.to_path_buf(), split, a_dir, b_dir, label_dir, items })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }

    pub fn has_labels(&self) -> bool {
        self.label_dir.is_some()
    }
}

impl Samples for Dataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn get(&self, index: usize) -> Result<BiTemporalPair> {
        let (id, name) = self.items.get(index).ok_or_else(|| Error::Data(format!("sample {} out of range", index)))?;
        let i1 = read_rgb(&self.a_dir.join(name))?;
        let b_name = find_file(&self.b_dir, id).ok_or_else(|| Error::MissingFile(self.b_dir.join(name)))?;
        let i2 = read_rgb(&self.b_dir.join(b_name))?;
        let label = match &self.label_dir {
            Some(d) => {
                let n = find_file(d, id).ok_or_else(|| Error::MissingFile(d.join(name)))?;
                Some(read_label(&d.join(n))?)
            }
            None => None,
        };
        BiTemporalPair::new(id.clone(), i1, i2, label)
    }
}

/// Open a split and materialise every pair.
pub fn load_dataset(root: &Path, split: Split) -> Result<Vec<BiTemporalPair>> {
    Dataset::open(root, split)?.load_all()
}
