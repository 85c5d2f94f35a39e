//! Manifest text format:
//!
//! ```text
//! # comment
//! task = classification
//! class = sphere
//! class = cube
//! [samples]
//! train train/sphere_0000.pts sphere
//! test test/cube_0000.pts cube
//! ```
//!
//! Segmentation manifests declare `category = NAME FIRST COUNT` instead of
//! `class`, giving the category's global part labels `FIRST..FIRST+COUNT`.
//! Label indices follow declaration order. Sample paths are relative to the
//! manifest's directory and may not contain whitespace.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::points::{load_point_file, write_point_file};
use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" | "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// A loaded manifest: every referenced file has been read, normalized and
/// checked against the declared labels.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DatasetManifest {
    pub fn task(&self) -> Task {
        self.train.task
    }

    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut task = None;
    let mut names: Vec<String> = Vec::new();
    let mut ranges: Vec<Range<usize>> = Vec::new();
    let mut in_samples = false;
    let mut records = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if line == "[samples]" {
            in_samples = true;
            continue;
        }
        if in_samples {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err("expected `split path label`".into()));
            }
            let split = Split::parse(f[0]).ok_or_else(|| err(format!("unknown split {:?}", f[0])))?;
            let label = names
                .iter()
                .position(|n| n == f[2])
                .ok_or_else(|| err(format!("undeclared label {:?}", f[2])))?;
            records.push((split, base.join(f[1]), label));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let value = value.trim();
        match key.trim() {
            "task" => {
                task = Some(match value {
                    "classification" => Task::Classification,
                    "segmentation" => Task::Segmentation,
                    _ => return Err(err(format!("unknown task {value:?}"))),
                })
            }
            "class" => {
                if value.is_empty() || value.contains(char::is_whitespace) {
                    return Err(err("class names must be single words".into()));
                }
                names.push(value.to_string());
            }
            "category" => {
                let f: Vec<&str> = value.split_whitespace().collect();
                let parsed = match f.as_slice() {
                    [name, first, count] => first
                        .parse::<usize>()
                        .ok()
                        .zip(count.parse::<usize>().ok())
                        .filter(|&(_, c)| c > 0)
                        .map(|(a, c)| (name.to_string(), a..a + c)),
                    _ => None,
                };
                let (name, range) =
                    parsed.ok_or_else(|| err("expected `category = NAME FIRST COUNT`".into()))?;
                names.push(name);
                ranges.push(range);
            }
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }

    let task = task.ok_or_else(|| Error::Data(format!("{}: missing `task`", path.display())))?;
    match task {
        Task::Classification if !ranges.is_empty() => {
            return Err(Error::Data("classification manifests declare `class`, not `category`".into()))
        }
        Task::Segmentation if ranges.len() != names.len() => {
            return Err(Error::Data("segmentation manifests declare `category`, not `class`".into()))
        }
        _ => {}
    }
    if names.is_empty() {
        return Err(Error::Data(format!("{}: no labels declared", path.display())));
    }
    for (a, n) in names.iter().enumerate() {
        if names[..a].contains(n) {
            return Err(Error::Data(format!("label {n:?} declared twice")));
        }
    }

    let empty = Dataset {
        task,
        names,
        part_ranges: ranges,
        samples: Vec::new(),
    };
    let mut manifest = DatasetManifest {
        path: path.to_path_buf(),
        train: empty.clone(),
        validation: empty.clone(),
        test: empty,
    };
    for (split, file, label) in records {
        if !file.is_file() {
            return Err(Error::Data(format!("referenced file {} does not exist", file.display())));
        }
        let cloud = load_point_file(&file)?;
        let ds = match split {
            Split::Train => &mut manifest.train,
            Split::Validation => &mut manifest.validation,
            Split::Test => &mut manifest.test,
        };
        ds.samples.push(Sample { cloud, label });
        ds.validate()
            .map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
    }
    Ok(manifest)
}

/// Writes every split's clouds as point files under `dir/<split>/` and a
/// `manifest.txt` referencing them. Returns the manifest path.
pub fn write_manifest(dir: &Path, splits: &[(Split, &Dataset)]) -> Result<PathBuf> {
    let first = splits
        .first()
        .ok_or_else(|| Error::Argument("nothing to write".into()))?
        .1;
    let mut text = String::new();
    let task = match first.task {
        Task::Classification => "classification",
        Task::Segmentation => "segmentation",
    };
    writeln!(text, "task = {task}").unwrap();
    for (i, name) in first.names.iter().enumerate() {
        match first.task {
            Task::Classification => writeln!(text, "class = {name}").unwrap(),
            Task::Segmentation => {
                let r = &first.part_ranges[i];
                writeln!(text, "category = {name} {} {}", r.start, r.len()).unwrap()
            }
        }
    }
    text.push_str("[samples]\n");
    for (split, ds) in splits {
        if ds.names != first.names || ds.part_ranges != first.part_ranges {
            return Err(Error::Argument("splits disagree on labels".into()));
        }
        let sub = dir.join(split.as_str());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, s) in ds.samples.iter().enumerate() {
            let name = &ds.names[s.label];
            let rel = format!("{}/{name}_{i:04}.pts", split.as_str());
            write_point_file(&dir.join(&rel), &s.cloud)?;
            writeln!(text, "{} {rel} {name}", split.as_str()).unwrap();
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
