//! Loading pipelines and schedules from disk. A corpus directory holds one
//! folder per algorithm with `<alg>.hal` and any number of `.sched` files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::ir::{rescale, Pipeline};
use crate::parse::{parse_pipeline_named, parse_schedule_named, Directive};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Build(#[from] crate::Error),
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_path_buf(), source })
}

pub fn load_pipeline(path: &Path) -> Result<Pipeline, LoadError> {
    let text = read(path)?;
    let p = parse_pipeline_named(&path.display().to_string(), &text).map_err(crate::Error::from)?;
    Ok(p)
}

pub fn load_schedule(path: &Path, p: &Pipeline) -> Result<Vec<Directive>, LoadError> {
    let text = read(path)?;
    let ds = parse_schedule_named(&path.display().to_string(), &text, p).map_err(crate::Error::from)?;
    Ok(ds)
}

/// Sets every output dimension to `extent`.
pub fn scale(p: &mut Pipeline, extent: i64) -> Result<(), LoadError> {
    let dims: Vec<(String, i64)> = p.output_func().dims.iter().map(|d| (d.name.clone(), extent)).collect();
    rescale(p, &dims).map_err(|d| LoadError::Invalid(d.to_string()))
}

/// Caps every output dimension at `cap`, leaving smaller ones alone.
pub fn cap(p: &mut Pipeline, cap: i64) -> Result<(), LoadError> {
    let dims: Vec<(String, i64)> =
        p.output_func().dims.iter().map(|d| (d.name.clone(), d.interval.extent.min(cap))).collect();
    rescale(p, &dims).map_err(|d| LoadError::Invalid(d.to_string()))
}

/// One algorithm folder of a corpus.
#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    pub pipeline: PathBuf,
    /// Schedule files, sorted by name.
    pub schedules: Vec<PathBuf>,
}

impl Entry {
    pub fn schedule(&self, name: &str) -> Option<&Path> {
        self.schedules.iter().find(|s| s.file_stem().is_some_and(|n| n == name)).map(PathBuf::as_path)
    }
}

/// Algorithm folders under `dir`, sorted by name. Folders without a
/// matching `.hal` file are skipped.
pub fn entries(dir: &Path) -> Result<Vec<Entry>, LoadError> {
    let io = |source| LoadError::Io { path: dir.to_path_buf(), source };
    let mut out = Vec::new();
    for d in fs::read_dir(dir).map_err(io)? {
        let d = d.map_err(io)?.path();
        let Some(name) = d.file_name().and_then(|n| n.to_str()).map(String::from) else { continue };
        let pipeline = d.join(format!("{name}.hal"));
        if !pipeline.is_file() {
            continue;
        }
        let mut schedules: Vec<PathBuf> = fs::read_dir(&d)
            .map_err(io)?
            .filter_map(|f| f.ok().map(|f| f.path()))
            .filter(|f| f.extension().is_some_and(|e| e == "sched"))
            .collect();
        schedules.sort();
        out.push(Entry { name, pipeline, schedules });
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
