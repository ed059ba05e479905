use std::path::{Path, PathBuf};

use hardneg_core::Error;
use serde::Serialize;

/// Writes named files into the output directory and remembers their names
/// for the manifest.
pub struct Output {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Self {
        Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<PathBuf, Error> {
        let p = self.path(name);
        std::fs::write(&p, content).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?;
        self.written.push(name.to_string());
        Ok(p)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf, Error> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        self.text(name, &s)
    }

    /// Records a file written by a library routine.
    pub fn record(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.path(name)
    }
}

/// Splits `tag=path`. A bare path takes its file stem as the tag.
pub fn tagged_path(spec: &str) -> Result<(String, PathBuf), Error> {
    let (tag, path) = match spec.split_once('=') {
        Some((t, p)) => (t.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("cannot derive a tag from {spec:?}")))?
                .to_string();
            (stem, p)
        }
    };
    if tag.is_empty() || path.as_os_str().is_empty() {
        return Err(Error::Config(format!("expected TAG=PATH, got {spec:?}")));
    }
    Ok((tag, path))
}

/// Parses and checks a list of `tag=path` specs for unique tags.
pub fn tagged_paths(specs: &[String]) -> Result<Vec<(String, PathBuf)>, Error> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for s in specs {
        let (tag, path) = tagged_path(s)?;
        if out.iter().any(|(t, _)| *t == tag) {
            return Err(Error::Config(format!("tag {tag:?} given more than once")));
        }
        out.push((tag, path));
    }
    Ok(out)
}

/// A name usable as a single file name in the output directory.
pub fn file_safe(name: &str) -> Result<&str, Error> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::Config(format!("{name:?} cannot be used as a file name")));
    }
    Ok(name)
}
