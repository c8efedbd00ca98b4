use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A stage input that an earlier command should have produced.
#[derive(Debug)]
pub struct MissingArtifact {
    pub expected: Vec<PathBuf>,
    pub command: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing upstream artifact(s):")?;
        for p in &self.expected {
            write!(f, "\n  {}", p.display())?;
        }
        write!(f, "\nrun `cytoarch {}` first", self.command)
    }
}

impl std::error::Error for MissingArtifact {}

/// Fails with [`MissingArtifact`] unless `path` exists.
pub fn require(path: &Path, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingArtifact {
            expected: vec![path.to_path_buf()],
            command,
        }
        .into())
    }
}

/// File-name-safe form of a structure or section id.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Paths of every artifact below the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn truth(&self, section: &str) -> PathBuf {
        self.root.join("truth").join(format!("{}.json", slug(section)))
    }
    pub fn segments_dir(&self) -> PathBuf {
        self.root.join("segments")
    }
    pub fn sections(&self) -> PathBuf {
        self.segments_dir().join("sections.json")
    }
    pub fn segment_image(&self, section: &str) -> PathBuf {
        self.segments_dir().join(format!("{}.png", slug(section)))
    }
    pub fn segment_cells(&self, section: &str) -> PathBuf {
        self.segments_dir().join(format!("{}.ndjson", slug(section)))
    }
    pub fn representatives(&self) -> PathBuf {
        self.root.join("kmeans").join("representatives.bin")
    }
    pub fn diffusion_model(&self) -> PathBuf {
        self.root.join("dm").join("model.bin")
    }
    pub fn alignment(&self) -> PathBuf {
        self.root.join("align").join("map.bin")
    }
    pub fn cells(&self) -> PathBuf {
        self.root.join("cells").join("cells.bin")
    }
    pub fn cells_csv(&self) -> PathBuf {
        self.root.join("cells").join("cells.csv")
    }
    pub fn grid(&self) -> PathBuf {
        self.root.join("regions").join("grid.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("regions").join("dataset.bin")
    }
    pub fn dataset_csv(&self) -> PathBuf {
        self.root.join("regions").join("dataset.csv")
    }
    pub fn model(&self, structure: &str) -> PathBuf {
        self.root.join("models").join(format!("{}.json", slug(structure)))
    }
    pub fn importance(&self, structure: &str) -> PathBuf {
        self.root.join("models").join(format!("{}_importance.csv", slug(structure)))
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn probmap(&self, structure: &str, section: &str) -> (PathBuf, PathBuf) {
        let dir = self.root.join("probmap").join(slug(structure));
        (dir.join(format!("{}.png", slug(section))), dir.join(format!("{}.json", slug(section))))
    }
    pub fn explain_dir(&self, structure: &str) -> PathBuf {
        self.root.join("explain").join(slug(structure))
    }
    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{}.json", slug(name)))
    }
}

/// Writes through `write` into a sibling temp file, then renames it over
/// `path`. The temp name keeps the extension, which some writers dispatch on.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{}.{}.partial.{}", name, std::process::id(), ext_of(path)));
    let res = write(&tmp);
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(e.context(format!("writing {}", path.display())));
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn ext_of(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "tmp".into())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |tmp| Ok(fs::write(tmp, bytes)?))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, P: Serialize> {
    tool: &'static str,
    version: &'static str,
    container_version: u32,
    model_format: &'static str,
    model_version: u32,
    command: &'a str,
    params_hash: String,
    params: &'a P,
    inputs: &'a [FileHash],
    outputs: &'a [FileHash],
}

/// Records the files one command reads and writes. Paths are stored relative
/// to the output root when they lie below it, so manifests do not depend on
/// where the root sits.
pub struct Run {
    command: String,
    layout: Layout,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl Run {
    pub fn new(command: &str, layout: &Layout) -> Self {
        Self {
            command: command.to_string(),
            layout: layout.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn entry(&self, path: &Path) -> Result<FileHash> {
        let shown = path.strip_prefix(&self.layout.root).unwrap_or(path);
        Ok(FileHash {
            path: shown.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path)?,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let e = self.entry(path)?;
        self.inputs.push(e);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let e = self.entry(path)?;
        self.outputs.push(e);
        Ok(())
    }

    #[cfg(test)]
    pub fn outputs(&self) -> &[FileHash] {
        &self.outputs
    }

    /// Writes `manifests/<name>.json` and returns its path.
    pub fn finish<P: Serialize>(mut self, name: &str, params: &P) -> Result<PathBuf> {
        self.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.inputs.dedup_by(|a, b| a.path == b.path);
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let canonical = serde_json::to_vec(params)?;
        let manifest = Manifest {
            tool: "cytoarch",
            version: env!("CARGO_PKG_VERSION"),
            container_version: cytoarch::binfmt::FORMAT_VERSION,
            model_format: cytoarch::classify::MODEL_FORMAT,
            model_version: cytoarch::classify::MODEL_VERSION,
            command: &self.command,
            params_hash: hex::encode(Sha256::digest(&canonical)),
            params,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.layout.manifest(name);
        write_bytes_atomic(&path, &bytes)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/out.txt");
        write_bytes_atomic(&p, b"hello").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hello");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn failed_write_keeps_previous_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("keep.txt");
        fs::write(&p, "old").unwrap();
        let res = write_atomic(&p, |tmp| {
            fs::write(tmp, "partial")?;
            anyhow::bail!("boom")
        });
        assert!(res.is_err());
        assert_eq!(fs::read_to_string(&p).unwrap(), "old");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn slug_replaces_separators() {
        assert_eq!(slug("a/b c"), "a_b_c");
        assert_eq!(slug("SC-1.v2"), "SC-1.v2");
    }

    #[test]
    fn manifest_paths_are_relative_to_root() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let f = dir.path().join("x.bin");
        fs::write(&f, b"abc").unwrap();
        let mut run = Run::new("t", &layout);
        run.output(&f).unwrap();
        assert_eq!(run.outputs()[0].path, "x.bin");
        assert_eq!(
            run.outputs()[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let m = run.finish("t", &serde_json::json!({"k": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(m).unwrap()).unwrap();
        assert_eq!(v["outputs"][0]["path"], "x.bin");
    }
}
