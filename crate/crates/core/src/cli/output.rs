//! Output directories that appear all at once, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::CliError;

/// Git's blob hash computed with SHA-256: `sha256("blob <len>\0" ‖ bytes)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

pub fn input_record(path: &Path) -> Result<InputRecord, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputRecord {
        path: path.display().to_string(),
        sha256: content_hash(&bytes),
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    config: &'a serde_json::Value,
    inputs: &'a [InputRecord],
    outputs: BTreeMap<&'a str, String>,
    wall_time_ms: Option<u64>,
}

/// Files collected in memory and written to a staging directory beside the
/// target, which is renamed into place once everything is on disk.
pub struct OutputDir {
    target: PathBuf,
    overwrite: bool,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputDir {
    /// Fails early when the target exists, is not empty and may not be replaced.
    pub fn new(target: &Path, overwrite: bool) -> Result<Self, CliError> {
        if target.exists() {
            if !target.is_dir() {
                return Err(CliError::Usage(format!("output path {} is not a directory", target.display())));
            }
            let nonempty = fs::read_dir(target)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", target.display())))?
                .next()
                .is_some();
            if nonempty && !overwrite {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty (pass --overwrite to replace it)",
                    target.display()
                )));
            }
        }
        Ok(OutputDir {
            target: target.to_path_buf(),
            overwrite,
            files: Vec::new(),
        })
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    /// Write the manifest after every other file and move the directory into place.
    pub fn commit(
        mut self,
        command: &str,
        argv: &[String],
        config: &serde_json::Value,
        inputs: &[InputRecord],
        wall_time_ms: Option<u64>,
    ) -> Result<PathBuf, CliError> {
        let outputs = self.files.iter().map(|(n, b)| (n.as_str(), content_hash(b))).collect();
        let manifest = Manifest {
            tool: "phmm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv,
            config,
            inputs,
            outputs,
            wall_time_ms,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        self.files.push(("manifest.json".into(), text.into_bytes()));

        let io = |what: &str, p: &Path, e: std::io::Error| CliError::Io(format!("cannot {what} {}: {e}", p.display()));
        let parent = match self.target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| io("create", &parent, e))?;
        let leaf = self.target.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let stage = parent.join(format!(".{leaf}.staging-{}", std::process::id()));
        if stage.exists() {
            fs::remove_dir_all(&stage).map_err(|e| io("remove", &stage, e))?;
        }
        fs::create_dir(&stage).map_err(|e| io("create", &stage, e))?;
        for (name, bytes) in &self.files {
            let p = stage.join(name);
            fs::write(&p, bytes).map_err(|e| io("write", &p, e))?;
        }
        if self.target.exists() {
            debug_assert!(self.overwrite || fs::read_dir(&self.target).map(|mut d| d.next().is_none()).unwrap_or(true));
            fs::remove_dir_all(&self.target).map_err(|e| io("replace", &self.target, e))?;
        }
        fs::rename(&stage, &self.target).map_err(|e| io("move output into", &self.target, e))?;
        Ok(self.target)
    }
}

/// The argument list without the flags that only choose where and how
/// outputs are written, so reruns elsewhere yield the same manifest.
pub fn reproducible_argv(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        match a.as_str() {
            "--out" => skip = true,
            "--overwrite" | "--timing" => {}
            s if s.starts_with("--out=") => {}
            _ => out.push(a.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_object_format() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn argv_drops_output_flags() {
        let a: Vec<String> = ["train", "--out", "x", "--k", "2", "--overwrite", "--out=y", "--timing"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(reproducible_argv(&a), vec!["train", "--k", "2"]);
    }

    #[test]
    fn refuses_nonempty_target_without_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("f"), "x").unwrap();
        assert!(OutputDir::new(dir.path(), false).is_err());
        let mut out = OutputDir::new(dir.path(), true).unwrap();
        out.add("a.txt", "a");
        out.commit("test", &[], &serde_json::Value::Null, &[], None).unwrap();
        assert!(!dir.path().join("f").exists());
        assert_eq!(fs::read_to_string(dir.path().join("a.txt")).unwrap(), "a");
        assert!(dir.path().join("manifest.json").exists());
    }
}
