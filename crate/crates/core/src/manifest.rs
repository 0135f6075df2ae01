//! Run manifests: a `key=value` record written next to each output artifact
//! with the resolved configuration, seeds, paths and SHA-256 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

/// Hex SHA-256 of a file, or of a directory's files in sorted name order.
pub fn checksum(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries.into_iter().filter(|p| p.is_file()) {
            hasher.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update(fs::read(&p)?);
        }
    } else {
        hasher.update(fs::read(path)?);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            ..Self::default()
        }
    }

    pub fn render(&self) -> std::io::Result<String> {
        let mut out = format!("subcommand={}\n", self.subcommand);
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k}={v}\n"));
        }
        for (k, v) in &self.seeds {
            out.push_str(&format!("seed.{k}={v}\n"));
        }
        for (kind, paths) in [("input", &self.inputs), ("output", &self.outputs)] {
            for (i, p) in paths.iter().enumerate() {
                out.push_str(&format!("{kind}.{i}={}\n", p.display()));
                if p.exists() {
                    out.push_str(&format!("{kind}.{i}.sha256={}\n", checksum(p)?));
                }
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.render()?)
    }
}

/// `<artifact>.manifest` alongside a file artifact.
pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    artifact.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_stable_and_checksums_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        fs::write(&f, "abc").unwrap();
        let mut m = RunManifest::new("prepare");
        m.config.insert("max_vocab".into(), "10".into());
        m.seeds.insert("rng".into(), 7);
        m.inputs.push(f.clone());
        let text = m.render().unwrap();
        assert_eq!(text, m.render().unwrap());
        assert!(text.contains("config.max_vocab=10\n"));
        assert!(text.contains("seed.rng=7\n"));
        assert!(text.contains("input.0.sha256=ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad\n"));
    }

    #[test]
    fn manifest_sits_next_to_artifact() {
        assert_eq!(
            manifest_path_for(Path::new("out/m.ckpt")),
            PathBuf::from("out/m.ckpt.manifest")
        );
    }
}
