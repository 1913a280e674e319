//! Dataset acquisition with hash verification.
//!
//! Each file is fetched into `<target>/<name>.part`, hashed while streaming,
//! checked against the pinned hash when one is known, then renamed into place.
//! A `<name>.lock` marker created with `create_new` serialises concurrent
//! writers of the same file. The manifest (`manifest.json`) records size and
//! sha256 of every archive; a rerun re-hashes files on disk and downloads
//! nothing when they match.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One archive of a dataset distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteFile {
    pub file_name: &'static str,
    pub default_url: &'static str,
    /// Known sha256 (lowercase hex), when pinned.
    pub sha256: Option<&'static str>,
    /// Sub-directory the archive is extracted into (`""` for the target root).
    pub extract_to: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSource {
    pub name: String,
    pub files: Vec<RemoteFile>,
}

/// Names accepted by [`download_dataset`].
pub const KNOWN_DATASETS: [&str; 3] = ["mind-small", "mind-large", "ebnerd-demo"];

pub fn dataset_source(name: &str) -> Result<DatasetSource, CorpusError> {
    let mind = |file_name: &'static str, default_url: &'static str, split: &'static str| RemoteFile {
        file_name,
        default_url,
        sha256: None,
        extract_to: Some(split),
    };
    let files = match name {
        "mind-small" => vec![
            mind("MINDsmall_train.zip", "https://mind201910small.blob.core.windows.net/release/MINDsmall_train.zip", "train"),
            mind("MINDsmall_dev.zip", "https://mind201910small.blob.core.windows.net/release/MINDsmall_dev.zip", "dev"),
        ],
        "mind-large" => vec![
            mind("MINDlarge_train.zip", "https://mind201910small.blob.core.windows.net/release/MINDlarge_train.zip", "train"),
            mind("MINDlarge_dev.zip", "https://mind201910small.blob.core.windows.net/release/MINDlarge_dev.zip", "dev"),
            mind("MINDlarge_test.zip", "https://mind201910small.blob.core.windows.net/release/MINDlarge_test.zip", "test"),
        ],
        "ebnerd-demo" => vec![RemoteFile {
            file_name: "ebnerd_demo.zip",
            default_url: "https://ebnerd-dataset.s3.eu-west-1.amazonaws.com/ebnerd_demo.zip",
            sha256: None,
            extract_to: Some(""),
        }],
        other => return Err(CorpusError::UnknownDataset(other.to_string())),
    };
    Ok(DatasetSource { name: name.to_string(), files })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadManifest {
    pub dataset_name: String,
    pub files: Vec<ManifestEntry>,
    /// Bytes transferred by the call that produced this manifest.
    #[serde(default)]
    pub bytes_downloaded: u64,
}

impl DownloadManifest {
    pub fn load(target_dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(target_dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

#[derive(Debug, Clone)]
pub struct DownloadOptions {
    pub attempts: u32,
    pub base_delay: Duration,
    pub extract: bool,
}

impl Default for DownloadOptions {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500), extract: true }
    }
}

pub fn download_dataset(
    dataset_name: &str,
    target_dir: &Path,
    mirror_url: Option<&str>,
) -> Result<DownloadManifest, CorpusError> {
    let source = dataset_source(dataset_name)?;
    download_source(&source, target_dir, mirror_url, &DownloadOptions::default())
}

fn sha256_file(path: &Path) -> io::Result<(u64, String)> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((total, hex::encode(hasher.finalize())))
}

fn file_url(file: &RemoteFile, mirror: Option<&str>) -> String {
    match mirror {
        Some(base) => format!("{}/{}", base.trim_end_matches('/'), file.file_name),
        None => file.default_url.to_string(),
    }
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(path: PathBuf) -> Result<Self, CorpusError> {
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(CorpusError::Locked(path)),
            Err(e) => Err(CorpusError::io(&path, e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn fetch_once(url: &str, dest: &Path) -> Result<(u64, String), String> {
    let mut response = ureq::get(url).call().map_err(|e| e.to_string())?;
    let mut reader = response.body_mut().as_reader();
    let mut out = fs::File::create(dest).map_err(|e| e.to_string())?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = reader.read(&mut buf).map_err(|e| e.to_string())?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        out.write_all(&buf[..n]).map_err(|e| e.to_string())?;
        total += n as u64;
    }
    out.flush().map_err(|e| e.to_string())?;
    Ok((total, hex::encode(hasher.finalize())))
}

fn fetch_with_retry(url: &str, dest: &Path, opts: &DownloadOptions) -> Result<(u64, String), CorpusError> {
    let attempts = opts.attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        match fetch_once(url, dest) {
            Ok(done) => return Ok(done),
            Err(e) => {
                log::warn!("download of {url} failed (attempt {}/{attempts}): {e}", attempt + 1);
                last = e;
                let _ = fs::remove_file(dest);
                if attempt + 1 < attempts {
                    thread::sleep(opts.base_delay * 2u32.pow(attempt));
                }
            }
        }
    }
    Err(CorpusError::Network { url: url.to_string(), attempts, message: last })
}

/// Downloads (or re-verifies) every file of `source` and persists the manifest.
pub fn download_source(
    source: &DatasetSource,
    target_dir: &Path,
    mirror_url: Option<&str>,
    opts: &DownloadOptions,
) -> Result<DownloadManifest, CorpusError> {
    fs::create_dir_all(target_dir).map_err(|e| CorpusError::io(target_dir, e))?;
    let previous = DownloadManifest::load(target_dir);
    let mut entries = Vec::new();
    let mut downloaded = 0u64;

    for file in &source.files {
        let path = target_dir.join(file.file_name);
        let expected = file.sha256.map(str::to_string).or_else(|| {
            previous
                .as_ref()
                .and_then(|m| m.files.iter().find(|e| e.path.file_name() == path.file_name()))
                .map(|e| e.sha256.clone())
        });

        if path.is_file() {
            let (bytes, sha) = sha256_file(&path).map_err(|e| CorpusError::io(&path, e))?;
            if expected.as_deref().is_none_or(|h| h == sha) {
                entries.push(ManifestEntry { path: PathBuf::from(file.file_name), bytes, sha256: sha });
                extract_if_needed(file, &path, target_dir, opts)?;
                continue;
            }
            log::warn!("{} does not match its recorded hash, downloading again", path.display());
        }

        let _lock = LockGuard::acquire(target_dir.join(format!("{}.lock", file.file_name)))?;
        let part = target_dir.join(format!("{}.part", file.file_name));
        let url = file_url(file, mirror_url);
        let (bytes, sha) = fetch_with_retry(&url, &part, opts)?;
        if let Some(want) = file.sha256 {
            if want != sha {
                let _ = fs::remove_file(&part);
                return Err(CorpusError::HashMismatch {
                    file: path,
                    expected: want.to_string(),
                    actual: sha,
                });
            }
        }
        fs::rename(&part, &path).map_err(|e| CorpusError::io(&path, e))?;
        downloaded += bytes;
        entries.push(ManifestEntry { path: PathBuf::from(file.file_name), bytes, sha256: sha });
        extract_if_needed(file, &path, target_dir, opts)?;
    }

    let manifest = DownloadManifest { dataset_name: source.name.clone(), files: entries, bytes_downloaded: downloaded };
    let manifest_path = target_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CorpusError::format(&manifest_path, e))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| CorpusError::io(&manifest_path, e))?;
    Ok(manifest)
}

fn extract_if_needed(file: &RemoteFile, archive: &Path, target_dir: &Path, opts: &DownloadOptions) -> Result<(), CorpusError> {
    let Some(sub) = file.extract_to else { return Ok(()) };
    if !opts.extract {
        return Ok(());
    }
    let dest = target_dir.join(sub);
    let marker = target_dir.join(format!(".{}.extracted", file.file_name));
    if marker.is_file() {
        return Ok(());
    }
    let reader = fs::File::open(archive).map_err(|e| CorpusError::io(archive, e))?;
    let mut zip = zip::ZipArchive::new(reader).map_err(|e| CorpusError::format(archive, e))?;
    zip.extract(&dest).map_err(|e| CorpusError::format(archive, e))?;
    fs::write(&marker, b"").map_err(|e| CorpusError::io(&marker, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            download_dataset("unknown-ds", dir.path(), None),
            Err(CorpusError::UnknownDataset(_))
        ));
    }

    #[test]
    fn registry_file_lists() {
        let small = dataset_source("mind-small").unwrap();
        let names: Vec<_> = small.files.iter().map(|f| f.file_name).collect();
        assert_eq!(names, ["MINDsmall_train.zip", "MINDsmall_dev.zip"]);
        assert_eq!(dataset_source("mind-large").unwrap().files.len(), 3);
        assert_eq!(dataset_source("ebnerd-demo").unwrap().files.len(), 1);
    }

    #[test]
    fn mirror_url_replaces_host() {
        let f = &dataset_source("mind-small").unwrap().files[0];
        assert_eq!(file_url(f, Some("http://m/x/")), "http://m/x/MINDsmall_train.zip");
        assert!(file_url(f, None).starts_with("https://mind201910small.blob.core.windows.net/"));
    }

    #[test]
    fn held_lock_refuses_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lock");
        let _g = LockGuard::acquire(p.clone()).unwrap();
        assert!(matches!(LockGuard::acquire(p.clone()), Err(CorpusError::Locked(_))));
        drop(_g);
        assert!(LockGuard::acquire(p).is_ok());
    }
}
