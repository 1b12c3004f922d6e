//! Dataset persistence: feature CSV plus a JSON manifest sidecar.
//!
//! The CSV schema is `subject,session,trial,label,f0..f{F-1}`. Floats are
//! written in shortest round-trip form, so save -> load reproduces every bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Dataset, Manifest, Sample};
use crate::error::{Error, Result};

/// Manifest sidecar location for a dataset CSV: `foo.csv` -> `foo.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

pub fn save_dataset(dataset: &Dataset, csv_path: &Path) -> Result<()> {
    let f = dataset.manifest.feature_dim;
    let mut out = String::new();
    out.push_str("subject,session,trial,label");
    for i in 0..f {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for s in &dataset.samples {
        if s.features.len() != f {
            return Err(Error::shape(
                "save_dataset",
                format!("{f} features"),
                format!("{} on sample {}", s.features.len(), s.id),
            ));
        }
        if s.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "sample {} has a non-finite feature; refusing to write it",
                s.id
            )));
        }
        out.push_str(&format!("{},{},{},{}", s.subject, s.session, s.trial, s.label));
        for &x in &s.features {
            out.push(',');
            out.push_str(&format!("{x}"));
        }
        out.push('\n');
    }
    write_atomic(csv_path, out.as_bytes())?;

    let manifest_json = serde_json::to_string_pretty(&dataset.manifest)?;
    write_atomic(&manifest_path(csv_path), manifest_json.as_bytes())?;
    Ok(())
}

pub fn load_dataset(csv_path: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(csv_path);
    let manifest_text = fs::read_to_string(&manifest_file)
        .map_err(|e| Error::io(format!("reading manifest {}", manifest_file.display()), e))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.label_names.len() != manifest.n_classes {
        return Err(Error::Data(format!(
            "manifest declares {} classes but {} label names",
            manifest.n_classes,
            manifest.label_names.len()
        )));
    }

    let text = fs::read_to_string(csv_path)
        .map_err(|e| Error::io(format!("reading dataset {}", csv_path.display()), e))?;
    let path_str = csv_path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path_str.clone(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty dataset file".into()))?;
    let expected_header = {
        let mut h = String::from("subject,session,trial,label");
        for i in 0..manifest.feature_dim {
            h.push_str(&format!(",f{i}"));
        }
        h
    };
    if header.trim_end() != expected_header {
        return Err(parse_err(
            1,
            format!(
                "unexpected header (want `subject,session,trial,label,f0..f{}`)",
                manifest.feature_dim.saturating_sub(1)
            ),
        ));
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = 4 + manifest.feature_dim;
        if fields.len() != expected {
            return Err(parse_err(
                line_no,
                format!(
                    "row has {} feature values, manifest declares {}",
                    fields.len().saturating_sub(4),
                    manifest.feature_dim
                ),
            ));
        }
        let parse_u32 = |s: &str, what: &str| -> Result<u32> {
            s.parse()
                .map_err(|_| parse_err(line_no, format!("invalid {what}: `{s}`")))
        };
        let subject = parse_u32(fields[0], "subject")?;
        let session = parse_u32(fields[1], "session")?;
        let trial = parse_u32(fields[2], "trial")?;
        let label = parse_u32(fields[3], "label")?;
        if label as usize >= manifest.n_classes {
            return Err(parse_err(
                line_no,
                format!(
                    "unknown label {label}: manifest declares {} classes",
                    manifest.n_classes
                ),
            ));
        }
        let mut features = Vec::with_capacity(manifest.feature_dim);
        for raw in &fields[4..] {
            let x: f64 = raw
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid feature value: `{raw}`")))?;
            if !x.is_finite() {
                return Err(parse_err(line_no, format!("non-finite feature value: `{raw}`")));
            }
            features.push(x);
        }
        samples.push(Sample {
            id: samples.len() as u64,
            subject,
            session,
            trial,
            label,
            features,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(1, "dataset has a header but no rows".into()));
    }
    Ok(Dataset { samples, manifest })
}

/// SHA-256 of the file bytes, hex-encoded.
pub fn dataset_checksum(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)
            .map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}
