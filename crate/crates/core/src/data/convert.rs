use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{DatasetManifest, Domain, ImageSource, ManifestRecord, Split};
use crate::error::{Error, Result};

/// One line of the external metadata: an image name and a (not
/// necessarily unit) look vector. Extra fields are ignored.
#[derive(Deserialize)]
struct ExternalRecord {
    image: String,
    look_vec: Vec<f64>,
}

#[derive(Debug)]
pub struct RecordIssue {
    /// 1-based line number in the metadata file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ConversionReport {
    pub converted: usize,
    pub errors: Vec<RecordIssue>,
    pub warnings: Vec<String>,
}

/// Ingests UnityEyes-style JSON-lines metadata (`{"image": ..,
/// "look_vec": [x, y, z]}`) into a manifest rooted at `image_dir`.
///
/// Look vectors are re-normalized to unit length. A malformed line,
/// missing image, or degenerate vector is collected as a record-level
/// issue and conversion continues; only file-level failures abort.
pub fn convert_external_metadata(
    metadata: &Path,
    image_dir: &Path,
    domain: Domain,
    split: Split,
) -> Result<(DatasetManifest, ConversionReport)> {
    let file = std::fs::File::open(metadata).map_err(|e| Error::io(metadata, e))?;
    let reader = BufReader::new(file);
    let mut report = ConversionReport::default();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(metadata, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExternalRecord = match serde_json::from_str(&line) {
            Ok(rec) => rec,
            Err(e) => {
                report.errors.push(RecordIssue {
                    line: line_no,
                    message: format!("malformed JSON: {e}"),
                });
                continue;
            }
        };
        if parsed.look_vec.len() != 3 {
            report.errors.push(RecordIssue {
                line: line_no,
                message: format!(
                    "look_vec has {} components, expected 3",
                    parsed.look_vec.len()
                ),
            });
            continue;
        }
        if parsed.look_vec.iter().any(|v| !v.is_finite()) {
            report.errors.push(RecordIssue {
                line: line_no,
                message: "look_vec has non-finite components".into(),
            });
            continue;
        }
        let norm = parsed.look_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            report.errors.push(RecordIssue {
                line: line_no,
                message: "look_vec is numerically zero".into(),
            });
            continue;
        }
        let image_path = image_dir.join(&parsed.image);
        if !image_path.is_file() {
            report.errors.push(RecordIssue {
                line: line_no,
                message: format!("image {} does not exist", image_path.display()),
            });
            continue;
        }
        records.push(ManifestRecord {
            image: ImageSource::Path(PathBuf::from(&parsed.image)),
            gaze: Some([
                parsed.look_vec[0] / norm,
                parsed.look_vec[1] / norm,
                parsed.look_vec[2] / norm,
            ]),
            domain,
        });
        report.converted += 1;
    }
    if report.converted == 0 && report.errors.is_empty() {
        report
            .warnings
            .push(format!("metadata file {} contained no records", metadata.display()));
    }
    let manifest = DatasetManifest::new(records, split, image_dir)?;
    Ok((manifest, report))
}
