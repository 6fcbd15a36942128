//! Dataset synthesis, domain shift, ingestion, and batching.
//!
//! The canonical on-disk form is a CSV manifest (`path,gx,gy,gz,domain,split`)
//! next to 8-bit grayscale PNGs; records may instead carry inline pixel
//! grids so fixture and benchmark datasets never touch the filesystem.

pub mod batching;
pub mod convert;
pub mod generate;
pub mod preprocess;
pub mod shift;

pub use batching::{
    iterate_batches, ArrayDataset, Batch, BatchProvider, LoadedDataset, SubsetProvider,
};
pub use convert::{convert_external_metadata, ConversionReport};
pub use generate::{
    generate_dataset_to_disk, generate_inline_manifest, generate_synthetic_eye, iris_center,
    sample_gaze, EyeStyle, GeneratorConfig, PROJECTION_C,
};
pub use preprocess::{luma_bt601, preprocess, IMAGE_COLS, IMAGE_ROWS};
pub use shift::{apply_domain_shift, DomainShiftConfig};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Elem;

/// Which side of the synthetic/real gap a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Ingestion(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Ingestion(format!("unknown split {other:?}"))),
        }
    }
}

/// A fully materialized training sample.
#[derive(Clone, Debug)]
pub struct GazeSample {
    /// 35x55 grid with values in [-1, 1].
    pub image: Array2<Elem>,
    /// Unit gaze direction; +x right, +y up, +z toward the camera.
    pub gaze: [Elem; 3],
    pub domain: Domain,
}

impl GazeSample {
    /// Checks the two type invariants: pixel range and unit gaze norm.
    pub fn validate(&self) -> Result<()> {
        if self.image.dim() != (IMAGE_ROWS, IMAGE_COLS) {
            return Err(Error::Shape(format!(
                "sample image is {:?}, expected ({IMAGE_ROWS}, {IMAGE_COLS})",
                self.image.dim()
            )));
        }
        if let Some(v) = self.image.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [-1, 1]")));
        }
        let norm = self.gaze.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateVector(format!(
                "gaze norm {norm} deviates from 1 by more than 1e-6"
            )));
        }
        Ok(())
    }
}

/// Where a record's pixels live.
#[derive(Clone, Debug)]
pub enum ImageSource {
    /// Path relative to the manifest's directory (or absolute).
    Path(PathBuf),
    /// Raw 8-bit grid held in memory; never serialized to CSV.
    Inline(Array2<u8>),
}

#[derive(Clone, Debug)]
pub struct ManifestRecord {
    pub image: ImageSource,
    /// Unit gaze, absent for unlabeled target-train data.
    pub gaze: Option<[f64; 3]>,
    pub domain: Domain,
}

/// An ordered list of records sharing one split.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split: Split,
    /// Directory that relative record paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, split: Split, root: impl Into<PathBuf>) -> Result<Self> {
        let manifest = DatasetManifest {
            records,
            split,
            root: root.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Source records must carry labels; any gaze present must be unit.
    pub fn validate(&self) -> Result<()> {
        for (i, rec) in self.records.iter().enumerate() {
            match rec.gaze {
                None if rec.domain == Domain::Source => {
                    return Err(Error::Ingestion(format!(
                        "record {i} is source-domain but has no gaze label"
                    )));
                }
                Some(g) => {
                    let norm = g.iter().map(|&v| v * v).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-3 {
                        return Err(Error::Ingestion(format!(
                            "record {i} gaze norm {norm} is not unit"
                        )));
                    }
                }
                None => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when every record carries a gaze label.
    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.gaze.is_some())
    }

    /// Loads one record's raw 8-bit grid.
    pub fn load_raw(&self, index: usize) -> Result<Array2<u8>> {
        match &self.records[index].image {
            ImageSource::Inline(grid) => Ok(grid.clone()),
            ImageSource::Path(rel) => {
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    self.root.join(rel)
                };
                load_grayscale_png(&path)
            }
        }
    }

    /// Reads the canonical CSV form. All rows must agree on the split;
    /// relative paths are interpreted against the manifest's directory.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
        let expected = ["path", "gx", "gy", "gz", "domain", "split"];
        let headers = reader
            .headers()
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Ingestion(format!(
                "manifest {} has header {:?}, expected {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut records = Vec::new();
        let mut split: Option<Split> = None;
        for (line, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
            if row.len() != 6 {
                return Err(Error::Ingestion(format!(
                    "manifest row {} has {} fields, expected 6",
                    line + 2,
                    row.len()
                )));
            }
            let gaze_fields = [&row[1], &row[2], &row[3]];
            let blank = gaze_fields.iter().filter(|f| f.is_empty()).count();
            let gaze = match blank {
                3 => None,
                0 => {
                    let mut g = [0.0f64; 3];
                    for (dst, field) in g.iter_mut().zip(gaze_fields) {
                        *dst = field.parse::<f64>().map_err(|e| {
                            Error::Ingestion(format!(
                                "manifest row {}: bad gaze component {field:?}: {e}",
                                line + 2
                            ))
                        })?;
                    }
                    Some(g)
                }
                _ => {
                    return Err(Error::Ingestion(format!(
                        "manifest row {}: gaze must be fully present or fully blank",
                        line + 2
                    )));
                }
            };
            let domain: Domain = row[4].parse()?;
            let row_split: Split = row[5].parse()?;
            match split {
                None => split = Some(row_split),
                Some(s) if s != row_split => {
                    return Err(Error::Ingestion(format!(
                        "manifest row {} split {row_split} conflicts with {s}",
                        line + 2
                    )));
                }
                Some(_) => {}
            }
            records.push(ManifestRecord {
                image: ImageSource::Path(PathBuf::from(&row[0])),
                gaze,
                domain,
            });
        }
        let split = split.ok_or_else(|| {
            Error::Ingestion(format!("manifest {} contains no records", path.display()))
        })?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        DatasetManifest::new(records, split, root)
    }

    /// Writes the canonical CSV form. Inline records have no on-disk
    /// identity and are rejected.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        writer
            .write_record(["path", "gx", "gy", "gz", "domain", "split"])
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
        for (i, rec) in self.records.iter().enumerate() {
            let rel = match &rec.image {
                ImageSource::Path(p) => p.to_string_lossy().into_owned(),
                ImageSource::Inline(_) => {
                    return Err(Error::Config(format!(
                        "record {i} holds inline pixels and cannot be written to CSV"
                    )));
                }
            };
            let (gx, gy, gz) = match rec.gaze {
                Some([x, y, z]) => (x.to_string(), y.to_string(), z.to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            writer
                .write_record([
                    rel.as_str(),
                    gx.as_str(),
                    gy.as_str(),
                    gz.as_str(),
                    &rec.domain.to_string(),
                    &self.split.to_string(),
                ])
                .map_err(|e| Error::Csv {
                    path: path.to_path_buf(),
                    source: e,
                })?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Maps a [-1, 1] value onto the 0..=255 grid (round to nearest).
pub fn quantize_pixel(v: Elem) -> u8 {
    (((v as f64 + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8
}

/// Quantizes a whole rendered image for PNG storage or inline records.
pub fn quantize_image(image: &Array2<Elem>) -> Array2<u8> {
    image.mapv(quantize_pixel)
}

/// Loads a PNG as an 8-bit gray grid (rows × cols). Color inputs are
/// reduced with the BT.601 luma weights.
pub fn load_grayscale_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = match img {
        image::DynamicImage::ImageLuma8(gray) => {
            Array2::from_shape_vec((h, w), gray.into_raw()).expect("luma buffer size")
        }
        other => {
            let rgb = other.to_rgb8();
            let mut grid = Array2::<u8>::zeros((h, w));
            for (x, y, pixel) in rgb.enumerate_pixels() {
                grid[[y as usize, x as usize]] = luma_bt601(pixel[0], pixel[1], pixel[2]);
            }
            grid
        }
    };
    Ok(grid)
}

/// Writes an 8-bit gray grid as PNG.
pub fn save_grayscale_png(path: &Path, grid: &Array2<u8>) -> Result<()> {
    let (h, w) = grid.dim();
    let buf = grid
        .as_standard_layout()
        .iter()
        .copied()
        .collect::<Vec<u8>>();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
