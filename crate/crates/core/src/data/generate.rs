use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::data::preprocess::{IMAGE_COLS, IMAGE_ROWS};
use crate::data::shift::{apply_domain_shift, DomainShiftConfig};
use crate::data::{
    quantize_image, save_grayscale_png, DatasetManifest, Domain, GazeSample, ImageSource,
    ManifestRecord, Split,
};
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, par_chunk_map, rng_from};
use crate::Elem;

/// Pinhole projection constant: the iris center moves `c * g/gz` pixels
/// from the image center per unit of tangent. 20 keeps the iris inside
/// the eye opening for the default gaze ranges.
pub const PROJECTION_C: f64 = 20.0;

const CENTER_ROW: f64 = (IMAGE_ROWS as f64 - 1.0) / 2.0;
const CENTER_COL: f64 = (IMAGE_COLS as f64 - 1.0) / 2.0;

/// Draws a unit gaze direction whose angle from the optical axis (0,0,1)
/// is at most `polar_range_deg`, with horizontal (yaw) extent additionally
/// capped by `azimuth_range_deg`.
///
/// Sampling is uniform over an elliptical disc in (yaw, pitch) space with
/// semi-axes `(min(azimuth, polar), polar)`; since both semi-axes are at
/// most the polar range and the spherical hypotenuse satisfies
/// `arccos(cos yaw · cos pitch) <= sqrt(yaw² + pitch²)`, every draw
/// respects the polar bound.
pub fn sample_gaze(rng_seed: u64, polar_range_deg: f64, azimuth_range_deg: f64) -> Result<[f64; 3]> {
    validate_range("polar-range", polar_range_deg)?;
    validate_range("azimuth-range", azimuth_range_deg)?;
    if polar_range_deg == 0.0 {
        return Ok([0.0, 0.0, 1.0]);
    }
    let polar = polar_range_deg.to_radians();
    let semi_yaw = azimuth_range_deg.to_radians().min(polar);
    let mut rng = rng_from(rng_seed);
    let r = rng.gen::<f64>().sqrt();
    let ang = 2.0 * PI * rng.gen::<f64>();
    let yaw = r * ang.cos() * semi_yaw;
    let pitch = r * ang.sin() * polar;
    Ok([
        yaw.sin() * pitch.cos(),
        pitch.sin(),
        yaw.cos() * pitch.cos(),
    ])
}

fn validate_range(name: &str, deg: f64) -> Result<()> {
    if !(0.0..90.0).contains(&deg) {
        return Err(Error::Config(format!(
            "{name} must lie in [0°, 90°), got {deg}°"
        )));
    }
    Ok(())
}

/// Appearance parameters of the procedural eye. Intensity levels are in
/// the output range [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeStyle {
    pub sclera_rx: f64,
    pub sclera_ry: f64,
    pub iris_radius: f64,
    /// Pupil radius as a fraction of the iris radius.
    pub pupil_ratio: f64,
    pub skin_level: f64,
    pub sclera_level: f64,
    pub iris_level: f64,
    pub pupil_level: f64,
    pub glint_level: f64,
    pub glint_radius: f64,
    /// Darkening of the sclera toward the upper lid.
    pub lid_shading: f64,
    /// Per-pixel Gaussian texture noise amplitude.
    pub texture_noise: f64,
}

impl Default for EyeStyle {
    fn default() -> Self {
        EyeStyle {
            sclera_rx: 24.0,
            sclera_ry: 12.0,
            iris_radius: 9.0,
            pupil_ratio: 0.42,
            skin_level: 0.40,
            sclera_level: 0.75,
            iris_level: -0.45,
            pupil_level: -0.92,
            glint_level: 0.90,
            glint_radius: 1.2,
            lid_shading: 0.30,
            texture_noise: 0.04,
        }
    }
}

impl EyeStyle {
    /// Per-sample appearance variation: mild, zero-mean perturbations of
    /// geometry and shading scaled by `amount` (1 = default spread).
    pub fn jittered(&self, rng: &mut ChaCha20Rng, amount: f64) -> EyeStyle {
        let mut j = |spread: f64| (rng.gen::<f64>() * 2.0 - 1.0) * spread * amount;
        EyeStyle {
            sclera_rx: self.sclera_rx + j(1.5),
            sclera_ry: self.sclera_ry + j(1.0),
            iris_radius: self.iris_radius + j(0.8),
            pupil_ratio: self.pupil_ratio,
            skin_level: self.skin_level + j(0.04),
            sclera_level: self.sclera_level + j(0.04),
            iris_level: self.iris_level + j(0.04),
            pupil_level: self.pupil_level,
            glint_level: self.glint_level,
            glint_radius: self.glint_radius,
            lid_shading: self.lid_shading + j(0.08),
            texture_noise: self.texture_noise,
        }
    }
}

/// Continuous iris center (row, col) under pinhole projection. Gaze +x
/// moves the iris toward higher columns; +y (up) toward lower rows.
pub fn iris_center(gaze: [f64; 3]) -> Result<(f64, f64)> {
    let [gx, gy, gz] = gaze;
    if gz <= 0.0 {
        return Err(Error::Domain(format!(
            "gaze z component must be positive (looking at the camera), got {gz}"
        )));
    }
    Ok((
        CENTER_ROW - PROJECTION_C * gy / gz,
        CENTER_COL + PROJECTION_C * gx / gz,
    ))
}

/// Soft disc coverage from a signed edge distance (negative inside):
/// a one-pixel anti-aliased edge.
fn coverage(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Renders a 35x55 eye image in [-1, 1]: elliptical sclera, iris whose
/// center is displaced by pinhole projection of the gaze, concentric
/// pupil, catchlight, lid shading, and seeded texture noise. Deterministic
/// in (gaze, style, seed).
pub fn generate_synthetic_eye(gaze: [f64; 3], style: &EyeStyle, seed: u64) -> Result<Array2<Elem>> {
    let norm = gaze.iter().map(|&v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::DegenerateVector(format!(
            "gaze must be unit length, got norm {norm}"
        )));
    }
    let (icy, icx) = iris_center(gaze)?;
    let pupil_radius = style.iris_radius * style.pupil_ratio;
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut img = Array2::<f64>::zeros((IMAGE_ROWS, IMAGE_COLS));
    for r in 0..IMAGE_ROWS {
        for c in 0..IMAGE_COLS {
            let y = r as f64 - CENTER_ROW;
            let x = c as f64 - CENTER_COL;
            let mut v = style.skin_level + 0.06 * (y / CENTER_ROW);
            let rho = ((x / style.sclera_rx).powi(2) + (y / style.sclera_ry).powi(2)).sqrt();
            let d_open = (rho - 1.0) * style.sclera_ry.min(style.sclera_rx);
            let a_open = coverage(d_open);
            if a_open > 0.0 {
                let shade = style.lid_shading * (-y / style.sclera_ry).max(0.0);
                v = lerp(v, style.sclera_level - shade, a_open);
                let dy = r as f64 - icy;
                let dx = c as f64 - icx;
                let rad = (dx * dx + dy * dy).sqrt();
                let a_iris = coverage(rad - style.iris_radius) * a_open;
                if a_iris > 0.0 {
                    // radial striation gives the iris internal structure
                    let striation = 0.10 * (6.0 * dy.atan2(dx)).cos();
                    v = lerp(v, style.iris_level + striation, a_iris);
                }
                let a_pupil = coverage(rad - pupil_radius) * a_open;
                if a_pupil > 0.0 {
                    v = lerp(v, style.pupil_level, a_pupil);
                }
                // catchlight up-right of the iris center
                let gdx = dx - 3.5;
                let gdy = dy + 3.5;
                let a_glint =
                    coverage((gdx * gdx + gdy * gdy).sqrt() - style.glint_radius) * a_open;
                if a_glint > 0.0 {
                    v = lerp(v, style.glint_level, a_glint);
                }
            }
            // one draw per pixel in row-major order, independent of geometry
            let n = noise.sample(&mut rng);
            img[[r, c]] = (v + style.texture_noise * n).clamp(-1.0, 1.0);
        }
    }
    Ok(img.mapv(|v| v as Elem))
}

/// Per-domain, per-split sample counts.
#[derive(Clone, Copy, Debug, Default)]
pub struct SplitCounts {
    pub source_train: usize,
    pub source_val: usize,
    pub source_test: usize,
    pub target_train: usize,
    pub target_val: usize,
    pub target_test: usize,
}

impl SplitCounts {
    pub fn get(&self, domain: Domain, split: Split) -> usize {
        match (domain, split) {
            (Domain::Source, Split::Train) => self.source_train,
            (Domain::Source, Split::Val) => self.source_val,
            (Domain::Source, Split::Test) => self.source_test,
            (Domain::Target, Split::Train) => self.target_train,
            (Domain::Target, Split::Val) => self.target_val,
            (Domain::Target, Split::Test) => self.target_test,
        }
    }
}

/// Everything needed to synthesize a two-domain dataset deterministically.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub polar_range_deg: f64,
    pub azimuth_range_deg: f64,
    pub style: EyeStyle,
    /// Scale of per-sample style jitter (0 disables it).
    pub style_jitter: f64,
    /// Photometric shift applied to target-domain samples; its seed field
    /// is replaced per sample.
    pub shift: DomainShiftConfig,
    pub counts: SplitCounts,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            polar_range_deg: 25.0,
            azimuth_range_deg: 20.0,
            style: EyeStyle::default(),
            style_jitter: 1.0,
            shift: DomainShiftConfig::identity(0),
            counts: SplitCounts::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        validate_range("polar-range", self.polar_range_deg)?;
        validate_range("azimuth-range", self.azimuth_range_deg)?;
        self.shift.validate()
    }
}

/// Synthesizes one sample. Pure in (config, domain, split, index): every
/// random stream is derived from those four values.
pub fn generate_sample(
    config: &GeneratorConfig,
    domain: Domain,
    split: Split,
    index: usize,
) -> Result<GazeSample> {
    let sample_seed = derive_seed(config.seed, &format!("sample/{domain}/{split}/{index}"));
    let gaze = sample_gaze(
        derive_seed(sample_seed, "gaze"),
        config.polar_range_deg,
        config.azimuth_range_deg,
    )?;
    let mut style_rng = rng_from(derive_seed(sample_seed, "style"));
    let style = config.style.jittered(&mut style_rng, config.style_jitter);
    let mut image = generate_synthetic_eye(gaze, &style, derive_seed(sample_seed, "render"))?;
    if domain == Domain::Target {
        let shift = config.shift.with_seed(derive_seed(sample_seed, "shift"));
        image = apply_domain_shift(&image, &shift)?;
    }
    Ok(GazeSample {
        image,
        gaze: [gaze[0] as Elem, gaze[1] as Elem, gaze[2] as Elem],
        domain,
    })
}

fn synthesize_records(
    config: &GeneratorConfig,
    domain: Domain,
    split: Split,
    count: usize,
    labeled: bool,
) -> Result<Vec<(Array2<u8>, Option<[f64; 3]>)>> {
    let chunks = par_chunk_map(count, 64, |range| {
        range
            .map(|i| {
                let sample = generate_sample(config, domain, split, i)?;
                let gaze = labeled.then(|| {
                    let [x, y, z] = sample.gaze;
                    [x as f64, y as f64, z as f64]
                });
                Ok((quantize_image(&sample.image), gaze))
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(count);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// True when records of this (domain, split) carry gaze labels: target
/// training data is the one unlabeled corner of the grid.
pub fn split_is_labeled(domain: Domain, split: Split) -> bool {
    !(domain == Domain::Target && split == Split::Train)
}

/// Builds an in-memory manifest (inline pixel records, no filesystem).
pub fn generate_inline_manifest(
    config: &GeneratorConfig,
    domain: Domain,
    split: Split,
    count: usize,
) -> Result<DatasetManifest> {
    config.validate()?;
    let labeled = split_is_labeled(domain, split);
    let records = synthesize_records(config, domain, split, count, labeled)?
        .into_iter()
        .map(|(grid, gaze)| ManifestRecord {
            image: ImageSource::Inline(grid),
            gaze,
            domain,
        })
        .collect();
    DatasetManifest::new(records, split, ".")
}

/// One generated manifest on disk.
#[derive(Debug)]
pub struct GeneratedManifest {
    pub domain: Domain,
    pub split: Split,
    pub path: PathBuf,
    pub count: usize,
}

/// Renders every configured split to `out_dir/images/*.png` and writes one
/// CSV manifest per nonempty (domain, split).
pub fn generate_dataset_to_disk(
    config: &GeneratorConfig,
    out_dir: &Path,
) -> Result<Vec<GeneratedManifest>> {
    config.validate()?;
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut outputs = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        for split in [Split::Train, Split::Val, Split::Test] {
            let count = config.counts.get(domain, split);
            if count == 0 {
                continue;
            }
            let labeled = split_is_labeled(domain, split);
            let mut records = Vec::with_capacity(count);
            for (i, (grid, gaze)) in synthesize_records(config, domain, split, count, labeled)?
                .into_iter()
                .enumerate()
            {
                let name = format!("{domain}_{split}_{i:06}.png");
                save_grayscale_png(&image_dir.join(&name), &grid)?;
                records.push(ManifestRecord {
                    image: ImageSource::Path(PathBuf::from("images").join(&name)),
                    gaze,
                    domain,
                });
            }
            let manifest = DatasetManifest::new(records, split, out_dir)?;
            let path = out_dir.join(format!("{domain}_{split}.csv"));
            manifest.save_csv(&path)?;
            outputs.push(GeneratedManifest {
                domain,
                split,
                path,
                count,
            });
        }
    }
    Ok(outputs)
}
