//! Annotated image sets and the text manifest that lists them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::shape::{Shape4, LEFT_EYE, RIGHT_EYE, SHAPE_DIM};
use crate::imaging::{GrayImage, Rect};
use crate::synth::PROFILE_YAW;

/// A face box in a loaded image.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveRecord {
    pub image: Arc<GrayImage>,
    pub rect: Rect,
    /// Degrees in [-90, 90]; positive turns the face towards image right.
    pub yaw: f64,
    /// Landmarks normalised to `rect`.
    pub shape: Option<Shape4>,
    pub source: String,
}

/// Faces and face-free images, loaded into memory.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub positives: Vec<PositiveRecord>,
    pub negatives: Vec<(String, Arc<GrayImage>)>,
}

impl Dataset {
    pub fn negative_images(&self) -> Vec<Arc<GrayImage>> {
        self.negatives.iter().map(|(_, i)| i.clone()).collect()
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub enum ManifestEntry {
    Positive {
        path: PathBuf,
        rect: Rect,
        yaw: f64,
        shape: Option<Shape4>,
        line: usize,
    },
    Negative {
        path: PathBuf,
        line: usize,
    },
}

/// Parses manifest text. Relative image paths are resolved against `base`;
/// `origin` names the manifest in errors.
///
/// ```text
/// # comment
/// P faces/a.pgm 10 12 48 48 -35.0 0.3 0.4 0.6 0.4 0.45 0.6 0.45 0.78
/// N backgrounds/b.pgm
/// ```
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        match fields[0] {
            "N" => {
                if fields.len() != 2 {
                    return Err(err(format!("negative record needs 1 field, got {}", fields.len() - 1)));
                }
                out.push(ManifestEntry::Negative {
                    path: resolve(fields[1]),
                    line,
                });
            }
            "P" => {
                if fields.len() != 7 && fields.len() != 7 + SHAPE_DIM {
                    return Err(err(format!(
                        "positive record needs 6 or 14 fields, got {}",
                        fields.len() - 1
                    )));
                }
                let int = |k: usize| {
                    fields[k]
                        .parse::<usize>()
                        .map_err(|_| err(format!("field {k} ({:?}) is not a non-negative integer", fields[k])))
                };
                let rect = Rect::new(int(2)?, int(3)?, int(4)?, int(5)?);
                if rect.width == 0 || rect.height == 0 {
                    return Err(err("face box must have positive size".into()));
                }
                let yaw: f64 = fields[6]
                    .parse()
                    .map_err(|_| err(format!("yaw {:?} is not a number", fields[6])))?;
                if !(-90.0..=90.0).contains(&yaw) {
                    return Err(err(format!("yaw {yaw} outside [-90, 90]")));
                }
                let shape = if fields.len() > 7 {
                    let vals = fields[7..]
                        .iter()
                        .map(|f| f.parse::<f64>().map_err(|_| err(format!("landmark {f:?} is not a number"))))
                        .collect::<Result<Vec<f64>>>()?;
                    let s = Shape4::from_slice(&vals).map_err(|e| err(e.to_string()))?;
                    if !s.in_unit_square() {
                        return Err(err("landmarks must be normalised to [0, 1]".into()));
                    }
                    if yaw.abs() > PROFILE_YAW && s.point(LEFT_EYE) != s.point(RIGHT_EYE) {
                        return Err(err(format!(
                            "profile face (|yaw| > {PROFILE_YAW}) must annotate both eyes at the visible eye"
                        )));
                    }
                    Some(s)
                } else {
                    None
                };
                out.push(ManifestEntry::Positive {
                    path: resolve(fields[1]),
                    rect,
                    yaw,
                    shape,
                    line,
                });
            }
            other => return Err(err(format!("unknown record type {other:?}"))),
        }
    }
    Ok(out)
}

/// Reads and parses a manifest file.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, path)
}

/// Loads every image a manifest references, checking boxes against image
/// bounds. Images listed several times are read once.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let entries = read_manifest(path)?;
    let mut cache: HashMap<PathBuf, Arc<GrayImage>> = HashMap::new();
    let mut load = |p: &Path| -> Result<Arc<GrayImage>> {
        if let Some(img) = cache.get(p) {
            return Ok(img.clone());
        }
        let img = Arc::new(GrayImage::open(p)?);
        cache.insert(p.to_path_buf(), img.clone());
        Ok(img)
    };
    let mut ds = Dataset::default();
    for e in entries {
        match e {
            ManifestEntry::Positive {
                path: img_path,
                rect,
                yaw,
                shape,
                line,
            } => {
                let image = load(&img_path)?;
                if !rect.fits(image.width(), image.height()) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!(
                            "face box {rect:?} outside {}x{} image {}",
                            image.width(),
                            image.height(),
                            img_path.display()
                        ),
                    });
                }
                ds.positives.push(PositiveRecord {
                    image,
                    rect,
                    yaw,
                    shape,
                    source: img_path.display().to_string(),
                });
            }
            ManifestEntry::Negative { path: img_path, .. } => {
                let image = load(&img_path)?;
                ds.negatives.push((img_path.display().to_string(), image));
            }
        }
    }
    Ok(ds)
}

/// Manifest line for a face.
pub fn positive_line(path: &str, rect: &Rect, yaw: f64, shape: Option<&Shape4>) -> String {
    let mut s = format!("P {path} {} {} {} {} {yaw}", rect.x, rect.y, rect.width, rect.height);
    if let Some(shape) = shape {
        for v in shape.as_slice() {
            let _ = write!(s, " {v}");
        }
    }
    s
}

/// Writes every image of `ds` as PGM under `dir` plus `manifest.txt`;
/// returns the manifest path. Positives sharing an image are written once.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# P <image> <x> <y> <w> <h> <yaw> [<8 normalised landmarks>]\n# N <image>\n");
    let mut written: HashMap<*const GrayImage, String> = HashMap::new();
    for (i, p) in ds.positives.iter().enumerate() {
        let key = Arc::as_ptr(&p.image);
        let name = match written.get(&key) {
            Some(n) => n.clone(),
            None => {
                let n = format!("pos{i:05}.pgm");
                p.image.write_pgm(dir.join(&n))?;
                written.insert(key, n.clone());
                n
            }
        };
        manifest.push_str(&positive_line(&name, &p.rect, p.yaw, p.shape.as_ref()));
        manifest.push('\n');
    }
    for (i, (_, img)) in ds.negatives.iter().enumerate() {
        let n = format!("neg{i:05}.pgm");
        img.write_pgm(dir.join(&n))?;
        let _ = writeln!(manifest, "N {n}");
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
