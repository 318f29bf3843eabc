//! Fingerprint inputs on disk: `.min` templates, skeleton images and
//! evaluation dataset directories.

use std::fs::{self, File};
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use credmask_core::minutiae::{extract_minutiae, parse_min, BinaryImage, MinParseError};
use credmask_core::{MinutiaeError, Template};
use image::codecs::pnm::{PnmDecoder, PnmSubtype};
use image::DynamicImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: MinParseError },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: unsupported image type; expected P1, P4 or P5")]
    UnsupportedImage { path: PathBuf },
    #[error("{path}: {source}")]
    Minutiae { path: PathBuf, source: MinutiaeError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("dataset {0}: {1}")]
    Dataset(PathBuf, &'static str),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TemplateError + '_ {
    move |source| TemplateError::Io { path: path.to_path_buf(), source }
}

/// Reads a `.min` file; the template's source id is the file stem.
pub fn read_min(path: &Path) -> Result<Template, TemplateError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut t = parse_min(&text).map_err(|source| TemplateError::Parse { path: path.to_path_buf(), source })?;
    t.source_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    Ok(t)
}

/// Loads a skeleton image. PGM pixels above 127 are ridge; in PBM the set
/// (black) bits are ridge.
pub fn read_skeleton(path: &Path) -> Result<BinaryImage, TemplateError> {
    let image_err = |source| TemplateError::Image { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err(path))?;
    let decoder = PnmDecoder::new(BufReader::new(file)).map_err(image_err)?;
    let bitmap = match decoder.subtype() {
        PnmSubtype::Bitmap(_) => true,
        PnmSubtype::Graymap(_) => false,
        _ => return Err(TemplateError::UnsupportedImage { path: path.to_path_buf() }),
    };
    let luma = DynamicImage::from_decoder(decoder).map_err(image_err)?.into_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let pixels = luma
        .into_raw()
        .into_iter()
        .map(|v| u8::from(if bitmap { v == 0 } else { v > 127 }))
        .collect();
    BinaryImage::from_pixels(w, h, pixels).map_err(|source| TemplateError::Minutiae { path: path.to_path_buf(), source })
}

/// Extracts a template from a skeleton image.
pub fn extract_from_image(path: &Path, margin: usize) -> Result<Template, TemplateError> {
    let img = read_skeleton(path)?;
    let mut t =
        extract_minutiae(&img, margin).map_err(|source| TemplateError::Minutiae { path: path.to_path_buf(), source })?;
    t.source_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    Ok(t)
}

/// `.min` files are parsed; anything else is treated as a skeleton image.
pub fn load_template(path: &Path, margin: usize) -> Result<Template, TemplateError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("min")) {
        read_min(path)
    } else {
        extract_from_image(path, margin)
    }
}

/// `enrolled.min` plus `genuine/*.min` and `impostor/*.min` probes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub enrolled: Template,
    pub genuine: Vec<Template>,
    pub impostor: Vec<Template>,
}

fn read_dir_min(dir: &Path) -> Result<Vec<Template>, TemplateError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "min") && p.is_file());
    paths.sort();
    paths.iter().map(|p| read_min(p)).collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, TemplateError> {
    let enrolled = read_min(&dir.join("enrolled.min"))?;
    let genuine = read_dir_min(&dir.join("genuine"))?;
    let impostor = read_dir_min(&dir.join("impostor"))?;
    if genuine.is_empty() {
        return Err(TemplateError::Dataset(dir.to_path_buf(), "no genuine probes"));
    }
    if impostor.is_empty() {
        return Err(TemplateError::Dataset(dir.to_path_buf(), "no impostor probes"));
    }
    Ok(Dataset { enrolled, genuine, impostor })
}
