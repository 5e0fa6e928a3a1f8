//! Artificial ambient-darkness augmentation.
//!
//! Pixels are scaled in the stored (gamma-encoded) 8-bit space. Factors are
//! held in millionths so the per-channel arithmetic is exact integer math:
//! `v -> floor(v * f + 1/2)`, identical on every platform.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{ImageRecord, PixelGrid, WeatherCondition, WeatherKind};

const SCALE: u64 = 1_000_000;

/// Multiplier in `[0, 1]`; 1 keeps the image, 0 makes it black. Values are
/// quantized to six decimal places.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DarknessFactor {
    millionths: u32,
}

impl DarknessFactor {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::DarknessOutOfRange(value));
        }
        Ok(Self {
            millionths: (value * SCALE as f64).round() as u32,
        })
    }

    /// `tenths / 10`, exactly.
    pub fn tenths(tenths: u32) -> Result<Self> {
        if tenths > 10 {
            return Err(Error::DarknessOutOfRange(f64::from(tenths) / 10.0));
        }
        Ok(Self {
            millionths: tenths * 100_000,
        })
    }

    pub const ORIGINAL: DarknessFactor = DarknessFactor {
        millionths: SCALE as u32,
    };

    pub fn value(self) -> f64 {
        f64::from(self.millionths) / SCALE as f64
    }

    pub fn millionths(self) -> u32 {
        self.millionths
    }

    /// Scales one channel value with round-half-up.
    pub fn scale(self, v: u8) -> u8 {
        ((u64::from(v) * u64::from(self.millionths) + SCALE / 2) / SCALE).min(255) as u8
    }

    /// Suffix appended to augmented file stems, e.g. `_d0.4`.
    pub fn file_suffix(self) -> String {
        format!("_d{:?}", self.value())
    }
}

impl fmt::Display for DarknessFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for DarknessFactor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for DarknessFactor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        DarknessFactor::new(f64::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

/// 0.0, 0.1, ..., 1.0.
pub fn default_ladder() -> Vec<DarknessFactor> {
    (0..=10)
        .map(|k| DarknessFactor {
            millionths: k * 100_000,
        })
        .collect()
}

/// Darkens every channel. Geometry is untouched; the image's weather becomes
/// ambient darkness at the accumulated factor.
pub fn apply_darkness(image: &ImageRecord, factor: DarknessFactor) -> Result<ImageRecord> {
    let pixels = image
        .pixels
        .as_ref()
        .ok_or(Error::MissingPixels(image.image_id))?;
    if !pixels.is_consistent() {
        return Err(Error::PixelShape(image.image_id));
    }
    let data = pixels.data.iter().map(|&v| factor.scale(v)).collect();
    let previous = match image.weather.kind {
        WeatherKind::AmbientDarkness => image.weather.intensity(),
        _ => 1.0,
    };
    let mut out = image.clone();
    out.pixels = Some(PixelGrid {
        width: pixels.width,
        height: pixels.height,
        data,
    });
    out.weather = WeatherCondition::new(WeatherKind::AmbientDarkness, previous * factor.value())?;
    Ok(out)
}

fn suffixed(file_name: &str, factor: DarknessFactor) -> String {
    let path = Path::new(file_name);
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(file_name);
    let suffix = factor.file_suffix();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => {
            let parent = path
                .parent()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            let name = format!("{stem}{suffix}.{ext}");
            if parent.is_empty() {
                name
            } else {
                format!("{parent}/{name}")
            }
        }
        None => format!("{file_name}{suffix}"),
    }
}

/// One darkened copy of the corpus per factor. Annotations are shared
/// unchanged; file names gain the factor suffix.
pub fn darkness_sweep(
    corpus: &Corpus,
    factors: &[DarknessFactor],
) -> Result<Vec<(DarknessFactor, Corpus)>> {
    if factors.is_empty() {
        return Err(Error::Config(
            "darkness sweep needs at least one factor".into(),
        ));
    }
    factors
        .iter()
        .map(|&factor| {
            let images = corpus
                .images
                .values()
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|img| {
                    let mut dark = apply_darkness(img, factor)?;
                    dark.file_name = suffixed(&img.file_name, factor);
                    Ok(dark)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = Corpus::new(images, corpus.annotations.clone())?;
            out.provenance = corpus.provenance.clone();
            out.provenance.push(format!("darken(factor={factor})"));
            Ok((factor, out))
        })
        .collect()
}

/// Reads every image's pixels from `dir/<file_name>` as 8-bit RGB.
pub fn load_pixels(corpus: &Corpus, dir: &Path) -> Result<Corpus> {
    let mut out = corpus.clone();
    out.images
        .par_iter_mut()
        .try_for_each(|(_, img)| -> Result<()> {
            let path = dir.join(&img.file_name);
            let rgb = image::open(&path)
                .map_err(|e| Error::load(&path, e.to_string()))?
                .to_rgb8();
            if rgb.width() != img.width || rgb.height() != img.height {
                return Err(Error::PixelShape(img.image_id));
            }
            img.pixels = Some(PixelGrid {
                width: rgb.width(),
                height: rgb.height(),
                data: rgb.into_raw(),
            });
            Ok(())
        })?;
    Ok(out)
}

/// Writes every image that carries pixels to `dir/<file_name>` as PNG.
pub fn save_pixels(corpus: &Corpus, dir: &Path) -> Result<()> {
    corpus
        .images
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .try_for_each(|img| -> Result<()> {
            let Some(pixels) = &img.pixels else {
                return Ok(());
            };
            let buffer =
                image::RgbImage::from_raw(pixels.width, pixels.height, pixels.data.clone())
                    .ok_or(Error::PixelShape(img.image_id))?;
            let path = dir.join(&img.file_name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            buffer.save_with_format(&path, image::ImageFormat::Png)?;
            Ok(())
        })
}
