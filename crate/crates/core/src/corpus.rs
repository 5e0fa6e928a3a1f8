//! Corpus ingestion, curation and distance binning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{
    BodySize, BoundingBox, Detection, Gender, GroundTruthAnnotation, ImageId, ImageRecord,
    Lighting, PersonAttributes, SkinTone, WeatherCondition, PERSON,
};

/// Images plus their attributed person annotations.
///
/// Annotations are kept sorted by image id (stable within an image) and
/// always reference an image in `images`. `provenance` lists every curation
/// step applied, in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub images: BTreeMap<ImageId, ImageRecord>,
    pub annotations: Vec<GroundTruthAnnotation>,
    pub provenance: Vec<String>,
}

impl Corpus {
    pub fn new(
        images: impl IntoIterator<Item = ImageRecord>,
        annotations: Vec<GroundTruthAnnotation>,
    ) -> Result<Self> {
        let images: BTreeMap<ImageId, ImageRecord> =
            images.into_iter().map(|i| (i.image_id, i)).collect();
        if let Some(a) = annotations
            .iter()
            .find(|a| !images.contains_key(&a.image_id))
        {
            return Err(Error::Config(format!(
                "annotation {} references unknown image {}",
                a.id, a.image_id
            )));
        }
        let mut corpus = Self {
            images,
            annotations,
            provenance: Vec::new(),
        };
        corpus.annotations.sort_by_key(|a| a.image_id);
        Ok(corpus)
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// Annotations grouped per image, in image id order. Images without
    /// annotations map to an empty list.
    pub fn annotations_by_image(&self) -> BTreeMap<ImageId, Vec<&GroundTruthAnnotation>> {
        let mut map: BTreeMap<ImageId, Vec<&GroundTruthAnnotation>> =
            self.images.keys().map(|&id| (id, Vec::new())).collect();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a);
        }
        map
    }

    /// Keeps the listed images and their annotations, appending `step` to the
    /// provenance.
    fn retain_images(&self, keep: &BTreeSet<ImageId>, step: String) -> Corpus {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        Corpus {
            images: self
                .images
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(&id, img)| (id, img.clone()))
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id))
                .cloned()
                .collect(),
            provenance,
        }
    }

    /// Detections whose image survived curation. Detection files themselves
    /// are never curated.
    pub fn restrict_detections(&self, detections: &[Detection]) -> Vec<Detection> {
        detections
            .iter()
            .filter(|d| self.images.contains_key(&d.image_id))
            .cloned()
            .collect()
    }

    pub fn with_step(mut self, step: impl Into<String>) -> Self {
        self.provenance.push(step.into());
        self
    }
}

/// A rejected or dropped input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub corpus: Corpus,
    pub detections: Vec<Detection>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Deserialize)]
struct GroundTruthDocument {
    images: Vec<Value>,
    #[serde(default)]
    annotations: Vec<Value>,
    #[serde(default)]
    provenance: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ImageRow {
    id: ImageId,
    #[serde(default)]
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    weather: WeatherCondition,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    id: u64,
    image_id: ImageId,
    bbox: [f64; 4],
    #[serde(default)]
    attributes: PersonAttributes,
    #[serde(default = "person_label", skip_serializing_if = "is_person_label")]
    category: String,
}

fn person_label() -> String {
    PERSON.to_owned()
}

fn is_person_label(s: &str) -> bool {
    s == PERSON
}

/// Category as a name or a numeric id (COCO exports use `category_id: 1`).
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CategoryLabel {
    Name(String),
    Id(u64),
}

impl From<CategoryLabel> for String {
    fn from(c: CategoryLabel) -> Self {
        match c {
            CategoryLabel::Name(s) => s,
            CategoryLabel::Id(i) => i.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    image_id: ImageId,
    #[serde(alias = "category_id")]
    category: CategoryLabel,
    bbox: [f64; 4],
    score: f64,
}

fn syntax_error(origin: &Path, e: serde_json::Error) -> Error {
    Error::load(
        origin,
        format!("line {} column {}: {e}", e.line(), e.column()),
    )
}

fn clamped_box(raw: [f64; 4], image: &ImageRecord) -> Result<BoundingBox> {
    let [x, y, w, h] = raw;
    BoundingBox::new(x, y, w, h)?.clamp_to(f64::from(image.width), f64::from(image.height))
}

/// Parses a ground-truth document. Malformed records are rejected
/// individually and reported in the returned diagnostics.
pub fn parse_ground_truth(text: &str, origin: &Path) -> Result<(Corpus, Vec<Diagnostic>)> {
    let doc: GroundTruthDocument =
        serde_json::from_str(text).map_err(|e| syntax_error(origin, e))?;
    let mut diagnostics = Vec::new();
    let mut reject = |location: String, message: String| {
        log::warn!("{}: {location}: {message}", origin.display());
        diagnostics.push(Diagnostic { location, message });
    };

    let mut images = BTreeMap::new();
    for (i, value) in doc.images.into_iter().enumerate() {
        let parsed = serde_json::from_value::<ImageRow>(value)
            .map_err(Error::from)
            .and_then(|row| {
                ImageRecord::new(row.id, row.file_name, row.width, row.height, row.weather)
            });
        match parsed {
            Ok(img) if images.contains_key(&img.image_id) => reject(
                format!("images[{i}]"),
                format!("duplicate image id {}", img.image_id),
            ),
            Ok(img) => {
                images.insert(img.image_id, img);
            }
            Err(e) => reject(format!("images[{i}]"), e.to_string()),
        }
    }

    let mut annotations = Vec::new();
    for (i, value) in doc.annotations.into_iter().enumerate() {
        let row = match serde_json::from_value::<AnnotationRow>(value) {
            Ok(row) => row,
            Err(e) => {
                reject(format!("annotations[{i}]"), e.to_string());
                continue;
            }
        };
        let location = format!("annotations[{i}] (id {})", row.id);
        let Some(image) = images.get(&row.image_id) else {
            reject(location, format!("unknown image id {}", row.image_id));
            continue;
        };
        match clamped_box(row.bbox, image) {
            Ok(bbox) => annotations.push(GroundTruthAnnotation {
                id: row.id,
                image_id: row.image_id,
                bbox,
                attributes: row.attributes,
                category: row.category,
            }),
            Err(e) => reject(location, e.to_string()),
        }
    }

    let mut corpus = Corpus::new(images.into_values(), annotations)?;
    corpus.provenance = doc.provenance;
    Ok((corpus, diagnostics))
}

/// Parses a detection array against `corpus`. Detections referencing unknown
/// images are dropped with a warning; category labels are kept as given.
pub fn parse_detections(
    text: &str,
    origin: &Path,
    corpus: &Corpus,
) -> Result<(Vec<Detection>, Vec<Diagnostic>)> {
    let rows: Vec<Value> = serde_json::from_str(text).map_err(|e| syntax_error(origin, e))?;
    let mut diagnostics = Vec::new();
    let mut detections = Vec::with_capacity(rows.len());
    for (i, value) in rows.into_iter().enumerate() {
        let location = format!("[{i}]");
        let parsed = serde_json::from_value::<DetectionRow>(value)
            .map_err(Error::from)
            .and_then(|row| {
                let image = corpus
                    .images
                    .get(&row.image_id)
                    .ok_or_else(|| Error::Config(format!("unknown image id {}", row.image_id)))?;
                let bbox = clamped_box(row.bbox, image)?;
                Detection::new(row.image_id, bbox, String::from(row.category), row.score)
            });
        match parsed {
            Ok(d) => detections.push(d),
            Err(e) => {
                log::warn!("{}: {location}: {e}; record dropped", origin.display());
                diagnostics.push(Diagnostic {
                    location,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((detections, diagnostics))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))
}

pub fn load_ground_truth(path: &Path) -> Result<(Corpus, Vec<Diagnostic>)> {
    parse_ground_truth(&read(path)?, path)
}

/// Loads a ground-truth file and a detection file.
pub fn load(annotation_path: &Path, detection_path: &Path) -> Result<Loaded> {
    let (corpus, mut diagnostics) = load_ground_truth(annotation_path)?;
    let (detections, det_diagnostics) =
        parse_detections(&read(detection_path)?, detection_path, &corpus)?;
    diagnostics.extend(det_diagnostics);
    Ok(Loaded {
        corpus,
        detections,
        diagnostics,
    })
}

pub fn ground_truth_to_json(corpus: &Corpus) -> Result<String> {
    let images: Vec<ImageRow> = corpus
        .images
        .values()
        .map(|i| ImageRow {
            id: i.image_id,
            file_name: i.file_name.clone(),
            width: i.width,
            height: i.height,
            weather: i.weather,
        })
        .collect();
    let annotations: Vec<AnnotationRow> = corpus
        .annotations
        .iter()
        .map(|a| AnnotationRow {
            id: a.id,
            image_id: a.image_id,
            bbox: a.bbox.into(),
            attributes: a.attributes.clone(),
            category: a.category.clone(),
        })
        .collect();
    let doc = serde_json::json!({
        "images": images,
        "annotations": annotations,
        "provenance": corpus.provenance,
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn detections_to_json(detections: &[Detection]) -> Result<String> {
    let rows: Vec<DetectionRow> = detections
        .iter()
        .map(|d| DetectionRow {
            image_id: d.image_id,
            category: CategoryLabel::Name(d.category.clone()),
            bbox: d.bbox.into(),
            score: d.confidence(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

pub fn write_ground_truth(corpus: &Corpus, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, ground_truth_to_json(corpus)?)?)
}

pub fn write_detections(detections: &[Detection], path: &Path) -> Result<()> {
    Ok(std::fs::write(path, detections_to_json(detections)?)?)
}

/// Attributes that curation can partition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKey {
    SkinTone,
    Gender,
    BodySize,
}

impl FromStr for AttributeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skin_tone" | "mst" => Ok(AttributeKey::SkinTone),
            "gender" => Ok(AttributeKey::Gender),
            "body_size" => Ok(AttributeKey::BodySize),
            other => Err(Error::Config(format!("unknown attribute `{other}`"))),
        }
    }
}

impl fmt::Display for AttributeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributeKey::SkinTone => "skin_tone",
            AttributeKey::Gender => "gender",
            AttributeKey::BodySize => "body_size",
        })
    }
}

/// One value of an [`AttributeKey`]. Unannotated skin tone is `SkinTone(None)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttributeValue {
    SkinTone(Option<SkinTone>),
    Gender(Gender),
    BodySize(BodySize),
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::SkinTone(Some(t)) => write!(f, "MST={}", t.value()),
            AttributeValue::SkinTone(None) => f.write_str("MST=unknown"),
            AttributeValue::Gender(g) => write!(f, "{g:?}"),
            AttributeValue::BodySize(b) => write!(f, "{b:?}"),
        }
    }
}

pub fn value_set(attributes: &PersonAttributes, key: AttributeKey) -> BTreeSet<AttributeValue> {
    match key {
        AttributeKey::SkinTone if attributes.skin_tones.is_empty() => {
            [AttributeValue::SkinTone(None)].into()
        }
        AttributeKey::SkinTone => attributes
            .skin_tones
            .iter()
            .map(|&t| AttributeValue::SkinTone(Some(t)))
            .collect(),
        AttributeKey::Gender => [AttributeValue::Gender(attributes.gender)].into(),
        AttributeKey::BodySize => [AttributeValue::BodySize(attributes.body_size)].into(),
    }
}

/// Keeps only images whose annotations all carry the same value set for
/// `key` (a spectrum `{2,3}` differs from `{2}`). Images without
/// annotations are kept.
pub fn curate_single_attribute(corpus: &Corpus, key: AttributeKey) -> Corpus {
    let keep: BTreeSet<ImageId> = corpus
        .annotations_by_image()
        .into_iter()
        .filter(|(_, anns)| {
            let mut sets = anns.iter().map(|a| value_set(&a.attributes, key));
            match sets.next() {
                Some(first) => sets.all(|s| s == first),
                None => true,
            }
        })
        .map(|(id, _)| id)
        .collect();
    let excluded = corpus.image_count() - keep.len();
    log::info!("curate_single_attribute({key}): excluded {excluded} mixed images");
    corpus.retain_images(
        &keep,
        format!(
            "curate_single_attribute({key}): kept {} images, excluded {excluded}",
            keep.len()
        ),
    )
}

/// For every value of `key`, samples `min(n, available)` of the images
/// containing that value, uniformly without replacement. Each value draws
/// from its own ChaCha8 stream of `seed`, so the selection is reproducible
/// across platforms. Images without annotations are dropped.
pub fn subsample_equal(corpus: &Corpus, key: AttributeKey, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("subsample size must be positive".into()));
    }
    let mut buckets: BTreeMap<AttributeValue, Vec<ImageId>> = BTreeMap::new();
    for (id, anns) in corpus.annotations_by_image() {
        let values: BTreeSet<AttributeValue> = anns
            .iter()
            .flat_map(|a| value_set(&a.attributes, key))
            .collect();
        for v in values {
            buckets.entry(v).or_default().push(id);
        }
    }
    let mut keep = BTreeSet::new();
    let mut short = Vec::new();
    for (stream, (value, candidates)) in buckets.iter().enumerate() {
        if candidates.len() <= n {
            if candidates.len() < n {
                log::warn!(
                    "{value}: only {} images available, {n} requested",
                    candidates.len()
                );
                short.push(format!("{value}={}", candidates.len()));
            }
            keep.extend(candidates.iter().copied());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        keep.extend(
            rand::seq::index::sample(&mut rng, candidates.len(), n)
                .into_iter()
                .map(|i| candidates[i]),
        );
    }
    let mut step = format!(
        "subsample_equal({key}, n={n}, seed={seed}): kept {} images",
        keep.len()
    );
    if !short.is_empty() {
        step.push_str(&format!("; under-populated: {}", short.join(", ")));
    }
    Ok(corpus.retain_images(&keep, step))
}

/// Keeps annotations whose lighting is allowed; images left empty are
/// dropped.
pub fn filter_lighting(corpus: &Corpus, allowed: &BTreeSet<Lighting>) -> Result<Corpus> {
    if allowed.is_empty() {
        return Err(Error::Config(
            "lighting filter needs at least one allowed value".into(),
        ));
    }
    let annotations: Vec<GroundTruthAnnotation> = corpus
        .annotations
        .iter()
        .filter(|a| allowed.contains(&a.attributes.lighting))
        .cloned()
        .collect();
    let keep: BTreeSet<ImageId> = annotations.iter().map(|a| a.image_id).collect();
    let mut provenance = corpus.provenance.clone();
    provenance.push(format!(
        "filter_lighting({:?}): kept {} annotations on {} images",
        allowed,
        annotations.len(),
        keep.len()
    ));
    Ok(Corpus {
        images: corpus
            .images
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(&id, img)| (id, img.clone()))
            .collect(),
        annotations,
        provenance,
    })
}

/// Distance proxy derived from box area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBin {
    Farther,
    Midway,
    Closer,
}

impl DistanceBin {
    pub const ALL: [DistanceBin; 3] = [
        DistanceBin::Farther,
        DistanceBin::Midway,
        DistanceBin::Closer,
    ];
}

impl fmt::Display for DistanceBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceBin::Farther => "farther",
            DistanceBin::Midway => "midway",
            DistanceBin::Closer => "closer",
        })
    }
}

/// Small/medium/large object area limits, in square pixels.
pub const SMALL_AREA_LIMIT: f64 = 32.0 * 32.0;
pub const LARGE_AREA_LIMIT: f64 = 96.0 * 96.0;

pub fn distance_bin(bbox: &BoundingBox) -> DistanceBin {
    let area = bbox.area();
    if area < SMALL_AREA_LIMIT {
        DistanceBin::Farther
    } else if area < LARGE_AREA_LIMIT {
        DistanceBin::Midway
    } else {
        DistanceBin::Closer
    }
}
