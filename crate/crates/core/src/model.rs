//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is immutable after construction and `Send + Sync`, so
//! values can be shared freely across the rayon workers used by matching and
//! aggregation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of an image within a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axis-aligned box in pixels, top-left origin, stored as `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 4]")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates [{x}, {y}, {w}, {h}]"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!("non-positive extent {w}x{h}")));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner form `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Clips the box to `[0, width] x [0, height]`. Fails if nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Result<Self> {
        let x1 = self.x.clamp(0.0, width);
        let y1 = self.y.clamp(0.0, height);
        let x2 = self.right().clamp(0.0, width);
        let y2 = self.bottom().clamp(0.0, height);
        Self::from_corners(x1, y1, x2, y2)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(x, y, w, h).map_err(serde::de::Error::custom)
    }
}

/// A value on the 10-point Monk Skin Tone scale (1 lightest, 10 darkest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SkinTone(u8);

impl SkinTone {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(value: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::SkinToneOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = SkinTone> {
        (Self::MIN..=Self::MAX).map(SkinTone)
    }
}

impl<'de> Deserialize<'de> for SkinTone {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        SkinTone::new(u8::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unknown,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum BodySize {
    Small,
    Medium,
    Large,
    #[default]
    Unknown,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    WellLit,
    DimlyLit,
    Overexposed,
    Underexposed,
    #[default]
    Unknown,
}

impl Lighting {
    pub const ALL: [Lighting; 5] = [
        Lighting::WellLit,
        Lighting::DimlyLit,
        Lighting::Overexposed,
        Lighting::Underexposed,
        Lighting::Unknown,
    ];
}

/// Protected attributes of one annotated person.
///
/// An empty `skin_tones` set means the tone was not annotated; more than one
/// value is a spectrum annotation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonAttributes {
    pub skin_tones: BTreeSet<SkinTone>,
    pub gender: Gender,
    pub body_size: BodySize,
    pub lighting: Lighting,
}

pub const PERSON: &str = "person";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub id: u64,
    pub image_id: ImageId,
    pub bbox: BoundingBox,
    pub attributes: PersonAttributes,
    #[serde(default = "person_category")]
    pub category: String,
}

fn person_category() -> String {
    PERSON.to_owned()
}

/// A predicted box. `confidence` is the detector's score for `category`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub bbox: BoundingBox,
    pub category: String,
    confidence: f64,
}

impl Detection {
    pub fn new(
        image_id: ImageId,
        bbox: BoundingBox,
        category: impl Into<String>,
        confidence: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::ConfidenceOutOfRange(confidence));
        }
        Ok(Self {
            image_id,
            bbox,
            category: category.into(),
            confidence,
        })
    }

    pub fn person(image_id: ImageId, bbox: BoundingBox, confidence: f64) -> Result<Self> {
        Self::new(image_id, bbox, PERSON, confidence)
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// COCO exports label people with category id 1.
    pub fn is_person(&self) -> bool {
        self.category == PERSON || self.category == "1"
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum WeatherKind {
    #[default]
    None,
    Fog,
    Rain,
    Cloud,
    AmbientDarkness,
}

/// Weather applied to an image. For `AmbientDarkness` the intensity is the
/// darkness factor (1 = original image); for the other kinds it is severity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeatherCondition {
    pub kind: WeatherKind,
    intensity: f64,
}

impl WeatherCondition {
    pub fn new(kind: WeatherKind, intensity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::IntensityOutOfRange(intensity));
        }
        Ok(Self { kind, intensity })
    }

    pub fn clear() -> Self {
        Self {
            kind: WeatherKind::None,
            intensity: 0.0,
        }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }
}

impl Default for WeatherCondition {
    fn default() -> Self {
        Self::clear()
    }
}

impl<'de> Deserialize<'de> for WeatherCondition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            kind: WeatherKind,
            #[serde(default)]
            intensity: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        WeatherCondition::new(raw.kind, raw.intensity).map_err(serde::de::Error::custom)
    }
}

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl PixelGrid {
    pub const CHANNELS: usize = 3;

    pub fn is_consistent(&self) -> bool {
        self.data.len() == self.width as usize * self.height as usize * Self::CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub weather: WeatherCondition,
    pub pixels: Option<PixelGrid>,
}

impl ImageRecord {
    pub fn new(
        image_id: ImageId,
        file_name: impl Into<String>,
        width: u32,
        height: u32,
        weather: WeatherCondition,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidBox(format!(
                "image {image_id} has zero size {width}x{height}"
            )));
        }
        Ok(Self {
            image_id,
            file_name: file_name.into(),
            width,
            height,
            weather,
            pixels: None,
        })
    }
}

/// Constraint over one protected attribute; satisfied when the person has any
/// of the listed values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "attribute", content = "any_of", rename_all = "snake_case")]
pub enum AttributePredicate {
    SkinTone(BTreeSet<SkinTone>),
    Gender(BTreeSet<Gender>),
    BodySize(BTreeSet<BodySize>),
    Lighting(BTreeSet<Lighting>),
}

impl AttributePredicate {
    pub fn skin_tone(values: impl IntoIterator<Item = u8>) -> Result<Self> {
        let tones = values
            .into_iter()
            .map(SkinTone::new)
            .collect::<Result<_>>()?;
        Ok(AttributePredicate::SkinTone(tones))
    }

    pub fn gender(value: Gender) -> Self {
        AttributePredicate::Gender([value].into())
    }

    pub fn body_size(value: BodySize) -> Self {
        AttributePredicate::BodySize([value].into())
    }

    pub fn lighting(value: Lighting) -> Self {
        AttributePredicate::Lighting([value].into())
    }

    /// Spectrum annotations match if any of their tones is listed.
    pub fn holds(&self, attributes: &PersonAttributes) -> bool {
        match self {
            AttributePredicate::SkinTone(tones) => !attributes.skin_tones.is_disjoint(tones),
            AttributePredicate::Gender(values) => values.contains(&attributes.gender),
            AttributePredicate::BodySize(values) => values.contains(&attributes.body_size),
            AttributePredicate::Lighting(values) => values.contains(&attributes.lighting),
        }
    }
}

/// Weather kind plus an inclusive intensity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherPredicate {
    pub kind: WeatherKind,
    #[serde(default)]
    pub min_intensity: f64,
    #[serde(default = "one")]
    pub max_intensity: f64,
}

fn one() -> f64 {
    1.0
}

impl WeatherPredicate {
    pub fn new(kind: WeatherKind, min_intensity: f64, max_intensity: f64) -> Self {
        Self {
            kind,
            min_intensity,
            max_intensity,
        }
    }

    /// Matches exactly one intensity level.
    pub fn at(kind: WeatherKind, intensity: f64) -> Self {
        Self::new(kind, intensity, intensity)
    }

    pub fn holds(&self, weather: &WeatherCondition) -> bool {
        weather.kind == self.kind
            && (self.min_intensity..=self.max_intensity).contains(&weather.intensity)
    }
}

/// A (possibly intersectional) group: the conjunction of its attribute and
/// weather predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGroupSpec")]
pub struct GroupSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<AttributePredicate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weather: Vec<WeatherPredicate>,
}

#[derive(Deserialize)]
struct RawGroupSpec {
    name: String,
    #[serde(default)]
    attributes: Vec<AttributePredicate>,
    #[serde(default)]
    weather: Vec<WeatherPredicate>,
}

impl TryFrom<RawGroupSpec> for GroupSpec {
    type Error = Error;

    fn try_from(raw: RawGroupSpec) -> Result<Self> {
        GroupSpec::new(raw.name, raw.attributes, raw.weather)
    }
}

impl GroupSpec {
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<AttributePredicate>,
        weather: Vec<WeatherPredicate>,
    ) -> Result<Self> {
        let name = name.into();
        if attributes.is_empty() && weather.is_empty() {
            return Err(Error::EmptyGroupSpec(name));
        }
        Ok(Self {
            name,
            attributes,
            weather,
        })
    }

    pub fn attribute(name: impl Into<String>, predicate: AttributePredicate) -> Self {
        Self {
            name: name.into(),
            attributes: vec![predicate],
            weather: Vec::new(),
        }
    }

    /// `self ∩ other`: predicates are concatenated.
    pub fn intersect(&self, other: &GroupSpec) -> GroupSpec {
        GroupSpec {
            name: format!("{} & {}", self.name, other.name),
            attributes: self
                .attributes
                .iter()
                .chain(&other.attributes)
                .cloned()
                .collect(),
            weather: self.weather.iter().chain(&other.weather).copied().collect(),
        }
    }

    /// Restricts the group to images whose weather satisfies `predicate`.
    pub fn under(&self, predicate: WeatherPredicate) -> GroupSpec {
        let mut spec = self.clone();
        spec.weather.push(predicate);
        spec
    }

    pub fn matches(&self, attributes: &PersonAttributes, weather: &WeatherCondition) -> bool {
        self.attributes.iter().all(|p| p.holds(attributes))
            && self.weather.iter().all(|p| p.holds(weather))
    }
}

/// True iff the annotated person belongs to `spec` given the image's weather.
///
/// Callers are expected to pass the image the annotation belongs to; a
/// mismatched pair is a programming error and never a member.
pub fn group_membership(
    annotation: &GroundTruthAnnotation,
    image: &ImageRecord,
    spec: &GroupSpec,
) -> bool {
    debug_assert_eq!(annotation.image_id, image.image_id);
    annotation.image_id == image.image_id && spec.matches(&annotation.attributes, &image.weather)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn person(tones: &[u8], gender: Gender) -> PersonAttributes {
        PersonAttributes {
            skin_tones: tones.iter().map(|&t| SkinTone::new(t).unwrap()).collect(),
            gender,
            ..Default::default()
        }
    }

    fn annotation(id: u64, attributes: PersonAttributes) -> GroundTruthAnnotation {
        GroundTruthAnnotation {
            id,
            image_id: ImageId(1),
            bbox: BoundingBox::new(0.0, 0.0, 10.0, 20.0).unwrap(),
            attributes,
            category: PERSON.into(),
        }
    }

    fn image() -> ImageRecord {
        ImageRecord::new(ImageId(1), "a.png", 100, 100, WeatherCondition::clear()).unwrap()
    }

    fn mst(v: u8) -> GroupSpec {
        GroupSpec::attribute(
            format!("MST={v}"),
            AttributePredicate::skin_tone([v]).unwrap(),
        )
    }

    #[test]
    fn box_rejects_degenerate_extent() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
        assert_eq!(BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap().area(), 12.0);
    }

    #[test]
    fn clamp_clips_to_image_and_rejects_outside_boxes() {
        let b = BoundingBox::new(-5.0, 90.0, 20.0, 20.0)
            .unwrap()
            .clamp_to(100.0, 100.0)
            .unwrap();
        assert_eq!(<[f64; 4]>::from(b), [0.0, 90.0, 15.0, 10.0]);
        assert!(BoundingBox::new(120.0, 0.0, 5.0, 5.0)
            .unwrap()
            .clamp_to(100.0, 100.0)
            .is_err());
    }

    #[test]
    fn skin_tone_range() {
        assert!(SkinTone::new(0).is_err());
        assert!(SkinTone::new(11).is_err());
        assert_eq!(SkinTone::all().count(), 10);
    }

    #[test]
    fn membership_examples() {
        let img = image();
        let female2 = annotation(1, person(&[2], Gender::Female));
        assert!(group_membership(&female2, &img, &mst(2)));
        assert!(!group_membership(&female2, &img, &mst(9)));
        let spectrum = annotation(2, person(&[2, 3], Gender::Unknown));
        assert!(group_membership(&spectrum, &img, &mst(3)));
        assert!(group_membership(&spectrum, &img, &mst(2)));
    }

    /// Enumerates the two candidate spectrum conventions on a small fixture;
    /// only "any member" keeps every annotation in some MST group.
    #[test]
    fn spectrum_any_member_convention() {
        let img = image();
        let fixture = [
            annotation(1, person(&[2], Gender::Female)),
            annotation(2, person(&[2, 3], Gender::Male)),
            annotation(3, person(&[3], Gender::Male)),
        ];
        let any_member = |a: &GroundTruthAnnotation, v: u8| {
            a.attributes.skin_tones.iter().any(|t| t.value() == v)
        };
        let all_members = |a: &GroundTruthAnnotation, v: u8| {
            a.attributes.skin_tones.iter().all(|t| t.value() == v)
        };
        for a in &fixture {
            for v in 1..=10 {
                assert_eq!(group_membership(a, &img, &mst(v)), any_member(a, v));
            }
        }
        let counted = |f: &dyn Fn(&GroundTruthAnnotation, u8) -> bool| {
            fixture.iter().filter(|a| (1..=10).any(|v| f(a, v))).count()
        };
        assert_eq!(counted(&any_member), 3);
        assert_eq!(counted(&all_members), 2);
    }

    #[test]
    fn intersection_law() {
        let img = image();
        let female = GroupSpec::attribute("female", AttributePredicate::gender(Gender::Female));
        let both = female.intersect(&mst(2));
        for a in [
            annotation(1, person(&[2], Gender::Female)),
            annotation(2, person(&[2], Gender::Male)),
            annotation(3, person(&[5], Gender::Female)),
        ] {
            assert_eq!(
                group_membership(&a, &img, &both),
                group_membership(&a, &img, &female) && group_membership(&a, &img, &mst(2))
            );
        }
    }

    #[test]
    fn weather_predicates_use_inclusive_ranges() {
        let foggy = WeatherCondition::new(WeatherKind::Fog, 0.5).unwrap();
        assert!(WeatherPredicate::new(WeatherKind::Fog, 0.5, 1.0).holds(&foggy));
        assert!(WeatherPredicate::at(WeatherKind::Fog, 0.5).holds(&foggy));
        assert!(!WeatherPredicate::at(WeatherKind::Rain, 0.5).holds(&foggy));
        assert!(WeatherCondition::new(WeatherKind::Fog, 1.5).is_err());
    }

    #[test]
    fn empty_spec_is_rejected() {
        assert!(GroupSpec::new("none", vec![], vec![]).is_err());
        let json = r#"{"name": "x"}"#;
        assert!(serde_json::from_str::<GroupSpec>(json).is_err());
    }

    #[test]
    fn group_spec_json_shape() {
        let json = r#"{"name": "light", "attributes": [{"attribute": "skin_tone", "any_of": [1, 2, 3]}],
                       "weather": [{"kind": "fog", "min_intensity": 0.5}]}"#;
        let spec: GroupSpec = serde_json::from_str(json).unwrap();
        assert_eq!(
            spec.attributes,
            vec![AttributePredicate::skin_tone([1, 2, 3]).unwrap()]
        );
        assert_eq!(spec.weather[0].max_intensity, 1.0);
    }
}
