//! Seeded synthetic corpora with parametrically degraded detections.
//!
//! Stands in for simulator captures so that end-to-end trend checks run
//! offline. Each ground truth is detected with probability `1 - miss` and
//! a detected pedestrian gets confidence
//!
//! ```text
//! clamp(base * group_mult * exp(-fog_decay * severity - distance_decay / area) + noise, 0, 1)
//! ```
//!
//! where `severity` is the weather intensity (or `1 - factor` for ambient
//! darkness) and `area` the box area in square pixels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SMALL_AREA_LIMIT};
use crate::error::{Error, Result};
use crate::model::{
    BoundingBox, Detection, GroundTruthAnnotation, GroupSpec, ImageId, ImageRecord,
    PersonAttributes, WeatherCondition, WeatherKind, PERSON,
};

fn one() -> f64 {
    1.0
}

/// Multipliers applied to pedestrians matching `spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModifier {
    pub spec: GroupSpec,
    #[serde(default = "one")]
    pub confidence_multiplier: f64,
    #[serde(default = "one")]
    pub miss_multiplier: f64,
    /// Share of each multiplier's deviation from 1 that has vanished at full
    /// weather severity (linear in severity). 0 keeps the gap constant.
    #[serde(default)]
    pub convergence: f64,
}

impl GroupModifier {
    fn effective(multiplier: f64, convergence: f64, severity: f64) -> f64 {
        1.0 + (multiplier - 1.0) * (1.0 - convergence * severity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub base_confidence: f64,
    #[serde(default)]
    pub fog_decay: f64,
    #[serde(default)]
    pub distance_decay: f64,
    #[serde(default)]
    pub miss_base: f64,
    #[serde(default)]
    pub miss_fog_slope: f64,
    /// Extra miss probability scaled by `1024 / area`.
    #[serde(default)]
    pub miss_distance: f64,
    /// Expected hallucinated boxes per image (Poisson).
    #[serde(default)]
    pub hallucination_rate: f64,
    #[serde(default = "default_hallucination_confidence")]
    pub hallucination_max_confidence: f64,
    #[serde(default)]
    pub confidence_noise_sd: f64,
    /// Box jitter standard deviation as a fraction of box size.
    #[serde(default)]
    pub localization_noise: f64,
    #[serde(default)]
    pub localization_fog_slope: f64,
    #[serde(default)]
    pub group_modifiers: Vec<GroupModifier>,
}

fn default_hallucination_confidence() -> f64 {
    0.8
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            base_confidence: 0.9,
            fog_decay: 0.0,
            distance_decay: 0.0,
            miss_base: 0.0,
            miss_fog_slope: 0.0,
            miss_distance: 0.0,
            hallucination_rate: 0.0,
            hallucination_max_confidence: default_hallucination_confidence(),
            confidence_noise_sd: 0.0,
            localization_noise: 0.0,
            localization_fog_slope: 0.0,
            group_modifiers: Vec::new(),
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} = {v} is out of range")));
        if !(self.base_confidence > 0.0 && self.base_confidence <= 1.0) {
            return bad("base_confidence", self.base_confidence);
        }
        if !(0.0..1.0).contains(&self.miss_base) {
            return bad("miss_base", self.miss_base);
        }
        if !(0.0..=1.0).contains(&self.hallucination_max_confidence) {
            return bad(
                "hallucination_max_confidence",
                self.hallucination_max_confidence,
            );
        }
        for (what, v) in [
            ("fog_decay", self.fog_decay),
            ("distance_decay", self.distance_decay),
            ("miss_fog_slope", self.miss_fog_slope),
            ("miss_distance", self.miss_distance),
            ("hallucination_rate", self.hallucination_rate),
            ("confidence_noise_sd", self.confidence_noise_sd),
            ("localization_noise", self.localization_noise),
            ("localization_fog_slope", self.localization_fog_slope),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(what, v);
            }
        }
        for m in &self.group_modifiers {
            if !(m.confidence_multiplier >= 0.0 && m.miss_multiplier >= 0.0) {
                return bad(
                    "group multiplier",
                    m.confidence_multiplier.min(m.miss_multiplier),
                );
            }
            if !(0.0..=1.0).contains(&m.convergence) {
                return bad("convergence", m.convergence);
            }
        }
        Ok(())
    }

    /// Combined (confidence, miss) multipliers for a pedestrian.
    fn multipliers(&self, attributes: &PersonAttributes, weather: &WeatherCondition) -> (f64, f64) {
        let severity = severity(weather);
        self.group_modifiers
            .iter()
            .filter(|m| m.spec.matches(attributes, weather))
            .fold((1.0, 1.0), |(c, p), m| {
                (
                    c * GroupModifier::effective(m.confidence_multiplier, m.convergence, severity),
                    p * GroupModifier::effective(m.miss_multiplier, m.convergence, severity),
                )
            })
    }

    /// Noise-free expected confidence before clamping.
    pub fn mean_confidence(
        &self,
        attributes: &PersonAttributes,
        weather: &WeatherCondition,
        area: f64,
    ) -> f64 {
        let (mult, _) = self.multipliers(attributes, weather);
        self.base_confidence
            * mult
            * (-self.fog_decay * severity(weather) - self.distance_decay / area).exp()
    }

    pub fn miss_probability(
        &self,
        attributes: &PersonAttributes,
        weather: &WeatherCondition,
        area: f64,
    ) -> f64 {
        let (_, mult) = self.multipliers(attributes, weather);
        let raw = self.miss_base
            + self.miss_fog_slope * severity(weather)
            + self.miss_distance * SMALL_AREA_LIMIT / area;
        (raw * mult).clamp(0.0, 1.0)
    }
}

/// Degradation strength of a weather condition in `[0, 1]`.
pub fn severity(weather: &WeatherCondition) -> f64 {
    match weather.kind {
        WeatherKind::None => 0.0,
        WeatherKind::AmbientDarkness => 1.0 - weather.intensity(),
        _ => weather.intensity(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianProfile {
    pub name: String,
    pub attributes: PersonAttributes,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub images_per_level: usize,
    #[serde(default = "one_usize")]
    pub min_pedestrians: usize,
    #[serde(default = "one_usize")]
    pub max_pedestrians: usize,
    /// Every image shows pedestrians of a single profile.
    pub profiles: Vec<PedestrianProfile>,
    pub weather_ladder: Vec<WeatherCondition>,
    #[serde(default = "default_width")]
    pub image_width: u32,
    #[serde(default = "default_height")]
    pub image_height: u32,
    /// Pedestrian box widths are uniform in this range; height is
    /// `aspect * width`.
    #[serde(default = "default_min_box")]
    pub min_box_width: f64,
    #[serde(default = "default_max_box")]
    pub max_box_width: f64,
    #[serde(default = "default_aspect")]
    pub aspect: f64,
}

fn one_usize() -> usize {
    1
}
fn default_width() -> u32 {
    1280
}
fn default_height() -> u32 {
    720
}
fn default_min_box() -> f64 {
    10.0
}
fn default_max_box() -> f64 {
    100.0
}
fn default_aspect() -> f64 {
    2.0
}

/// Fog at 0, 25, 50, 75 and 100 percent.
pub fn fog_ladder() -> Vec<WeatherCondition> {
    (0..=4)
        .map(|k| {
            WeatherCondition::new(WeatherKind::Fog, f64::from(k) * 0.25)
                .expect("ladder within range")
        })
        .collect()
}

impl Scenario {
    pub fn new(
        images_per_level: usize,
        profiles: Vec<PedestrianProfile>,
        weather_ladder: Vec<WeatherCondition>,
    ) -> Self {
        Self {
            images_per_level,
            min_pedestrians: 1,
            max_pedestrians: 1,
            profiles,
            weather_ladder,
            image_width: default_width(),
            image_height: default_height(),
            min_box_width: default_min_box(),
            max_box_width: default_max_box(),
            aspect: default_aspect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() || self.weather_ladder.is_empty() {
            return Err(Error::Config(
                "scenario needs profiles and a weather ladder".into(),
            ));
        }
        if self.min_pedestrians > self.max_pedestrians {
            return Err(Error::Config(
                "min_pedestrians exceeds max_pedestrians".into(),
            ));
        }
        if !(self.min_box_width > 0.0
            && self.min_box_width <= self.max_box_width
            && self.aspect > 0.0)
        {
            return Err(Error::Config("invalid box size range".into()));
        }
        if self.max_box_width > f64::from(self.image_width)
            || self.max_box_width * self.aspect > f64::from(self.image_height)
        {
            return Err(Error::Config("boxes do not fit the image".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub corpus: Corpus,
    pub detections: Vec<Detection>,
}

struct GeneratedImage {
    image: ImageRecord,
    truths: Vec<(BoundingBox, PersonAttributes)>,
    detections: Vec<Detection>,
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox, sd: f64, width: f64, height: f64) -> BoundingBox {
    if sd <= 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sd).expect("finite sd");
    let w = b.width() * n.sample(rng).exp();
    let h = b.height() * n.sample(rng).exp();
    let cx = b.x() + b.width() / 2.0 + n.sample(rng) * b.width();
    let cy = b.y() + b.height() / 2.0 + n.sample(rng) * b.height();
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
        .and_then(|j| j.clamp_to(width, height))
        .unwrap_or(*b)
}

fn generate_image(
    config: &DegradationConfig,
    scenario: &Scenario,
    profiles: &WeightedIndex<f64>,
    seed: u64,
    index: usize,
) -> Result<GeneratedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let level = index / scenario.images_per_level;
    let weather = scenario.weather_ladder[level];
    let image_id = ImageId(index as u64 + 1);
    let (width, height) = (
        f64::from(scenario.image_width),
        f64::from(scenario.image_height),
    );
    let image = ImageRecord::new(
        image_id,
        format!("synth_{:06}.png", image_id.0),
        scenario.image_width,
        scenario.image_height,
        weather,
    )?;
    let profile = &scenario.profiles[profiles.sample(&mut rng)];
    let count = rng.random_range(scenario.min_pedestrians..=scenario.max_pedestrians);
    let severity = severity(&weather);
    let noise = (config.confidence_noise_sd > 0.0)
        .then(|| Normal::new(0.0, config.confidence_noise_sd).expect("finite sd"));
    let loc_sd = config.localization_noise + config.localization_fog_slope * severity;

    let mut truths = Vec::with_capacity(count);
    let mut detections = Vec::new();
    // Pedestrians occupy disjoint horizontal slots so they never overlap.
    let slot = width / count.max(1) as f64;
    for k in 0..count {
        let w = rng
            .random_range(scenario.min_box_width..=scenario.max_box_width)
            .min(slot);
        let h = w * scenario.aspect;
        let x = k as f64 * slot + rng.random_range(0.0..=(slot - w));
        let y = rng.random_range(0.0..=(height - h));
        let bbox = BoundingBox::new(x, y, w, h)?;
        let area = bbox.area();
        let missed =
            rng.random::<f64>() < config.miss_probability(&profile.attributes, &weather, area);
        if !missed {
            let mut confidence = config.mean_confidence(&profile.attributes, &weather, area);
            if let Some(n) = &noise {
                confidence += n.sample(&mut rng);
            }
            let dbox = jitter(&mut rng, &bbox, loc_sd, width, height);
            detections.push(Detection::person(
                image_id,
                dbox,
                confidence.clamp(0.0, 1.0),
            )?);
        }
        truths.push((bbox, profile.attributes.clone()));
    }

    if config.hallucination_rate > 0.0 {
        let n = Poisson::new(config.hallucination_rate)
            .expect("positive rate")
            .sample(&mut rng) as usize;
        for _ in 0..n {
            let w = rng.random_range(scenario.min_box_width..=scenario.max_box_width);
            let h = w * scenario.aspect;
            let bbox = BoundingBox::new(
                rng.random_range(0.0..=(width - w)),
                rng.random_range(0.0..=(height - h)),
                w,
                h,
            )?;
            let confidence = rng.random_range(0.0..=config.hallucination_max_confidence);
            detections.push(Detection::person(image_id, bbox, confidence)?);
        }
    }
    Ok(GeneratedImage {
        image,
        truths,
        detections,
    })
}

/// Generates `images_per_level` images for every weather level. Image `i`
/// draws from its own ChaCha8 stream of `seed`, so output is identical
/// regardless of thread count.
pub fn generate(
    config: &DegradationConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<SyntheticRun> {
    config.validate()?;
    scenario.validate()?;
    let profiles = WeightedIndex::new(scenario.profiles.iter().map(|p| p.weight))
        .map_err(|e| Error::Config(format!("profile weights: {e}")))?;
    let total = scenario.images_per_level * scenario.weather_ladder.len();
    let generated = (0..total)
        .into_par_iter()
        .map(|i| generate_image(config, scenario, &profiles, seed, i))
        .collect::<Result<Vec<_>>>()?;

    let mut images = Vec::with_capacity(total);
    let mut annotations = Vec::new();
    let mut detections = Vec::new();
    for g in generated {
        for (bbox, attributes) in g.truths {
            annotations.push(GroundTruthAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: g.image.image_id,
                bbox,
                attributes,
                category: PERSON.to_owned(),
            });
        }
        detections.extend(g.detections);
        images.push(g.image);
    }
    let corpus = Corpus::new(images, annotations)?.with_step(format!(
        "synth(seed={seed}, images_per_level={}, levels={})",
        scenario.images_per_level,
        scenario.weather_ladder.len()
    ));
    Ok(SyntheticRun { corpus, detections })
}
