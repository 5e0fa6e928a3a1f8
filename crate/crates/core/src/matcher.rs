//! Greedy IoU matching of detections to ground truth.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, GroundTruthAnnotation, ImageId};

/// IoU threshold in the open interval (0, 1), totally ordered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct IouThreshold(f64);

impl IouThreshold {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::ThresholdOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The ten thresholds 0.50, 0.55, ..., 0.95 that mAR averages over.
    pub fn standard_ladder() -> Vec<IouThreshold> {
        (0..10)
            .map(|i| IouThreshold(f64::from(50 + 5 * i) / 100.0))
            .collect()
    }

    pub fn half() -> Self {
        IouThreshold(0.5)
    }
}

impl Eq for IouThreshold {}

impl PartialOrd for IouThreshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IouThreshold {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for IouThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

impl<'de> Deserialize<'de> for IouThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        IouThreshold::new(f64::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

/// Checks that a ladder is non-empty and strictly increasing.
pub fn validate_ladder(thresholds: &[IouThreshold]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::EmptyThresholds);
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::ThresholdsNotIncreasing);
    }
    Ok(())
}

/// Intersection area over union area, symmetric, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x().max(b.x());
    let ih = a.bottom().min(b.bottom()) - a.y().max(b.y());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePositive {
    pub detection: usize,
    pub truth: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsePositive {
    pub detection: usize,
    pub confidence: f64,
}

/// Assignment of one image's detections to its ground truths at one threshold.
///
/// Detection indices refer to the slice handed to the matcher, truth indices
/// to the truth slice. There is no true-negative bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: ImageId,
    pub iou_threshold: IouThreshold,
    pub true_positives: Vec<TruePositive>,
    pub false_positives: Vec<FalsePositive>,
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    pub fn n_tp(&self) -> usize {
        self.true_positives.len()
    }

    pub fn n_fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn n_fn(&self) -> usize {
        self.false_negatives.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchOptions {
    /// Detections scoring below this are ignored entirely. Defaults to 0.
    pub min_confidence: f64,
}

/// Precomputed IoU table for one image, reused across thresholds.
struct ImageMatcher<'a> {
    image_id: ImageId,
    detections: &'a [Detection],
    /// Considered detection indices, highest confidence first.
    order: Vec<usize>,
    /// `ious[k][t]` for the k-th entry of `order`.
    ious: Vec<Vec<f64>>,
    n_truths: usize,
}

impl<'a> ImageMatcher<'a> {
    fn new(
        image_id: ImageId,
        detections: &'a [Detection],
        truths: &[GroundTruthAnnotation],
        options: &MatchOptions,
    ) -> Result<Self> {
        for found in detections
            .iter()
            .map(|d| d.image_id)
            .chain(truths.iter().map(|t| t.image_id))
        {
            if found != image_id {
                return Err(Error::MixedImageIds {
                    expected: image_id,
                    found,
                });
            }
        }
        let mut order: Vec<usize> = detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_person() && d.confidence() >= options.min_confidence)
            .map(|(i, _)| i)
            .collect();
        // Stable sort keeps lower indices first among equal confidences.
        order.sort_by(|&a, &b| {
            detections[b]
                .confidence()
                .total_cmp(&detections[a].confidence())
        });
        let ious = order
            .iter()
            .map(|&d| {
                truths
                    .iter()
                    .map(|t| iou(&detections[d].bbox, &t.bbox))
                    .collect()
            })
            .collect();
        Ok(Self {
            image_id,
            detections,
            order,
            ious,
            n_truths: truths.len(),
        })
    }

    fn run(&self, threshold: IouThreshold) -> MatchResult {
        let mut taken = vec![false; self.n_truths];
        let mut true_positives = Vec::new();
        let mut false_positives = Vec::new();
        for (&d, row) in self.order.iter().zip(&self.ious) {
            let confidence = self.detections[d].confidence();
            let mut best: Option<(usize, f64)> = None;
            for (t, &overlap) in row.iter().enumerate() {
                if taken[t] || overlap < threshold.value() {
                    continue;
                }
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((t, overlap));
                }
            }
            match best {
                Some((t, _)) => {
                    taken[t] = true;
                    true_positives.push(TruePositive {
                        detection: d,
                        truth: t,
                        confidence,
                    });
                }
                None => false_positives.push(FalsePositive {
                    detection: d,
                    confidence,
                }),
            }
        }
        let false_negatives = taken
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .map(|(t, _)| t)
            .collect();
        MatchResult {
            image_id: self.image_id,
            iou_threshold: threshold,
            true_positives,
            false_positives,
            false_negatives,
        }
    }
}

/// Greedy matching in descending confidence order. Each detection takes the
/// still-unmatched truth with the highest IoU if that IoU reaches the
/// threshold; ties go to the lower index. Non-person detections are skipped.
pub fn match_image(
    image_id: ImageId,
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    threshold: IouThreshold,
) -> Result<MatchResult> {
    match_image_with(
        image_id,
        detections,
        truths,
        threshold,
        &MatchOptions::default(),
    )
}

pub fn match_image_with(
    image_id: ImageId,
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    threshold: IouThreshold,
    options: &MatchOptions,
) -> Result<MatchResult> {
    Ok(ImageMatcher::new(image_id, detections, truths, options)?.run(threshold))
}

/// Independent matching at every threshold of a strictly increasing ladder.
pub fn match_at_thresholds(
    image_id: ImageId,
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    thresholds: &[IouThreshold],
    options: &MatchOptions,
) -> Result<Vec<MatchResult>> {
    validate_ladder(thresholds)?;
    let matcher = ImageMatcher::new(image_id, detections, truths, options)?;
    Ok(thresholds.iter().map(|&t| matcher.run(t)).collect())
}
