//! Count-based (AR, AP, mAR) and confidence-based (ATPC, AFPC) metrics.
//!
//! Undefined values (empty denominators) are `None` throughout and never
//! collapse to zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{IouThreshold, MatchResult};
use crate::model::ImageId;

/// Recall `TP / (TP + FN)`; undefined without ground truth.
pub fn average_recall(n_tp: usize, n_fn: usize) -> Option<f64> {
    ratio(n_tp, n_tp + n_fn)
}

/// Precision `TP / (TP + FP)`; undefined without detections.
///
/// Named after the metric it reports in the fairness literature, although it
/// is plain precision rather than the area under a PR curve.
pub fn average_precision(n_tp: usize, n_fp: usize) -> Option<f64> {
    ratio(n_tp, n_tp + n_fp)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Mean of the defined entries of a map keyed by exactly the standard
/// ten-threshold ladder. Undefined entries are skipped with a warning.
pub fn mean_over_thresholds(values: &BTreeMap<IouThreshold, Option<f64>>) -> Result<Option<f64>> {
    if !values.keys().copied().eq(IouThreshold::standard_ladder()) {
        return Err(Error::NonStandardLadder);
    }
    let defined: Vec<f64> = values.values().flatten().copied().collect();
    if defined.len() < values.len() {
        log::warn!(
            "{} of {} thresholds undefined; excluded from the mean",
            values.len() - defined.len(),
            values.len()
        );
    }
    Ok(mean(defined))
}

/// Average true-positive confidence.
pub fn atpc(tp_confidences: &[f64]) -> Option<f64> {
    mean(tp_confidences.to_vec())
}

/// Average false-positive confidence; lower is better.
pub fn afpc(fp_confidences: &[f64]) -> Option<f64> {
    mean(fp_confidences.to_vec())
}

/// Order-independent mean: values are sorted before a compensated sum, so
/// the result does not depend on how partial results were merged.
fn mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in &values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    Some((sum + carry) / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

impl Counts {
    fn merge(&mut self, other: &Counts) {
        self.n_tp += other.n_tp;
        self.n_fp += other.n_fp;
        self.n_fn += other.n_fn;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: IouThreshold,
    pub ar: Option<f64>,
    pub ap: Option<f64>,
    pub counts: Counts,
}

/// Micro-averaged metrics for one set of images (typically one group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub per_threshold: Vec<ThresholdMetrics>,
    pub m_ar: Option<f64>,
    pub m_ap: Option<f64>,
    pub atpc: Option<f64>,
    pub afpc: Option<f64>,
    /// Matching whose TP/FP confidences feed ATPC/AFPC.
    pub reporting_threshold: IouThreshold,
}

impl MetricBundle {
    pub fn at(&self, threshold: IouThreshold) -> Option<&ThresholdMetrics> {
        self.per_threshold.iter().find(|m| m.threshold == threshold)
    }

    pub fn ar_at(&self, threshold: IouThreshold) -> Option<f64> {
        self.at(threshold).and_then(|m| m.ar)
    }

    pub fn ap_at(&self, threshold: IouThreshold) -> Option<f64> {
        self.at(threshold).and_then(|m| m.ap)
    }
}

/// Accumulates per-image contributions into a [`MetricBundle`].
///
/// Partial builders over disjoint image sets can be merged in any order.
#[derive(Debug, Clone)]
pub struct BundleBuilder {
    ladder: Vec<IouThreshold>,
    reporting: usize,
    counts: Vec<Counts>,
    tp_confidences: Vec<f64>,
    fp_confidences: Vec<f64>,
}

impl BundleBuilder {
    pub fn new(ladder: &[IouThreshold], reporting_threshold: IouThreshold) -> Result<Self> {
        crate::matcher::validate_ladder(ladder)?;
        let reporting = ladder
            .iter()
            .position(|&t| t == reporting_threshold)
            .ok_or(Error::ReportingThresholdMissing(
                reporting_threshold.value(),
            ))?;
        Ok(Self {
            ladder: ladder.to_vec(),
            reporting,
            counts: vec![Counts::default(); ladder.len()],
            tp_confidences: Vec::new(),
            fp_confidences: Vec::new(),
        })
    }

    /// Adds one image's matchings (one per ladder threshold, in ladder
    /// order). Only truths selected by `truth_in_group` count toward TP/FN
    /// and only detections selected by `fp_in_group` count as false
    /// positives.
    pub fn add_image(
        &mut self,
        results: &[MatchResult],
        truth_in_group: impl Fn(usize) -> bool,
        fp_in_group: impl Fn(usize) -> bool,
    ) -> Result<()> {
        let image = results.first().map(|r| r.image_id).unwrap_or(ImageId(0));
        if results.len() != self.ladder.len()
            || results
                .iter()
                .zip(&self.ladder)
                .any(|(r, &t)| r.iou_threshold != t || r.image_id != image)
        {
            return Err(Error::InconsistentThresholds(image));
        }
        for (k, result) in results.iter().enumerate() {
            let tps: Vec<f64> = result
                .true_positives
                .iter()
                .filter(|tp| truth_in_group(tp.truth))
                .map(|tp| tp.confidence)
                .collect();
            let fps: Vec<f64> = result
                .false_positives
                .iter()
                .filter(|fp| fp_in_group(fp.detection))
                .map(|fp| fp.confidence)
                .collect();
            let counts = Counts {
                n_tp: tps.len(),
                n_fp: fps.len(),
                n_fn: result
                    .false_negatives
                    .iter()
                    .filter(|&&t| truth_in_group(t))
                    .count(),
            };
            self.counts[k].merge(&counts);
            if k == self.reporting {
                self.tp_confidences.extend(tps);
                self.fp_confidences.extend(fps);
            }
        }
        Ok(())
    }

    pub fn merge(mut self, other: BundleBuilder) -> Result<Self> {
        if self.ladder != other.ladder || self.reporting != other.reporting {
            return Err(Error::InconsistentThresholds(ImageId(0)));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            mine.merge(theirs);
        }
        self.tp_confidences.extend(other.tp_confidences);
        self.fp_confidences.extend(other.fp_confidences);
        Ok(self)
    }

    pub fn finish(self) -> MetricBundle {
        let per_threshold: Vec<ThresholdMetrics> = self
            .ladder
            .iter()
            .zip(&self.counts)
            .map(|(&threshold, &counts)| ThresholdMetrics {
                threshold,
                ar: average_recall(counts.n_tp, counts.n_fn),
                ap: average_precision(counts.n_tp, counts.n_fp),
                counts,
            })
            .collect();
        MetricBundle {
            m_ar: ladder_mean(&per_threshold, |m| m.ar),
            m_ap: ladder_mean(&per_threshold, |m| m.ap),
            atpc: atpc(&self.tp_confidences),
            afpc: afpc(&self.fp_confidences),
            reporting_threshold: self.ladder[self.reporting],
            per_threshold,
        }
    }
}

/// Mean over the standard ladder when the run's ladder contains it.
fn ladder_mean(
    per_threshold: &[ThresholdMetrics],
    value: impl Fn(&ThresholdMetrics) -> Option<f64>,
) -> Option<f64> {
    let standard = IouThreshold::standard_ladder();
    let values: BTreeMap<IouThreshold, Option<f64>> = per_threshold
        .iter()
        .filter(|m| standard.contains(&m.threshold))
        .map(|m| (m.threshold, value(m)))
        .collect();
    if values.len() != standard.len() {
        return None;
    }
    if values.values().all(Option::is_none) {
        return None;
    }
    mean_over_thresholds(&values).ok().flatten()
}

/// Aggregates match results over images: counts are summed per threshold
/// and AR/AP computed from the sums. Every image must carry the same ladder.
pub fn bundle(
    match_results: &[MatchResult],
    reporting_threshold: IouThreshold,
) -> Result<MetricBundle> {
    let mut by_image: BTreeMap<ImageId, Vec<&MatchResult>> = BTreeMap::new();
    for r in match_results {
        by_image.entry(r.image_id).or_default().push(r);
    }
    let Some(first) = by_image.values().next() else {
        return Ok(MetricBundle {
            per_threshold: Vec::new(),
            m_ar: None,
            m_ap: None,
            atpc: None,
            afpc: None,
            reporting_threshold,
        });
    };
    let mut ladder: Vec<IouThreshold> = first.iter().map(|r| r.iou_threshold).collect();
    ladder.sort();
    let mut builder = BundleBuilder::new(&ladder, reporting_threshold)?;
    for (&image, results) in &by_image {
        let mut results: Vec<MatchResult> = results.iter().map(|&r| r.clone()).collect();
        results.sort_by_key(|r| r.iou_threshold);
        if results
            .iter()
            .map(|r| r.iou_threshold)
            .ne(ladder.iter().copied())
        {
            return Err(Error::InconsistentThresholds(image));
        }
        builder.add_image(&results, |_| true, |_| true)?;
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{FalsePositive, TruePositive};

    fn ladder_map(
        values: impl IntoIterator<Item = Option<f64>>,
    ) -> BTreeMap<IouThreshold, Option<f64>> {
        IouThreshold::standard_ladder()
            .into_iter()
            .zip(values)
            .collect()
    }

    fn result(image: u64, t: IouThreshold, tps: &[f64], fps: &[f64], n_fn: usize) -> MatchResult {
        MatchResult {
            image_id: ImageId(image),
            iou_threshold: t,
            true_positives: tps
                .iter()
                .enumerate()
                .map(|(i, &c)| TruePositive {
                    detection: i,
                    truth: i,
                    confidence: c,
                })
                .collect(),
            false_positives: fps
                .iter()
                .enumerate()
                .map(|(i, &c)| FalsePositive {
                    detection: tps.len() + i,
                    confidence: c,
                })
                .collect(),
            false_negatives: (tps.len()..tps.len() + n_fn).collect(),
        }
    }

    #[test]
    fn recall_and_precision() {
        assert_eq!(average_recall(8, 2), Some(0.8));
        assert_eq!(average_recall(5, 0), Some(1.0));
        assert_eq!(average_recall(0, 0), None);
        assert_eq!(average_precision(8, 2), Some(0.8));
        assert_eq!(average_precision(0, 3), Some(0.0));
        assert_eq!(average_precision(0, 0), None);
    }

    #[test]
    fn threshold_mean() {
        assert!(
            (mean_over_thresholds(&ladder_map([Some(0.6); 10]))
                .unwrap()
                .unwrap()
                - 0.6)
                .abs()
                < 1e-15
        );
        let spike = ladder_map(std::iter::once(Some(1.0)).chain([Some(0.0); 9]));
        assert!((mean_over_thresholds(&spike).unwrap().unwrap() - 0.1).abs() < 1e-15);
        // 0.95 + 0.90 + ... + 0.50 = 10 * (0.95 + 0.50) / 2 = 7.25
        let linear = ladder_map((0..10).map(|i| Some(f64::from(95 - 5 * i) / 100.0)));
        assert!((mean_over_thresholds(&linear).unwrap().unwrap() - 0.725).abs() < 1e-15);
        assert_eq!(mean_over_thresholds(&ladder_map([None; 10])).unwrap(), None);
        let partial = ladder_map(std::iter::once(None).chain([Some(0.5); 9]));
        assert_eq!(mean_over_thresholds(&partial).unwrap(), Some(0.5));
    }

    #[test]
    fn threshold_mean_rejects_other_ladders() {
        let mut m = ladder_map([Some(0.5); 10]);
        m.remove(&IouThreshold::half());
        assert!(matches!(
            mean_over_thresholds(&m),
            Err(Error::NonStandardLadder)
        ));
    }

    #[test]
    fn confidence_means() {
        assert!((atpc(&[0.9, 0.7]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(atpc(&[0.37]), Some(0.37));
        assert_eq!(atpc(&[]), None);
        assert_eq!(afpc(&[0.8, 0.2]), Some(0.5));
        assert_eq!(afpc(&[]), None);
        assert_eq!(afpc(&[0.8]), Some(0.8));
    }

    #[test]
    fn bundle_micro_averages() {
        let t = IouThreshold::half();
        let rs = [result(1, t, &[0.9], &[], 1), result(2, t, &[0.7], &[], 1)];
        let b = bundle(&rs, t).unwrap();
        assert_eq!(b.ar_at(t), Some(0.5));
        assert!((b.atpc.unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(b.afpc, None);
        // mAR needs the full ladder.
        assert_eq!(b.m_ar, None);
    }

    #[test]
    fn bundle_of_nothing_is_undefined() {
        let b = bundle(&[], IouThreshold::half()).unwrap();
        assert!(b.per_threshold.is_empty());
        assert_eq!((b.m_ar, b.m_ap, b.atpc, b.afpc), (None, None, None, None));
    }

    #[test]
    fn bundle_rejects_ragged_ladders() {
        let half = IouThreshold::half();
        let high = IouThreshold::new(0.75).unwrap();
        let rs = [
            result(1, half, &[], &[], 1),
            result(1, high, &[], &[], 1),
            result(2, half, &[], &[], 1),
        ];
        assert!(matches!(
            bundle(&rs, half),
            Err(Error::InconsistentThresholds(ImageId(2)))
        ));
        assert!(matches!(
            bundle(&[result(1, high, &[], &[], 1)], half),
            Err(Error::ReportingThresholdMissing(_))
        ));
    }

    #[test]
    fn full_ladder_bundle_reports_mar() {
        let rs: Vec<MatchResult> = IouThreshold::standard_ladder()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let tp = if i < 5 { &[0.9][..] } else { &[][..] };
                result(1, t, tp, &[], 1 - tp.len())
            })
            .collect();
        let b = bundle(&rs, IouThreshold::half()).unwrap();
        assert_eq!(b.m_ar, Some(0.5));
        assert_eq!(b.per_threshold.len(), 10);
    }

    #[test]
    fn merge_order_does_not_matter() {
        let t = [IouThreshold::half()];
        let parts: Vec<Vec<MatchResult>> = (0..4)
            .map(|i| {
                vec![result(
                    i,
                    t[0],
                    &[0.1 * i as f64 + 0.05, 0.33],
                    &[0.2 / (i as f64 + 1.0)],
                    i as usize,
                )]
            })
            .collect();
        let build = |order: &[usize]| {
            order
                .iter()
                .map(|&i| {
                    let mut b = BundleBuilder::new(&t, t[0]).unwrap();
                    b.add_image(&parts[i], |_| true, |_| true).unwrap();
                    b
                })
                .reduce(|a, b| a.merge(b).unwrap())
                .unwrap()
                .finish()
        };
        assert_eq!(build(&[0, 1, 2, 3]), build(&[3, 1, 0, 2]));
    }
}
