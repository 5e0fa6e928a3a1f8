//! Per-group evaluation, parity checks and disparity comparators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matcher::{match_at_thresholds, IouThreshold, MatchOptions, MatchResult};
use crate::metrics::{BundleBuilder, MetricBundle};
use crate::model::{Detection, GroundTruthAnnotation, GroupSpec, ImageId, ImageRecord};

/// Which value of a [`MetricBundle`] a comparison is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricName {
    MeanRecall,
    MeanPrecision,
    Recall(IouThreshold),
    Precision(IouThreshold),
    Atpc,
    Afpc,
}

impl MetricName {
    pub fn of(&self, bundle: &MetricBundle) -> Option<f64> {
        match *self {
            MetricName::MeanRecall => bundle.m_ar,
            MetricName::MeanPrecision => bundle.m_ap,
            MetricName::Recall(t) => bundle.ar_at(t),
            MetricName::Precision(t) => bundle.ap_at(t),
            MetricName::Atpc => bundle.atpc,
            MetricName::Afpc => bundle.afpc,
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricName::MeanRecall => f.write_str("mAR"),
            MetricName::MeanPrecision => f.write_str("mAP"),
            MetricName::Recall(t) => write!(f, "AR@{t}"),
            MetricName::Precision(t) => write!(f, "AP@{t}"),
            MetricName::Atpc => f.write_str("ATPC"),
            MetricName::Afpc => f.write_str("AFPC"),
        }
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let at = |rest: &str| -> Result<IouThreshold> {
            let v: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad threshold in metric `{s}`")))?;
            IouThreshold::new(v)
        };
        match s {
            "mAR" => Ok(MetricName::MeanRecall),
            "mAP" => Ok(MetricName::MeanPrecision),
            "ATPC" => Ok(MetricName::Atpc),
            "AFPC" => Ok(MetricName::Afpc),
            _ => {
                if let Some(rest) = s.strip_prefix("AR@") {
                    Ok(MetricName::Recall(at(rest)?))
                } else if let Some(rest) = s.strip_prefix("AP@") {
                    Ok(MetricName::Precision(at(rest)?))
                } else {
                    Err(Error::Config(format!("unknown metric `{s}`")))
                }
            }
        }
    }
}

impl Serialize for MetricName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub name: String,
    pub bundle: MetricBundle,
    pub sample_count: usize,
}

/// Metrics for one group, optionally with per-member breakdowns that form
/// the group's sample distribution for the Wasserstein comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub spec: GroupSpec,
    pub bundle: MetricBundle,
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<MemberReport>,
}

impl GroupReport {
    /// Defined per-member values of `metric`, or `None` when the group has
    /// no members or none of them define the metric.
    pub fn member_values(&self, metric: MetricName) -> Option<Vec<f64>> {
        let values: Vec<f64> = self
            .members
            .iter()
            .filter_map(|m| metric.of(&m.bundle))
            .collect();
        (!values.is_empty()).then_some(values)
    }

    /// Distribution used for W2: member values, else the group's own value.
    pub fn samples(&self, metric: MetricName) -> Option<Vec<f64>> {
        if self.members.is_empty() {
            metric.of(&self.bundle).map(|v| vec![v])
        } else {
            self.member_values(metric)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationOptions {
    pub ladder: Vec<IouThreshold>,
    pub reporting_threshold: IouThreshold,
    pub match_options: MatchOptions,
    /// Sub-populations intersected with every group to form member samples.
    pub member_specs: Vec<GroupSpec>,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            ladder: IouThreshold::standard_ladder(),
            reporting_threshold: IouThreshold::half(),
            match_options: MatchOptions::default(),
            member_specs: Vec::new(),
        }
    }
}

struct MatchedImage<'a> {
    image: &'a ImageRecord,
    truths: Vec<GroundTruthAnnotation>,
    detections: Vec<Detection>,
    results: Vec<MatchResult>,
}

/// A corpus matched against its detections at every ladder threshold.
///
/// Matching runs once, in parallel per image; group evaluations then only
/// re-aggregate.
pub struct MatchedCorpus<'a> {
    images: Vec<MatchedImage<'a>>,
    options: EvaluationOptions,
}

impl<'a> MatchedCorpus<'a> {
    pub fn new(
        corpus: &'a Corpus,
        detections: &[Detection],
        options: EvaluationOptions,
    ) -> Result<Self> {
        crate::matcher::validate_ladder(&options.ladder)?;
        let mut dets_by_image: BTreeMap<ImageId, Vec<Detection>> = BTreeMap::new();
        for d in detections
            .iter()
            .filter(|d| corpus.images.contains_key(&d.image_id))
        {
            dets_by_image.entry(d.image_id).or_default().push(d.clone());
        }
        let by_image = corpus.annotations_by_image();
        let work: Vec<(&ImageRecord, Vec<GroundTruthAnnotation>, Vec<Detection>)> = corpus
            .images
            .values()
            .map(|img| {
                let truths = by_image[&img.image_id].iter().map(|&a| a.clone()).collect();
                let dets = dets_by_image.remove(&img.image_id).unwrap_or_default();
                (img, truths, dets)
            })
            .collect();
        let images = work
            .into_par_iter()
            .map(|(image, truths, detections)| {
                let results = match_at_thresholds(
                    image.image_id,
                    &detections,
                    &truths,
                    &options.ladder,
                    &options.match_options,
                )?;
                Ok(MatchedImage {
                    image,
                    truths,
                    detections,
                    results,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images, options })
    }

    pub fn options(&self) -> &EvaluationOptions {
        &self.options
    }

    /// Raw match results, grouped per image in image id order.
    pub fn results(&self) -> impl Iterator<Item = &[MatchResult]> {
        self.images.iter().map(|m| m.results.as_slice())
    }

    /// Aggregates over truths accepted by `truth_filter` and false positives
    /// accepted by `fp_filter`. Returns the bundle and the number of truths
    /// counted.
    pub fn bundle_where<T, F>(&self, truth_filter: T, fp_filter: F) -> Result<(MetricBundle, usize)>
    where
        T: Fn(&ImageRecord, &GroundTruthAnnotation) -> bool + Sync,
        F: Fn(&ImageRecord, &[GroundTruthAnnotation], &Detection) -> bool + Sync,
    {
        let ladder = &self.options.ladder;
        let reporting = self.options.reporting_threshold;
        let partial = self
            .images
            .par_iter()
            .map(|m| -> Result<(BundleBuilder, usize)> {
                let mut builder = BundleBuilder::new(ladder, reporting)?;
                let in_group: Vec<bool> =
                    m.truths.iter().map(|t| truth_filter(m.image, t)).collect();
                builder.add_image(
                    &m.results,
                    |t| in_group[t],
                    |d| fp_filter(m.image, &m.truths, &m.detections[d]),
                )?;
                Ok((builder, in_group.iter().filter(|&&b| b).count()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = BundleBuilder::new(ladder, reporting)?;
        let mut count = 0;
        for (builder, n) in partial {
            total = total.merge(builder)?;
            count += n;
        }
        Ok((total.finish(), count))
    }

    /// Group metrics. A truth counts when it satisfies `spec`; a false
    /// positive counts only on images whose every annotation satisfies
    /// `spec`, since hallucinations cannot be attributed to a person.
    pub fn evaluate_group(&self, spec: &GroupSpec) -> Result<GroupReport> {
        self.evaluate_group_with(spec, &self.options.member_specs)
    }

    /// Like [`Self::evaluate_group`] with an explicit member breakdown.
    pub fn evaluate_group_with(
        &self,
        spec: &GroupSpec,
        member_specs: &[GroupSpec],
    ) -> Result<GroupReport> {
        let (bundle, sample_count) = self.group_bundle(spec)?;
        if sample_count == 0 {
            log::warn!(
                "group `{}` matches no annotations; metrics undefined",
                spec.name
            );
        }
        let members = member_specs
            .iter()
            .map(|member| {
                let (bundle, sample_count) = self.group_bundle(&spec.intersect(member))?;
                Ok(MemberReport {
                    name: member.name.clone(),
                    bundle,
                    sample_count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupReport {
            spec: spec.clone(),
            bundle,
            sample_count,
            members,
        })
    }

    fn group_bundle(&self, spec: &GroupSpec) -> Result<(MetricBundle, usize)> {
        self.bundle_where(
            |img, t| spec.matches(&t.attributes, &img.weather),
            |img, truths, _| {
                !truths.is_empty()
                    && truths
                        .iter()
                        .all(|t| spec.matches(&t.attributes, &img.weather))
            },
        )
    }

    pub fn evaluate(&self, specs: &[GroupSpec]) -> Result<Vec<GroupReport>> {
        if specs.is_empty() {
            return Err(Error::NoGroups);
        }
        specs.iter().map(|s| self.evaluate_group(s)).collect()
    }
}

/// Matches `detections` against `corpus` and evaluates every spec.
pub fn evaluate_groups(
    corpus: &Corpus,
    detections: &[Detection],
    specs: &[GroupSpec],
    options: EvaluationOptions,
) -> Result<Vec<GroupReport>> {
    if specs.is_empty() {
        return Err(Error::NoGroups);
    }
    MatchedCorpus::new(corpus, detections, options)?.evaluate(specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub a: String,
    pub b: String,
    pub gap: f64,
}

/// `|s_a - s_b|` for every unordered pair, in key order.
pub fn pairwise_gaps(values: &BTreeMap<String, f64>) -> Vec<PairGap> {
    let entries: Vec<(&String, &f64)> = values.iter().collect();
    let mut gaps = Vec::new();
    for (i, (a, va)) in entries.iter().enumerate() {
        for (b, vb) in &entries[i + 1..] {
            gaps.push(PairGap {
                a: (*a).clone(),
                b: (*b).clone(),
                gap: (*va - *vb).abs(),
            });
        }
    }
    gaps
}

/// Largest pairwise gap; undefined for fewer than two groups.
pub fn disparity_worst(values: &BTreeMap<String, f64>) -> Option<f64> {
    pairwise_gaps(values)
        .into_iter()
        .map(|p| p.gap)
        .reduce(f64::max)
}

/// Smallest pairwise gap over distinct groups; undefined for fewer than two.
pub fn disparity_best(values: &BTreeMap<String, f64>) -> Option<f64> {
    pairwise_gaps(values)
        .into_iter()
        .map(|p| p.gap)
        .reduce(f64::min)
}

fn defined_values(reports: &[GroupReport], metric: MetricName) -> BTreeMap<String, f64> {
    let mut values = BTreeMap::new();
    for r in reports {
        match metric.of(&r.bundle) {
            Some(v) => {
                values.insert(r.spec.name.clone(), v);
            }
            None => log::warn!("{metric} undefined for group `{}`; excluded", r.spec.name),
        }
    }
    values
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityOutcome {
    /// `None` when fewer than two groups define the metric.
    pub satisfied: Option<bool>,
    pub residuals: Vec<PairGap>,
}

/// Equal-opportunity parity: every pairwise gap of `metric` within `epsilon`.
pub fn parity_check(reports: &[GroupReport], metric: MetricName, epsilon: f64) -> ParityOutcome {
    parity_of_values(&defined_values(reports, metric), epsilon)
}

pub fn parity_of_values(values: &BTreeMap<String, f64>, epsilon: f64) -> ParityOutcome {
    let residuals = pairwise_gaps(values);
    if residuals.is_empty() {
        log::warn!("parity check needs at least two defined values");
        return ParityOutcome {
            satisfied: None,
            residuals,
        };
    }
    ParityOutcome {
        satisfied: Some(residuals.iter().all(|p| p.gap <= epsilon)),
        residuals,
    }
}

/// 2-Wasserstein distance between two empirical distributions with uniform
/// weights.
///
/// Works on the quantile functions: both samples are sorted and the unit
/// interval is split at every cumulative-weight breakpoint `i/n` and `j/m`.
/// Breakpoints are tracked as integers on the grid `1/(n*m)`. Equal-size
/// samples reduce to the root mean squared difference of the sorted vectors.
pub fn wasserstein2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples(String::new()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == m {
        let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        return Ok((sum / n as f64).sqrt());
    }
    let (n, m) = (n as u64, m as u64);
    let (mut i, mut j, mut pos) = (0u64, 0u64, 0u64);
    let mut acc = 0.0;
    while pos < n * m {
        let next = ((i + 1) * m).min((j + 1) * n);
        let d = a[i as usize] - b[j as usize];
        acc += (next - pos) as f64 * d * d;
        pos = next;
        if pos == (i + 1) * m {
            i += 1;
        }
        if pos == (j + 1) * n {
            j += 1;
        }
    }
    Ok((acc / (n * m) as f64).sqrt())
}

/// Largest W2 distance over all pairs of groups. `None` with fewer than two
/// groups.
pub fn wasserstein2_max(samples: &BTreeMap<String, Vec<f64>>) -> Result<Option<f64>> {
    if let Some((name, _)) = samples.iter().find(|(_, s)| s.is_empty()) {
        return Err(Error::EmptySamples(name.clone()));
    }
    let entries: Vec<&Vec<f64>> = samples.values().collect();
    let mut best: Option<f64> = None;
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let w = wasserstein2(a, b)?;
            best = Some(best.map_or(w, |x| x.max(w)));
        }
    }
    Ok(best)
}

/// Disparity comparators for one metric across a set of groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub metric: MetricName,
    pub worst: f64,
    pub best: f64,
    pub wasserstein: f64,
    pub pairwise: Vec<PairGap>,
    pub epsilon: f64,
    pub parity_satisfied: bool,
}

/// Computes Δworst, Δbest, max-W2 and parity for `metric`. Groups with an
/// undefined value are excluded; returns `None` if fewer than two remain.
pub fn disparity(
    reports: &[GroupReport],
    metric: MetricName,
    epsilon: f64,
) -> Result<Option<DisparityReport>> {
    let values = defined_values(reports, metric);
    let samples: BTreeMap<String, Vec<f64>> = reports
        .iter()
        .filter(|r| values.contains_key(&r.spec.name))
        .filter_map(|r| r.samples(metric).map(|s| (r.spec.name.clone(), s)))
        .collect();
    disparity_from_parts(metric, &values, &samples, epsilon)
}

/// Same as [`disparity`] but from already extracted values and samples.
pub fn disparity_from_parts(
    metric: MetricName,
    values: &BTreeMap<String, f64>,
    samples: &BTreeMap<String, Vec<f64>>,
    epsilon: f64,
) -> Result<Option<DisparityReport>> {
    let (Some(worst), Some(best)) = (disparity_worst(values), disparity_best(values)) else {
        log::warn!("{metric}: fewer than two groups with defined values");
        return Ok(None);
    };
    let Some(wasserstein) = wasserstein2_max(samples)? else {
        return Ok(None);
    };
    let parity = parity_of_values(values, epsilon);
    Ok(Some(DisparityReport {
        metric,
        worst,
        best,
        wasserstein,
        pairwise: parity.residuals,
        epsilon,
        parity_satisfied: parity.satisfied.unwrap_or(false),
    }))
}
