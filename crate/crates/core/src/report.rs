//! Run configuration, the evaluation pipeline and report emitters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, distance_bin, AttributeKey, Corpus, Diagnostic, DistanceBin};
use crate::error::{Error, Result};
use crate::fairness::{
    disparity, DisparityReport, EvaluationOptions, GroupReport, MatchedCorpus, MetricName,
};
use crate::matcher::{IouThreshold, MatchOptions};
use crate::metrics::MetricBundle;
use crate::model::{
    Detection, GroupSpec, Lighting, WeatherCondition, WeatherKind, WeatherPredicate,
};

/// Groups compared against each other, e.g. all genders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFamily {
    pub name: String,
    pub groups: Vec<GroupSpec>,
    /// Sub-populations whose metric values form each group's distribution
    /// for the Wasserstein comparison.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<GroupSpec>,
}

/// One row of the disparity table: a weather slice of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<WeatherPredicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum CurationStep {
    SingleAttribute { attribute: AttributeKey },
    Subsample { attribute: AttributeKey, n: usize },
    Lighting { allowed: BTreeSet<Lighting> },
}

/// Everything needed to reproduce an evaluation from its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "IouThreshold::standard_ladder")]
    pub iou_ladder: Vec<IouThreshold>,
    #[serde(default = "IouThreshold::half")]
    pub reporting_threshold: IouThreshold,
    #[serde(default)]
    pub min_confidence: f64,
    #[serde(default)]
    pub families: Vec<GroupFamily>,
    /// Empty means one row per distinct weather condition in the corpus.
    #[serde(default)]
    pub weather_rows: Vec<WeatherRow>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub curation: Vec<CurationStep>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub distance_breakdown: bool,
}

fn default_metrics() -> Vec<MetricName> {
    vec![MetricName::MeanRecall]
}

fn default_epsilon() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        crate::matcher::validate_ladder(&self.iou_ladder)?;
        if !self.iou_ladder.contains(&self.reporting_threshold) {
            return Err(Error::ReportingThresholdMissing(
                self.reporting_threshold.value(),
            ));
        }
        if self.families.iter().all(|f| f.groups.is_empty()) {
            return Err(Error::NoGroups);
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon {} must be non-negative",
                self.epsilon
            )));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics selected".into()));
        }
        Ok(())
    }
}

/// Applies curation steps in order; subsampling uses the run seed.
pub fn curate(corpus: &Corpus, steps: &[CurationStep], seed: u64) -> Result<Corpus> {
    let mut current = corpus.clone();
    for step in steps {
        current = match step {
            CurationStep::SingleAttribute { attribute } => {
                corpus::curate_single_attribute(&current, *attribute)
            }
            CurationStep::Subsample { attribute, n } => {
                corpus::subsample_equal(&current, *attribute, *n, seed)?
            }
            CurationStep::Lighting { allowed } => corpus::filter_lighting(&current, allowed)?,
        };
    }
    Ok(current)
}

pub fn weather_label(weather: &WeatherCondition) -> String {
    let pct = |v: f64| format!("{}%", (v * 100.0 * 1e6).round() / 1e6);
    match weather.kind {
        WeatherKind::None => "clear".to_owned(),
        WeatherKind::Fog => format!("fog {}", pct(weather.intensity())),
        WeatherKind::Rain => format!("rain {}", pct(weather.intensity())),
        WeatherKind::Cloud => format!("cloud {}", pct(weather.intensity())),
        WeatherKind::AmbientDarkness => format!("darkness {}", weather.intensity()),
    }
}

/// One row per distinct weather condition, ordered by kind then intensity.
pub fn auto_weather_rows(corpus: &Corpus) -> Vec<WeatherRow> {
    let mut seen: Vec<WeatherCondition> = Vec::new();
    for img in corpus.images.values() {
        if !seen.contains(&img.weather) {
            seen.push(img.weather);
        }
    }
    seen.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then(a.intensity().total_cmp(&b.intensity()))
    });
    if seen.len() <= 1 {
        return vec![WeatherRow {
            label: seen.first().map_or_else(|| "all".to_owned(), weather_label),
            weather: None,
        }];
    }
    seen.iter()
        .map(|w| WeatherRow {
            label: weather_label(w),
            weather: Some(WeatherPredicate::at(w.kind, w.intensity())),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub row: String,
    pub bundle: MetricBundle,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub row: String,
    pub family: String,
    pub report: GroupReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityRow {
    pub row: String,
    pub family: String,
    pub report: DisparityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub row: String,
    pub bin: DistanceBin,
    pub bundle: MetricBundle,
    pub sample_count: usize,
}

/// Machine-readable result of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: RunConfig,
    pub provenance: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub rows: Vec<String>,
    pub overall: Vec<OverallRow>,
    pub groups: Vec<GroupRow>,
    pub disparities: Vec<DisparityRow>,
    pub distance: Vec<DistanceRow>,
}

/// Runs curation, matching, group evaluation and disparity computation.
pub fn evaluate(
    config: &RunConfig,
    corpus: &Corpus,
    detections: &[Detection],
    diagnostics: Vec<Diagnostic>,
) -> Result<EvaluationReport> {
    config.validate()?;
    let curated = curate(corpus, &config.curation, config.seed)?;
    let rows = if config.weather_rows.is_empty() {
        auto_weather_rows(&curated)
    } else {
        config.weather_rows.clone()
    };
    let matched = MatchedCorpus::new(
        &curated,
        detections,
        EvaluationOptions {
            ladder: config.iou_ladder.clone(),
            reporting_threshold: config.reporting_threshold,
            match_options: MatchOptions {
                min_confidence: config.min_confidence,
            },
            member_specs: Vec::new(),
        },
    )?;

    let mut overall = Vec::new();
    let mut groups = Vec::new();
    let mut disparities = Vec::new();
    let mut distance = Vec::new();
    for row in &rows {
        let in_row = |w: &WeatherCondition| row.weather.as_ref().is_none_or(|p| p.holds(w));
        let (bundle, sample_count) = matched.bundle_where(
            |img, _| in_row(&img.weather),
            |img, _, _| in_row(&img.weather),
        )?;
        overall.push(OverallRow {
            row: row.label.clone(),
            bundle,
            sample_count,
        });

        for family in &config.families {
            if family.groups.is_empty() {
                continue;
            }
            let reports = family
                .groups
                .iter()
                .map(|g| match row.weather {
                    Some(p) => g.under(p),
                    None => g.clone(),
                })
                .map(|spec| matched.evaluate_group_with(&spec, &family.members))
                .collect::<Result<Vec<_>>>()?;
            for &metric in &config.metrics {
                if let Some(report) = disparity(&reports, metric, config.epsilon)? {
                    disparities.push(DisparityRow {
                        row: row.label.clone(),
                        family: family.name.clone(),
                        report,
                    });
                }
            }
            groups.extend(reports.into_iter().map(|report| GroupRow {
                row: row.label.clone(),
                family: family.name.clone(),
                report,
            }));
        }

        if config.distance_breakdown {
            for bin in DistanceBin::ALL {
                let (bundle, sample_count) = matched.bundle_where(
                    |img, t| in_row(&img.weather) && distance_bin(&t.bbox) == bin,
                    |img, _, d| in_row(&img.weather) && distance_bin(&d.bbox) == bin,
                )?;
                distance.push(DistanceRow {
                    row: row.label.clone(),
                    bin,
                    bundle,
                    sample_count,
                });
            }
        }
    }

    Ok(EvaluationReport {
        config: config.clone(),
        provenance: curated.provenance.clone(),
        diagnostics,
        rows: rows.into_iter().map(|r| r.label).collect(),
        overall,
        groups,
        disparities,
        distance,
    })
}

/// Recomputes every disparity from the per-group values stored in `report`.
pub fn recompute_disparities(report: &EvaluationReport) -> Result<Vec<DisparityRow>> {
    let mut out = Vec::new();
    for row in &report.rows {
        for family in &report.config.families {
            let reports: Vec<GroupReport> = report
                .groups
                .iter()
                .filter(|g| &g.row == row && g.family == family.name)
                .map(|g| g.report.clone())
                .collect();
            if reports.is_empty() {
                continue;
            }
            for &metric in &report.config.metrics {
                if let Some(d) = disparity(&reports, metric, report.config.epsilon)? {
                    out.push(DisparityRow {
                        row: row.clone(),
                        family: family.name.clone(),
                        report: d,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{:.2}", v * 100.0))
}

/// Aligned text tables; metric values are scaled by 100.
pub fn render_text(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let families: Vec<&str> = {
        let mut seen = Vec::new();
        for d in &report.disparities {
            if !seen.contains(&d.family.as_str()) {
                seen.push(d.family.as_str());
            }
        }
        seen
    };
    let metrics: Vec<MetricName> = report.config.metrics.clone();
    for metric in &metrics {
        let _ = writeln!(out, "Disparity of {metric} (x100)");
        let mut header = format!("{:<16}", "");
        for f in &families {
            header.push_str(&format!("{:^36}", f));
        }
        let _ = writeln!(out, "{}", header.trim_end());
        let mut sub = format!("{:<16}", "row");
        for _ in &families {
            sub.push_str(&format!("{:>12}{:>12}{:>12}", "worst", "best", "W2"));
        }
        let _ = writeln!(out, "{sub}");
        for row in &report.rows {
            let mut line = format!("{:<16}", row);
            for f in &families {
                match report
                    .disparities
                    .iter()
                    .find(|d| &d.row == row && d.family == *f && d.report.metric == *metric)
                {
                    Some(d) => line.push_str(&format!(
                        "{:>12}{:>12}{:>12}",
                        pct(Some(d.report.worst)),
                        pct(Some(d.report.best)),
                        pct(Some(d.report.wasserstein))
                    )),
                    None => line.push_str(&format!("{:>12}{:>12}{:>12}", "-", "-", "-")),
                }
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out);
    }

    let ladder_head = report.config.reporting_threshold;
    let _ = writeln!(out, "Group metrics (x100, counts at IoU {ladder_head})");
    let _ = writeln!(
        out,
        "{:<16}{:<14}{:<28}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>8}",
        "row", "family", "group", "n", "AR", "AP", "mAR", "ATPC", "AFPC", "parity"
    );
    for g in &report.groups {
        let b = &g.report.bundle;
        let parity = report
            .disparities
            .iter()
            .find(|d| d.row == g.row && d.family == g.family)
            .map_or("-", |d| {
                if d.report.parity_satisfied {
                    "yes"
                } else {
                    "no"
                }
            });
        let _ = writeln!(
            out,
            "{:<16}{:<14}{:<28}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>8}",
            g.row,
            g.family,
            g.report.spec.name,
            g.report.sample_count,
            pct(b.ar_at(ladder_head)),
            pct(b.ap_at(ladder_head)),
            pct(b.m_ar),
            pct(b.atpc),
            pct(b.afpc),
            parity
        );
    }

    if !report.distance.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Distance bins (x100)");
        let _ = writeln!(
            out,
            "{:<16}{:<10}{:>8}{:>10}{:>10}{:>10}",
            "row", "bin", "n", "mAR", "ATPC", "AFPC"
        );
        for d in &report.distance {
            let _ = writeln!(
                out,
                "{:<16}{:<10}{:>8}{:>10}{:>10}{:>10}",
                d.row,
                d.bin.to_string(),
                d.sample_count,
                pct(d.bundle.m_ar),
                pct(d.bundle.atpc),
                pct(d.bundle.afpc)
            );
        }
    }
    out
}

fn bundle_metrics(bundle: &MetricBundle) -> Vec<(String, Option<f64>)> {
    let mut v = Vec::new();
    for m in &bundle.per_threshold {
        v.push((format!("AR@{}", m.threshold), m.ar));
        v.push((format!("AP@{}", m.threshold), m.ap));
    }
    v.push(("mAR".into(), bundle.m_ar));
    v.push(("mAP".into(), bundle.m_ap));
    v.push(("ATPC".into(), bundle.atpc));
    v.push(("AFPC".into(), bundle.afpc));
    v
}

/// Flat plot data: one line per row x group x metric, raw values in [0, 1].
pub fn render_csv(report: &EvaluationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "family", "group", "metric", "value"])?;
    let mut emit = |row: &str, family: &str, group: &str, bundle: &MetricBundle| -> Result<()> {
        for (metric, value) in bundle_metrics(bundle) {
            let value = value.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([row, family, group, metric.as_str(), value.as_str()])?;
        }
        Ok(())
    };
    for o in &report.overall {
        emit(&o.row, "all", "all", &o.bundle)?;
    }
    for g in &report.groups {
        emit(&g.row, &g.family, &g.report.spec.name, &g.report.bundle)?;
    }
    for d in &report.distance {
        emit(&d.row, "distance", &d.bin.to_string(), &d.bundle)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const PLOT_CSV: &str = "plot.csv";

/// Writes `report.json`, `report.txt` and `plot.csv` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    let text = render_text(report);
    let csv = render_csv(report)?;
    std::fs::write(dir.join(REPORT_JSON), json)?;
    std::fs::write(dir.join(REPORT_TEXT), text)?;
    std::fs::write(dir.join(PLOT_CSV), csv)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
}

/// A metric that differs between two reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportDifference {
    pub key: String,
    pub left: Option<f64>,
    pub right: Option<f64>,
}

fn flatten(report: &EvaluationReport) -> BTreeMap<String, Option<f64>> {
    let mut map = BTreeMap::new();
    for o in &report.overall {
        for (m, v) in bundle_metrics(&o.bundle) {
            map.insert(format!("{}/all/{m}", o.row), v);
        }
    }
    for g in &report.groups {
        for (m, v) in bundle_metrics(&g.report.bundle) {
            map.insert(
                format!("{}/{}/{}/{m}", g.row, g.family, g.report.spec.name),
                v,
            );
        }
    }
    for d in &report.disparities {
        let prefix = format!("{}/{}/{}", d.row, d.family, d.report.metric);
        map.insert(format!("{prefix}/worst"), Some(d.report.worst));
        map.insert(format!("{prefix}/best"), Some(d.report.best));
        map.insert(format!("{prefix}/w2"), Some(d.report.wasserstein));
    }
    for d in &report.distance {
        for (m, v) in bundle_metrics(&d.bundle) {
            map.insert(format!("{}/distance/{}/{m}", d.row, d.bin), v);
        }
    }
    map
}

/// Keys whose values differ by more than `tolerance` (or exist on one side only).
pub fn diff_reports(
    left: &EvaluationReport,
    right: &EvaluationReport,
    tolerance: f64,
) -> Vec<ReportDifference> {
    let (l, r) = (flatten(left), flatten(right));
    let keys: BTreeSet<&String> = l.keys().chain(r.keys()).collect();
    keys.into_iter()
        .filter_map(|k| {
            let (a, b) = (l.get(k).copied().flatten(), r.get(k).copied().flatten());
            let same = match (a, b) {
                (Some(x), Some(y)) => (x - y).abs() <= tolerance,
                (None, None) => l.contains_key(k) == r.contains_key(k),
                _ => false,
            };
            (!same).then(|| ReportDifference {
                key: k.clone(),
                left: a,
                right: b,
            })
        })
        .collect()
}
