//! Report files: per-model scores (JSON and CSV), score histograms (SVG),
//! and pairwise comparison matrices.
//!
//! Every emitter is a pure function of its input. Nothing time-dependent is
//! written inside a file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    detect_default_behaviors, mean_tvd, model_score, normalized_entropy, nota_rate, DefaultBehaviorSummary, Summary,
};
use crate::model::{write_json, AnswerRecord, GradeScore, ValueDistribution};
use crate::stats::{pairwise_permutation_tests, PairwiseTest, PermutationConfig};

/// How single-prompt distributions are combined; recorded in every report.
pub const NORMALIZATION: &str = "per_prompt_then_equal_weight_mean";

/// Test statistic of the pairwise permutation tests; recorded in compare output.
pub const PERMUTATION_STATISTIC: &str = "difference_of_means_over_per_distribution_scores";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub normalization: String,
    /// The resolved run configuration.
    pub config: serde_json::Value,
}

impl ReportMetadata {
    pub fn new(config: serde_json::Value) -> Self {
        ReportMetadata {
            tool: format!("grade {}", env!("CARGO_PKG_VERSION")),
            normalization: NORMALIZATION.into(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub multi: Summary,
    pub single: Summary,
    pub defaults_multi: DefaultBehaviorSummary,
    pub defaults_single: DefaultBehaviorSummary,
    pub nota_rate: f64,
    pub n_answers: usize,
    /// Distributions left out of every aggregate because they had no
    /// counted answers.
    pub excluded: usize,
    pub scores: Vec<GradeScore>,
    pub distributions: Vec<ValueDistribution>,
}

impl ModelReport {
    pub fn build(
        model: &str,
        distributions: Vec<ValueDistribution>,
        answers: &[AnswerRecord],
        tau: f64,
    ) -> Result<Self> {
        let scores = distributions
            .iter()
            .filter(|d| d.valid)
            .map(normalized_entropy)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let agg = model_score(&scores)?;
        let (multi, single): (Vec<ValueDistribution>, Vec<ValueDistribution>) =
            distributions.iter().cloned().partition(|d| d.scope.is_multi());
        Ok(ModelReport {
            model: model.to_string(),
            multi: agg.multi,
            single: agg.single,
            defaults_multi: detect_default_behaviors(&multi, tau),
            defaults_single: detect_default_behaviors(&single, tau),
            nota_rate: if answers.is_empty() { 0.0 } else { nota_rate(answers)? },
            n_answers: answers.len(),
            excluded: distributions.iter().filter(|d| !d.valid).count(),
            scores,
            distributions,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: ReportMetadata,
    pub models: Vec<ModelReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Score table, one row per model, four decimals, with a footer counting
/// excluded distributions.
pub fn report_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(["model", "multi_mean", "multi_se", "single_mean", "single_se"])
        .map_err(csv_err)?;
    for m in &report.models {
        w.write_record([
            m.model.clone(),
            f4(m.multi.mean),
            f4(m.multi.standard_error),
            f4(m.single.mean),
            f4(m.single.standard_error),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    let mut text = String::from_utf8(bytes).expect("csv output is utf-8");
    let excluded: usize = report.models.iter().map(|m| m.excluded).sum();
    let _ = writeln!(text, "# excluded invalid distributions: {excluded}");
    Ok(text)
}

pub fn emit_report(report: &Report, format: Format, path: &Path) -> Result<()> {
    match format {
        Format::Json => write_json(path, report),
        Format::Csv => write_text(path, &report_csv(report)?),
    }
}

/// Plain-text score table: mean ± standard error per scope.
pub fn render_table(report: &Report) -> String {
    let width = report.models.iter().map(|m| m.model.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:<17}  {:<17}\n", "model", "multi-prompt", "single-prompt");
    for m in &report.models {
        let _ = writeln!(
            out,
            "{:<width$}  {:<17}  {:<17}",
            m.model,
            format!("{} ± {}", f4(m.multi.mean), f4(m.multi.standard_error)),
            format!("{} ± {}", f4(m.single.mean), f4(m.single.standard_error)),
        );
    }
    out
}

/// Counts of `values` in `bins` equal-width bins over [0, 1]. Values are
/// clamped into range; 1.0 falls in the last bin.
pub fn histogram_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    for &v in values {
        let idx = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// Self-contained SVG histogram of normalized entropies.
pub fn histogram_svg(scores: &[GradeScore], bins: usize, title: &str) -> Result<String> {
    if scores.is_empty() {
        return Err(Error::Invalid("histogram needs at least one score".into()));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.entropy).collect();
    let counts = histogram_counts(&values, bins);
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    let (w, h, left, bottom, top) = (400.0, 240.0, 40.0, 30.0, 24.0);
    let plot_w = w - left - 10.0;
    let plot_h = h - bottom - top;
    let bar_w = plot_w / counts.len() as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (i, &c) in counts.iter().enumerate() {
        let bh = if max > 0.0 { plot_h * c as f64 / max } else { 0.0 };
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4878a8" data-count="{c}"/>"##,
            left + i as f64 * bar_w,
            top + plot_h - bh,
            bar_w,
            bh
        );
    }
    let axis_y = top + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        left + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{axis_y}" stroke="black"/>"#
    );
    for tick in 0..=4 {
        let t = tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{t:.2}</text>"#,
            left + t * plot_w,
            axis_y + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + 4.0,
        max as usize
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn emit_histogram(scores: &[GradeScore], bins: usize, title: &str, path: &Path) -> Result<()> {
    write_text(path, &histogram_svg(scores, bins, title)?)
}

/// A symmetric model-by-model matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub models: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl PairwiseMatrix {
    /// Builds the matrix from one value per unordered pair. Every pair must
    /// be present; the diagonal is set to `diagonal`.
    pub fn from_pairs(models: &[String], pairs: &[(String, String, f64)], diagonal: f64) -> Result<Self> {
        let mut lookup: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for (a, b, v) in pairs {
            lookup.insert((a.as_str(), b.as_str()), *v);
            lookup.insert((b.as_str(), a.as_str()), *v);
        }
        let n = models.len();
        let mut values = vec![vec![diagonal; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = *lookup
                    .get(&(models[i].as_str(), models[j].as_str()))
                    .ok_or_else(|| Error::Invalid(format!("missing pair ({}, {})", models[i], models[j])))?;
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        Ok(PairwiseMatrix {
            models: models.to_vec(),
            values,
        })
    }

    /// Off-diagonal entries in `(i, j), i < j` order.
    pub fn pairs(&self) -> Vec<(String, String, f64)> {
        let n = self.models.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.models[i].clone(), self.models[j].clone(), self.values[i][j]))
            .collect()
    }

    /// CSV with a header row of model names. Values are multiplied by
    /// `scale` and printed with at most two decimals.
    pub fn to_csv(&self, scale: f64) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        let header: Vec<&str> = std::iter::once("model")
            .chain(self.models.iter().map(String::as_str))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in self.models.iter().zip(&self.values) {
            let cells: Vec<String> = std::iter::once(name.clone())
                .chain(row.iter().map(|v| trim_number(v * scale)))
                .collect();
            w.write_record(&cells).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn trim_number(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Writes `<stem>.json` (values in [0, 1]) and `<stem>.csv` (scaled).
pub fn emit_pairwise_matrix(matrix: &PairwiseMatrix, scale: f64, dir: &Path, stem: &str) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), matrix)?;
    write_text(&dir.join(format!("{stem}.csv")), &matrix.to_csv(scale)?)
}

/// Pairwise tests and distances between models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub metadata: ReportMetadata,
    pub statistic: String,
    pub models: Vec<String>,
    /// Permutation tests on multi-prompt scores.
    pub tests_multi: Vec<PairwiseTest>,
    /// Permutation tests on single-prompt scores.
    pub tests_single: Vec<PairwiseTest>,
    pub tvd_multi: PairwiseMatrix,
    pub tvd_single: PairwiseMatrix,
}

/// Mean TVD between every pair of models over the distributions of one
/// scope that both have.
pub fn tvd_matrix(reports: &[&ModelReport], multi: bool) -> Result<PairwiseMatrix> {
    let scoped: Vec<Vec<ValueDistribution>> = reports
        .iter()
        .map(|r| {
            r.distributions
                .iter()
                .filter(|d| d.scope.is_multi() == multi)
                .cloned()
                .collect()
        })
        .collect();
    let models: Vec<String> = reports.iter().map(|r| r.model.clone()).collect();
    let mut pairs = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let d = mean_tvd(&scoped[i], &scoped[j])
                .map_err(|e| Error::Invalid(format!("{} vs {}: {e}", models[i], models[j])))?;
            pairs.push((models[i].clone(), models[j].clone(), d));
        }
    }
    PairwiseMatrix::from_pairs(&models, &pairs, 0.0)
}

pub fn compare(reports: &[&ModelReport], cfg: &PermutationConfig, metadata: ReportMetadata) -> Result<CompareReport> {
    let models: Vec<String> = reports.iter().map(|r| r.model.clone()).collect();
    for (i, m) in models.iter().enumerate() {
        if models[..i].contains(m) {
            return Err(Error::Invalid(format!("model {m} appears twice")));
        }
    }
    let samples = |multi: bool| -> Vec<(String, Vec<f64>)> {
        reports
            .iter()
            .map(|r| {
                let v = r
                    .scores
                    .iter()
                    .filter(|s| s.scope.is_multi() == multi)
                    .map(|s| s.entropy)
                    .collect();
                (r.model.clone(), v)
            })
            .collect()
    };
    Ok(CompareReport {
        metadata,
        statistic: PERMUTATION_STATISTIC.into(),
        tests_multi: pairwise_permutation_tests(&samples(true), cfg)?,
        tests_single: pairwise_permutation_tests(&samples(false), cfg)?,
        tvd_multi: tvd_matrix(reports, true)?,
        tvd_single: tvd_matrix(reports, false)?,
        models,
    })
}

/// One row comparing model and dataset distributions: both entropies, the
/// correlation (or "n/a") and the TVD.
pub fn render_reference_row(label: &str, c: &crate::caption_filter::Comparison) -> String {
    format!(
        "{label},{},{},{},{}",
        f4(c.entropy_model),
        f4(c.entropy_dataset),
        c.pcc.map(f4).unwrap_or_else(|| "n/a".into()),
        f4(c.tvd)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption_filter::Comparison;
    use crate::model::Scope;

    fn dist(q: &str, scope: Scope, pairs: &[(&str, f64)]) -> ValueDistribution {
        ValueDistribution {
            question_id: q.into(),
            concept_id: "cookie".into(),
            scope,
            probabilities: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            support_size: 2,
            n_counted: 10,
            n_discarded: 0,
            n_prompts: 1,
            valid: !pairs.is_empty(),
        }
    }

    fn sample_report() -> Report {
        let single = Scope::SinglePrompt { prompt_id: "p".into() };
        let dists = vec![
            dist("q0", single.clone(), &[("round", 0.98), ("square", 0.02)]),
            dist("q0", Scope::MultiPrompt, &[("round", 0.5), ("square", 0.5)]),
            dist("q1", single, &[]),
        ];
        Report {
            metadata: ReportMetadata::new(serde_json::json!({"tau": 0.8})),
            models: vec![ModelReport::build("sd-1.4", dists, &[], 0.8).unwrap()],
        }
    }

    #[test]
    fn csv_columns_and_footer() {
        let text = report_csv(&sample_report()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model,multi_mean,multi_se,single_mean,single_se");
        assert_eq!(lines[1], "sd-1.4,1.0000,0.0000,0.1414,0.0000");
        assert_eq!(lines[2], "# excluded invalid distributions: 1");
    }

    #[test]
    fn emission_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for (i, fmt) in [Format::Json, Format::Json, Format::Csv, Format::Csv]
            .into_iter()
            .enumerate()
        {
            emit_report(&sample_report(), fmt, &dir.path().join(format!("r{i}"))).unwrap();
        }
        let read = |i: usize| fs::read(dir.path().join(format!("r{i}"))).unwrap();
        assert_eq!(read(0), read(1));
        assert_eq!(read(2), read(3));
    }

    #[test]
    fn histogram_binning() {
        assert_eq!(histogram_counts(&[0.0, 0.0, 0.0], 20)[0], 3);
        assert_eq!(histogram_counts(&[0.0, 0.0, 0.0], 20)[1..].iter().sum::<usize>(), 0);
        assert_eq!(histogram_counts(&[1.0], 4), vec![0, 0, 0, 1]);
        assert_eq!(histogram_counts(&[0.25], 4), vec![0, 1, 0, 0]);

        let uniform: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
        let counts = histogram_counts(&uniform, 20);
        // direct counting oracle
        for (b, &c) in counts.iter().enumerate() {
            let (lo, hi) = (b as f64 / 20.0, (b + 1) as f64 / 20.0);
            let expect = uniform
                .iter()
                .filter(|&&v| v >= lo && (v < hi || (b == 19 && v <= hi)))
                .count();
            assert_eq!(c, expect);
            assert_eq!(c, 100);
        }

        let bimodal: Vec<f64> = (0..50)
            .map(|i| i as f64 * 0.001)
            .chain((0..50).map(|i| 1.0 - i as f64 * 0.001))
            .collect();
        let counts = histogram_counts(&bimodal, 20);
        assert_eq!(counts[0] + counts[19], 100);
    }

    #[test]
    fn svg_is_stable() {
        let r = sample_report();
        let a = histogram_svg(&r.models[0].scores, 20, "cookie <shape>").unwrap();
        assert_eq!(a, histogram_svg(&r.models[0].scores, 20, "cookie <shape>").unwrap());
        assert!(a.starts_with("<svg"));
        assert!(a.contains("&lt;shape&gt;"));
        assert_eq!(a.matches("<rect").count(), 20);
        assert!(histogram_svg(&[], 20, "x").is_err());
    }

    #[test]
    fn matrix_from_pairs() {
        let models: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let pairs = vec![
            ("a".to_string(), "b".to_string(), 0.22),
            ("c".to_string(), "a".to_string(), 0.1),
            ("b".to_string(), "c".to_string(), 0.05),
        ];
        let m = PairwiseMatrix::from_pairs(&models, &pairs, 0.0).unwrap();
        assert_eq!(m.values[1][0], 0.22);
        assert_eq!(m.values[0][2], 0.1);
        assert_eq!(m.values[2][2], 0.0);
        let csv = m.to_csv(100.0).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "a,0,22,10");
        assert_eq!(m.pairs().len(), 3);

        let err = PairwiseMatrix::from_pairs(&models, &pairs[..2], 0.0).unwrap_err();
        assert!(err.to_string().contains("(b, c)"));
    }

    #[test]
    fn reference_row_shape() {
        let c = Comparison {
            question_id: "cookie_q0".into(),
            entropy_model: 0.62,
            entropy_dataset: 0.64,
            pcc: Some(0.88),
            tvd: 0.10,
        };
        assert_eq!(render_reference_row("SD-1.4", &c), "SD-1.4,0.6200,0.6400,0.8800,0.1000");
        let c = Comparison { pcc: None, ..c };
        assert!(render_reference_row("x", &c).contains(",n/a,"));
    }
}
