//! Text and JSON renderings of metrics, explanations and projections, and
//! similarity-map exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use geoproto_core::explain::{CaseReport, ProjectedPrototype, SampleMeta, SimilarityMap};
use geoproto_core::train::Metrics;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

pub fn class_name(y: u8) -> &'static str {
    if y == 1 {
        "event"
    } else {
        "no event"
    }
}

pub fn metrics_text(title: &str, m: &Metrics) -> String {
    format!(
        "{title}: n={} CrsEnt={:.4} ACC={:.4} Precision={:.4} Recall={:.4} F1={:.4}\n",
        m.n, m.cross_entropy, m.accuracy, m.precision, m.recall, m.f1
    )
}

/// A case explanation together with where the case came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub sample: SampleMeta,
    pub label: u8,
    pub report: CaseReport,
}

pub fn case_text(doc: &CaseDocument) -> String {
    let r = &doc.report;
    let mut s = String::new();
    let m = &doc.sample;
    let _ = writeln!(
        s,
        "case {} at t={} cell=({}, {}), observed: {}",
        m.id,
        m.time,
        m.center.0,
        m.center.1,
        class_name(doc.label)
    );
    let _ = writeln!(
        s,
        "predicted: {} (P(event)={:.4})",
        class_name(r.predicted),
        r.probabilities[1]
    );
    let _ = writeln!(s, "\n[case concepts]");
    if r.concepts.is_empty() {
        let _ = writeln!(s, "  no significant concepts");
    }
    for c in &r.concepts {
        let _ = writeln!(s, "  {c}");
    }
    let (toward, against): (Vec<_>, Vec<_>) = r.contributions.iter().partition(|c| c.contributions[1] >= 0.0);
    let _ = writeln!(s, "\n[prototypes for event]");
    for c in toward {
        let _ = writeln!(
            s,
            "  proto {} ({}) similarity {:.4} x coef {:+.4} = {:+.4}",
            c.k,
            class_name(c.class),
            c.similarity,
            c.coefficients[1],
            c.contributions[1]
        );
    }
    let _ = writeln!(s, "\n[prototypes against event]");
    for c in against {
        let _ = writeln!(
            s,
            "  proto {} ({}) similarity {:.4} x coef {:+.4} = {:+.4}",
            c.k,
            class_name(c.class),
            c.similarity,
            c.coefficients[1],
            c.contributions[1]
        );
    }
    let z = r.reconstructed_logits();
    let _ = writeln!(s, "\n[logits]");
    for (class, name) in [(0, "no event"), (1, "event")] {
        let _ = writeln!(
            s,
            "  {name}: bias {:+.6} + prototypes {:+.6} = {:+.6} (forward {:+.6})",
            r.bias[class],
            z[class] - r.bias[class],
            z[class],
            r.logits[class]
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDocument {
    pub prototypes: Vec<ProjectedPrototype>,
    /// Validation metrics before and after hard projection, when requested.
    pub hard: Option<HardProjection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardProjection {
    pub before: Metrics,
    pub after: Metrics,
    pub delta_accuracy: f64,
    pub delta_f1: f64,
}

pub fn projection_text(doc: &ProjectionDocument) -> String {
    let mut s = String::new();
    for p in &doc.prototypes {
        let colour = if p.class == 1 { "red" } else { "blue" };
        let _ = writeln!(
            s,
            "[prototype {} ({colour}, {})] source case {} at t={} cell=({}, {}), similarity {:.4}, head [{:+.4}, {:+.4}]",
            p.k,
            class_name(p.class),
            p.source.id,
            p.source.time,
            p.source.center.0,
            p.source.center.1,
            p.similarity,
            p.head[0],
            p.head[1]
        );
        if p.top_concepts.is_empty() {
            let _ = writeln!(s, "  no significant concepts");
        }
        for c in &p.top_concepts {
            let _ = writeln!(s, "  {c}");
        }
    }
    if let Some(h) = &doc.hard {
        let _ = write!(s, "\nhard projection\n{}{}", metrics_text("  before", &h.before), metrics_text("  after", &h.after));
        let _ = writeln!(s, "  delta ACC={:+.4} F1={:+.4}", h.delta_accuracy, h.delta_f1);
    }
    s
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn render<T: Serialize>(value: &T, format: Format, text: impl FnOnce(&T) -> String) -> String {
    match format {
        Format::Text => text(value),
        Format::Json => to_json(value),
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    fs::write(path, contents).map_err(AppError::io(path))
}

pub fn map_csv(map: &SimilarityMap) -> String {
    let mut s = String::new();
    for r in 0..map.rows {
        let row: Vec<String> = (0..map.cols).map(|c| map.at(r, c).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Binary greyscale image scaled so the busiest cell is white.
pub fn map_pgm(map: &SimilarityMap) -> Vec<u8> {
    let max = map.counts.iter().copied().max().unwrap_or(0);
    let mut out = format!("P5\n{} {}\n255\n", map.cols, map.rows).into_bytes();
    out.extend(map.counts.iter().map(|&c| {
        if max == 0 {
            0
        } else {
            ((c as u64 * 255 + max as u64 / 2) / max as u64) as u8
        }
    }));
    out
}

/// Non-zero weekday slices as `weekday,row,col,count`, Monday = 0.
pub fn weekday_csv(map: &SimilarityMap) -> String {
    let mut s = String::from("weekday,row,col,count\n");
    for d in 0..7 {
        for r in 0..map.rows {
            for c in 0..map.cols {
                let v = map.weekday[(d * map.rows + r) * map.cols + c];
                if v > 0 {
                    let _ = writeln!(s, "{d},{r},{c},{v}");
                }
            }
        }
    }
    s
}

pub fn write_maps(dir: &Path, maps: &[SimilarityMap]) -> AppResult<()> {
    for m in maps {
        write_file(&dir.join(format!("proto_{}.csv", m.k)), map_csv(m))?;
        write_file(&dir.join(format!("proto_{}.pgm", m.k)), map_pgm(m))?;
        write_file(&dir.join(format!("proto_{}_weekday.csv", m.k)), weekday_csv(m))?;
    }
    Ok(())
}
