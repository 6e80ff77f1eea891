use std::fmt::Write as _;

/// Metrics of one model on one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub checkpoint: String,
    pub subset: String,
    pub images: usize,
    pub ssim: Option<f64>,
    pub fid: Option<f64>,
    /// Warnings, or the failure message of a row that could not be computed.
    pub note: String,
    pub failed: bool,
}

impl ReportRow {
    pub fn failure(method: &str, checkpoint: &str, subset: &str, message: &str) -> Self {
        Self {
            method: method.to_string(),
            checkpoint: checkpoint.to_string(),
            subset: subset.to_string(),
            images: 0,
            ssim: None,
            fid: None,
            note: format!("failed: {message}"),
            failed: true,
        }
    }
}

pub const REPORT_HEADER: &str = "method,checkpoint,subset,images,ssim,fid,note";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn number(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Rows in the order they were added, one per model and subset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub extractor: String,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn new(extractor: impl Into<String>) -> Self {
        Self {
            extractor: extractor.into(),
            rows: Vec::new(),
        }
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.failed)
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.failed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let fields = [
                csv_field(&r.method),
                csv_field(&r.checkpoint),
                csv_field(&r.subset),
                r.images.to_string(),
                number(r.ssim),
                number(r.fid),
                csv_field(&r.note),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Models as rows, subsets as column pairs of SSIM (higher is better)
    /// and FID (lower is better).
    pub fn to_table(&self) -> String {
        let mut subsets: Vec<(String, usize)> = Vec::new();
        let mut models: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !subsets.iter().any(|(s, _)| *s == r.subset) {
                subsets.push((r.subset.clone(), r.images));
            } else if let Some(s) = subsets.iter_mut().find(|(s, _)| *s == r.subset) {
                s.1 = s.1.max(r.images);
            }
            let key = (r.method.clone(), r.checkpoint.clone());
            if !models.contains(&key) {
                models.push(key);
            }
        }
        let label = |(m, c): &(String, String)| if c.is_empty() { m.clone() } else { format!("{m} [{c}]") };
        let first = models.iter().map(|k| label(k).chars().count()).max().unwrap_or(0).max("Method".len());
        const CELL: usize = 8;
        let group = 2 * CELL + 1;

        let mut out = String::new();
        let _ = write!(out, "{:first$}", "");
        for (name, n) in &subsets {
            let title = format!("{name} ({n})");
            let _ = write!(out, " | {title:^group$}");
        }
        out.push('\n');
        let _ = write!(out, "{:first$}", "Method");
        for _ in &subsets {
            let _ = write!(out, " | {:>CELL$} {:>CELL$}", "SSIM↑", "FID↓");
        }
        out.push('\n');
        out.push_str(&"-".repeat(first));
        for _ in &subsets {
            out.push_str(&format!("-+-{}", "-".repeat(group)));
        }
        out.push('\n');
        for key in &models {
            let _ = write!(out, "{:first$}", label(key));
            for (subset, _) in &subsets {
                let row = self
                    .rows
                    .iter()
                    .find(|r| r.method == key.0 && r.checkpoint == key.1 && &r.subset == subset);
                let (s, f) = match row {
                    Some(r) if r.failed => ("failed".to_string(), String::new()),
                    Some(r) => (
                        r.ssim.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                        r.fid.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
                    ),
                    None => ("".into(), "".into()),
                };
                let _ = write!(out, " | {s:>CELL$} {f:>CELL$}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "FID features: {}", self.extractor);
        out
    }
}
