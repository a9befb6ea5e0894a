//! Rendering: aligned text tables, significance stars and the versioned
//! JSON envelope.

use serde::Serialize;

use crate::data::FrequencyRow;
use crate::efa::ComponentTable;
use crate::effects::{EffectDecomposition, Verdict};
use crate::indices::FitIndexReport;
use crate::model::ParamKind;
use crate::psychometrics::{BartlettResult, ConstructReliability, FornellLarcker};
use crate::sem::{FitResult, StandardizedEstimate};

pub const SCHEMA_VERSION: u32 = 1;

/// Serde adapter storing a `DMatrix<f64>` as a list of rows.
pub mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::linalg::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::linalg::from_rows(&rows).ok_or_else(|| D::Error::custom("ragged matrix rows"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum StarConvention {
    /// `*` < 0.1, `**` < 0.05, `***` < 0.001.
    #[default]
    Lenient,
    /// `*` < 0.05, `**` < 0.01, `***` < 0.001.
    Conventional,
}

pub fn stars(p: f64, convention: StarConvention) -> &'static str {
    let (one, two) = match convention {
        StarConvention::Lenient => (0.1, 0.05),
        StarConvention::Conventional => (0.05, 0.01),
    };
    if p < 0.001 {
        "***"
    } else if p < two {
        "**"
    } else if p < one {
        "*"
    } else {
        ""
    }
}

pub fn fmt_num(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        let s = format!("{v:.decimals$}");
        // Avoid "-0.000".
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    } else {
        "NA".to_string()
    }
}

pub fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(String::new, |x| fmt_num(x, decimals))
}

/// P column: `***` below 0.001, otherwise three decimals with stars.
pub fn fmt_p(p: Option<f64>, convention: StarConvention) -> String {
    match p {
        None => String::new(),
        Some(p) if p < 0.001 => "***".to_string(),
        Some(p) => format!("{}{}", fmt_num(p, 3), stars(p, convention)),
    }
}

/// Column-aligned plain-text table. Numeric-looking cells are right-aligned.
#[derive(Debug, Clone, Default)]
pub struct TextTable {
    pub title: Option<String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl TextTable {
    pub fn new(title: &str, headers: &[&str]) -> TextTable {
        TextTable {
            title: Some(title.to_string()),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            ..TextTable::default()
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn render(&self) -> String {
        let cols = self.headers.len().max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        let mut width = vec![0; cols];
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            for (j, cell) in row.iter().enumerate() {
                width[j] = width[j].max(cell.chars().count());
            }
        }
        let numeric = |s: &str| {
            let t = s.trim_end_matches('*');
            !t.is_empty() && t.parse::<f64>().is_ok() || s == "***"
        };
        let line = |row: &[String]| {
            let cells: Vec<String> = (0..cols)
                .map(|j| {
                    let cell = row.get(j).map_or("", String::as_str);
                    if numeric(cell) {
                        format!("{cell:>w$}", w = width[j])
                    } else {
                        format!("{cell:<w$}", w = width[j])
                    }
                })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let total: usize = width.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        let mut out = String::new();
        if let Some(t) = &self.title {
            out.push_str(t);
            out.push('\n');
        }
        out.push_str(&line(&self.headers));
        out.push('\n');
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        out
    }
}

fn is_user_label(label: &str) -> bool {
    !label.contains('~')
}

/// Estimate, S.E., C.R., P and Label for every loading and structural path.
pub fn regression_weights_table(fit: &FitResult, convention: StarConvention) -> TextTable {
    let mut t = TextTable::new("Regression weights", &["Path", "Estimate", "S.E.", "C.R.", "P", "Label"]);
    let mut structural: Vec<_> = fit.estimates.iter().filter(|e| e.kind == ParamKind::Regression).collect();
    structural.extend(fit.estimates.iter().filter(|e| e.kind == ParamKind::Loading));
    for e in structural {
        let path = if e.kind == ParamKind::Regression {
            format!("{} <--- {}", e.lhs, e.rhs)
        } else {
            format!("{} <--- {}", e.rhs, e.lhs)
        };
        t.push(vec![
            path,
            fmt_num(e.estimate, 3),
            fmt_opt(e.se, 3),
            fmt_opt(e.z, 3),
            fmt_p(e.p, convention),
            if is_user_label(&e.label) { e.label.clone() } else { String::new() },
        ]);
    }
    t
}

pub fn standardized_table(sol: &[StandardizedEstimate]) -> TextTable {
    let mut t = TextTable::new("Standardized estimates", &["Parameter", "Estimate", "Std."]);
    for s in sol {
        t.push(vec![
            format!("{} {} {}", s.lhs, s.op, s.rhs),
            fmt_num(s.estimate, 3),
            fmt_num(s.std, 3),
        ]);
    }
    t
}

pub fn fit_summary_table(fit: &FitResult) -> TextTable {
    let mut t = TextTable::new("Estimation", &["Item", "Value"]);
    t.push(vec!["N".into(), fit.n.to_string()]);
    t.push(vec!["Free parameters".into(), fit.theta.len().to_string()]);
    t.push(vec!["df".into(), fit.df.to_string()]);
    t.push(vec!["F_min".into(), fmt_num(fit.f_min, 6)]);
    t.push(vec!["Chi-square".into(), fmt_num(fit.chisq, 3)]);
    t.push(vec!["Iterations".into(), fit.iterations.to_string()]);
    t.push(vec!["Converged".into(), if fit.converged { "yes" } else { "no" }.into()]);
    if !fit.heywood.is_empty() {
        t.note(format!("Negative variance estimates: {}", fit.heywood.join(", ")));
    }
    t
}

pub fn fit_index_table(r: &FitIndexReport) -> TextTable {
    let mut t = TextTable::new("Model fit summary", &["Item", "Value", "Standard", "Meets?"]);
    for row in &r.table {
        t.push(vec![
            row.name.to_string(),
            fmt_opt(row.value, 3),
            row.standard.clone(),
            match row.meets {
                Some(true) => "Yes".into(),
                Some(false) => "No".into(),
                None => "undefined".into(),
            },
        ]);
    }
    t.note(format!(
        "Chi-square = {} on {} df; baseline {} on {} df",
        fmt_num(r.chisq, 3),
        r.df,
        fmt_num(r.chisq_null, 3),
        r.df_null
    ));
    t
}

pub fn reliability_table(constructs: &[ConstructReliability]) -> TextTable {
    let mut t = TextTable::new("Reliability", &["Construct", "Items", "Cronbach's alpha"]);
    for c in constructs {
        t.push(vec![c.construct.clone(), c.items.len().to_string(), fmt_opt(c.alpha, 3)]);
    }
    t
}

pub fn kmo_table(kmo: Option<f64>, bartlett: &BartlettResult, convention: StarConvention) -> TextTable {
    let mut t = TextTable::new("KMO and Bartlett's test", &["Item", "Value"]);
    t.push(vec!["KMO".into(), kmo.map_or_else(|| "undefined".into(), |k| fmt_num(k, 3))]);
    t.push(vec!["Approx. Chi-square".into(), fmt_num(bartlett.chi_square, 3)]);
    t.push(vec!["df".into(), fmt_num(bartlett.df, 0)]);
    t.push(vec!["Sig.".into(), fmt_p(Some(bartlett.p_value), convention)]);
    t
}

/// Standardized loadings with CR and AVE (four decimals) per construct.
pub fn convergent_validity_table(constructs: &[ConstructReliability]) -> TextTable {
    let mut t = TextTable::new("Convergent validity", &["Construct", "Item", "Std. loading", "CR", "AVE"]);
    for c in constructs {
        for (k, (item, l)) in c.items.iter().zip(&c.loadings).enumerate() {
            let first = k == 0;
            t.push(vec![
                if first { c.construct.clone() } else { String::new() },
                item.clone(),
                fmt_num(*l, 3),
                if first { fmt_num(c.cr, 4) } else { String::new() },
                if first { fmt_num(c.ave, 4) } else { String::new() },
            ]);
        }
    }
    t
}

/// Lower triangle of construct correlations with sqrt(AVE) on the diagonal.
pub fn discriminant_validity_table(fl: &FornellLarcker) -> TextTable {
    let mut headers = vec![""];
    headers.extend(fl.constructs.iter().map(String::as_str));
    headers.push("Pass");
    let mut t = TextTable::new("Discriminant validity", &headers);
    for (i, name) in fl.constructs.iter().enumerate() {
        let mut row = vec![name.clone()];
        for j in 0..fl.constructs.len() {
            row.push(match j.cmp(&i) {
                std::cmp::Ordering::Less => fmt_num(fl.correlations[i][j], 3),
                std::cmp::Ordering::Equal => fmt_num(fl.sqrt_ave[i], 3),
                std::cmp::Ordering::Greater => String::new(),
            });
        }
        row.push(if fl.passes[i] { "yes" } else { "no" }.into());
        t.push(row);
    }
    t.note("Diagonal: square root of AVE.");
    t
}

/// Total, direct and indirect effects with interval bounds.
pub fn effects_table(decomps: &[EffectDecomposition]) -> TextTable {
    let mut t = TextTable::new(
        "Effects",
        &["Effect", "Component", "Estimate", "Lower", "Upper"],
    );
    for d in decomps {
        for (k, (name, iv)) in [("Total", &d.total), ("Direct", &d.direct), ("Indirect", &d.indirect)]
            .into_iter()
            .enumerate()
        {
            t.push(vec![
                if k == 0 { format!("{} -> {} -> {}", d.effect.source, d.effect.mediator, d.effect.target) } else { String::new() },
                name.into(),
                fmt_num(iv.estimate, 3),
                fmt_num(iv.lower, 3),
                fmt_num(iv.upper, 3),
            ]);
        }
    }
    if let Some(d) = decomps.first() {
        let method = match d.method {
            crate::effects::IntervalMethod::Delta => "delta method".to_string(),
            crate::effects::IntervalMethod::Percentile { replicates, used, failed } => {
                format!("percentile bootstrap, {used} of {replicates} replicates used ({failed} failed)")
            }
        };
        t.note(format!("{}% intervals, {method}", fmt_num(100.0 * d.level, 1)));
    }
    t
}

pub fn hypotheses_table(verdicts: &[Verdict], convention: StarConvention) -> TextTable {
    let mut t = TextTable::new("Hypotheses", &["Hypothesis", "Relation", "Estimate", "P", "Result"]);
    for v in verdicts {
        let result = match v.mediation {
            Some(m) => m.to_string(),
            None => if v.supported { "supported" } else { "not supported" }.to_string(),
        };
        t.push(vec![
            v.id.clone(),
            v.description.clone(),
            fmt_num(v.estimate, 3),
            fmt_p(v.p, convention),
            result,
        ]);
    }
    t
}

pub fn frequency_text(variable: &str, rows: &[FrequencyRow]) -> TextTable {
    let mut t = TextTable::new(&format!("Frequencies: {variable}"), &["Level", "Count", "Percent"]);
    for r in rows {
        t.push(vec![r.level.clone(), r.count.to_string(), fmt_num(r.percent, 2)]);
    }
    t
}

pub fn component_table_text(table: &ComponentTable) -> TextTable {
    let mut headers = vec!["Item".to_string()];
    headers.extend((1..=table.n_factors).map(|k| k.to_string()));
    let mut t = TextTable {
        title: Some("Rotated component matrix".into()),
        headers,
        ..TextTable::default()
    };
    for r in &table.rows {
        let mut row = vec![r.item.clone()];
        row.extend(r.cells.iter().map(|c| fmt_opt(*c, 3)));
        t.push(row);
    }
    t
}

/// `|total - direct - indirect| <= tol`
pub fn additivity_check(total: f64, direct: f64, indirect: f64, tol: f64) -> bool {
    (total - direct - indirect).abs() <= tol
}

/// Versioned JSON document with stable key order.
pub fn envelope<T: Serialize>(
    kind: &str,
    provenance: serde_json::Value,
    result: &T,
) -> Result<serde_json::Value, serde_json::Error> {
    Ok(serde_json::json!({
        "schema": SCHEMA_VERSION,
        "kind": kind,
        "provenance": provenance,
        "result": serde_json::to_value(result)?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.0005, StarConvention::Lenient), "***");
        assert_eq!(stars(0.07, StarConvention::Lenient), "*");
        assert_eq!(stars(0.03, StarConvention::Lenient), "**");
        assert_eq!(stars(0.5, StarConvention::Lenient), "");
        assert_eq!(stars(0.07, StarConvention::Conventional), "");
        assert_eq!(stars(0.03, StarConvention::Conventional), "*");
        assert_eq!(stars(0.005, StarConvention::Conventional), "**");
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(0.12345, 3), "0.123");
        assert_eq!(fmt_num(-0.0001, 3), "0.000");
        assert_eq!(fmt_num(f64::NAN, 3), "NA");
        assert_eq!(fmt_p(Some(0.0002), StarConvention::Lenient), "***");
        assert_eq!(fmt_p(Some(0.008), StarConvention::Lenient), "0.008**");
        assert_eq!(fmt_p(Some(0.695), StarConvention::Lenient), "0.695");
    }

    #[test]
    fn aligned_columns() {
        let mut t = TextTable::new("T", &["Name", "Value"]);
        t.push(vec!["a".into(), "1.5".into()]);
        t.push(vec!["long name".into(), "-12.25".into()]);
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[3].len(), lines[4].len());
        assert!(lines[3].ends_with("   1.5"));
    }

    #[test]
    fn reference_effects_add_up() {
        for (t, d, i) in [(0.210, 0.156, 0.055), (0.559, 0.301, 0.257), (0.150, 0.034, 0.116)] {
            assert!(additivity_check(t, d, i, 0.002));
        }
        assert!(!additivity_check(0.5, 0.1, 0.1, 0.002));
    }

    #[test]
    fn matrix_round_trip() {
        #[derive(Serialize, serde::Deserialize)]
        struct W {
            #[serde(with = "matrix_serde")]
            m: nalgebra::DMatrix<f64>,
        }
        let w = W { m: nalgebra::DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) };
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,6.0]]}"#);
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back.m, w.m);
    }

    #[test]
    fn envelope_is_versioned() {
        let v = envelope("fit", serde_json::json!({"seed": 1}), &vec![1, 2]).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["result"][1], 2);
    }
}
