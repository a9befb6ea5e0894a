use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelSpec, Modifier};

/// How latent scales are pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Identification {
    /// First listed indicator of every latent has its loading fixed to 1.
    #[default]
    Marker,
    /// All loadings free; latent (or disturbance) variances fixed to 1.
    UnitVariance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub identification: Identification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatrixKind {
    LambdaY,
    LambdaX,
    Beta,
    Gamma,
    Phi,
    Psi,
    ThetaEps,
    ThetaDelta,
}

impl MatrixKind {
    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            MatrixKind::Phi | MatrixKind::Psi | MatrixKind::ThetaEps | MatrixKind::ThetaDelta
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Entry {
    Fixed(f64),
    Free(usize),
}

/// Matrix whose entries are constants or references into the free vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMatrix {
    pub kind: MatrixKind,
    pub rows: usize,
    pub cols: usize,
    entries: Vec<Entry>,
}

impl PatternMatrix {
    fn zeros(kind: MatrixKind, rows: usize, cols: usize) -> Self {
        PatternMatrix {
            kind,
            rows,
            cols,
            entries: vec![Entry::Fixed(0.0); rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Entry {
        self.entries[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize, entry: Entry) {
        self.entries[row * self.cols + col] = entry;
        if self.kind.is_symmetric() {
            self.entries[col * self.cols + row] = entry;
        }
    }

    pub fn evaluate(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| match self.get(r, c) {
            Entry::Fixed(v) => v,
            Entry::Free(k) => theta[k],
        })
    }

    pub fn free_entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).filter_map(move |c| match self.get(r, c) {
                Entry::Free(k) => Some((r, c, k)),
                Entry::Fixed(_) => None,
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Measures,
    Regression,
    Covariance,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Measures => "=~",
            Relation::Regression => "~",
            Relation::Covariance => "~~",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Loading,
    Regression,
    LatentVariance,
    LatentCovariance,
    DisturbanceVariance,
    DisturbanceCovariance,
    ErrorVariance,
    ErrorCovariance,
}

impl ParamKind {
    pub fn is_variance(self) -> bool {
        matches!(
            self,
            ParamKind::LatentVariance | ParamKind::DisturbanceVariance | ParamKind::ErrorVariance
        )
    }
}

/// One model parameter, free or fixed, in `lhs op rhs` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameter {
    pub lhs: String,
    pub relation: Relation,
    pub rhs: String,
    pub kind: ParamKind,
    pub matrix: MatrixKind,
    pub row: usize,
    pub col: usize,
    pub label: String,
    /// Position in the free vector, `None` for fixed parameters.
    pub free: Option<usize>,
    /// Fixed value (meaningless when free).
    pub value: f64,
}

/// LISREL-form matrices of a compiled model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMatrices {
    pub lambda_y: PatternMatrix,
    pub lambda_x: PatternMatrix,
    pub beta: PatternMatrix,
    pub gamma: PatternMatrix,
    pub phi: PatternMatrix,
    pub psi: PatternMatrix,
    pub theta_eps: PatternMatrix,
    pub theta_delta: PatternMatrix,
    pub endogenous: Vec<String>,
    pub exogenous: Vec<String>,
    pub y_indicators: Vec<String>,
    pub x_indicators: Vec<String>,
    /// Observed variable order used for implied covariance matrices.
    pub observed: Vec<String>,
    pub y_positions: Vec<usize>,
    pub x_positions: Vec<usize>,
    /// Every free parameter plus every non-default fixed one.
    pub parameters: Vec<ModelParameter>,
    pub theta_index: BTreeMap<String, usize>,
    pub identification: Identification,
}

impl ParamMatrices {
    pub fn n_free(&self) -> usize {
        self.theta_index.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    /// Free parameters ordered by their position in the free vector.
    pub fn free_parameters(&self) -> Vec<&ModelParameter> {
        let mut v: Vec<&ModelParameter> = self.parameters.iter().filter(|p| p.free.is_some()).collect();
        v.sort_by_key(|p| p.free);
        v
    }

    pub fn parameter(&self, label: &str) -> Option<&ModelParameter> {
        self.parameters.iter().find(|p| p.label == label)
    }

    /// Latent names in combined order: endogenous first, then exogenous.
    pub fn latents(&self) -> Vec<String> {
        self.endogenous.iter().chain(self.exogenous.iter()).cloned().collect()
    }

    pub fn matrix(&self, kind: MatrixKind) -> &PatternMatrix {
        match kind {
            MatrixKind::LambdaY => &self.lambda_y,
            MatrixKind::LambdaX => &self.lambda_x,
            MatrixKind::Beta => &self.beta,
            MatrixKind::Gamma => &self.gamma,
            MatrixKind::Phi => &self.phi,
            MatrixKind::Psi => &self.psi,
            MatrixKind::ThetaEps => &self.theta_eps,
            MatrixKind::ThetaDelta => &self.theta_delta,
        }
    }

    fn matrix_mut(&mut self, kind: MatrixKind) -> &mut PatternMatrix {
        match kind {
            MatrixKind::LambdaY => &mut self.lambda_y,
            MatrixKind::LambdaX => &mut self.lambda_x,
            MatrixKind::Beta => &mut self.beta,
            MatrixKind::Gamma => &mut self.gamma,
            MatrixKind::Phi => &mut self.phi,
            MatrixKind::Psi => &mut self.psi,
            MatrixKind::ThetaEps => &mut self.theta_eps,
            MatrixKind::ThetaDelta => &mut self.theta_delta,
        }
    }

    /// Number of loadings fixed to a constant.
    pub fn fixed_loading_count(&self) -> usize {
        self.parameters
            .iter()
            .filter(|p| p.kind == ParamKind::Loading && p.free.is_none())
            .count()
    }
}

/// Moment count, free parameter count and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreesOfFreedom {
    pub moments: i64,
    pub parameters: i64,
    pub df: i64,
}

impl DegreesOfFreedom {
    pub fn under_identified(&self) -> bool {
        self.df < 0
    }
}

pub fn count_df(matrices: &ParamMatrices, p: usize) -> DegreesOfFreedom {
    let moments = (p * (p + 1) / 2) as i64;
    let parameters = matrices.n_free() as i64;
    DegreesOfFreedom {
        moments,
        parameters,
        df: moments - parameters,
    }
}

enum Spec {
    Fixed(f64),
    Free(String),
}

struct Pending {
    lhs: String,
    relation: Relation,
    rhs: String,
    kind: ParamKind,
    matrix: MatrixKind,
    row: usize,
    col: usize,
    spec: Spec,
}

fn resolve(modifier: &Option<Modifier>, default_label: String, default_fixed: Option<f64>) -> Spec {
    match modifier {
        Some(Modifier::Fixed(v)) => Spec::Fixed(*v),
        Some(Modifier::Label(l)) => Spec::Free(l.clone()),
        None => match default_fixed {
            Some(v) => Spec::Fixed(v),
            None => Spec::Free(default_label),
        },
    }
}

fn position(names: &[String], name: &str) -> usize {
    names.iter().position(|n| n == name).expect("name resolved during validation")
}

/// Compiles a spec into parameter matrices for the given observed order.
pub fn build_matrices(
    spec: &ModelSpec,
    variable_order: &[String],
    options: BuildOptions,
) -> Result<ParamMatrices, ModelError> {
    let indicators: BTreeSet<&str> = spec.indicators().into_iter().collect();
    let given: BTreeSet<&str> = variable_order.iter().map(String::as_str).collect();
    if given.len() != variable_order.len() || given != indicators {
        let mut unexpected: Vec<String> = given.difference(&indicators).map(|s| s.to_string()).collect();
        let mut seen = BTreeSet::new();
        for v in variable_order {
            if !seen.insert(v.as_str()) {
                unexpected.push(v.clone());
            }
        }
        return Err(ModelError::VariableOrder {
            missing: indicators.difference(&given).map(|s| s.to_string()).collect(),
            unexpected,
        });
    }

    let endogenous: Vec<String> = spec.endogenous().into_iter().map(String::from).collect();
    let exogenous: Vec<String> = spec.exogenous().into_iter().map(String::from).collect();
    let is_endo = |name: &str| endogenous.iter().any(|e| e == name);

    let mut y_indicators = Vec::new();
    let mut x_indicators = Vec::new();
    for l in &spec.latents {
        let target = if is_endo(&l.name) { &mut y_indicators } else { &mut x_indicators };
        target.extend(l.indicators.iter().map(|i| i.name.clone()));
    }
    let observed: Vec<String> = variable_order.to_vec();
    let y_positions: Vec<usize> = y_indicators.iter().map(|n| position(&observed, n)).collect();
    let x_positions: Vec<usize> = x_indicators.iter().map(|n| position(&observed, n)).collect();

    let unit_variance = options.identification == Identification::UnitVariance;
    let mut pending: Vec<Pending> = Vec::new();

    // Loadings.
    for l in &spec.latents {
        let endo = is_endo(&l.name);
        let (matrix, col, rows) = if endo {
            (MatrixKind::LambdaY, position(&endogenous, &l.name), &y_indicators)
        } else {
            (MatrixKind::LambdaX, position(&exogenous, &l.name), &x_indicators)
        };
        let has_fixed = l.indicators.iter().any(|i| matches!(i.modifier, Some(Modifier::Fixed(_))));
        for (k, ind) in l.indicators.iter().enumerate() {
            let is_marker = !unit_variance && !has_fixed && k == 0;
            if is_marker && matches!(ind.modifier, Some(Modifier::Label(_))) {
                return Err(ModelError::LabeledMarker {
                    latent: l.name.clone(),
                    indicator: ind.name.clone(),
                });
            }
            let spec_entry = resolve(
                &ind.modifier,
                format!("{}=~{}", l.name, ind.name),
                is_marker.then_some(1.0),
            );
            pending.push(Pending {
                lhs: l.name.clone(),
                relation: Relation::Measures,
                rhs: ind.name.clone(),
                kind: ParamKind::Loading,
                matrix,
                row: position(rows, &ind.name),
                col,
                spec: spec_entry,
            });
        }
    }

    // Structural paths.
    for r in &spec.regressions {
        let row = position(&endogenous, &r.dependent);
        let (matrix, col) = if is_endo(&r.predictor) {
            (MatrixKind::Beta, position(&endogenous, &r.predictor))
        } else {
            (MatrixKind::Gamma, position(&exogenous, &r.predictor))
        };
        pending.push(Pending {
            lhs: r.dependent.clone(),
            relation: Relation::Regression,
            rhs: r.predictor.clone(),
            kind: ParamKind::Regression,
            matrix,
            row,
            col,
            spec: resolve(&r.modifier, format!("{}~{}", r.dependent, r.predictor), None),
        });
    }

    // Explicit covariance statements, classified by block.
    let mut explicit: HashMap<(String, String), Option<Modifier>> = HashMap::new();
    for c in &spec.covariances {
        let a_lat = spec.is_latent(&c.a);
        let b_lat = spec.is_latent(&c.b);
        let reason = if a_lat != b_lat {
            Some("latent and observed variables cannot covary")
        } else if a_lat && is_endo(&c.a) != is_endo(&c.b) {
            Some("exogenous and endogenous latents cannot covary")
        } else if !a_lat && y_indicators.contains(&c.a) != y_indicators.contains(&c.b) {
            Some("measurement errors of exogenous and endogenous indicators cannot covary")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(ModelError::UnsupportedCovariance {
                a: c.a.clone(),
                b: c.b.clone(),
                reason: reason.to_string(),
            });
        }
        explicit.insert((c.a.clone(), c.b.clone()), c.modifier.clone());
    }
    let lookup = |a: &str, b: &str| -> Option<&Option<Modifier>> {
        let key = if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        explicit.get(&key)
    };

    // Latent (co)variances: exogenous block, then disturbances.
    for (names, matrix, endo) in [(&exogenous, MatrixKind::Phi, false), (&endogenous, MatrixKind::Psi, true)] {
        for i in 0..names.len() {
            for j in 0..=i {
                let (a, b) = (&names[j], &names[i]);
                let diag = i == j;
                let kind = match (endo, diag) {
                    (false, true) => ParamKind::LatentVariance,
                    (false, false) => ParamKind::LatentCovariance,
                    (true, true) => ParamKind::DisturbanceVariance,
                    (true, false) => ParamKind::DisturbanceCovariance,
                };
                let default_label = format!("{a}~~{b}");
                let entry = match lookup(a, b) {
                    Some(m) => resolve(m, default_label, None),
                    None if diag && unit_variance => Spec::Fixed(1.0),
                    None if diag || !endo => Spec::Free(default_label),
                    None => continue,
                };
                pending.push(Pending {
                    lhs: a.clone(),
                    relation: Relation::Covariance,
                    rhs: b.clone(),
                    kind,
                    matrix,
                    row: i,
                    col: j,
                    spec: entry,
                });
            }
        }
    }

    // Measurement errors: variances in observed order, then explicit covariances.
    let mut error_covs = Vec::new();
    for name in &observed {
        let in_y = y_indicators.contains(name);
        let (matrix, names) = if in_y {
            (MatrixKind::ThetaEps, &y_indicators)
        } else {
            (MatrixKind::ThetaDelta, &x_indicators)
        };
        let idx = position(names, name);
        let default_label = format!("{name}~~{name}");
        let entry = match lookup(name, name) {
            Some(m) => resolve(m, default_label, None),
            None => Spec::Free(default_label),
        };
        pending.push(Pending {
            lhs: name.clone(),
            relation: Relation::Covariance,
            rhs: name.clone(),
            kind: ParamKind::ErrorVariance,
            matrix,
            row: idx,
            col: idx,
            spec: entry,
        });
        for c in spec.covariances.iter().filter(|c| c.a != c.b && (c.a == *name)) {
            let other = position(names, &c.b);
            error_covs.push(Pending {
                lhs: c.a.clone(),
                relation: Relation::Covariance,
                rhs: c.b.clone(),
                kind: ParamKind::ErrorCovariance,
                matrix,
                row: idx.max(other),
                col: idx.min(other),
                spec: resolve(&c.modifier, format!("{}~~{}", c.a, c.b), None),
            });
        }
    }
    pending.extend(error_covs);

    let ne = endogenous.len();
    let nx = exogenous.len();
    let mut out = ParamMatrices {
        lambda_y: PatternMatrix::zeros(MatrixKind::LambdaY, y_indicators.len(), ne),
        lambda_x: PatternMatrix::zeros(MatrixKind::LambdaX, x_indicators.len(), nx),
        beta: PatternMatrix::zeros(MatrixKind::Beta, ne, ne),
        gamma: PatternMatrix::zeros(MatrixKind::Gamma, ne, nx),
        phi: PatternMatrix::zeros(MatrixKind::Phi, nx, nx),
        psi: PatternMatrix::zeros(MatrixKind::Psi, ne, ne),
        theta_eps: PatternMatrix::zeros(MatrixKind::ThetaEps, y_indicators.len(), y_indicators.len()),
        theta_delta: PatternMatrix::zeros(MatrixKind::ThetaDelta, x_indicators.len(), x_indicators.len()),
        endogenous,
        exogenous,
        y_indicators,
        x_indicators,
        observed,
        y_positions,
        x_positions,
        parameters: Vec::with_capacity(pending.len()),
        theta_index: BTreeMap::new(),
        identification: options.identification,
    };

    for p in pending {
        let (label, free, value, entry) = match p.spec {
            Spec::Fixed(v) => (format!("{}{}{}", p.lhs, p.relation, p.rhs), None, v, Entry::Fixed(v)),
            Spec::Free(label) => {
                let k = out.theta_index.len();
                out.theta_index.insert(label.clone(), k);
                (label, Some(k), 0.0, Entry::Free(k))
            }
        };
        out.matrix_mut(p.matrix).set(p.row, p.col, entry);
        out.parameters.push(ModelParameter {
            lhs: p.lhs,
            relation: p.relation,
            rhs: p.rhs,
            kind: p.kind,
            matrix: p.matrix,
            row: p.row,
            col: p.col,
            label,
            free,
            value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_latent_three_indicators() {
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let m = build_matrices(&spec, &names(&["x1", "x2", "x3"]), BuildOptions::default()).unwrap();
        assert_eq!((m.lambda_x.rows, m.lambda_x.cols), (3, 1));
        assert_eq!(m.lambda_x.get(0, 0), Entry::Fixed(1.0));
        assert!(matches!(m.lambda_x.get(1, 0), Entry::Free(_)));
        assert!(matches!(m.lambda_x.get(2, 0), Entry::Free(_)));
        assert_eq!(m.theta_delta.free_entries().count(), 3);
        assert!(matches!(m.phi.get(0, 0), Entry::Free(_)));
        assert_eq!(m.n_free(), 6);
        assert_eq!(count_df(&m, 3).df, 0);
    }

    #[test]
    fn variable_order_mismatch() {
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let err = build_matrices(&spec, &names(&["x1", "x2"]), BuildOptions::default()).unwrap_err();
        assert!(matches!(err, ModelError::VariableOrder { .. }));
        let err = build_matrices(&spec, &names(&["x1", "x2", "x3", "x4"]), BuildOptions::default()).unwrap_err();
        assert!(matches!(err, ModelError::VariableOrder { .. }));
        let err = build_matrices(&spec, &names(&["x1", "x2", "x2", "x3"]), BuildOptions::default()).unwrap_err();
        assert!(matches!(err, ModelError::VariableOrder { .. }));
    }

    #[test]
    fn under_identified_flag() {
        let spec = parse_model("F =~ x1 + x2\nx1 ~~ x2").unwrap();
        let m = build_matrices(&spec, &names(&["x1", "x2"]), BuildOptions::default()).unwrap();
        // 1 loading + 2 error variances + 1 error covariance + 1 latent variance = 5 > 3.
        let df = count_df(&m, 2);
        assert_eq!(df.parameters, 5);
        assert!(df.under_identified());
        let saturated = parse_model("F =~ x1 + x2").unwrap();
        let m = build_matrices(&saturated, &names(&["x1", "x2"]), BuildOptions::default()).unwrap();
        assert_eq!(count_df(&m, 2).df, -1);
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let m = build_matrices(&spec, &names(&["x1", "x2", "x3"]), BuildOptions::default()).unwrap();
        let df = count_df(&m, 3);
        assert_eq!(df.df, 0);
        assert!(!df.under_identified());
    }

    #[test]
    fn explicit_fixes_and_labels() {
        let spec = parse_model(
            "F =~ x1 + 2*x2 + x3\nG =~ y1 + y2\nG ~ g*F\nF ~~ 1*F\ny1 ~~ y2\nx3 ~~ 0.2*x3\n",
        )
        .unwrap();
        let order = names(&["y2", "x1", "y1", "x2", "x3"]);
        let m = build_matrices(&spec, &order, BuildOptions::default()).unwrap();
        // x2 fixed explicitly -> no automatic marker on x1
        assert!(matches!(m.lambda_x.get(0, 0), Entry::Free(_)));
        assert_eq!(m.lambda_x.get(1, 0), Entry::Fixed(2.0));
        assert_eq!(m.phi.get(0, 0), Entry::Fixed(1.0));
        assert_eq!(m.theta_delta.get(2, 2), Entry::Fixed(0.2));
        assert!(m.theta_index.contains_key("g"));
        let cov = m.theta_eps.get(0, 1);
        assert!(matches!(cov, Entry::Free(_)));
        assert_eq!(cov, m.theta_eps.get(1, 0));
        assert_eq!(m.y_positions, vec![2, 0]);
        assert_eq!(m.x_positions, vec![1, 3, 4]);
    }

    #[test]
    fn unsupported_covariances() {
        let spec = parse_model("F =~ x1 + x2 + x3\nG =~ y1 + y2 + y3\nG ~ F\nF ~~ G\n").unwrap();
        let order = names(&["x1", "x2", "x3", "y1", "y2", "y3"]);
        assert!(matches!(
            build_matrices(&spec, &order, BuildOptions::default()),
            Err(ModelError::UnsupportedCovariance { .. })
        ));
        let spec = parse_model("F =~ x1 + x2 + x3\nG =~ y1 + y2 + y3\nG ~ F\nx1 ~~ y1\n").unwrap();
        assert!(matches!(
            build_matrices(&spec, &order, BuildOptions::default()),
            Err(ModelError::UnsupportedCovariance { .. })
        ));
    }

    #[test]
    fn labeled_marker_rejected_in_marker_mode() {
        let spec = parse_model("F =~ a*x1 + x2 + x3").unwrap();
        let order = names(&["x1", "x2", "x3"]);
        assert!(matches!(
            build_matrices(&spec, &order, BuildOptions::default()),
            Err(ModelError::LabeledMarker { .. })
        ));
        let unit = BuildOptions {
            identification: Identification::UnitVariance,
        };
        assert!(build_matrices(&spec, &order, unit).is_ok());
    }
}
