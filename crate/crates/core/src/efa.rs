//! Exploratory factor analysis: eigen-extraction, Kaiser retention and
//! varimax rotation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::report::matrix_serde;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EfaError {
    #[error("correlation matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("correlation matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error("cannot retain {m} factors from {p} variables")]
    TooManyFactors { m: usize, p: usize },
    #[error("{names} names for {p} variables")]
    NameCount { names: usize, p: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Retention {
    /// Keep eigenvalues strictly greater than one.
    #[default]
    Kaiser,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub enum Extraction {
    #[default]
    PrincipalComponents,
    /// Iterated principal axis starting from squared multiple correlations.
    PrincipalAxis { max_iter: usize, tol: f64 },
}

impl Extraction {
    pub fn principal_axis() -> Extraction {
        Extraction::PrincipalAxis { max_iter: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadingMatrix {
    pub items: Vec<String>,
    #[serde(with = "matrix_serde")]
    pub loadings: DMatrix<f64>,
    /// All eigenvalues of the input matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub communalities: Vec<f64>,
    pub rotated: bool,
    /// Orthogonal rotation applied to the unrotated loadings.
    #[serde(skip)]
    pub rotation: Option<DMatrix<f64>>,
}

impl LoadingMatrix {
    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }
}

// Eigenvalues this close to one count as one under the strict rule.
const KAISER_TOL: f64 = 1e-9;

fn check_input(r: &DMatrix<f64>) -> Result<(), EfaError> {
    if !r.is_square() {
        return Err(EfaError::NotSquare(r.nrows(), r.ncols()));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(EfaError::NonFinite);
    }
    let asym = (r - r.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(EfaError::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

fn loadings_from(values: &[f64], vectors: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let p = vectors.nrows();
    DMatrix::from_fn(p, m, |i, j| vectors[(i, j)] * values[j].max(0.0).sqrt())
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(l: &mut DMatrix<f64>, t: Option<&mut DMatrix<f64>>) {
    let mut flips = Vec::new();
    for j in 0..l.ncols() {
        let col = l.column(j);
        let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if big < 0.0 {
            l.column_mut(j).neg_mut();
            flips.push(j);
        }
    }
    if let Some(t) = t {
        for j in flips {
            t.column_mut(j).neg_mut();
        }
    }
}

fn communalities(l: &DMatrix<f64>) -> Vec<f64> {
    l.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect()
}

/// Extracts factors from a correlation matrix.
pub fn extract(
    r: &DMatrix<f64>,
    items: &[String],
    retention: Retention,
    method: Extraction,
) -> Result<LoadingMatrix, EfaError> {
    check_input(r)?;
    let p = r.nrows();
    if items.len() != p {
        return Err(EfaError::NameCount { names: items.len(), p });
    }
    let (eigenvalues, vectors) = sorted_eigen(r);
    let m = match retention {
        Retention::Kaiser => eigenvalues.iter().filter(|&&v| v > 1.0 + KAISER_TOL).count(),
        Retention::Fixed(m) => m,
    };
    if m > p {
        return Err(EfaError::TooManyFactors { m, p });
    }
    let mut loadings = match method {
        Extraction::PrincipalComponents => loadings_from(&eigenvalues, &vectors, m),
        Extraction::PrincipalAxis { max_iter, tol } => principal_axis(r, m, max_iter, tol),
    };
    fix_signs(&mut loadings, None);
    Ok(LoadingMatrix {
        items: items.to_vec(),
        communalities: communalities(&loadings),
        loadings,
        eigenvalues,
        rotated: false,
        rotation: None,
    })
}

fn principal_axis(r: &DMatrix<f64>, m: usize, max_iter: usize, tol: f64) -> DMatrix<f64> {
    let p = r.nrows();
    // Squared multiple correlations; fall back to 1 on a singular matrix.
    let mut h2: Vec<f64> = match r.clone().try_inverse() {
        Some(inv) => (0..p).map(|i| (1.0 - 1.0 / inv[(i, i)]).clamp(0.0, 1.0)).collect(),
        None => vec![1.0; p],
    };
    let mut loadings = DMatrix::zeros(p, m);
    for _ in 0..max_iter.max(1) {
        let mut reduced = r.clone();
        for i in 0..p {
            reduced[(i, i)] = h2[i];
        }
        let (values, vectors) = sorted_eigen(&reduced);
        loadings = loadings_from(&values, &vectors, m);
        let next = communalities(&loadings);
        let change = next.iter().zip(&h2).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        h2 = next;
        if change < tol {
            break;
        }
    }
    loadings
}

/// Varimax criterion: summed column variances of squared loadings.
pub fn varimax_criterion(l: &DMatrix<f64>) -> f64 {
    let p = l.nrows() as f64;
    l.column_iter()
        .map(|c| {
            let s2: f64 = c.iter().map(|v| v * v).sum();
            let s4: f64 = c.iter().map(|v| v.powi(4)).sum();
            (p * s4 - s2 * s2) / (p * p)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarimaxOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub kaiser_normalize: bool,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        VarimaxOptions {
            tol: 1e-10,
            max_iter: 1000,
            kaiser_normalize: true,
        }
    }
}

/// Orthogonal varimax rotation by pairwise planar sweeps.
///
/// Columns of the result are sign-fixed and ordered by descending sum of
/// squared loadings; `rotation` holds the matching orthogonal `T`.
pub fn varimax(input: &LoadingMatrix, opts: VarimaxOptions) -> LoadingMatrix {
    let m = input.n_factors();
    let p = input.loadings.nrows();
    if m < 2 {
        let mut out = input.clone();
        out.rotated = true;
        out.rotation = Some(DMatrix::identity(m, m));
        return out;
    }
    let h: Vec<f64> = input.communalities.iter().map(|c| c.sqrt()).collect();
    let scale = |i: usize| if opts.kaiser_normalize && h[i] > 0.0 { h[i] } else { 1.0 };
    let mut a = DMatrix::from_fn(p, m, |i, j| input.loadings[(i, j)] / scale(i));
    let mut t = DMatrix::<f64>::identity(m, m);
    let pf = p as f64;
    let mut crit = varimax_criterion(&a);

    for _ in 0..opts.max_iter {
        for j in 0..m - 1 {
            for k in j + 1..m {
                let (mut sa, mut sb, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..p {
                    let (x, y) = (a[(i, j)], a[(i, k)]);
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    sa += u;
                    sb += v;
                    sc += u * u - v * v;
                    sd += 2.0 * u * v;
                }
                let num = sd - 2.0 * sa * sb / pf;
                let den = sc - (sa * sa - sb * sb) / pf;
                let phi = num.atan2(den) / 4.0;
                if phi.abs() < 1e-15 {
                    continue;
                }
                let (s, c) = phi.sin_cos();
                for mat in [&mut a, &mut t] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, j)], mat[(i, k)]);
                        mat[(i, j)] = x * c + y * s;
                        mat[(i, k)] = -x * s + y * c;
                    }
                }
            }
        }
        let next = varimax_criterion(&a);
        let gain = next - crit;
        crit = next;
        if gain < opts.tol {
            break;
        }
    }

    let mut rotated = DMatrix::from_fn(p, m, |i, j| a[(i, j)] * scale(i));
    fix_signs(&mut rotated, Some(&mut t));
    // Order factors by variance explained.
    let ss: Vec<f64> = rotated.column_iter().map(|c| c.norm_squared()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| ss[y].total_cmp(&ss[x]));
    let rotated = DMatrix::from_fn(p, m, |i, j| rotated[(i, order[j])]);
    let t = DMatrix::from_fn(m, m, |i, j| t[(i, order[j])]);

    LoadingMatrix {
        items: input.items.clone(),
        communalities: communalities(&rotated),
        loadings: rotated,
        eigenvalues: input.eigenvalues.clone(),
        rotated: true,
        rotation: Some(t),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentRow {
    pub item: String,
    /// Column of the largest absolute loading.
    pub dominant: usize,
    /// `None` where the loading is suppressed.
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentTable {
    pub n_factors: usize,
    pub suppress_below: f64,
    pub rows: Vec<ComponentRow>,
}

/// Display table: items grouped by dominant factor, sorted by loading size
/// within each group, with small loadings blanked.
pub fn rotated_component_table(l: &LoadingMatrix, suppress_below: f64) -> ComponentTable {
    let m = l.n_factors();
    let mut rows: Vec<(usize, f64, ComponentRow)> = l
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let row = l.loadings.row(i);
            let (dominant, big) = row
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });
            let cells = row
                .iter()
                .map(|&v| if v.abs() < suppress_below { None } else { Some(v) })
                .collect();
            (dominant, big, ComponentRow { item: item.clone(), dominant, cells })
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    ComponentTable {
        n_factors: m,
        suppress_below,
        rows: rows.into_iter().map(|r| r.2).collect(),
    }
}
