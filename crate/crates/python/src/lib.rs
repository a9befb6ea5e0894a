//! Python bindings. Structured results are returned as plain Python
//! containers (dicts, lists, floats) decoded from the JSON form.

use latentpath::efa::{self, Extraction, Retention, VarimaxOptions};
use latentpath::effects::{bootstrap_ci, delta_ci, BootstrapOptions, EffectSpec};
use latentpath::indices::{fit_indices, Standards};
use latentpath::model::Identification;
use latentpath::psychometrics;
use latentpath::report::{self, StarConvention};
use latentpath::sem::ChiSquareMultiplier;
use latentpath::{build_matrices, count_df, parse_model, BuildOptions, Divisor, EstimationOptions, LoadOptions};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(latentpath, LatentpathError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    LatentpathError::new_err(e.to_string())
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    latentpath::linalg::from_rows(&rows).ok_or_else(|| err("matrix rows must be non-empty and of equal length"))
}

fn identification(name: &str) -> PyResult<Identification> {
    match name {
        "marker" => Ok(Identification::Marker),
        "unit-variance" | "unit_variance" => Ok(Identification::UnitVariance),
        _ => Err(err(format!("identification must be 'marker' or 'unit-variance', got {name:?}"))),
    }
}

/// Parsed model syntax.
#[pyclass(module = "latentpath", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Model {
    spec: latentpath::ModelSpec,
}

#[pymethods]
impl Model {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Model {
            spec: parse_model(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("cannot read {path}: {e}")))?;
        Model::new(&text)
    }

    /// The bundled five-construct example.
    #[staticmethod]
    fn bundled() -> Self {
        Model {
            spec: parse_model(latentpath::WULIANGYE_MODEL).expect("bundled model parses"),
        }
    }

    #[getter]
    fn latents(&self) -> Vec<String> {
        self.spec.latents.iter().map(|l| l.name.clone()).collect()
    }

    #[getter]
    fn indicators(&self) -> Vec<String> {
        self.spec.indicators().into_iter().map(String::from).collect()
    }

    #[getter]
    fn endogenous(&self) -> Vec<String> {
        self.spec.endogenous().into_iter().map(String::from).collect()
    }

    /// Labels of the free parameters in estimation order.
    #[pyo3(signature = (identification = "marker"))]
    fn free_parameters(&self, identification: &str) -> PyResult<Vec<String>> {
        let m = self.matrices(identification)?;
        Ok(m.free_parameters().iter().map(|p| p.label.clone()).collect())
    }

    /// `(moments, free parameters, df)`.
    #[pyo3(signature = (identification = "marker"))]
    fn degrees_of_freedom(&self, identification: &str) -> PyResult<(i64, i64, i64)> {
        let m = self.matrices(identification)?;
        let d = count_df(&m, m.n_observed());
        Ok((d.moments, d.parameters, d.df))
    }

    fn measurement_only(&self) -> Model {
        Model {
            spec: self.spec.measurement_only(),
        }
    }

    fn to_text(&self) -> String {
        self.spec.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Model(latents={:?})", self.latents())
    }
}

impl Model {
    fn matrices(&self, ident: &str) -> PyResult<latentpath::ParamMatrices> {
        build_matrices(
            &self.spec,
            &self.indicators(),
            BuildOptions {
                identification: identification(ident)?,
            },
        )
        .map_err(err)
    }
}

/// Rectangular numeric data; non-finite values count as missing.
#[pyclass(module = "latentpath", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: latentpath::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        if rows.iter().any(|r| r.len() != names.len()) {
            return Err(err("every row needs one value per name"));
        }
        Ok(Dataset {
            inner: latentpath::Dataset::from_rows(names, rows),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, delimiter = ","))]
    fn from_csv(path: &str, delimiter: &str) -> PyResult<Self> {
        let &[d] = delimiter.as_bytes() else {
            return Err(err("delimiter must be a single byte"));
        };
        let opts = LoadOptions {
            delimiter: d,
            ..LoadOptions::default()
        };
        Ok(Dataset {
            inner: latentpath::load_table(path, &opts).map_err(err)?,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    /// Rows with missing cells as NaN.
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.values.clone()
    }

    fn select(&self, columns: Vec<String>) -> PyResult<Dataset> {
        Ok(Dataset {
            inner: self.inner.select(&columns).map_err(err)?,
        })
    }

    /// Sample moments over complete rows: dict with `names`, `cov`, `corr`, `n`.
    #[pyo3(signature = (divisor = "n-1"))]
    fn moments(&self, py: Python<'_>, divisor: &str) -> PyResult<Py<PyAny>> {
        let divisor = match divisor {
            "n-1" => Divisor::NMinusOne,
            "n" => Divisor::N,
            _ => return Err(err("divisor must be 'n' or 'n-1'")),
        };
        to_py(py, &latentpath::covariance(&self.inner, divisor).map_err(err)?)
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(format!("cannot create {path}: {e}")))?;
        self.inner.write_csv(file).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }
}

impl Dataset {
    fn indicators_of(&self, model: &Model) -> PyResult<latentpath::Dataset> {
        let wanted = model.spec.indicators();
        let order: Vec<String> = self
            .inner
            .names
            .iter()
            .filter(|n| wanted.contains(&n.as_str()))
            .cloned()
            .collect();
        if order.len() != wanted.len() {
            let missing: Vec<&str> = wanted.into_iter().filter(|w| !order.iter().any(|o| o == w)).collect();
            return Err(err(format!("data lacks indicator columns: {}", missing.join(", "))));
        }
        self.inner.select(&order).map_err(err)
    }
}

/// A fitted model.
#[pyclass(module = "latentpath", frozen, skip_from_py_object)]
struct Fit {
    inner: latentpath::FitResult,
    options: EstimationOptions,
    model: Model,
    data: latentpath::Dataset,
}

#[pymethods]
impl Fit {
    #[getter]
    fn chisq(&self) -> f64 {
        self.inner.chisq
    }

    #[getter]
    fn df(&self) -> i64 {
        self.inner.df
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn f_min(&self) -> f64 {
        self.inner.f_min
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    /// Unstandardized estimates as a list of dicts.
    fn estimates(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.estimates)
    }

    fn standardized(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.standardized)
    }

    /// Estimate of the parameter with this label, or `None`.
    fn estimate(&self, label: &str) -> Option<f64> {
        self.inner.estimate(label).map(|e| e.estimate)
    }

    fn implied(&self) -> Vec<Vec<f64>> {
        latentpath::linalg::to_rows(&self.inner.implied)
    }

    /// Fit index report (chi-square, RMSEA, GFI, CFI, ...).
    fn indices(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &fit_indices(&self.inner, &Standards::default()).map_err(err)?)
    }

    /// Total/direct/indirect effects for `SRC:MED:DST` strings.
    ///
    /// `method` is `"delta"` or `"bootstrap"`; the bootstrap resamples the
    /// rows the model was fitted to.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (effects, method = "delta", level = 0.95, replicates = 2000, seed = 0, workers = None))]
    fn effects(
        &self,
        py: Python<'_>,
        effects: Vec<String>,
        method: &str,
        level: f64,
        replicates: usize,
        seed: u64,
        workers: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let specs: Vec<EffectSpec> = effects
            .iter()
            .map(|e| EffectSpec::parse(e).ok_or_else(|| err(format!("effect must be 'SRC:MED:DST', got {e:?}"))))
            .collect::<PyResult<_>>()?;
        let decomps = match method {
            "delta" => delta_ci(&self.inner, &specs, level).map_err(err)?,
            "bootstrap" => {
                let opts = BootstrapOptions {
                    replicates,
                    level,
                    seed,
                    workers,
                    estimation: self.options.clone(),
                    ..BootstrapOptions::default()
                };
                let (data, spec) = (&self.data, &self.model.spec);
                py.detach(|| bootstrap_ci(data, spec, &specs, &opts))
                    .map_err(err)?
                    .decompositions
            }
            _ => return Err(err("method must be 'delta' or 'bootstrap'")),
        };
        to_py(py, &decomps)
    }

    /// Aligned text table of regression weights.
    #[pyo3(signature = (stars = "lenient"))]
    fn regression_weights(&self, stars: &str) -> PyResult<String> {
        Ok(report::regression_weights_table(&self.inner, convention(stars)?).render())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(chisq={:.3}, df={}, n={}, converged={})",
            self.inner.chisq, self.inner.df, self.inner.n, self.inner.converged
        )
    }
}

fn convention(name: &str) -> PyResult<StarConvention> {
    match name {
        "lenient" => Ok(StarConvention::Lenient),
        "conventional" => Ok(StarConvention::Conventional),
        _ => Err(err("stars must be 'lenient' or 'conventional'")),
    }
}

/// Maximum likelihood fit of `model` to the indicator columns of `data`.
#[pyfunction]
#[pyo3(signature = (model, data, max_iter = 500, gtol = 1e-6, chisq_n = "n-1", identification = "marker"))]
fn fit(
    py: Python<'_>,
    model: &Model,
    data: &Dataset,
    max_iter: usize,
    gtol: f64,
    chisq_n: &str,
    identification: &str,
) -> PyResult<Fit> {
    let options = EstimationOptions {
        max_iter,
        gtol,
        multiplier: match chisq_n {
            "n-1" => ChiSquareMultiplier::NMinusOne,
            "n" => ChiSquareMultiplier::N,
            _ => return Err(err("chisq_n must be 'n' or 'n-1'")),
        },
        identification: self::identification(identification)?,
        ..EstimationOptions::default()
    };
    let subset = data.indicators_of(model)?;
    let moments = latentpath::covariance(&subset, Divisor::NMinusOne).map_err(err)?;
    let inner = py.detach(|| latentpath::fit(&model.spec, &moments, &options)).map_err(err)?;
    Ok(Fit {
        inner,
        options,
        model: model.clone(),
        data: subset,
    })
}

/// Normal sample of size `n` from `model` at parameter vector `theta`
/// (ordered as `model.free_parameters()`).
#[pyfunction]
#[pyo3(signature = (model, theta, n, seed = 0))]
fn simulate(model: &Model, theta: Vec<f64>, n: usize, seed: u64) -> PyResult<Dataset> {
    let m = model.matrices("marker")?;
    Ok(Dataset {
        inner: latentpath::sem::simulate(&m, &theta, n, seed).map_err(err)?,
    })
}

/// Cronbach's alpha of respondent rows (one column per item).
#[pyfunction]
fn cronbach_alpha(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    psychometrics::cronbach_alpha(&rows).map_err(err)
}

/// `(CR, AVE)` from standardized loadings with `1 - l^2` error variances.
#[pyfunction]
fn composite_reliability(loadings: Vec<f64>) -> PyResult<(f64, f64)> {
    let e = psychometrics::standardized_error_variances(&loadings);
    Ok((
        psychometrics::composite_reliability(&loadings, &e).map_err(err)?,
        psychometrics::average_variance_extracted(&loadings, &e).map_err(err)?,
    ))
}

#[pyfunction]
fn kmo(corr: Vec<Vec<f64>>) -> PyResult<f64> {
    psychometrics::kmo(&matrix(corr)?).map_err(err)
}

/// Bartlett's sphericity test: dict with `chi_square`, `df`, `p_value`.
#[pyfunction]
fn bartlett(py: Python<'_>, corr: Vec<Vec<f64>>, n: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &psychometrics::bartlett(&matrix(corr)?, n).map_err(err)?)
}

/// Factor extraction from a correlation matrix, optionally varimax-rotated.
///
/// `factors=None` keeps eigenvalues above one.
#[pyfunction]
#[pyo3(signature = (corr, items, factors = None, rotation = "varimax", extraction = "pc"))]
fn factor_analysis(
    py: Python<'_>,
    corr: Vec<Vec<f64>>,
    items: Vec<String>,
    factors: Option<usize>,
    rotation: &str,
    extraction: &str,
) -> PyResult<Py<PyAny>> {
    let retention = factors.map_or(Retention::Kaiser, Retention::Fixed);
    let method = match extraction {
        "pc" => Extraction::PrincipalComponents,
        "paf" => Extraction::principal_axis(),
        _ => return Err(err("extraction must be 'pc' or 'paf'")),
    };
    let l = efa::extract(&matrix(corr)?, &items, retention, method).map_err(err)?;
    let l = match rotation {
        "varimax" => efa::varimax(&l, VarimaxOptions::default()),
        "none" => l,
        _ => return Err(err("rotation must be 'varimax' or 'none'")),
    };
    to_py(py, &l)
}

/// Significance stars for a p-value.
#[pyfunction]
#[pyo3(signature = (p, convention = "lenient"))]
fn stars(p: f64, convention: &str) -> PyResult<&'static str> {
    Ok(report::stars(p, self::convention(convention)?))
}

#[pymodule]
#[pyo3(name = "latentpath")]
fn latentpath_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LatentpathError", m.py().get_type::<LatentpathError>())?;
    m.add("WULIANGYE_MODEL", latentpath::WULIANGYE_MODEL)?;
    m.add_class::<Model>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(cronbach_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(composite_reliability, m)?)?;
    m.add_function(wrap_pyfunction!(kmo, m)?)?;
    m.add_function(wrap_pyfunction!(bartlett, m)?)?;
    m.add_function(wrap_pyfunction!(factor_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(stars, m)?)?;
    Ok(())
}
