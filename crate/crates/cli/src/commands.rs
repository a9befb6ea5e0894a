//! Subcommand implementations. Each produces a [`Run`]: a JSON result plus
//! the text tables that render it.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use latentpath::data::frequency_table;
use latentpath::efa::{self, Extraction, Retention, VarimaxOptions};
use latentpath::effects::{
    bootstrap_ci, classify_hypotheses, delta_ci, BootstrapOptions, EffectDecomposition, EffectSpec, Hypothesis,
};
use latentpath::indices::{fit_indices, Standards};
use latentpath::model::{Identification, ParamKind};
use latentpath::psychometrics::{bartlett, cronbach_alpha, fornell_larcker, kmo, ConstructReliability};
use latentpath::report::{self, envelope, TextTable};
use latentpath::sem::{simulate, ChiSquareMultiplier};
use latentpath::{
    build_matrices, fit, parse_model, BuildOptions, Dataset, EstimationOptions, FitResult, LoadOptions, ModelSpec,
};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::input::{self, load_data, load_model, moments_for, subset, CliError};
use crate::simconfig::SimConfig;
use crate::{
    ChisqN, Cli, Command, EfaArgs, Estimation, ExtractionArg, FitArgs, Format, IdentificationArg, IntervalArg,
    Intervals, MediateArgs, ReliabilityArgs, ReportArgs, Rotation, SimulateArgs,
};

/// Outcome of a subcommand, ready to be written.
pub struct Run {
    kind: &'static str,
    provenance: Value,
    result: Value,
    tables: Vec<TextTable>,
    out: Option<PathBuf>,
    /// Report to standard error when no path is given (stdout carries data).
    stderr_default: bool,
    /// Set when the run finished but the result is not usable (exit 1).
    pub domain_failure: Option<String>,
}

impl Run {
    pub fn emit(&self, cli: &Cli) -> Result<(), CliError> {
        let body = match cli.format {
            Format::Json => {
                let doc = envelope(self.kind, self.provenance.clone(), &self.result)
                    .map_err(|e| CliError::Domain(format!("cannot serialize result: {e}")))?;
                let mut s = serde_json::to_string_pretty(&doc).expect("JSON value serializes");
                s.push('\n');
                s
            }
            Format::Text => self.render_text(),
        };
        let io_err = |e: std::io::Error| CliError::Usage(format!("cannot write report: {e}"));
        match &self.out {
            Some(path) => std::fs::write(path, body).map_err(io_err),
            None if self.stderr_default => std::io::stderr().write_all(body.as_bytes()).map_err(io_err),
            None => std::io::stdout().write_all(body.as_bytes()).map_err(io_err),
        }
    }

    fn render_text(&self) -> String {
        let p = &self.provenance;
        let mut out = format!("# latentpath {} {}\n", p["version"].as_str().unwrap_or(""), self.kind);
        for key in ["model_sha256", "data_sha256", "config_sha256"] {
            if let Some(h) = p[key].as_str() {
                out.push_str(&format!("# {}: {h}\n", key.replace('_', " ")));
            }
        }
        out.push_str(&format!("# seed: {}\n", p["seed"]));
        out.push_str(&format!("# options: {}\n", p["options"]));
        for t in &self.tables {
            out.push('\n');
            out.push_str(&t.render());
        }
        if let Some(msg) = &self.domain_failure {
            out.push_str(&format!("\nWARNING: {msg}\n"));
        }
        out
    }
}

struct Context {
    seed: u64,
    load: LoadOptions,
    stars: report::StarConvention,
}

pub fn dispatch(cli: &Cli) -> Result<Run, CliError> {
    let ctx = Context {
        seed: cli.seed.unwrap_or(0),
        load: LoadOptions {
            delimiter: input::parse_delimiter(&cli.delimiter, cli.tab)?,
            ..LoadOptions::default()
        },
        stars: cli.stars.into(),
    };
    match &cli.command {
        Command::Fit(a) => run_fit(&ctx, a),
        Command::Cfa(a) => run_cfa(&ctx, a),
        Command::Efa(a) => run_efa(&ctx, a),
        Command::Reliability(a) => run_reliability(&ctx, a),
        Command::Mediate(a) => run_mediate(&ctx, a),
        Command::Simulate(a) => run_simulate(cli, a),
        Command::Report(a) => run_report(&ctx, a),
    }
}

fn provenance(command: &str, model: Option<&str>, data: Option<&str>, seed: u64, options: Value) -> Value {
    json!({
        "tool": "latentpath",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "model_sha256": model,
        "data_sha256": data,
        "seed": seed,
        "options": options,
    })
}

fn estimation_options(e: &Estimation, seed: u64) -> Result<EstimationOptions, CliError> {
    if e.gtol.is_nan() || e.gtol <= 0.0 {
        return Err(CliError::Usage(format!("--gtol must be positive, got {}", e.gtol)));
    }
    Ok(EstimationOptions {
        max_iter: e.max_iter,
        gtol: e.gtol,
        multiplier: match e.chisq_n {
            ChisqN::N => ChiSquareMultiplier::N,
            ChisqN::NMinusOne => ChiSquareMultiplier::NMinusOne,
        },
        identification: match e.identification {
            IdentificationArg::Marker => Identification::Marker,
            IdentificationArg::UnitVariance => Identification::UnitVariance,
        },
        seed,
        ..EstimationOptions::default()
    })
}

fn estimation_json(o: &EstimationOptions) -> Value {
    json!({
        "max_iter": o.max_iter,
        "gtol": o.gtol,
        "chisq_multiplier": match o.multiplier {
            ChiSquareMultiplier::N => "n",
            ChiSquareMultiplier::NMinusOne => "n-1",
        },
        "identification": o.identification,
    })
}

fn non_convergence(fit: &FitResult, what: &str) -> Option<String> {
    (!fit.converged).then(|| {
        format!(
            "{what} did not converge after {} iterations (gradient norm {:.3e})",
            fit.iterations, fit.gradient_norm
        )
    })
}

fn run_fit(ctx: &Context, a: &FitArgs) -> Result<Run, CliError> {
    let (spec, model_src) = load_model(&a.input.model)?;
    let (data, data_src) = load_data(&a.input.data, &ctx.load)?;
    let opts = estimation_options(&a.estimation, ctx.seed)?;
    let moments = moments_for(&spec, &data)?;
    let result = fit(&spec, &moments, &opts)?;
    let idx = fit_indices(&result, &Standards::default())?;
    Ok(Run {
        kind: "fit",
        provenance: provenance("fit", Some(&model_src.sha256), Some(&data_src.sha256), ctx.seed, estimation_json(&opts)),
        tables: vec![
            report::fit_summary_table(&result),
            report::regression_weights_table(&result, ctx.stars),
            report::standardized_table(&result.standardized),
            report::fit_index_table(&idx),
        ],
        domain_failure: non_convergence(&result, "estimation"),
        result: json!({ "fit": result, "indices": idx }),
        out: a.output.out.clone(),
        stderr_default: false,
    })
}

/// Standardized loadings of `latent` in indicator order.
fn standardized_loadings(fit: &FitResult, spec: &ModelSpec, latent: &str) -> Vec<f64> {
    let def = spec.latent(latent).expect("latent in spec");
    def.indicators
        .iter()
        .map(|ind| {
            fit.standardized
                .iter()
                .find(|s| s.kind == ParamKind::Loading && s.lhs == latent && s.rhs == ind.name)
                .map_or(0.0, |s| s.std)
        })
        .collect()
}

fn alpha_of(data: &Dataset, items: &[&str]) -> Result<Option<f64>, CliError> {
    if items.len() < 2 {
        return Ok(None);
    }
    Ok(Some(cronbach_alpha(&subset(data, items)?.complete_rows())?))
}

/// Latent correlations from a measurement-only fit, in `spec.latents` order.
fn latent_correlations(fit: &FitResult, spec: &ModelSpec) -> DMatrix<f64> {
    let names: Vec<&str> = spec.latents.iter().map(|l| l.name.as_str()).collect();
    let k = names.len();
    let mut corr = DMatrix::identity(k, k);
    for s in &fit.standardized {
        if s.kind != ParamKind::LatentCovariance {
            continue;
        }
        if let (Some(i), Some(j)) = (
            names.iter().position(|n| *n == s.lhs),
            names.iter().position(|n| *n == s.rhs),
        ) {
            corr[(i, j)] = s.std;
            corr[(j, i)] = s.std;
        }
    }
    corr
}

/// Measurement-model results shared by `cfa` and `report`.
struct Validity {
    fit: FitResult,
    constructs: Vec<ConstructReliability>,
    fornell_larcker: latentpath::psychometrics::FornellLarcker,
}

fn validity(spec: &ModelSpec, data: &Dataset, opts: &EstimationOptions) -> Result<Validity, CliError> {
    let measurement = spec.measurement_only();
    let moments = moments_for(&measurement, data)?;
    let fit = fit(&measurement, &moments, opts)?;
    let mut constructs = Vec::new();
    for l in &measurement.latents {
        let items: Vec<&str> = l.indicators.iter().map(|i| i.name.as_str()).collect();
        constructs.push(ConstructReliability::from_standardized(
            l.name.clone(),
            items.iter().map(|s| s.to_string()).collect(),
            standardized_loadings(&fit, &measurement, &l.name),
            alpha_of(data, &items)?,
        )?);
    }
    let names: Vec<String> = constructs.iter().map(|c| c.construct.clone()).collect();
    let aves: Vec<f64> = constructs.iter().map(|c| c.ave).collect();
    let fl = fornell_larcker(&names, &aves, &latent_correlations(&fit, &measurement))?;
    Ok(Validity {
        fit,
        constructs,
        fornell_larcker: fl,
    })
}

fn run_cfa(ctx: &Context, a: &FitArgs) -> Result<Run, CliError> {
    let (spec, model_src) = load_model(&a.input.model)?;
    let (data, data_src) = load_data(&a.input.data, &ctx.load)?;
    let opts = estimation_options(&a.estimation, ctx.seed)?;
    let v = validity(&spec, &data, &opts)?;
    let idx = fit_indices(&v.fit, &Standards::default())?;
    Ok(Run {
        kind: "cfa",
        provenance: provenance("cfa", Some(&model_src.sha256), Some(&data_src.sha256), ctx.seed, estimation_json(&opts)),
        tables: vec![
            report::fit_summary_table(&v.fit),
            report::reliability_table(&v.constructs),
            report::convergent_validity_table(&v.constructs),
            report::discriminant_validity_table(&v.fornell_larcker),
            report::fit_index_table(&idx),
        ],
        domain_failure: non_convergence(&v.fit, "measurement model"),
        result: json!({
            "fit": v.fit,
            "constructs": v.constructs,
            "fornell_larcker": v.fornell_larcker,
            "indices": idx,
        }),
        out: a.output.out.clone(),
        stderr_default: false,
    })
}

fn parse_retention(text: &str) -> Result<Retention, CliError> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("kaiser") {
        return Ok(Retention::Kaiser);
    }
    let k = text.strip_prefix("m=").unwrap_or(text);
    match k.parse::<usize>() {
        Ok(k) if k > 0 => Ok(Retention::Fixed(k)),
        _ => Err(CliError::Usage(format!("--retain expects `kaiser` or `m=<k>`, got {text:?}"))),
    }
}

/// KMO (undefined is reported, not fatal) and Bartlett on the listed items.
fn adequacy(
    data: &Dataset,
    items: &[&str],
    stars: report::StarConvention,
) -> Result<(Option<f64>, latentpath::psychometrics::BartlettResult, TextTable), CliError> {
    let m = latentpath::covariance(&subset(data, items)?, latentpath::Divisor::NMinusOne)?;
    let k = kmo(&m.corr).ok();
    let b = bartlett(&m.corr, m.n)?;
    let table = report::kmo_table(k, &b, stars);
    Ok((k, b, table))
}

fn run_efa(ctx: &Context, a: &EfaArgs) -> Result<Run, CliError> {
    let (data, data_src) = load_data(&a.data, &ctx.load)?;
    let items: Vec<&str> = if a.items.is_empty() {
        data.names.iter().map(String::as_str).collect()
    } else {
        a.items.iter().map(|s| s.trim()).collect()
    };
    let retention = parse_retention(&a.retain)?;
    if !(0.0..1.0).contains(&a.suppress) {
        return Err(CliError::Usage(format!("--suppress must lie in [0, 1), got {}", a.suppress)));
    }
    let sub = subset(&data, &items)?;
    let moments = latentpath::covariance(&sub, latentpath::Divisor::NMinusOne)?;
    let (k, b, kmo_t) = adequacy(&data, &items, ctx.stars)?;
    let method = match a.extraction {
        ExtractionArg::Pc => Extraction::PrincipalComponents,
        ExtractionArg::Paf => Extraction::principal_axis(),
    };
    let unrotated = efa::extract(&moments.corr, &moments.names, retention, method)?;
    let loadings = match a.rotation {
        Rotation::Varimax => efa::varimax(&unrotated, VarimaxOptions::default()),
        Rotation::None => unrotated,
    };
    let table = efa::rotated_component_table(&loadings, a.suppress);

    let p = loadings.eigenvalues.len() as f64;
    let mut eig = TextTable::new("Total variance explained", &["Component", "Eigenvalue", "% of variance", "Cumulative %"]);
    let mut cum = 0.0;
    for (i, e) in loadings.eigenvalues.iter().enumerate() {
        cum += 100.0 * e / p;
        eig.push(vec![
            (i + 1).to_string(),
            report::fmt_num(*e, 3),
            report::fmt_num(100.0 * e / p, 3),
            report::fmt_num(cum, 3),
        ]);
    }
    eig.note(format!("{} factor(s) retained", loadings.n_factors()));
    let mut comp = report::component_table_text(&table);
    if a.rotation == Rotation::None {
        comp.title = Some("Component matrix".into());
    }
    let options = json!({
        "items": moments.names,
        "retain": a.retain,
        "suppress": a.suppress,
        "rotation": format!("{:?}", a.rotation).to_lowercase(),
        "extraction": format!("{:?}", a.extraction).to_lowercase(),
    });
    Ok(Run {
        kind: "efa",
        provenance: provenance("efa", None, Some(&data_src.sha256), ctx.seed, options),
        tables: vec![kmo_t, eig, comp],
        domain_failure: None,
        result: json!({
            "n": moments.n,
            "kmo": k,
            "bartlett": b,
            "loadings": loadings,
            "component_table": table,
        }),
        out: a.output.out.clone(),
        stderr_default: false,
    })
}

fn parse_construct(text: &str) -> Result<(String, Vec<String>), CliError> {
    let bad = || CliError::Usage(format!("--construct expects `Name=item1,item2,...`, got {text:?}"));
    let (name, items) = text.split_once('=').ok_or_else(bad)?;
    let items: Vec<String> = items
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if name.trim().is_empty() || items.is_empty() {
        return Err(bad());
    }
    Ok((name.trim().to_string(), items))
}

fn run_reliability(ctx: &Context, a: &ReliabilityArgs) -> Result<Run, CliError> {
    let (data, data_src) = load_data(&a.data, &ctx.load)?;
    let groups: Vec<(String, Vec<String>)> = a.constructs.iter().map(|c| parse_construct(c)).collect::<Result<_, _>>()?;
    let opts = EstimationOptions {
        seed: ctx.seed,
        ..EstimationOptions::default()
    };
    let mut constructs = Vec::new();
    let mut notes = Vec::new();
    let mut failure = None;
    for (name, items) in &groups {
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let alpha = alpha_of(&data, &refs)?;
        if items.len() < 3 {
            notes.push(format!("{name}: CR and AVE need at least 3 items"));
            constructs.push(ConstructReliability {
                construct: name.clone(),
                items: items.clone(),
                alpha,
                loadings: Vec::new(),
                error_variances: Vec::new(),
                cr: f64::NAN,
                ave: f64::NAN,
            });
            continue;
        }
        let spec = parse_model(&format!("{name} =~ {}", items.join(" + ")))?;
        let one = fit(&spec, &moments_for(&spec, &data)?, &opts)?;
        if failure.is_none() {
            failure = non_convergence(&one, &format!("one-factor model for {name}"));
        }
        constructs.push(ConstructReliability::from_standardized(
            name.clone(),
            items.clone(),
            standardized_loadings(&one, &spec, name),
            alpha,
        )?);
    }
    let mut all: Vec<&str> = Vec::new();
    for (_, items) in &groups {
        for i in items {
            if !all.contains(&i.as_str()) {
                all.push(i);
            }
        }
    }
    let mut tables = vec![report::reliability_table(&constructs)];
    let mut conv = report::convergent_validity_table(&constructs);
    for n in notes {
        conv.note(n);
    }
    tables.push(conv);
    let (k, b) = if all.len() >= 2 {
        let (k, b, t) = adequacy(&data, &all, ctx.stars)?;
        tables.push(t);
        (k, Some(b))
    } else {
        (None, None)
    };
    let options = json!({
        "constructs": groups.iter().map(|(n, i)| json!({"name": n, "items": i})).collect::<Vec<_>>(),
    });
    Ok(Run {
        kind: "reliability",
        provenance: provenance("reliability", None, Some(&data_src.sha256), ctx.seed, options),
        tables,
        domain_failure: failure,
        result: json!({ "constructs": constructs, "kmo": k, "bartlett": b }),
        out: a.output.out.clone(),
        stderr_default: false,
    })
}

fn parse_effect(text: &str) -> Result<EffectSpec, CliError> {
    EffectSpec::parse(text).ok_or_else(|| CliError::Usage(format!("effect must be `SRC:MED:DST`, got {text:?}")))
}

/// Direct hypotheses for user-labelled regressions, in label order.
fn direct_hypotheses(fit: &FitResult) -> Vec<Hypothesis> {
    let mut labels: Vec<&str> = fit
        .estimates
        .iter()
        .filter(|e| e.kind == ParamKind::Regression && !e.label.contains('~'))
        .map(|e| e.label.as_str())
        .collect();
    labels.sort();
    labels
        .into_iter()
        .map(|l| Hypothesis::Direct {
            id: l.to_string(),
            label: l.to_string(),
        })
        .collect()
}

struct EffectRun {
    fit: FitResult,
    decompositions: Vec<EffectDecomposition>,
    replicates: Option<(usize, usize)>,
}

fn effects_for(
    spec: &ModelSpec,
    data: &Dataset,
    effects: &[EffectSpec],
    method: IntervalArg,
    iv: &Intervals,
    opts: &EstimationOptions,
    seed: u64,
) -> Result<EffectRun, CliError> {
    if iv.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    if !(iv.alpha > 0.0 && iv.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", iv.alpha)));
    }
    match method {
        IntervalArg::Delta => {
            let f = fit(spec, &moments_for(spec, data)?, opts)?;
            let decompositions = delta_ci(&f, effects, iv.level)?;
            Ok(EffectRun {
                fit: f,
                decompositions,
                replicates: None,
            })
        }
        IntervalArg::Bootstrap => {
            let b = bootstrap_ci(
                &subset(data, &spec.indicators())?,
                spec,
                effects,
                &BootstrapOptions {
                    replicates: iv.boot,
                    level: iv.level,
                    seed,
                    workers: iv.workers,
                    estimation: opts.clone(),
                    ..BootstrapOptions::default()
                },
            )?;
            Ok(EffectRun {
                fit: b.fit,
                decompositions: b.decompositions,
                replicates: Some((b.replicates, b.failed)),
            })
        }
    }
}

fn interval_json(method: IntervalArg, iv: &Intervals) -> Value {
    match method {
        IntervalArg::Delta => json!({"method": "delta", "level": iv.level, "alpha": iv.alpha}),
        IntervalArg::Bootstrap => json!({
            "method": "bootstrap",
            "replicates": iv.boot,
            "level": iv.level,
            "alpha": iv.alpha,
        }),
    }
}

fn run_mediate(ctx: &Context, a: &MediateArgs) -> Result<Run, CliError> {
    let (spec, model_src) = load_model(&a.input.model)?;
    let (data, data_src) = load_data(&a.input.data, &ctx.load)?;
    let opts = estimation_options(&a.estimation, ctx.seed)?;
    let mut effects: Vec<EffectSpec> = a.effects.iter().map(|e| parse_effect(e)).collect::<Result<_, _>>()?;
    let mut mediation = Vec::new();
    for h in &a.hypotheses {
        let (id, effect) = h
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--hypothesis expects `ID=SRC:MED:DST`, got {h:?}")))?;
        let effect = parse_effect(effect)?;
        if !effects.contains(&effect) {
            effects.push(effect.clone());
        }
        mediation.push(Hypothesis::Mediation {
            id: id.trim().to_string(),
            effect,
        });
    }
    if a.hypotheses.is_empty() {
        mediation = effects
            .iter()
            .map(|e| Hypothesis::Mediation {
                id: e.to_string(),
                effect: e.clone(),
            })
            .collect();
    }
    let run = effects_for(&spec, &data, &effects, a.method, &a.intervals, &opts, ctx.seed)?;
    let mut hypotheses = direct_hypotheses(&run.fit);
    hypotheses.extend(mediation);
    let verdicts = classify_hypotheses(&run.fit, &run.decompositions, &hypotheses, a.intervals.alpha)?;
    let mut options = estimation_json(&opts);
    options["intervals"] = interval_json(a.method, &a.intervals);
    options["effects"] = json!(effects.iter().map(ToString::to_string).collect::<Vec<_>>());
    Ok(Run {
        kind: "mediate",
        provenance: provenance("mediate", Some(&model_src.sha256), Some(&data_src.sha256), ctx.seed, options),
        tables: vec![
            report::regression_weights_table(&run.fit, ctx.stars),
            report::effects_table(&run.decompositions),
            report::hypotheses_table(&verdicts, ctx.stars),
        ],
        domain_failure: non_convergence(&run.fit, "estimation"),
        result: json!({
            "fit": run.fit,
            "effects": run.decompositions,
            "bootstrap": run.replicates.map(|(r, f)| json!({"replicates": r, "failed": f})),
            "hypotheses": verdicts,
        }),
        out: a.output.out.clone(),
        stderr_default: false,
    })
}

fn run_simulate(cli: &Cli, a: &SimulateArgs) -> Result<Run, CliError> {
    let (spec, model_src) = load_model(&a.model)?;
    let (config, config_hash) = match &a.config {
        Some(path) => {
            let src = input::read_source(path)?;
            (SimConfig::parse(&src.text)?, Some(src.sha256))
        }
        None => (SimConfig::default(), None),
    };
    let n = a.n.or(config.n).unwrap_or(500);
    if n < 2 {
        return Err(CliError::Usage(format!("sample size must be at least 2, got {n}")));
    }
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let order: Vec<String> = spec.indicators().into_iter().map(String::from).collect();
    let model = build_matrices(&spec, &order, BuildOptions::default())?;
    let theta = config.theta(&model)?;
    let data = simulate(&model, &theta, n, seed)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    match &a.out {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(&csv)
            .map_err(|e| CliError::Usage(format!("cannot write data: {e}")))?,
    }
    let mut prov = provenance("simulate", Some(&model_src.sha256), None, seed, json!({ "n": n }));
    prov["config_sha256"] = json!(config_hash);
    let mut t = TextTable::new("Simulation", &["Item", "Value"]);
    t.push(vec!["Rows".into(), n.to_string()]);
    t.push(vec!["Variables".into(), order.len().to_string()]);
    t.push(vec!["Free parameters".into(), theta.len().to_string()]);
    let params: Vec<Value> = model
        .free_parameters()
        .iter()
        .map(|p| {
            json!({
                "label": p.label,
                "lhs": p.lhs,
                "op": p.relation.symbol(),
                "rhs": p.rhs,
                "value": theta[p.free.expect("free parameter")],
            })
        })
        .collect();
    Ok(Run {
        kind: "simulate",
        provenance: prov,
        tables: vec![t],
        domain_failure: None,
        result: json!({ "n": n, "variables": order, "parameters": params }),
        out: a.report.clone(),
        stderr_default: true,
    })
}

/// Every `SRC -> MED -> DST` chain of two regressions.
fn mediation_chains(spec: &ModelSpec) -> Vec<EffectSpec> {
    let mut out = BTreeSet::new();
    for first in &spec.regressions {
        for second in &spec.regressions {
            if second.predictor == first.dependent && second.dependent != first.predictor {
                out.insert((first.predictor.clone(), first.dependent.clone(), second.dependent.clone()));
            }
        }
    }
    out.into_iter().map(|(s, m, t)| EffectSpec::new(&s, &m, &t)).collect()
}

fn run_report(ctx: &Context, a: &ReportArgs) -> Result<Run, CliError> {
    let (spec, model_src) = load_model(&a.input.model)?;
    let (data, data_src) = load_data(&a.input.data, &ctx.load)?;
    let opts = estimation_options(&a.estimation, ctx.seed)?;

    let mut tables = Vec::new();
    let mut freqs = Vec::new();
    for var in &a.frequency {
        let rows = frequency_table(&data, var)?;
        tables.push(report::frequency_text(var, &rows));
        freqs.push(json!({ "variable": var, "levels": rows }));
    }
    let indicators = spec.indicators();
    let (k, b, kmo_t) = adequacy(&data, &indicators, ctx.stars)?;
    let v = validity(&spec, &data, &opts)?;
    let cfa_idx = fit_indices(&v.fit, &Standards::default())?;

    let effects = mediation_chains(&spec);
    let run = effects_for(&spec, &data, &effects, a.method, &a.intervals, &opts, ctx.seed)?;
    let idx = fit_indices(&run.fit, &Standards::default())?;
    let mut hypotheses = direct_hypotheses(&run.fit);
    hypotheses.extend(effects.iter().enumerate().map(|(i, e)| Hypothesis::Mediation {
        id: format!("M{}", i + 1),
        effect: e.clone(),
    }));
    let verdicts = classify_hypotheses(&run.fit, &run.decompositions, &hypotheses, a.intervals.alpha)?;

    let mut cfa_fit = report::fit_index_table(&cfa_idx);
    cfa_fit.title = Some("Measurement model fit".into());
    tables.extend([
        kmo_t,
        report::reliability_table(&v.constructs),
        report::convergent_validity_table(&v.constructs),
        report::discriminant_validity_table(&v.fornell_larcker),
        cfa_fit,
        report::fit_summary_table(&run.fit),
        report::fit_index_table(&idx),
        report::regression_weights_table(&run.fit, ctx.stars),
        report::standardized_table(&run.fit.standardized),
    ]);
    if !effects.is_empty() {
        tables.push(report::effects_table(&run.decompositions));
    }
    if !verdicts.is_empty() {
        tables.push(report::hypotheses_table(&verdicts, ctx.stars));
    }
    let failure = non_convergence(&v.fit, "measurement model").or_else(|| non_convergence(&run.fit, "estimation"));
    let mut options = estimation_json(&opts);
    options["intervals"] = interval_json(a.method, &a.intervals);
    Ok(Run {
        kind: "report",
        provenance: provenance("report", Some(&model_src.sha256), Some(&data_src.sha256), ctx.seed, options),
        tables,
        domain_failure: failure,
        result: json!({
            "frequencies": freqs,
            "kmo": k,
            "bartlett": b,
            "measurement": {
                "fit": v.fit,
                "constructs": v.constructs,
                "fornell_larcker": v.fornell_larcker,
                "indices": cfa_idx,
            },
            "structural": {
                "fit": run.fit,
                "indices": idx,
                "effects": run.decompositions,
                "bootstrap": run.replicates.map(|(r, f)| json!({"replicates": r, "failed": f})),
                "hypotheses": verdicts,
            },
        }),
        out: a.output.out.clone(),
        stderr_default: false,
    })
}
