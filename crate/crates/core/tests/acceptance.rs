//! Acceptance criteria, one line of output per criterion.
//!
//! Run with `cargo test -p latentpath --test acceptance`. The process exits
//! non-zero if any criterion fails, except those listed in `KNOWN_RED`,
//! which are printed as FAIL together with the reason they cannot pass.

mod common;

use std::time::Instant;

use latentpath::effects::{bootstrap_ci, decompose, delta_variance, BootstrapOptions, EffectSpec};
use latentpath::efa::{extract, varimax, Extraction, Retention, VarimaxOptions};
use latentpath::indices::{indices, Standards};
use latentpath::model::ParamKind;
use latentpath::psychometrics::{
    average_variance_extracted, bartlett, composite_reliability, fornell_larcker, standardized_error_variances,
};
use latentpath::report::additivity_check;
use latentpath::sem::{f_ml, fit, implied_covariance, log_likelihood, ml_gradient, simulate};
use latentpath::{covariance, parse_model, BuildOptions, Divisor, EstimationOptions, SampleMoments};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::*;

/// Criteria whose stated target contradicts the stated formula. They run and
/// print FAIL but do not fail the process.
const KNOWN_RED: &[(u32, &str)] = &[(
    12,
    "-(99 - 1.5) ln 0.75 = 28.0490; the quoted 28.046 is outside +-0.001 of its own formula",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const CONSTRUCTS: [(&str, &[f64], f64, f64); 5] = [
    ("ConsEth", &[0.515, 0.742, 0.838, 0.836, 0.546, 0.807], 0.8662, 0.5277),
    ("EnvSt", &[0.703, 0.647, 0.585], 0.6821, 0.4183),
    ("PBC", &[0.661, 0.631, 0.524], 0.6356, 0.3699),
    ("PerVa", &[0.647, 0.626, 0.594, 0.634], 0.7198, 0.3913),
    ("PB", &[0.754, 0.774, 0.669, 0.594, 0.776], 0.8397, 0.5140),
];

fn c1_cr_ave() -> Outcome {
    let mut worst: f64 = 0.0;
    for (_, l, cr, ave) in CONSTRUCTS {
        let e = standardized_error_variances(l);
        worst = worst.max((composite_reliability(l, &e).unwrap() - cr).abs());
        worst = worst.max((average_variance_extracted(l, &e).unwrap() - ave).abs());
    }
    outcome(worst <= 5e-4, format!("max |diff| = {worst:.2e} (tol 5e-4)"))
}

fn c2_sqrt_ave() -> Outcome {
    let diag = [0.726, 0.647, 0.608, 0.626, 0.717];
    let names: Vec<String> = CONSTRUCTS.iter().map(|c| c.0.to_string()).collect();
    let ave: Vec<f64> = CONSTRUCTS
        .iter()
        .map(|(_, l, _, _)| average_variance_extracted(l, &standardized_error_variances(l)).unwrap())
        .collect();
    let fl = fornell_larcker(&names, &ave, &DMatrix::identity(5, 5)).unwrap();
    let worst = fl.sqrt_ave.iter().zip(diag).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let identity = (0.717f64.powi(2) - 0.514).abs();
    outcome(
        worst <= 1e-3 && identity <= 1e-3,
        format!("max |diff| = {worst:.2e}; 0.717^2 - 0.514 = {identity:.1e}"),
    )
}

fn c3_rmsea() -> Outcome {
    let symbolic = (1.727f64 / 518.0).sqrt();
    let s = DMatrix::identity(3, 3);
    let mut worst: f64 = 0.0;
    for df in [1.0, 24.0, 179.0, 189.0, 1000.0] {
        let r = indices(2.727 * df, df, 1e4, 3.0, 519, &s, &s, &Standards::default()).unwrap();
        worst = worst.max((r.rmsea.unwrap() - symbolic).abs());
    }
    outcome(
        worst < 1e-12 && (symbolic - 0.058).abs() <= 1e-3,
        format!("RMSEA = {symbolic:.4} for every df (spread {worst:.1e}); reported 0.058"),
    )
}

fn c4_additivity() -> Outcome {
    let reference = [(0.210, 0.156, 0.055), (0.559, 0.301, 0.257), (0.150, 0.034, 0.116)];
    let tables_ok = reference.iter().all(|&(t, d, i)| additivity_check(t, d, i, 0.002));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        // eta = (PerVa, PB): PB <- PerVa; xi = (ConsEth, EnvSt, PBC)
        let mut beta = DMatrix::zeros(2, 2);
        beta[(1, 0)] = rng.random_range(-1.0..1.0);
        let gamma = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let d = decompose(&beta, &gamma).unwrap();
        worst = worst.max((&d.total_xi - &d.direct_xi - &d.indirect_xi).abs().max());
        worst = worst.max((&d.total_eta - &d.direct_eta - &d.indirect_eta).abs().max());
    }
    outcome(
        tables_ok && worst <= 1e-10,
        format!("reference triples within 0.002: {tables_ok}; decompose residual {worst:.1e}"),
    )
}

fn c5_saturated() -> Outcome {
    let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
    let s = DMatrix::from_row_slice(3, 3, &[1.3, 0.52, 0.61, 0.52, 0.9, 0.44, 0.61, 0.44, 1.1]);
    let moments = SampleMoments::from_covariance(names(&["x1", "x2", "x3"]), s.clone(), 300).unwrap();
    let r = fit(&spec, &moments, &EstimationOptions::default()).unwrap();
    let direct = f_ml(&s, &s).unwrap().abs();
    outcome(
        r.df == 0 && r.f_min <= 1e-10 && r.chisq <= 1e-10 && direct <= 1e-10,
        format!("F(S,S) = {direct:.1e}; saturated fit F_min = {:.1e}, chi2 = {:.1e}", r.f_min, r.chisq),
    )
}

fn c6_likelihood() -> Outcome {
    let spec = parse_model("F =~ x1 + x2 + x3 + x4").unwrap();
    let order = names(&["x1", "x2", "x3", "x4"]);
    let m = latentpath::build_matrices(&spec, &order, BuildOptions::default()).unwrap();
    let s = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, 0.5, 0.4, 0.3, 0.5, 1.2, 0.45, 0.35, 0.4, 0.45, 0.9, 0.3, 0.3, 0.35, 0.3, 1.1],
    );
    let n = 250.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        // loadings x3, phi, error variances x4
        let mut t: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..1.5)).collect();
        t.extend((0..5).map(|_| rng.random_range(0.2..1.5)));
        t
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (t1, t2) = (draw(&mut rng), draw(&mut rng));
        let (s1, s2) = (implied_covariance(&m, &t1).unwrap(), implied_covariance(&m, &t2).unwrap());
        let df = f_ml(&s1, &s).unwrap() - f_ml(&s2, &s).unwrap();
        let dl = log_likelihood(&s1, &s, n).unwrap() - log_likelihood(&s2, &s, n).unwrap();
        worst = worst.max((df + 2.0 / n * dl).abs());
    }
    outcome(worst <= 1e-8, format!("max residual over 100 pairs = {worst:.1e}"))
}

fn c7_gradient() -> Outcome {
    let m = bundled_matrices(BuildOptions::default());
    let planted = planted_theta(&m);
    let data = simulate(&m, &planted, 1000, 7).unwrap();
    let s = covariance(&data, Divisor::NMinusOne).unwrap().cov;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    while points < 20 {
        let theta: Vec<f64> = m
            .free_parameters()
            .iter()
            .map(|p| {
                let v = planted[p.free.unwrap()];
                if p.kind.is_variance() {
                    v * rng.random_range(0.6..1.6)
                } else {
                    v + rng.random_range(-0.25..0.25)
                }
            })
            .collect();
        let Ok(sigma) = implied_covariance(&m, &theta) else { continue };
        if f_ml(&sigma, &s).is_err() {
            continue;
        }
        points += 1;
        let analytic = ml_gradient(&m, &theta, &s).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[k] += h;
                down[k] -= h;
                let fu = f_ml(&implied_covariance(&m, &up).unwrap(), &s).unwrap();
                let fd = f_ml(&implied_covariance(&m, &down).unwrap(), &s).unwrap();
                (fu - fd) / (2.0 * h)
            })
            .collect();
        let scale = numeric.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = analytic.iter().zip(&numeric).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error over {points} points = {worst:.1e} (|g_a - g_fd|_inf / |g_fd|_inf)"),
    )
}

fn c8_recovery() -> Outcome {
    let start = Instant::now();
    let m = bundled_matrices(BuildOptions::default());
    let planted = planted_theta(&m);
    let data = simulate(&m, &planted, 5000, 8).unwrap();
    let moments = covariance(&data, Divisor::NMinusOne).unwrap();
    let r = fit(&bundled_spec(), &moments, &EstimationOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    let mut signs = 0;
    for e in &r.estimates {
        if !matches!(e.kind, ParamKind::Loading | ParamKind::Regression) {
            continue;
        }
        let p = m.free_parameters().into_iter().find(|p| p.label == e.label).unwrap();
        let truth = planted[p.free.unwrap()];
        worst = worst.max((e.estimate - truth).abs());
        if e.kind == ParamKind::Regression && e.estimate.signum() == truth.signum() {
            signs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.converged && worst <= 0.05 && signs == 7 && secs < 60.0,
        format!(
            "converged {} in {} iterations; max |est - planted| = {worst:.4}; signs {signs}/7; {secs:.1}s",
            r.converged, r.iterations
        ),
    )
}

fn c9_delta() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let g = rng.random_range(-1.0..1.0);
        let b = rng.random_range(-1.0..1.0);
        let sg = rng.random_range(0.05..0.5);
        let sb = rng.random_range(0.05..0.5);
        let (dg, db) = (Normal::new(g, sg).unwrap(), Normal::new(b, sb).unwrap());
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let v = dg.sample(&mut rng) * db.sample(&mut rng);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum2 - n as f64 * mean * mean) / (n as f64 - 1.0);
        let formula = delta_variance(g, b, sg * sg, sb * sb);
        worst = worst.max((var / formula - 1.0).abs());
    }
    outcome(worst <= 0.02, format!("max relative deviation over 5 settings = {:.2}%", 100.0 * worst))
}

const MEDIATION_MODEL: &str = "X =~ x1 + x2 + x3\nM =~ m1 + m2 + m3\nY =~ y1 + y2 + y3\nM ~ a*X\nY ~ b*M + c*X\n";

fn mediation_data(n: usize, seed: u64) -> latentpath::Dataset {
    let spec = parse_model(MEDIATION_MODEL).unwrap();
    let order = names(&["x1", "x2", "x3", "m1", "m2", "m3", "y1", "y2", "y3"]);
    let m = latentpath::build_matrices(&spec, &order, BuildOptions::default()).unwrap();
    let theta: Vec<f64> = m
        .free_parameters()
        .iter()
        .map(|p| match (p.kind, p.label.as_str()) {
            (ParamKind::Loading, _) => 0.9,
            (ParamKind::Regression, "a") => 0.0,
            (ParamKind::Regression, "b") => 0.5,
            (ParamKind::Regression, _) => 0.3,
            (ParamKind::ErrorVariance, _) => 0.5,
            _ => 1.0,
        })
        .collect();
    simulate(&m, &theta, n, seed).unwrap()
}

fn c10_bootstrap() -> Outcome {
    let start = Instant::now();
    let spec = parse_model(MEDIATION_MODEL).unwrap();
    let effects = [EffectSpec::new("X", "M", "Y")];

    let data = mediation_data(500, 100);
    let opts = |workers| BootstrapOptions {
        replicates: 200,
        seed: 42,
        workers: Some(workers),
        ..BootstrapOptions::default()
    };
    let one = bootstrap_ci(&data, &spec, &effects, &opts(1)).unwrap();
    let four = bootstrap_ci(&data, &spec, &effects, &opts(4)).unwrap();
    let deterministic = one.decompositions == four.decompositions;

    let reps = 50;
    let mut covered = 0;
    let mut failed = 0;
    for rep in 0..reps {
        let data = mediation_data(500, 1000 + rep);
        let o = BootstrapOptions {
            replicates: 500,
            seed: rep,
            ..BootstrapOptions::default()
        };
        let r = bootstrap_ci(&data, &spec, &effects, &o).unwrap();
        failed += r.failed;
        let ind = r.decompositions[0].indirect;
        if ind.lower <= 0.0 && 0.0 <= ind.upper {
            covered += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        deterministic && covered * 10 >= reps as usize * 9 && secs < 600.0,
        format!(
            "workers 1 vs 4 identical: {deterministic}; zero covered in {covered}/{reps} ({failed} replicate failures); {secs:.0}s"
        ),
    )
}

fn c11_varimax() -> Outcome {
    // Two clusters of four items with cross-loadings.
    let lambda = DMatrix::from_row_slice(
        8,
        2,
        &[0.75, 0.30, 0.70, 0.25, 0.80, 0.20, 0.65, 0.30, 0.30, 0.70, 0.25, 0.75, 0.20, 0.80, 0.30, 0.65],
    );
    let mut r = &lambda * lambda.transpose();
    for i in 0..8 {
        r[(i, i)] = 1.0;
    }
    let items: Vec<String> = (1..=8).map(|i| format!("v{i}")).collect();
    let l = extract(&r, &items, Retention::Kaiser, Extraction::default()).unwrap();
    let rot = varimax(&l, VarimaxOptions::default());
    let drift = l
        .communalities
        .iter()
        .zip(&rot.communalities)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (mut min_dom, mut max_cross) = (f64::INFINITY, 0.0f64);
    for row in rot.loadings.row_iter() {
        let mut v: Vec<f64> = row.iter().map(|x| x.abs()).collect();
        v.sort_by(f64::total_cmp);
        min_dom = min_dom.min(v[v.len() - 1]);
        max_cross = max_cross.max(v[0]);
    }
    outcome(
        l.n_factors() == 2 && drift <= 1e-10 && min_dom > 0.5 && max_cross < 0.4,
        format!(
            "{} factors; communality drift {drift:.1e}; min dominant {min_dom:.3}; max cross {max_cross:.3}",
            l.n_factors()
        ),
    )
}

fn c12_bartlett() -> Outcome {
    let id = bartlett(&DMatrix::identity(4, 4), 100).unwrap();
    let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let b = bartlett(&r, 100).unwrap();
    // The implementation must agree with the formula itself; only the quoted
    // target is allowed to disagree.
    assert!((b.chi_square + 97.5 * 0.75f64.ln()).abs() < 1e-12);
    outcome(
        id.chi_square == 0.0 && (b.chi_square - 28.046).abs() <= 1e-3,
        format!("identity chi2 = {}; p=2 case chi2 = {:.4}, df = {} (target 28.046 +- 0.001)", id.chi_square, b.chi_square, b.df),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "CR/AVE from reference loadings", c1_cr_ave),
        (2, "Fornell-Larcker diagonal", c2_sqrt_ave),
        (3, "RMSEA consistency", c3_rmsea),
        (4, "effect additivity", c4_additivity),
        (5, "saturated identity", c5_saturated),
        (6, "likelihood equivalence", c6_likelihood),
        (7, "analytic gradient", c7_gradient),
        (8, "parameter recovery", c8_recovery),
        (9, "delta-method variance", c9_delta),
        (10, "bootstrap determinism and coverage", c10_bootstrap),
        (11, "varimax properties", c11_varimax),
        (12, "Bartlett / KMO", c12_bartlett),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name}: {}", o.detail);
        if !o.pass {
            match KNOWN_RED.iter().find(|(k, _)| *k == id) {
                Some((_, why)) => println!("             known red: {why}"),
                None => unexpected += 1,
            }
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
