#![allow(dead_code)]

use latentpath::model::ParamKind;
use latentpath::{build_matrices, parse_model, BuildOptions, ModelSpec, ParamMatrices, WULIANGYE_MODEL};

pub const INDICATORS: [&str; 21] = [
    "CE1", "CE3", "CE4", "CE7", "CE9", "CE10", "ES1", "ES3", "ES4", "PBC1", "PBC2", "PBC3", "PV1", "PV2", "PV3", "PV4",
    "PB1", "PB2", "PB3", "PB4", "PB5",
];

pub fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn bundled_spec() -> ModelSpec {
    parse_model(WULIANGYE_MODEL).unwrap()
}

pub fn bundled_matrices(options: BuildOptions) -> ParamMatrices {
    build_matrices(&bundled_spec(), &names(&INDICATORS), options).unwrap()
}

/// Structural paths with reference signs and magnitudes.
pub fn planted_path(lhs: &str, rhs: &str) -> f64 {
    match (lhs, rhs) {
        ("PerVa", "ConsEth") => 0.124,
        ("PerVa", "EnvSt") => 0.587,
        ("PerVa", "PBC") => 0.264,
        ("PB", "ConsEth") => 0.156,
        ("PB", "EnvSt") => 0.301,
        ("PB", "PBC") => 0.034,
        ("PB", "PerVa") => 0.438,
        _ => panic!("unexpected path {lhs} ~ {rhs}"),
    }
}

fn planted_phi(a: &str, b: &str) -> f64 {
    let mut pair = [a, b];
    pair.sort();
    match pair {
        ["EnvSt", "PBC"] => 0.671,
        ["ConsEth", "EnvSt"] => 0.175,
        ["ConsEth", "PBC"] => -0.085,
        _ => panic!("unexpected covariance {a} ~~ {b}"),
    }
}

/// Planted parameter vector for the bundled model under marker
/// identification: unit exogenous variances, loadings between 0.8 and 1.2.
pub fn planted_theta(m: &ParamMatrices) -> Vec<f64> {
    let loading_cycle = [0.9, 1.1, 0.8, 1.2, 1.0];
    let mut theta = vec![0.0; m.n_free()];
    for p in m.free_parameters() {
        let k = p.free.unwrap();
        theta[k] = match p.kind {
            ParamKind::Loading => {
                let i = INDICATORS.iter().position(|x| *x == p.rhs).unwrap();
                loading_cycle[i % loading_cycle.len()]
            }
            ParamKind::Regression => planted_path(&p.lhs, &p.rhs),
            ParamKind::LatentVariance => 1.0,
            ParamKind::LatentCovariance => planted_phi(&p.lhs, &p.rhs),
            ParamKind::DisturbanceVariance => 0.4,
            ParamKind::ErrorVariance => 0.4,
            ParamKind::DisturbanceCovariance | ParamKind::ErrorCovariance => 0.0,
        };
    }
    theta
}
