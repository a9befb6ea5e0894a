//! Text front end for model specifications.
//!
//! ```text
//! # measurement
//! PB =~ PB1 + PB2 + PB3
//! # regression with labels and fixed values
//! PB ~ H1*ConsEth + 0*PBC
//! # (co)variances
//! PB1 ~~ PB2
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Per-term modifier written as `k*name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Modifier {
    Fixed(f64),
    Label(String),
}

impl fmt::Display for Modifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modifier::Fixed(v) => write!(f, "{v:?}"),
            Modifier::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub name: String,
    pub modifier: Option<Modifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDef {
    pub name: String,
    /// Declaration order is kept; the first entry is the default marker.
    pub indicators: Vec<Indicator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub dependent: String,
    pub predictor: String,
    pub modifier: Option<Modifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub a: String,
    pub b: String,
    pub modifier: Option<Modifier>,
}

/// A parsed latent-variable model.
///
/// Latents, regressions and covariances are held in canonical (sorted)
/// order so that the statement order of the source text never matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub latents: Vec<LatentDef>,
    pub regressions: Vec<Regression>,
    pub covariances: Vec<Covariance>,
}

impl ModelSpec {
    pub fn latent(&self, name: &str) -> Option<&LatentDef> {
        self.latents.iter().find(|l| l.name == name)
    }

    pub fn is_latent(&self, name: &str) -> bool {
        self.latent(name).is_some()
    }

    /// Latent owning `indicator`, if any.
    pub fn owner_of(&self, indicator: &str) -> Option<&LatentDef> {
        self.latents
            .iter()
            .find(|l| l.indicators.iter().any(|i| i.name == indicator))
    }

    /// All indicators in latent order, then declaration order.
    pub fn indicators(&self) -> Vec<&str> {
        self.latents
            .iter()
            .flat_map(|l| l.indicators.iter().map(|i| i.name.as_str()))
            .collect()
    }

    /// Latents that appear as the dependent side of some regression.
    pub fn endogenous(&self) -> Vec<&str> {
        let deps: BTreeSet<&str> = self.regressions.iter().map(|r| r.dependent.as_str()).collect();
        self.latents
            .iter()
            .map(|l| l.name.as_str())
            .filter(|n| deps.contains(n))
            .collect()
    }

    pub fn exogenous(&self) -> Vec<&str> {
        let deps: BTreeSet<&str> = self.regressions.iter().map(|r| r.dependent.as_str()).collect();
        self.latents
            .iter()
            .map(|l| l.name.as_str())
            .filter(|n| !deps.contains(n))
            .collect()
    }

    /// Loadings fixed explicitly in the source (`k*indicator`).
    pub fn fixed_loadings(&self) -> BTreeMap<String, f64> {
        self.latents
            .iter()
            .flat_map(|l| l.indicators.iter())
            .filter_map(|i| match i.modifier {
                Some(Modifier::Fixed(v)) => Some((i.name.clone(), v)),
                _ => None,
            })
            .collect()
    }

    /// The measurement part only: same latents, no regressions, and only
    /// indicator-level covariance statements.
    pub fn measurement_only(&self) -> ModelSpec {
        ModelSpec {
            latents: self.latents.clone(),
            regressions: Vec::new(),
            covariances: self
                .covariances
                .iter()
                .filter(|c| !self.is_latent(&c.a) && !self.is_latent(&c.b))
                .cloned()
                .collect(),
        }
    }

    /// Serializes back to model syntax. Re-parsing yields an equal spec.
    pub fn to_text(&self) -> String {
        fn term(name: &str, m: &Option<Modifier>) -> String {
            match m {
                Some(m) => format!("{m}*{name}"),
                None => name.to_string(),
            }
        }
        let mut out = String::new();
        for l in &self.latents {
            let rhs: Vec<String> = l.indicators.iter().map(|i| term(&i.name, &i.modifier)).collect();
            out.push_str(&format!("{} =~ {}\n", l.name, rhs.join(" + ")));
        }
        for r in &self.regressions {
            out.push_str(&format!("{} ~ {}\n", r.dependent, term(&r.predictor, &r.modifier)));
        }
        for c in &self.covariances {
            out.push_str(&format!("{} ~~ {}\n", c.a, term(&c.b, &c.modifier)));
        }
        out
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Measure,
    Regress,
    Covary,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Star,
    Plus,
    Op(Op),
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn tokenize(line_no: usize, line: &str) -> Result<Vec<(usize, Tok)>, ModelError> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '*' {
            toks.push((col, Tok::Star));
            i += 1;
        } else if c == '+' {
            toks.push((col, Tok::Plus));
            i += 1;
        } else if c == '=' {
            if chars.get(i + 1) == Some(&'~') {
                toks.push((col, Tok::Op(Op::Measure)));
                i += 2;
            } else {
                return Err(syntax(line_no, col, "expected `=~`"));
            }
        } else if c == '~' {
            if chars.get(i + 1) == Some(&'~') {
                toks.push((col, Tok::Op(Op::Covary)));
                i += 2;
            } else {
                toks.push((col, Tok::Op(Op::Regress)));
                i += 1;
            }
        } else if c.is_ascii_digit() || c == '-' || c == '.' {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let prev = chars[i - 1];
                let exponent_sign = (d == '-' || d == '+') && (prev == 'e' || prev == 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| syntax(line_no, col, format!("invalid number `{text}`")))?;
            if !v.is_finite() {
                return Err(syntax(line_no, col, format!("non-finite number `{text}`")));
            }
            toks.push((col, Tok::Number(v)));
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            toks.push((col, Tok::Ident(chars[start..i].iter().collect())));
        } else {
            return Err(syntax(line_no, col, format!("unexpected character `{c}`")));
        }
    }
    Ok(toks)
}

struct Statement {
    line: usize,
    lhs: String,
    op: Op,
    terms: Vec<(String, Option<Modifier>)>,
}

fn parse_statement(line_no: usize, line: &str) -> Result<Option<Statement>, ModelError> {
    let toks = tokenize(line_no, line)?;
    if toks.is_empty() {
        return Ok(None);
    }
    let end_col = line.chars().count() + 1;
    let mut it = toks.into_iter().peekable();

    let lhs = match it.next() {
        Some((_, Tok::Ident(s))) => s,
        Some((c, _)) => return Err(syntax(line_no, c, "statement must start with a variable name")),
        None => unreachable!(),
    };
    let op = match it.next() {
        Some((_, Tok::Op(op))) => op,
        Some((c, _)) => return Err(syntax(line_no, c, "expected one of `=~`, `~`, `~~`")),
        None => return Err(syntax(line_no, end_col, "expected one of `=~`, `~`, `~~`")),
    };

    let mut terms = Vec::new();
    loop {
        let (col, first) = it
            .next()
            .ok_or_else(|| syntax(line_no, end_col, "expected a term"))?;
        let term = if matches!(it.peek(), Some((_, Tok::Star))) {
            it.next();
            let modifier = match first {
                Tok::Number(v) => Modifier::Fixed(v),
                Tok::Ident(l) => Modifier::Label(l),
                _ => return Err(syntax(line_no, col, "expected a number or label before `*`")),
            };
            match it.next() {
                Some((_, Tok::Ident(name))) => (name, Some(modifier)),
                Some((c, _)) => return Err(syntax(line_no, c, "expected a variable name after `*`")),
                None => return Err(syntax(line_no, end_col, "expected a variable name after `*`")),
            }
        } else {
            match first {
                Tok::Ident(name) => (name, None),
                _ => return Err(syntax(line_no, col, "expected a variable name")),
            }
        };
        terms.push(term);
        match it.next() {
            None => break,
            Some((_, Tok::Plus)) => continue,
            Some((c, _)) => return Err(syntax(line_no, c, "expected `+` or end of line")),
        }
    }
    Ok(Some(Statement {
        line: line_no,
        lhs,
        op,
        terms,
    }))
}

/// Parses model syntax into a validated [`ModelSpec`].
pub fn parse_model(text: &str) -> Result<ModelSpec, ModelError> {
    let mut statements = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if let Some(st) = parse_statement(idx + 1, line)? {
            statements.push(st);
        }
    }

    let mut latents: BTreeMap<String, LatentDef> = BTreeMap::new();
    let mut regressions: BTreeMap<(String, String), Regression> = BTreeMap::new();
    let mut covariances: BTreeMap<(String, String), Covariance> = BTreeMap::new();

    for st in statements {
        match st.op {
            Op::Measure => {
                if latents.contains_key(&st.lhs) {
                    return Err(ModelError::DuplicateLatent { name: st.lhs, line: st.line });
                }
                let indicators = st
                    .terms
                    .into_iter()
                    .map(|(name, modifier)| Indicator { name, modifier })
                    .collect();
                latents.insert(st.lhs.clone(), LatentDef { name: st.lhs, indicators });
            }
            Op::Regress => {
                for (pred, modifier) in st.terms {
                    let key = (st.lhs.clone(), pred.clone());
                    if regressions.contains_key(&key) {
                        return Err(ModelError::DuplicateStatement {
                            statement: format!("{} ~ {}", st.lhs, pred),
                            line: st.line,
                        });
                    }
                    regressions.insert(
                        key,
                        Regression {
                            dependent: st.lhs.clone(),
                            predictor: pred,
                            modifier,
                        },
                    );
                }
            }
            Op::Covary => {
                for (other, modifier) in st.terms {
                    let (a, b) = if st.lhs <= other {
                        (st.lhs.clone(), other)
                    } else {
                        (other, st.lhs.clone())
                    };
                    let key = (a.clone(), b.clone());
                    if covariances.contains_key(&key) {
                        return Err(ModelError::DuplicateStatement {
                            statement: format!("{a} ~~ {b}"),
                            line: st.line,
                        });
                    }
                    covariances.insert(key, Covariance { a, b, modifier });
                }
            }
        }
    }

    let spec = ModelSpec {
        latents: latents.into_values().collect(),
        regressions: regressions.into_values().collect(),
        covariances: covariances.into_values().collect(),
    };
    validate(&spec)?;
    Ok(spec)
}

/// Checks every structural invariant of a spec.
pub fn validate(spec: &ModelSpec) -> Result<(), ModelError> {
    if spec.latents.is_empty() {
        return Err(ModelError::NoLatents);
    }
    let latent_names: BTreeSet<&str> = spec.latents.iter().map(|l| l.name.as_str()).collect();

    let mut seen: HashMap<&str, &str> = HashMap::new();
    for l in &spec.latents {
        for ind in &l.indicators {
            if latent_names.contains(ind.name.as_str()) {
                return Err(ModelError::LatentAsIndicator { name: ind.name.clone() });
            }
            if let Some(prev) = seen.insert(&ind.name, &l.name) {
                return Err(ModelError::DuplicateIndicator {
                    indicator: ind.name.clone(),
                    first: prev.to_string(),
                    second: l.name.clone(),
                });
            }
        }
    }

    for r in &spec.regressions {
        for name in [&r.dependent, &r.predictor] {
            if !latent_names.contains(name.as_str()) {
                return Err(ModelError::UndeclaredLatent { name: name.clone() });
            }
        }
    }
    for c in &spec.covariances {
        for name in [&c.a, &c.b] {
            if !latent_names.contains(name.as_str()) && !seen.contains_key(name.as_str()) {
                return Err(ModelError::UndeclaredVariable { name: name.clone() });
            }
        }
    }

    let mut labels = BTreeSet::new();
    let all_modifiers = spec
        .latents
        .iter()
        .flat_map(|l| l.indicators.iter().map(|i| &i.modifier))
        .chain(spec.regressions.iter().map(|r| &r.modifier))
        .chain(spec.covariances.iter().map(|c| &c.modifier));
    for m in all_modifiers {
        if let Some(Modifier::Label(l)) = m {
            if !labels.insert(l.as_str()) {
                return Err(ModelError::DuplicateLabel { label: l.clone() });
            }
        }
    }

    if let Some(cycle) = find_cycle(spec) {
        return Err(ModelError::CyclicRegression { cycle });
    }
    Ok(())
}

/// Returns the latents on some directed cycle of the regression graph
/// (edge predictor -> dependent), if one exists.
fn find_cycle(spec: &ModelSpec) -> Option<Vec<String>> {
    let names: Vec<&str> = spec.latents.iter().map(|l| l.name.as_str()).collect();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut indegree = vec![0usize; names.len()];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for r in &spec.regressions {
        let from = index[r.predictor.as_str()];
        let to = index[r.dependent.as_str()];
        out[from].push(to);
        indegree[to] += 1;
    }
    let mut queue: Vec<usize> = (0..names.len()).filter(|&i| indegree[i] == 0).collect();
    let mut removed = 0;
    while let Some(v) = queue.pop() {
        removed += 1;
        for &w in &out[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                queue.push(w);
            }
        }
    }
    if removed == names.len() {
        None
    } else {
        Some(
            (0..names.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| names[i].to_string())
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_measurement() {
        let spec = parse_model("PB =~ PB1 + PB2").unwrap();
        assert_eq!(spec.latents.len(), 1);
        assert_eq!(spec.latents[0].name, "PB");
        assert_eq!(spec.indicators(), vec!["PB1", "PB2"]);
    }

    #[test]
    fn cycle_is_rejected() {
        let text = "A =~ a1 + a2\nB =~ b1 + b2\nA ~ B\nB ~ A\n";
        assert!(matches!(parse_model(text), Err(ModelError::CyclicRegression { .. })));
        let self_loop = "A =~ a1 + a2\nA ~ A\n";
        assert!(matches!(parse_model(self_loop), Err(ModelError::CyclicRegression { .. })));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_model("F =~ x1 + x2\nF =~ x3 +\n").unwrap_err();
        match err {
            ModelError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_model("F = x1").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 1, column: 3, .. }));
        let err = parse_model("F =~ x1 $ x2").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 1, column: 9, .. }));
    }

    #[test]
    fn duplicate_indicator_and_undeclared_latent() {
        let dup = "F =~ x1 + x2\nG =~ x2 + x3\n";
        assert!(matches!(parse_model(dup), Err(ModelError::DuplicateIndicator { .. })));
        let undeclared = "F =~ x1 + x2\nF ~ G\n";
        assert!(matches!(parse_model(undeclared), Err(ModelError::UndeclaredLatent { .. })));
        let latent_indicator = "F =~ x1 + G\nG =~ y1 + y2\n";
        assert!(matches!(parse_model(latent_indicator), Err(ModelError::LatentAsIndicator { .. })));
    }

    #[test]
    fn modifiers_comments_and_blank_lines() {
        let text = "# header\n\nF =~ 1*x1 + a*x2 + 0.5*x3  # trailing\nG =~ y1 + y2\nG ~ -0.25*F\nx1 ~~ x2\n";
        let spec = parse_model(text).unwrap();
        let f = spec.latent("F").unwrap();
        assert_eq!(f.indicators[0].modifier, Some(Modifier::Fixed(1.0)));
        assert_eq!(f.indicators[1].modifier, Some(Modifier::Label("a".into())));
        assert_eq!(f.indicators[2].modifier, Some(Modifier::Fixed(0.5)));
        assert_eq!(spec.regressions[0].modifier, Some(Modifier::Fixed(-0.25)));
        assert_eq!(spec.fixed_loadings().len(), 2);
        assert_eq!(spec.endogenous(), vec!["G"]);
        assert_eq!(spec.exogenous(), vec!["F"]);
    }

    #[test]
    fn duplicate_label_rejected() {
        let text = "F =~ x1 + a*x2\nG =~ y1 + a*y2\n";
        assert!(matches!(parse_model(text), Err(ModelError::DuplicateLabel { .. })));
    }

    #[test]
    fn statement_order_is_irrelevant() {
        let a = parse_model("F =~ x1 + x2\nG =~ y1 + y2\nG ~ F\ny1 ~~ y2\n").unwrap();
        let b = parse_model("y2 ~~ y1\nG ~ F\nG =~ y1 + y2\nF =~ x1 + x2\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip() {
        let spec = parse_model("F =~ 1*x1 + lab*x2 + 0.1*x3\nG =~ y1 + y2\nG ~ b1*F\nx1 ~~ 0.3*x1\n").unwrap();
        assert_eq!(parse_model(&spec.to_text()).unwrap(), spec);
    }
}
