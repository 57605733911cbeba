//! Parametric, stochastic, bracketed L-Systems and their turtle
//! interpretation as labeled plant meshes.
//!
//! Grammar files (`.lsys`) hold one statement per line; `#` starts a comment.
//!
//! ```text
//! define: ANGLE = 30          # named constant, usable in any expression
//! axiom: A(1)
//! A(s) -> F(s) [ +(ANGLE) B(s * 0.6) ] A(s * 0.9)
//! B(s) -> 0.7 : F(s) L(s)     # stochastic group: probabilities sum to 1
//! B(s) -> 0.3 : F(s) B(s)
//! ```
//!
//! Symbols are single characters: `F f + - & ^ \ / [ ] L !` and `A`–`Z`.
//! A symbol may carry a parenthesized, comma-separated parameter list.

pub mod corpus;
mod expand;
mod expr;
mod sample;
mod turtle;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use expand::{expand, expand_with_limit, DEFAULT_EXPANSION_LIMIT};
pub use expr::{BinOp, Expr};
pub use sample::sample_pointcloud;
pub use turtle::{
    colors, interpret, trace, LeafPlacement, Segment, TurtleParams, TurtleTrace,
    DEFAULT_LEAF,
};

use expr::ExprParser;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LSystemError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("probabilities for '{symbol}' (line {line}) sum to {sum}, expected 1")]
    Probability { line: usize, symbol: char, sum: f64 },
    #[error("unknown name '{name}' at {line}:{col}")]
    UnknownSymbol { line: usize, col: usize, name: String },
    #[error("expansion would produce {count} symbols, limit is {limit}")]
    ExpansionLimit { count: usize, limit: usize },
    #[error("']' without matching '[' at symbol {index}")]
    StackUnderflow { index: usize },
    #[error("leaf template '{0}' not in library")]
    MissingLeaf(String),
    #[error("mesh has zero total surface area")]
    DegenerateMesh,
}

/// One symbol of an expanded string with evaluated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub ch: char,
    pub params: Vec<f64>,
}

impl Symbol {
    pub fn new(ch: char) -> Self {
        Self { ch, params: Vec::new() }
    }

    pub fn with(ch: char, params: Vec<f64>) -> Self {
        Self { ch, params }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolString(pub Vec<Symbol>);

impl SymbolString {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Symbol> {
        self.0.iter()
    }

    /// Parses a literal, parameter-free-expression symbol string such as
    /// `F(1)[+F][-F]`.
    pub fn parse(text: &str) -> Result<Self, LSystemError> {
        let consts = BTreeMap::new();
        let tpl = parse_templates(text, &[], &consts, 1, 0)?;
        Ok(Self(
            tpl.into_iter()
                .map(|t| Symbol::with(t.ch, t.params.iter().map(|e| e.eval(&[])).collect()))
                .collect(),
        ))
    }

    /// True when every `]` closes an earlier `[` and all brackets close.
    pub fn brackets_balanced(&self) -> bool {
        let mut depth = 0i64;
        for s in &self.0 {
            match s.ch {
                '[' => depth += 1,
                ']' => {
                    depth -= 1;
                    if depth < 0 {
                        return false;
                    }
                }
                _ => {}
            }
        }
        depth == 0
    }
}

impl fmt::Display for SymbolString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.ch)?;
            if !s.params.is_empty() {
                let p: Vec<String> = s.params.iter().map(|v| format!("{v}")).collect();
                write!(f, "({})", p.join(","))?;
            }
        }
        Ok(())
    }
}

/// Successor symbol whose parameters are expressions over the predecessor's
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTemplate {
    pub ch: char,
    pub params: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductionRule {
    pub predecessor: char,
    pub param_names: Vec<String>,
    pub probability: f64,
    pub successor: Vec<SymbolTemplate>,
    /// Source line, for diagnostics.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LSystemGrammar {
    pub axiom: SymbolString,
    pub rules: Vec<ProductionRule>,
    pub constants: BTreeMap<String, f64>,
}

impl LSystemGrammar {
    /// Rules grouped by predecessor, in declaration order.
    pub fn groups(&self) -> BTreeMap<char, Vec<&ProductionRule>> {
        let mut out: BTreeMap<char, Vec<&ProductionRule>> = BTreeMap::new();
        for r in &self.rules {
            out.entry(r.predecessor).or_default().push(r);
        }
        out
    }
}

pub fn is_symbol_char(c: char) -> bool {
    c.is_ascii_uppercase() || "Ff+-&^\\/[]!".contains(c)
}

/// Parses grammar source text.
pub fn parse_grammar(text: &str) -> Result<LSystemGrammar, LSystemError> {
    let mut constants = BTreeMap::new();
    let mut axiom: Option<(usize, String, usize)> = None;
    let mut rules = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let code = raw.split('#').next().unwrap_or("");
        let lead = code.len() - code.trim_start().len();
        let stmt = code.trim();
        if stmt.is_empty() {
            continue;
        }
        let syntax = |col: usize, msg: String| LSystemError::Syntax { line, col, msg };

        if let Some(rest) = stmt.strip_prefix("axiom:") {
            let off = lead + "axiom:".len();
            axiom = Some((line, rest.to_string(), off));
        } else if let Some(rest) = stmt.strip_prefix("define:") {
            let off = lead + "define:".len();
            let (name, value) = rest
                .split_once('=')
                .ok_or_else(|| syntax(off + 1, "expected 'define: NAME = value'".into()))?;
            let name = name.trim();
            if name.is_empty()
                || !name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(syntax(off + 1, format!("bad constant name '{name}'")));
            }
            let voff = off + rest.find('=').unwrap_or(0) + 1;
            let e = ExprParser::new(value, &[], &constants)
                .parse_all()
                .map_err(|e| expr_error(e, line, voff))?;
            constants.insert(name.to_string(), e.eval(&[]));
        } else if let Some(arrow) = stmt.find("->") {
            rules.push(parse_rule(stmt, arrow, lead, line, &constants)?);
        } else {
            return Err(syntax(lead + 1, format!("unrecognized statement '{stmt}'")));
        }
    }

    validate_groups(&rules)?;

    let (line, src, off) = axiom.ok_or(LSystemError::Syntax {
        line: text.lines().count().max(1),
        col: 1,
        msg: "missing 'axiom:' line".into(),
    })?;
    let tpl = parse_templates(&src, &[], &constants, line, off)?;
    if tpl.is_empty() {
        return Err(LSystemError::Syntax {
            line,
            col: off + 1,
            msg: "empty axiom".into(),
        });
    }
    let axiom = SymbolString(
        tpl.into_iter()
            .map(|t| Symbol::with(t.ch, t.params.iter().map(|e| e.eval(&[])).collect()))
            .collect(),
    );
    if !axiom.brackets_balanced() {
        return Err(LSystemError::Syntax {
            line,
            col: off + 1,
            msg: "unbalanced brackets in axiom".into(),
        });
    }

    Ok(LSystemGrammar {
        axiom,
        rules,
        constants,
    })
}

fn expr_error(e: expr::ExprError, line: usize, base: usize) -> LSystemError {
    let col = base + e.offset + 1;
    match e.unknown {
        Some(name) => LSystemError::UnknownSymbol { line, col, name },
        None => LSystemError::Syntax { line, col, msg: e.msg },
    }
}

fn parse_rule(
    stmt: &str,
    arrow: usize,
    lead: usize,
    line: usize,
    constants: &BTreeMap<String, f64>,
) -> Result<ProductionRule, LSystemError> {
    let syntax = |col: usize, msg: String| LSystemError::Syntax { line, col, msg };
    let lhs = stmt[..arrow].trim();
    let lhs_off = lead + stmt[..arrow].len() - stmt[..arrow].trim_start().len();

    let mut chars = lhs.chars();
    let predecessor = chars
        .next()
        .ok_or_else(|| syntax(lead + 1, "missing predecessor".into()))?;
    if !is_symbol_char(predecessor) || predecessor == '[' || predecessor == ']' {
        return Err(syntax(lhs_off + 1, format!("invalid predecessor '{predecessor}'")));
    }
    let rest = chars.as_str().trim();
    let param_names: Vec<String> = if rest.is_empty() {
        Vec::new()
    } else {
        let inner = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| syntax(lhs_off + 2, "predecessor must be a single symbol".into()))?;
        let names: Vec<String> = inner.split(',').map(|s| s.trim().to_string()).collect();
        for n in &names {
            if n.is_empty()
                || !n.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(syntax(lhs_off + 2, format!("bad parameter name '{n}'")));
            }
        }
        names
    };

    let mut rhs_off = lead + arrow + 2;
    let mut rhs = &stmt[arrow + 2..];
    let mut probability = 1.0;
    let trimmed = rhs.trim_start();
    if trimmed.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        let skip = rhs.len() - trimmed.len();
        let colon = trimmed
            .find(':')
            .ok_or_else(|| syntax(rhs_off + skip + 1, "expected 'p :' probability prefix".into()))?;
        let p_text = trimmed[..colon].trim();
        probability = p_text
            .parse::<f64>()
            .map_err(|_| syntax(rhs_off + skip + 1, format!("bad probability '{p_text}'")))?;
        if !(probability > 0.0 && probability <= 1.0) {
            return Err(LSystemError::Probability {
                line,
                symbol: predecessor,
                sum: probability,
            });
        }
        rhs_off += skip + colon + 1;
        rhs = &trimmed[colon + 1..];
    }

    let successor = parse_templates(rhs, &param_names, constants, line, rhs_off)?;
    let mut depth = 0i64;
    for t in &successor {
        match t.ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            break;
        }
    }
    if depth != 0 {
        return Err(syntax(rhs_off + 1, "unbalanced brackets in successor".into()));
    }

    Ok(ProductionRule {
        predecessor,
        param_names,
        probability,
        successor,
        line,
    })
}

fn validate_groups(rules: &[ProductionRule]) -> Result<(), LSystemError> {
    let mut groups: BTreeMap<char, Vec<&ProductionRule>> = BTreeMap::new();
    for r in rules {
        groups.entry(r.predecessor).or_default().push(r);
    }
    for (symbol, group) in groups {
        let arity = group[0].param_names.len();
        if let Some(bad) = group.iter().find(|r| r.param_names.len() != arity) {
            return Err(LSystemError::Syntax {
                line: bad.line,
                col: 1,
                msg: format!(
                    "'{symbol}' declared with {} parameters, earlier with {arity}",
                    bad.param_names.len()
                ),
            });
        }
        let sum: f64 = group.iter().map(|r| r.probability).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LSystemError::Probability {
                line: group.last().map(|r| r.line).unwrap_or(0),
                symbol,
                sum,
            });
        }
    }
    Ok(())
}

/// Parses a run of symbols with optional parameter lists. `base` is the
/// byte column of `text` within its line, for diagnostics.
fn parse_templates(
    text: &str,
    params: &[String],
    constants: &BTreeMap<String, f64>,
    line: usize,
    base: usize,
) -> Result<Vec<SymbolTemplate>, LSystemError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap_or(' ');
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if !is_symbol_char(c) {
            return Err(LSystemError::Syntax {
                line,
                col: base + i + 1,
                msg: format!("'{c}' is not a symbol"),
            });
        }
        i += c.len_utf8();
        let mut exprs = Vec::new();
        if bytes.get(i) == Some(&b'(') {
            let open = i;
            let mut depth = 0;
            let mut start = i + 1;
            let mut close = None;
            for (k, &b) in bytes.iter().enumerate().skip(i) {
                match b {
                    b'(' => depth += 1,
                    b')' => {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(k);
                            break;
                        }
                    }
                    b',' if depth == 1 => {
                        exprs.push(parse_expr(&text[start..k], params, constants, line, base + start)?);
                        start = k + 1;
                    }
                    _ => {}
                }
            }
            let close = close.ok_or(LSystemError::Syntax {
                line,
                col: base + open + 1,
                msg: "unclosed '('".into(),
            })?;
            exprs.push(parse_expr(&text[start..close], params, constants, line, base + start)?);
            i = close + 1;
        }
        out.push(SymbolTemplate { ch: c, params: exprs });
    }
    Ok(out)
}

fn parse_expr(
    src: &str,
    params: &[String],
    constants: &BTreeMap<String, f64>,
    line: usize,
    base: usize,
) -> Result<Expr, LSystemError> {
    ExprParser::new(src, params, constants)
        .parse_all()
        .map_err(|e| expr_error(e, line, base))
}
