//! Line-oriented feature-spec grammar:
//!
//! ```text
//! # comment
//! count <AgentType>
//! indicator <name> <atom>
//! indicator <name> (and <atom> <atom> [<atom>])
//! product <feature> <feature> [<feature>]
//! ```
//!
//! Atoms: `intervention`, `signal:legal`, `signal:illegal`, `signal:none`,
//! `axis:<axis>:favored`, `axis:<axis>:disfavored`. Nested `and` forms are
//! flattened; at most three levels of parentheses and three atoms in total.

use std::collections::HashMap;

use super::{axes, Atom, AxisRole, FeatureDef, FeatureKind, FeatureSet, Predicate, MAX_CONJUNCTION};
use crate::dilemma::{AgentType, Signal};
use crate::error::{ParseDiagnostic, Result, SrmError};

const MAX_NESTING: usize = 3;

fn err(line: usize, message: impl Into<String>) -> SrmError {
    SrmError::Parse(ParseDiagnostic {
        line,
        message: message.into(),
    })
}

fn tokenize(line: &str) -> Vec<String> {
    line.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn parse_atom(token: &str, line: usize) -> Result<Atom> {
    match token {
        "intervention" => return Ok(Atom::Intervention),
        "signal:legal" => return Ok(Atom::Signal(Signal::Legal)),
        "signal:illegal" => return Ok(Atom::Signal(Signal::Illegal)),
        "signal:none" => return Ok(Atom::Signal(Signal::None)),
        _ => {}
    }
    if let Some(rest) = token.strip_prefix("axis:") {
        let (name, role) = rest
            .rsplit_once(':')
            .ok_or_else(|| err(line, format!("malformed axis atom `{token}`")))?;
        let role = match role {
            "favored" => AxisRole::Favored,
            "disfavored" => AxisRole::Disfavored,
            other => return Err(err(line, format!("unknown axis role `{other}`"))),
        };
        let id = axes::axis_id(name).map_err(|_| err(line, format!("unknown axis `{name}`")))?;
        return Ok(Atom::Axis(id, role));
    }
    Err(err(line, format!("unknown atom `{token}`")))
}

struct ExprParser<'a> {
    tokens: &'a [String],
    pos: usize,
    line: usize,
}

impl ExprParser<'_> {
    fn next(&mut self) -> Option<&str> {
        let t = self.tokens.get(self.pos).map(String::as_str);
        self.pos += 1;
        t
    }

    fn expr(&mut self, depth: usize, out: &mut Vec<Atom>) -> Result<()> {
        let line = self.line;
        match self.next() {
            None => Err(err(line, "missing predicate")),
            Some(")") => Err(err(line, "unexpected `)`")),
            Some("(") => {
                if depth + 1 > MAX_NESTING {
                    return Err(err(line, format!("nesting deeper than {MAX_NESTING}")));
                }
                match self.next() {
                    Some("and") => {}
                    Some(op) => return Err(err(line, format!("unknown operator `{op}`"))),
                    None => return Err(err(line, "unterminated `(`")),
                }
                let mut arity = 0;
                loop {
                    match self.tokens.get(self.pos).map(String::as_str) {
                        None => return Err(err(line, "unterminated `(`")),
                        Some(")") => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => {
                            self.expr(depth + 1, out)?;
                            arity += 1;
                        }
                    }
                }
                if arity < 2 {
                    return Err(err(line, "`and` needs at least two operands"));
                }
                Ok(())
            }
            Some(tok) => {
                out.push(parse_atom(tok, line)?);
                Ok(())
            }
        }
    }
}

fn parse_predicate(tokens: &[String], line: usize) -> Result<Predicate> {
    let mut parser = ExprParser {
        tokens,
        pos: 0,
        line,
    };
    let mut atoms = Vec::new();
    parser.expr(0, &mut atoms)?;
    if parser.pos < tokens.len() {
        return Err(err(line, format!("unexpected trailing `{}`", tokens[parser.pos])));
    }
    if atoms.len() > MAX_CONJUNCTION {
        return Err(err(
            line,
            format!("conjunction of {} atoms exceeds the limit of {MAX_CONJUNCTION}", atoms.len()),
        ));
    }
    Predicate::new(atoms).map_err(|e| err(line, e.to_string()))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.contains(['(', ')', '#', '*'])
}

/// Parses feature-spec text into an ordered [`FeatureSet`].
pub fn parse_feature_spec(text: &str) -> Result<FeatureSet> {
    let mut defs: Vec<FeatureDef> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        let Some((keyword, rest)) = tokens.split_first() else {
            continue;
        };
        let def = match keyword.as_str() {
            "count" => {
                let [agent] = rest else {
                    return Err(err(line, "expected `count <AgentType>`"));
                };
                let agent = agent
                    .parse::<AgentType>()
                    .map_err(|_| err(line, format!("unknown agent `{agent}`")))?;
                FeatureDef::count(agent)
            }
            "indicator" => {
                let Some((name, pred)) = rest.split_first() else {
                    return Err(err(line, "expected `indicator <name> <predicate>`"));
                };
                if !valid_name(name) {
                    return Err(err(line, format!("invalid feature name `{name}`")));
                }
                FeatureDef::indicator(name.clone(), parse_predicate(pred, line)?)
            }
            "product" => {
                if !(2..=MAX_CONJUNCTION).contains(&rest.len()) {
                    return Err(err(line, "expected `product <feature> <feature> [<feature>]`"));
                }
                let mut factors = Vec::with_capacity(rest.len());
                for name in rest {
                    let &i = by_name
                        .get(name)
                        .ok_or_else(|| err(line, format!("unknown feature `{name}`")))?;
                    if !defs[i].is_base() {
                        return Err(err(line, format!("`{name}` is itself a product")));
                    }
                    factors.push(defs[i].clone());
                }
                FeatureDef {
                    name: rest.join("*"),
                    kind: FeatureKind::Product(factors),
                }
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        };
        if by_name.contains_key(&def.name) {
            return Err(err(line, format!("duplicate feature name `{}`", def.name)));
        }
        by_name.insert(def.name.clone(), defs.len());
        defs.push(def);
    }
    FeatureSet::new(defs)
}
