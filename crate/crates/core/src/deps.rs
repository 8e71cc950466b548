//! Dependency expression trees.
//!
//! The textual form is whitespace-tokenized: plain atoms, all-of groups
//! `( ... )`, any-of groups `|| ( ... )`, and USE conditionals
//! `flag? ( ... )`.

use std::collections::BTreeSet;

use crate::atoms::Atom;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepExpr {
    Leaf(Atom),
    AllOf(Vec<DepExpr>),
    AnyOf(Vec<DepExpr>),
    Conditional { flag: String, children: Vec<DepExpr> },
}

impl DepExpr {
    /// Parses a whole dependency string into an implicit all-of list.
    pub fn parse(text: &str) -> Result<Vec<DepExpr>> {
        let err = |reason: &str| Error::DepExprParse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut pos = 0usize;
        let exprs = parse_group(&tokens, &mut pos, text)?;
        if pos != tokens.len() {
            return Err(err("unbalanced `)`"));
        }
        Ok(exprs)
    }

    /// Every flag named by a conditional anywhere in the tree.
    pub fn conditional_flags(exprs: &[DepExpr], out: &mut BTreeSet<String>) {
        for e in exprs {
            match e {
                DepExpr::Leaf(_) => {}
                DepExpr::AllOf(c) | DepExpr::AnyOf(c) => Self::conditional_flags(c, out),
                DepExpr::Conditional { flag, children } => {
                    out.insert(flag.clone());
                    Self::conditional_flags(children, out);
                }
            }
        }
    }

    /// Every leaf atom in the tree, in textual order.
    pub fn leaves(exprs: &[DepExpr], out: &mut Vec<Atom>) {
        for e in exprs {
            match e {
                DepExpr::Leaf(a) => out.push(a.clone()),
                DepExpr::AllOf(c) | DepExpr::AnyOf(c) => Self::leaves(c, out),
                DepExpr::Conditional { children, .. } => Self::leaves(children, out),
            }
        }
    }

    /// Renders an any-of group body for error messages.
    pub fn render_group(children: &[DepExpr]) -> String {
        let parts: Vec<String> = children.iter().map(render_expr).collect();
        format!("|| ( {} )", parts.join(" "))
    }
}

fn render_expr(e: &DepExpr) -> String {
    match e {
        DepExpr::Leaf(a) => a.to_string(),
        DepExpr::AllOf(c) => {
            let parts: Vec<String> = c.iter().map(render_expr).collect();
            format!("( {} )", parts.join(" "))
        }
        DepExpr::AnyOf(c) => DepExpr::render_group(c),
        DepExpr::Conditional { flag, children } => {
            let parts: Vec<String> = children.iter().map(render_expr).collect();
            format!("{flag}? ( {} )", parts.join(" "))
        }
    }
}

fn parse_group(tokens: &[&str], pos: &mut usize, text: &str) -> Result<Vec<DepExpr>> {
    let err = |reason: String| Error::DepExprParse {
        text: text.to_string(),
        reason,
    };
    let mut out = Vec::new();
    while *pos < tokens.len() {
        match tokens[*pos] {
            ")" => break,
            "(" => {
                *pos += 1;
                let children = parse_group(tokens, pos, text)?;
                expect_close(tokens, pos, text)?;
                out.push(DepExpr::AllOf(children));
            }
            "||" => {
                *pos += 1;
                if tokens.get(*pos) != Some(&"(") {
                    return Err(err("`||` must be followed by a group".into()));
                }
                *pos += 1;
                let children = parse_group(tokens, pos, text)?;
                expect_close(tokens, pos, text)?;
                out.push(DepExpr::AnyOf(children));
            }
            tok if tok.ends_with('?') => {
                let flag = &tok[..tok.len() - 1];
                if flag.is_empty() {
                    return Err(err("conditional with empty flag".into()));
                }
                *pos += 1;
                if tokens.get(*pos) != Some(&"(") {
                    return Err(err(format!("`{tok}` must be followed by a group")));
                }
                *pos += 1;
                let children = parse_group(tokens, pos, text)?;
                expect_close(tokens, pos, text)?;
                out.push(DepExpr::Conditional {
                    flag: flag.to_string(),
                    children,
                });
            }
            tok => {
                out.push(DepExpr::Leaf(Atom::parse(tok)?));
                *pos += 1;
            }
        }
    }
    Ok(out)
}

fn expect_close(tokens: &[&str], pos: &mut usize, text: &str) -> Result<()> {
    if tokens.get(*pos) != Some(&")") {
        return Err(Error::DepExprParse {
            text: text.to_string(),
            reason: "unbalanced `(`".to_string(),
        });
    }
    *pos += 1;
    Ok(())
}
