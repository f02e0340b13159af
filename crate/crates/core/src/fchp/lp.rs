//! LP-format export of the planning model and a parser for the subset of the
//! format that the exporter writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::{FchpInstance, FchpSolution, Mode, ModelError};

/// Default cap on `|R| * |S| * |T|^2`.
pub const DEFAULT_LP_CAP: f64 = 2.0e6;

fn x(i: usize, j: usize, t: usize) -> String {
    format!("x_i{i}_j{j}_t{t}")
}
fn s(i: usize, o: usize, j: usize, t: usize) -> String {
    format!("s_i{i}_o{o}_j{j}_t{t}")
}
fn b(i: usize, t: usize) -> String {
    format!("b_i{i}_t{t}")
}
fn y(k: usize, j: usize, t: usize) -> String {
    format!("y_k{k}_j{j}_t{t}")
}
fn w(k: usize, j: usize, l: usize, t: usize) -> String {
    format!("w_k{k}_j{j}_l{l}_t{t}")
}
fn z(j: usize, a: usize) -> String {
    format!("z_j{j}_a{a}")
}

fn has_w(mode: Mode, j: usize, l: usize) -> bool {
    mode == Mode::Literal || j != l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpConstraint {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub op: LpOp,
    pub rhs: f64,
}

impl LpConstraint {
    fn new(name: String, terms: Vec<(String, f64)>, op: LpOp, rhs: f64) -> Self {
        Self { name, terms, op, rhs }
    }

    pub fn lhs(&self, values: &BTreeMap<String, f64>) -> f64 {
        self.terms.iter().map(|(v, c)| c * values.get(v).copied().unwrap_or(0.0)).sum()
    }

    pub fn holds(&self, values: &BTreeMap<String, f64>, tol: f64) -> bool {
        let l = self.lhs(values);
        match self.op {
            LpOp::Le => l <= self.rhs + tol,
            LpOp::Ge => l >= self.rhs - tol,
            LpOp::Eq => (l - self.rhs).abs() <= tol,
        }
    }
}

/// A minimization model: objective, rows, binaries and continuous variables
/// with their bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpModel {
    pub objective: Vec<(String, f64)>,
    pub constraints: Vec<LpConstraint>,
    pub binaries: BTreeSet<String>,
    pub continuous: BTreeMap<String, (f64, f64)>,
}

impl LpModel {
    pub fn variable_count(&self) -> usize {
        self.binaries.len() + self.continuous.len()
    }

    pub fn objective_value(&self, values: &BTreeMap<String, f64>) -> f64 {
        self.objective.iter().map(|(v, c)| c * values.get(v).copied().unwrap_or(0.0)).sum()
    }

    /// Names of the rows violated by `values`.
    pub fn violated(&self, values: &BTreeMap<String, f64>, tol: f64) -> Vec<String> {
        self.constraints.iter().filter(|c| !c.holds(values, tol)).map(|c| c.name.clone()).collect()
    }

    /// Number of rows per family prefix (`r1`, `r2`, ...).
    pub fn family_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for c in &self.constraints {
            let fam = c.name.split('_').next().unwrap_or_default().to_string();
            *out.entry(fam).or_insert(0) += 1;
        }
        out
    }

    /// Writes the model in LP format.
    pub fn to_lp_string(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ {title}");
        out.push_str("Minimize\n obj:");
        if self.objective.is_empty() {
            out.push_str(" 0");
        } else {
            write_terms(&mut out, &self.objective);
        }
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            write_terms(&mut out, &c.terms);
            let op = match c.op {
                LpOp::Le => "<=",
                LpOp::Ge => ">=",
                LpOp::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for (v, (lo, hi)) in &self.continuous {
            if hi.is_infinite() {
                let _ = writeln!(out, " {v} >= {lo}");
            } else {
                let _ = writeln!(out, " {lo} <= {v} <= {hi}");
            }
        }
        out.push_str("Binaries\n");
        for (n, v) in self.binaries.iter().enumerate() {
            out.push(' ');
            out.push_str(v);
            if n % 8 == 7 {
                out.push('\n');
            }
        }
        if !self.binaries.is_empty() {
            out.push('\n');
        }
        out.push_str("End\n");
        out
    }
}

fn write_terms(out: &mut String, terms: &[(String, f64)]) {
    for (n, (v, c)) in terms.iter().enumerate() {
        if n > 0 && n % 6 == 0 {
            out.push_str("\n   ");
        }
        if *c < 0.0 {
            let _ = write!(out, " - {} {v}", -c);
        } else {
            let _ = write!(out, " + {c} {v}");
        }
    }
}

/// Builds the planning model under `mode`. Every variable of every family is
/// declared, terms with a zero coefficient included, so the row and column
/// counts follow the index sets directly. Rows without any term (such as the
/// before-start rows of a content starting in period 1) are omitted.
pub fn build_model(inst: &FchpInstance, mode: Mode) -> LpModel {
    let (nr, ns, nc, tf) = (inst.requests.len(), inst.servers.len(), inst.contents.len(), inst.periods);
    let mut m = LpModel::default();
    let m_norm = inst.big_m();

    for i in 0..nr {
        for j in 0..ns {
            for t in 1..=tf {
                m.binaries.insert(x(i, j, t));
                m.objective.push((x(i, j, t), inst.requests[i].attend_cost));
                for o in 1..=t {
                    m.binaries.insert(s(i, o, j, t));
                }
            }
        }
        for t in 1..=tf {
            m.continuous.insert(b(i, t), (0.0, f64::INFINITY));
            m.objective.push((b(i, t), inst.penalty(i, t)));
        }
    }
    for k in 0..nc {
        for j in 0..ns {
            for t in 1..=tf {
                m.binaries.insert(y(k, j, t));
            }
            for l in (0..ns).filter(|&l| has_w(mode, j, l)) {
                for t in 1..=tf {
                    m.binaries.insert(w(k, j, l, t));
                    m.objective.push((w(k, j, l, t), inst.contents[k].copy_cost));
                }
            }
        }
    }
    for j in (0..ns).filter(|&j| inst.servers[j].is_hirable()) {
        for a in 1..=inst.billing_slots() {
            m.binaries.insert(z(j, a));
            let f = if m_norm > 0.0 { inst.servers[j].cost / m_norm } else { 0.0 };
            m.objective.push((z(j, a), f));
        }
    }

    let served_terms = |i: usize, j: usize, t: usize| -> Vec<(String, f64)> {
        (1..=t).map(|o| (s(i, o, j, t), inst.demand(i, o))).collect()
    };
    let c = &mut m.constraints;
    for i in 0..nr {
        for t in inst.balance_start(i, mode)..=tf {
            let mut terms: Vec<_> = (0..ns).flat_map(|j| served_terms(i, j, t)).collect();
            terms.push((b(i, t), 1.0));
            if t > 1 {
                terms.push((b(i, t - 1), -1.0));
            }
            c.push(LpConstraint::new(format!("r1_i{i}_t{t}"), terms, LpOp::Eq, inst.demand(i, t)));
        }
    }
    for j in 0..ns {
        for t in 1..=tf {
            let terms = (0..nr).flat_map(|i| served_terms(i, j, t)).collect();
            c.push(LpConstraint::new(format!("r2_j{j}_t{t}"), terms, LpOp::Le, inst.servers[j].bandwidth));
        }
    }
    for i in 0..nr {
        for t in 1..=tf {
            let terms = (0..ns).flat_map(|j| served_terms(i, j, t)).collect();
            c.push(LpConstraint::new(format!("r3_i{i}_t{t}"), terms, LpOp::Le, inst.client_bandwidth));
        }
    }
    for i in 0..nr {
        let terms = (0..ns).flat_map(|j| (1..=tf).flat_map(move |t| served_terms(i, j, t))).collect();
        c.push(LpConstraint::new(format!("r4_i{i}"), terms, LpOp::Eq, inst.request_size(i)));
    }
    for i in 0..nr {
        for j in 0..ns {
            for t in 1..=tf {
                let mut terms = served_terms(i, j, t);
                terms.push((x(i, j, t), -inst.request_size(i)));
                c.push(LpConstraint::new(format!("r4x_i{i}_j{j}_t{t}"), terms, LpOp::Le, 0.0));
            }
        }
    }
    for i in 0..nr {
        let k = inst.requests[i].content;
        for j in 0..ns {
            for t in 1..=tf {
                let terms = vec![(x(i, j, t), 1.0), (y(k, j, t), -1.0)];
                c.push(LpConstraint::new(format!("r5_i{i}_j{j}_t{t}"), terms, LpOp::Le, 0.0));
            }
        }
    }
    let tr = inst.replication_delay;
    for (k, ct) in inst.contents.iter().enumerate() {
        let bk = ct.start;
        c.push(LpConstraint::new(format!("r6_k{k}"), vec![(y(k, ct.origin, bk), 1.0)], LpOp::Eq, 1.0));
        if bk > 1 {
            let terms = (1..bk).flat_map(|t| (0..ns).map(move |j| (y(k, j, t), 1.0))).collect();
            c.push(LpConstraint::new(format!("r7_k{k}"), terms, LpOp::Eq, 0.0));
        }
        if ns > 1 {
            let terms = (0..ns).filter(|&j| j != ct.origin).map(|j| (y(k, j, bk), 1.0)).collect();
            c.push(LpConstraint::new(format!("r8_k{k}"), terms, LpOp::Eq, 0.0));
        }
        if bk > 1 {
            for j in 0..ns {
                for l in (0..ns).filter(|&l| has_w(mode, j, l)) {
                    let terms = (1..bk).map(|t| (w(k, j, l, t), 1.0)).collect();
                    c.push(LpConstraint::new(format!("r9_k{k}_j{j}_l{l}"), terms, LpOp::Eq, 0.0));
                }
            }
        }
        match mode {
            Mode::Literal => {
                for j in 0..ns {
                    for t in bk..=tf.saturating_sub(tr) {
                        let mut terms = vec![(y(k, j, t + tr), 1.0)];
                        terms.extend((0..ns).map(|l| (w(k, j, l, t), -1.0)));
                        c.push(LpConstraint::new(format!("r10_k{k}_j{j}_t{t}"), terms, LpOp::Le, 0.0));
                    }
                }
                for j in 0..ns {
                    for l in 0..ns {
                        for t in bk..=tf {
                            let terms = vec![(w(k, l, j, t), 1.0), (y(k, j, t), -1.0)];
                            c.push(LpConstraint::new(format!("r11_k{k}_j{j}_l{l}_t{t}"), terms, LpOp::Le, 0.0));
                        }
                    }
                }
            }
            Mode::Corrected => {
                for j in 0..ns {
                    for l in (0..ns).filter(|&l| l != j) {
                        for t in bk..=tf {
                            let mut terms = vec![(w(k, j, l, t), 1.0)];
                            terms.extend(inst.source_period(t).map(|p| (y(k, j, p), -1.0)));
                            c.push(LpConstraint::new(format!("src_k{k}_j{j}_l{l}_t{t}"), terms, LpOp::Le, 0.0));
                        }
                    }
                }
                for l in 0..ns {
                    for u in bk + 1..=tf {
                        let mut terms = vec![(y(k, l, u), 1.0), (y(k, l, u - 1), -1.0)];
                        if u > tr {
                            terms.extend((0..ns).filter(|&j| j != l).map(|j| (w(k, j, l, u - tr), -1.0)));
                        }
                        c.push(LpConstraint::new(format!("persist_k{k}_l{l}_t{u}"), terms, LpOp::Le, 0.0));
                    }
                }
            }
        }
    }
    for j in 0..ns {
        for t in 1..=tf {
            let terms = (0..nc).map(|k| (y(k, j, t), inst.contents[k].size)).collect();
            c.push(LpConstraint::new(format!("r12_j{j}_t{t}"), terms, LpOp::Le, inst.servers[j].storage));
        }
    }
    for i in 0..nr {
        for j in (0..ns).filter(|&j| inst.servers[j].is_hirable()) {
            for t in 1..=tf {
                let terms = vec![(x(i, j, t), 1.0), (z(j, inst.slot_of(t)), -1.0)];
                c.push(LpConstraint::new(format!("r13_i{i}_j{j}_t{t}"), terms, LpOp::Le, 0.0));
            }
        }
    }
    m.constraints.retain(|c| !c.terms.is_empty());
    m
}

/// Exports the model as LP text. Fails when `|R| * |S| * |T|^2` exceeds `cap`.
pub fn export_lp(inst: &FchpInstance, mode: Mode, cap: f64) -> Result<String, ModelError> {
    let size = inst.requests.len() as f64 * inst.servers.len() as f64 * (inst.periods as f64).powi(2);
    if size > cap {
        return Err(ModelError::TooLarge { size, cap });
    }
    let title = match mode {
        Mode::Literal => "flash-crowd planning model, literal replica rules",
        Mode::Corrected => "flash-crowd planning model, corrected replica rules",
    };
    Ok(build_model(inst, mode).to_lp_string(title))
}

/// Values of the model variables realized by `sol`; unlisted variables are 0.
pub fn solution_values(sol: &FchpSolution) -> BTreeMap<String, f64> {
    let mut v = BTreeMap::new();
    for a in &sol.assignments {
        for (&i, os) in &a.served {
            v.insert(x(i, a.server, a.period), 1.0);
            for &o in os {
                v.insert(s(i, o, a.server, a.period), 1.0);
            }
        }
    }
    for (&(i, t), &val) in &sol.backlog {
        v.insert(b(i, t), val);
    }
    for &(k, j, t) in &sol.replicas {
        v.insert(y(k, j, t), 1.0);
    }
    for r in &sol.replications {
        v.insert(w(r.content, r.from, r.to, r.period), 1.0);
    }
    for &(j, a) in &sol.hires {
        v.insert(z(j, a), 1.0);
    }
    v
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Objective,
    Rows,
    Bounds,
    Binaries,
    Generals,
    End,
}

fn keyword(line: &str) -> Option<Section> {
    match line.trim().to_ascii_lowercase().as_str() {
        "minimize" | "minimise" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Rows),
        "bounds" | "bound" => Some(Section::Bounds),
        "binaries" | "binary" | "bin" => Some(Section::Binaries),
        "generals" | "general" | "gen" => Some(Section::Generals),
        "end" => Some(Section::End),
        _ => None,
    }
}

/// Parses LP text as written by [`export_lp`]: a minimization objective,
/// named rows, `>=` or two-sided bounds, binaries. Variables appearing only in
/// rows or the objective are continuous and nonnegative.
pub fn parse_lp(text: &str) -> Result<LpModel, LpError> {
    let mut section = Section::Preamble;
    let mut obj_tokens: Vec<(usize, String)> = Vec::new();
    let mut row_tokens: Vec<(usize, String)> = Vec::new();
    let mut model = LpModel::default();
    let mut bound_lines: Vec<(usize, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(sec) = keyword(line) {
            section = sec;
            continue;
        }
        let toks = line.split_whitespace().map(|t| (line_no, t.to_string()));
        match section {
            Section::Preamble => {
                return Err(LpError::Syntax { line: line_no, msg: "text before the objective".into() })
            }
            Section::Objective => obj_tokens.extend(toks),
            Section::Rows => row_tokens.extend(toks),
            Section::Bounds => bound_lines.push((line_no, line.to_string())),
            Section::Binaries | Section::Generals => {
                for (_, t) in toks {
                    model.binaries.insert(t);
                }
            }
            Section::End => return Err(LpError::Syntax { line: line_no, msg: "text after End".into() }),
        }
    }

    let mut obj = obj_tokens.into_iter().peekable();
    if let Some((_, t)) = obj.peek() {
        if t.ends_with(':') {
            obj.next();
        }
    }
    let (terms, rest) = parse_expr(&mut obj.collect::<Vec<_>>().into_iter())?;
    if let Some((line, t)) = rest {
        return Err(LpError::Syntax { line, msg: format!("unexpected {t:?} in objective") });
    }
    model.objective = terms;

    let mut it = row_tokens.into_iter();
    while let Some((line, name)) = it.next() {
        let Some(name) = name.strip_suffix(':') else {
            return Err(LpError::Syntax { line, msg: format!("expected a row name, found {name:?}") });
        };
        let (terms, op) = parse_expr(&mut it)?;
        let op = match op {
            Some((_, o)) if o == "<=" || o == "=<" => LpOp::Le,
            Some((_, o)) if o == ">=" || o == "=>" => LpOp::Ge,
            Some((_, o)) if o == "=" => LpOp::Eq,
            _ => return Err(LpError::Syntax { line, msg: format!("row {name} has no relation") }),
        };
        let rhs = match it.next() {
            Some((l, v)) => number(&v).ok_or(LpError::Syntax { line: l, msg: format!("bad right-hand side {v:?}") })?,
            None => return Err(LpError::Syntax { line, msg: format!("row {name} has no right-hand side") }),
        };
        model.constraints.push(LpConstraint::new(name.to_string(), terms, op, rhs));
    }

    let mut bounds: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (line, text) in bound_lines {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let err = || LpError::Syntax { line, msg: format!("unsupported bound {text:?}") };
        match toks.as_slice() {
            [v, ">=", lo] => {
                bounds.entry(v.to_string()).or_insert((0.0, f64::INFINITY)).0 = number(lo).ok_or_else(err)?;
            }
            [v, "<=", hi] => {
                bounds.entry(v.to_string()).or_insert((0.0, f64::INFINITY)).1 = number(hi).ok_or_else(err)?;
            }
            [lo, "<=", v, "<=", hi] => {
                bounds.insert(v.to_string(), (number(lo).ok_or_else(err)?, number(hi).ok_or_else(err)?));
            }
            [v, "free"] => {
                bounds.insert(v.to_string(), (f64::NEG_INFINITY, f64::INFINITY));
            }
            _ => return Err(err()),
        }
    }
    let mentioned = model
        .objective
        .iter()
        .map(|(v, _)| v)
        .chain(model.constraints.iter().flat_map(|c| c.terms.iter().map(|(v, _)| v)));
    for v in mentioned.cloned().collect::<Vec<_>>() {
        if !model.binaries.contains(&v) {
            model.continuous.entry(v).or_insert((0.0, f64::INFINITY));
        }
    }
    for (v, bnd) in bounds {
        if !model.binaries.contains(&v) {
            model.continuous.insert(v, bnd);
        }
    }
    Ok(model)
}

fn number(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

type Tok = (usize, String);

/// Reads `[+|-] [coef] var` terms until a relational operator or the end.
type Terms = Vec<(String, f64)>;

fn parse_expr<I: Iterator<Item = Tok>>(it: &mut I) -> Result<(Terms, Option<Tok>), LpError> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for (line, t) in it.by_ref() {
        match t.as_str() {
            "<=" | "=<" | ">=" | "=>" | "=" => {
                if coef.is_some() {
                    return Err(LpError::Syntax { line, msg: "dangling coefficient".into() });
                }
                return Ok((terms, Some((line, t))));
            }
            "+" => {}
            "-" => sign = -sign,
            _ => {
                if let Some(v) = number(&t) {
                    if coef.is_some() {
                        return Err(LpError::Syntax { line, msg: format!("two coefficients in a row at {t:?}") });
                    }
                    coef = Some(v);
                } else {
                    terms.push((t, sign * coef.take().unwrap_or(1.0)));
                    sign = 1.0;
                }
                continue;
            }
        }
    }
    if let Some(c) = coef {
        // A bare constant, such as an empty objective written as `0`.
        if c != 0.0 {
            return Err(LpError::Syntax { line: 0, msg: "constant term in expression".into() });
        }
    }
    Ok((terms, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fchp::{Content, Request, Server};

    #[test]
    fn empty_instance_exports_zero_objective() {
        let text = export_lp(&FchpInstance::empty(3), Mode::Literal, DEFAULT_LP_CAP).unwrap();
        assert!(text.contains("obj: 0\n"));
        let m = parse_lp(&text).unwrap();
        assert!(m.constraints.is_empty() && m.objective.is_empty() && m.variable_count() == 0);
    }

    #[test]
    fn parser_reads_signs_and_bounds() {
        let m = parse_lp("Minimize\n obj: 2 a - b\n + 0.5 c\nSubject To\n r: a + b\n  >= 1\nBounds\n 0 <= c <= 4\nBinaries\n a b\nEnd\n").unwrap();
        assert_eq!(m.objective, vec![("a".into(), 2.0), ("b".into(), -1.0), ("c".into(), 0.5)]);
        assert_eq!(m.constraints[0].op, LpOp::Ge);
        assert_eq!(m.continuous["c"], (0.0, 4.0));
        assert!(m.binaries.contains("b"));
    }

    #[test]
    fn too_large_is_rejected() {
        let inst = FchpInstance {
            servers: vec![Server::owned(1.0, 1.0); 10],
            contents: vec![Content { size: 1.0, start: 1, origin: 0, copy_cost: 0.0 }],
            requests: vec![
                Request { content: 0, attend_cost: 0.0, demand: vec![0.0; 100], penalty: vec![0.0; 100] };
                10
            ],
            ..FchpInstance::empty(100)
        };
        assert!(matches!(export_lp(&inst, Mode::Literal, 1e4), Err(ModelError::TooLarge { .. })));
    }
}
