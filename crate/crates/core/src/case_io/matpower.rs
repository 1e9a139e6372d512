//! Reader for the matrix-based `mpc.*` case grammar.
//!
//! Only `baseMVA`, `bus`, `gen` and `branch` are interpreted; every other
//! `mpc.*` assignment is skipped and reported as a warning.

use std::collections::HashMap;

use tracing::warn;

use super::CaseError;
use crate::grid::{
    Bus, GenId, Generator, Grid, Line, LineId, Load, LoadId, SubId,
};
use crate::powerflow::{solve_ac, solve_dc, AcOptions};

const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const GS: usize = 4;
const BS: usize = 5;
const BASE_KV: usize = 9;
const VMAX: usize = 11;
const VMIN: usize = 12;

const GEN_BUS: usize = 0;
const PG: usize = 1;
const QMAX: usize = 3;
const QMIN: usize = 4;
const VG: usize = 5;
const GEN_STATUS: usize = 7;
const PMAX: usize = 8;

const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const RATE_A: usize = 5;
const TAP: usize = 8;
const SHIFT: usize = 9;
const BR_STATUS: usize = 10;

const REF: i64 = 3;
const ISOLATED: i64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ParseOptions {
    /// Limit given to unrated branches, as a multiple of their base-case
    /// apparent flow.
    pub synthetic_limit_factor: f64,
    /// Lower bound on synthetic limits, MVA.
    pub min_synthetic_limit: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            synthetic_limit_factor: 1.3,
            min_synthetic_limit: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParsedCase {
    pub grid: Grid,
    pub warnings: Vec<String>,
    /// Lines whose rating was synthesized.
    pub synthetic_ratings: Vec<LineId>,
}

pub fn parse_case(text: &str) -> Result<ParsedCase, CaseError> {
    parse_case_with(text, &ParseOptions::default())
}

pub fn parse_case_with(text: &str, opts: &ParseOptions) -> Result<ParsedCase, CaseError> {
    let raw = RawCase::parse(text)?;
    let mut warnings = raw.warnings.clone();
    let mut grid = raw.build(&mut warnings)?;
    let synthetic_ratings = fill_missing_ratings(&mut grid, opts, &mut warnings);
    for w in &warnings {
        warn!("{w}");
    }
    Ok(ParsedCase {
        grid,
        warnings,
        synthetic_ratings,
    })
}

fn fill_missing_ratings(grid: &mut Grid, opts: &ParseOptions, warnings: &mut Vec<String>) -> Vec<LineId> {
    let unrated: Vec<LineId> = grid
        .lines
        .iter()
        .filter(|l| !(l.rating > 0.0))
        .map(|l| l.id)
        .collect();
    if unrated.is_empty() {
        return unrated;
    }
    let flows: Option<Vec<f64>> = match solve_ac(grid, &AcOptions::default()) {
        Ok(sol) => Some(sol.lines.iter().map(|f| f.s_max()).collect()),
        Err(e) => {
            warnings.push(format!("AC base case failed ({e}); synthetic limits use DC flows"));
            solve_dc(grid)
                .ok()
                .map(|sol| sol.lines.iter().map(|f| f.s_max()).collect())
        }
    };
    for &id in &unrated {
        let base = flows.as_ref().map_or(0.0, |f| f[id.index()]);
        grid.lines[id.index()].rating =
            (opts.synthetic_limit_factor * base).max(opts.min_synthetic_limit);
    }
    warnings.push(format!(
        "{} unrated branches given synthetic limits ({}x base flow, floor {} MVA)",
        unrated.len(),
        opts.synthetic_limit_factor,
        opts.min_synthetic_limit
    ));
    unrated
}

#[derive(Debug, Default)]
struct RawCase {
    base_mva: Option<f64>,
    bus: Option<Matrix>,
    gen: Option<Matrix>,
    branch: Option<Matrix>,
    warnings: Vec<String>,
}

#[derive(Debug)]
struct Matrix {
    rows: Vec<Vec<f64>>,
    line: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str,
    Eq,
    Open(char),
    Close(char),
    Semi,
    Comma,
    Newline,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, CaseError> {
    let mut out = Vec::new();
    for (li, src) in text.lines().enumerate() {
        let line = li + 1;
        let chars: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line, col });
            match c {
                '%' => break,
                ' ' | '\t' | '\r' => i += 1,
                '=' => {
                    push(&mut out, Tok::Eq);
                    i += 1;
                }
                '[' | '{' | '(' => {
                    push(&mut out, Tok::Open(c));
                    i += 1;
                }
                ']' | '}' | ')' => {
                    push(&mut out, Tok::Close(c));
                    i += 1;
                }
                ';' => {
                    push(&mut out, Tok::Semi);
                    i += 1;
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1;
                }
                '\'' | '"' => {
                    let end = chars[i + 1..]
                        .iter()
                        .position(|&d| d == c)
                        .ok_or_else(|| syntax(line, col, "unterminated string"))?;
                    push(&mut out, Tok::Str);
                    i += end + 2;
                }
                '.' if i + 3 <= chars.len() && chars[i..i + 3] == ['.', '.', '.'] => {
                    // line continuation
                    break;
                }
                c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                    let start = i;
                    i += 1;
                    while i < chars.len() {
                        let d = chars[i];
                        let exp_sign = (d == '-' || d == '+')
                            && matches!(chars[i - 1], 'e' | 'E');
                        if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    let word: String = chars[start..i].iter().collect();
                    let value = match word.as_str() {
                        "-" | "+" if i < chars.len() && chars[i] == 'I' => {
                            let rest: String = chars[i..].iter().take(3).collect();
                            if rest != "Inf" {
                                return Err(syntax(line, col, format!("bad number '{word}{rest}'")));
                            }
                            i += 3;
                            if word == "-" {
                                f64::NEG_INFINITY
                            } else {
                                f64::INFINITY
                            }
                        }
                        _ => word
                            .parse::<f64>()
                            .map_err(|_| syntax(line, col, format!("bad number '{word}'")))?,
                    };
                    push(&mut out, Tok::Num(value));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len()
                        && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                    {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    let tok = match word.as_str() {
                        "Inf" => Tok::Num(f64::INFINITY),
                        "NaN" => Tok::Num(f64::NAN),
                        _ => Tok::Ident(word),
                    };
                    push(&mut out, tok);
                }
                other => return Err(syntax(line, col, format!("unexpected character '{other}'"))),
            }
        }
        out.push(Token {
            tok: Tok::Newline,
            line,
            col: chars.len() + 1,
        });
    }
    Ok(out)
}

impl RawCase {
    fn parse(text: &str) -> Result<RawCase, CaseError> {
        let toks = lex(text)?;
        let mut case = RawCase::default();
        let mut i = 0;
        while i < toks.len() {
            let t = &toks[i];
            match &t.tok {
                Tok::Newline | Tok::Semi | Tok::Comma => i += 1,
                Tok::Ident(word) if word == "function" => {
                    while i < toks.len() && toks[i].tok != Tok::Newline {
                        i += 1;
                    }
                }
                Tok::Ident(word) if word.starts_with("mpc.") => {
                    let name = word["mpc.".len()..].to_string();
                    let (line, col) = (t.line, t.col);
                    i += 1;
                    match toks.get(i) {
                        Some(Token { tok: Tok::Eq, .. }) => i += 1,
                        Some(other) => return Err(syntax(other.line, other.col, "expected '='")),
                        None => return Err(syntax(line, col, "unexpected end of file")),
                    }
                    match name.as_str() {
                        "bus" | "gen" | "branch" => {
                            let (m, next) = parse_matrix(&toks, i)?;
                            i = next;
                            let slot = match name.as_str() {
                                "bus" => &mut case.bus,
                                "gen" => &mut case.gen,
                                _ => &mut case.branch,
                            };
                            if slot.is_some() {
                                return Err(syntax(line, col, format!("mpc.{name} assigned twice")));
                            }
                            *slot = Some(m);
                        }
                        "baseMVA" => match toks.get(i) {
                            Some(Token {
                                tok: Tok::Num(v), ..
                            }) => {
                                case.base_mva = Some(*v);
                                i += 1;
                            }
                            Some(other) => {
                                return Err(syntax(other.line, other.col, "baseMVA must be a number"))
                            }
                            None => return Err(syntax(line, col, "unexpected end of file")),
                        },
                        _ => {
                            case.warnings.push(format!("ignoring section mpc.{name} (line {line})"));
                            i = skip_value(&toks, i)?;
                        }
                    }
                }
                Tok::Ident(word) => {
                    return Err(syntax(t.line, t.col, format!("unexpected identifier '{word}'")))
                }
                _ => return Err(syntax(t.line, t.col, "unexpected token")),
            }
        }
        Ok(case)
    }

    fn build(self, warnings: &mut Vec<String>) -> Result<Grid, CaseError> {
        let base_mva = self
            .base_mva
            .ok_or_else(|| CaseError::Semantic("missing mpc.baseMVA".into()))?;
        if !(base_mva > 0.0) {
            return Err(CaseError::Semantic(format!("baseMVA must be positive, got {base_mva}")));
        }
        let bus = self.bus.ok_or_else(|| CaseError::Semantic("missing mpc.bus".into()))?;
        let gen = self.gen.ok_or_else(|| CaseError::Semantic("missing mpc.gen".into()))?;
        let branch = self
            .branch
            .ok_or_else(|| CaseError::Semantic("missing mpc.branch".into()))?;
        check_width(&bus, VMIN + 1, "bus")?;
        check_width(&gen, PMAX + 1, "gen")?;
        check_width(&branch, BR_STATUS + 1, "branch")?;

        let as_id = |v: f64, what: &str| -> Result<u32, CaseError> {
            if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(CaseError::Semantic(format!("{what} id {v} is not a positive integer")))
            }
        };

        let mut bus_rows: Vec<(SubId, &Vec<f64>)> = Vec::with_capacity(bus.rows.len());
        for row in &bus.rows {
            bus_rows.push((SubId(as_id(row[BUS_I], "bus")?), row));
        }
        let mut sorted = bus_rows.clone();
        sorted.sort_by_key(|(id, _)| *id);
        for pair in sorted.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(CaseError::Semantic(format!("duplicate bus id {}", pair[0].0 .0)));
            }
        }
        let bus_type: HashMap<SubId, i64> =
            bus_rows.iter().map(|(id, r)| (*id, r[BUS_TYPE] as i64)).collect();

        let mut buses = Vec::with_capacity(sorted.len());
        for (id, row) in &sorted {
            let mut base_kv = row[BASE_KV];
            if !(base_kv > 0.0) {
                warnings.push(format!("bus {} has no base kV, using 1 kV", id.0));
                base_kv = 1.0;
            }
            if bus_type[id] == ISOLATED {
                warnings.push(format!("bus {} is flagged isolated", id.0));
            }
            buses.push(Bus {
                id: *id,
                base_kv,
                gs: row[GS],
                bs: row[BS],
                v_min: row[VMIN],
                v_max: row[VMAX],
            });
        }

        let mut loads = Vec::new();
        for (id, row) in &bus_rows {
            if row[PD] != 0.0 || row[QD] != 0.0 {
                loads.push(Load {
                    id: LoadId(loads.len() as u32),
                    sub: *id,
                    p: row[PD],
                    q: row[QD],
                });
            }
        }

        let mut generators = Vec::with_capacity(gen.rows.len());
        for (k, row) in gen.rows.iter().enumerate() {
            let sub = SubId(as_id(row[GEN_BUS], "generator bus")?);
            if !bus_type.contains_key(&sub) {
                return Err(CaseError::Semantic(format!(
                    "generator {} (line {}) references missing bus {}",
                    k + 1,
                    gen.line,
                    sub.0
                )));
            }
            generators.push(Generator {
                id: GenId(k as u32),
                sub,
                p_set: row[PG],
                v_set: row[VG],
                q_min: row[QMIN],
                q_max: row[QMAX],
                p_max: row[PMAX],
                in_service: row[GEN_STATUS] > 0.0,
                slack: false,
            });
        }
        let ref_bus = bus_rows
            .iter()
            .find(|(id, _)| bus_type[id] == REF)
            .map(|(id, _)| *id)
            .ok_or_else(|| CaseError::Semantic("no reference (type 3) bus".into()))?;
        let slack = generators
            .iter_mut()
            .find(|g| g.sub == ref_bus && g.in_service)
            .ok_or_else(|| {
                CaseError::Semantic(format!("reference bus {} has no in-service generator", ref_bus.0))
            })?;
        slack.slack = true;

        let mut lines = Vec::with_capacity(branch.rows.len());
        for (k, row) in branch.rows.iter().enumerate() {
            let from_sub = SubId(as_id(row[F_BUS], "branch from-bus")?);
            let to_sub = SubId(as_id(row[T_BUS], "branch to-bus")?);
            for end in [from_sub, to_sub] {
                if !bus_type.contains_key(&end) {
                    return Err(CaseError::Semantic(format!(
                        "branch {} references missing bus {}",
                        k + 1,
                        end.0
                    )));
                }
            }
            if from_sub == to_sub {
                return Err(CaseError::Semantic(format!("branch {} is a self-loop", k + 1)));
            }
            if row[BR_X] == 0.0 {
                return Err(CaseError::Semantic(format!("branch {} has zero reactance", k + 1)));
            }
            let ratio = if row[TAP] == 0.0 { 1.0 } else { row[TAP] };
            lines.push(Line {
                id: LineId(k as u32),
                from_sub,
                to_sub,
                r: row[BR_R],
                x: row[BR_X],
                b: row[BR_B],
                ratio,
                shift: row[SHIFT].to_radians(),
                rating: row[RATE_A],
                in_service: row[BR_STATUS] > 0.0,
            });
        }

        Ok(Grid::from_parts(base_mva, buses, lines, generators, loads)?)
    }
}

fn check_width(m: &Matrix, min: usize, name: &str) -> Result<(), CaseError> {
    match m.rows.first() {
        Some(row) if row.len() < min => Err(syntax(
            m.line,
            1,
            format!("mpc.{name} needs at least {min} columns, found {}", row.len()),
        )),
        _ => Ok(()),
    }
}

fn parse_matrix(toks: &[Token], mut i: usize) -> Result<(Matrix, usize), CaseError> {
    let open = toks
        .get(i)
        .ok_or_else(|| syntax(0, 0, "unexpected end of file"))?;
    if open.tok != Tok::Open('[') {
        return Err(syntax(open.line, open.col, "expected '['"));
    }
    i += 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut row: Vec<f64> = Vec::new();
    let mut row_line = open.line;
    let mut width: Option<usize> = None;
    let mut finish_row = |row: &mut Vec<f64>, line: usize, col: usize| -> Result<(), CaseError> {
        if row.is_empty() {
            return Ok(());
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(syntax(
                    line,
                    col,
                    format!("row has {} columns, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(std::mem::take(row));
        Ok(())
    };
    loop {
        let t = toks
            .get(i)
            .ok_or_else(|| syntax(row_line, 1, "unterminated matrix"))?;
        match &t.tok {
            Tok::Num(v) => {
                if row.is_empty() {
                    row_line = t.line;
                }
                row.push(*v);
            }
            Tok::Comma => {}
            Tok::Semi | Tok::Newline => finish_row(&mut row, t.line, t.col)?,
            Tok::Close(']') => {
                finish_row(&mut row, t.line, t.col)?;
                i += 1;
                break;
            }
            _ => return Err(syntax(t.line, t.col, "unexpected token in matrix")),
        }
        i += 1;
    }
    Ok((
        Matrix {
            rows,
            line: open.line,
        },
        i,
    ))
}

/// Skips a scalar, string, matrix or cell value.
fn skip_value(toks: &[Token], mut i: usize) -> Result<usize, CaseError> {
    let mut depth = 0usize;
    while let Some(t) = toks.get(i) {
        match t.tok {
            Tok::Open(_) => depth += 1,
            Tok::Close(_) => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| syntax(t.line, t.col, "unbalanced bracket"))?;
            }
            Tok::Semi | Tok::Newline if depth == 0 => return Ok(i + 1),
            _ => {}
        }
        i += 1;
    }
    if depth > 0 {
        return Err(syntax(toks.last().map_or(0, |t| t.line), 1, "unterminated value"));
    }
    Ok(i)
}
