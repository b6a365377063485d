//! Manifold-definition files.
//!
//! ```text
//! # upper half-plane
//! dim 2
//! domain -5 5 0.05 10
//! metric [[1/y^2, 0], [0, 1/y^2]]
//! christoffel 1 1 2 -1/y     # Γ^1_12, one-based; unlisted entries are 0
//! ```
//!
//! Statements are separated by newlines or `;`. A `metric` may span several
//! lines until its brackets balance. If both a metric and Christoffel
//! entries are given, the entries are used and must agree with the
//! metric-derived symbols at the domain's sample points.

use super::{christoffel_from_metric, parse_expr_at, BoxDomain, ChartManifold, Expr, Metric};
use crate::error::{Error, Result};

struct Stmt {
    line: usize,
    col: usize,
    text: String,
}

/// Splits the document into statements, keeping line/column of each start.
fn statements(text: &str) -> Result<Vec<Stmt>> {
    let mut out = Vec::new();
    let mut current: Option<Stmt> = None;
    let mut depth: i32 = 0;
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut seg_start = 0;
        let chars: Vec<char> = content.chars().collect();
        for (ci, &c) in chars.iter().enumerate() {
            match c {
                '[' => depth += 1,
                ']' => depth -= 1,
                ';' if depth == 0 => {
                    push_segment(&mut current, &chars[seg_start..ci], line, seg_start + 1);
                    if let Some(s) = current.take() {
                        out.push(s);
                    }
                    seg_start = ci + 1;
                }
                _ => {}
            }
            if depth < 0 {
                return Err(Error::syntax(line, ci + 1, "unbalanced ']'"));
            }
        }
        push_segment(&mut current, &chars[seg_start..], line, seg_start + 1);
        if depth == 0 {
            if let Some(s) = current.take() {
                out.push(s);
            }
        }
    }
    if let Some(s) = current {
        return Err(Error::syntax(s.line, s.col, "unclosed '[' in statement"));
    }
    Ok(out)
}

fn push_segment(
    current: &mut Option<Stmt>,
    seg: &[char],
    line: usize,
    col: usize,
) {
    let s: String = seg.iter().collect();
    match current {
        Some(stmt) => {
            stmt.text.push(' ');
            stmt.text.push_str(&s);
        }
        None => {
            let lead = s.len() - s.trim_start().len();
            if !s.trim().is_empty() {
                *current = Some(Stmt {
                    line,
                    col: col + lead,
                    text: s.trim_start().to_string(),
                });
            }
        }
    }
}

/// Whitespace-separated words of a statement with their columns.
fn words(stmt: &Stmt) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in stmt.text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &stmt.text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &stmt.text[s..]));
    }
    out.into_iter()
        .map(|(s, w)| (stmt.col + stmt.text[..s].chars().count(), w))
        .collect()
}

fn parse_usize(stmt: &Stmt, col: usize, w: &str, what: &str) -> Result<usize> {
    w.parse()
        .map_err(|_| Error::syntax(stmt.line, col, format!("expected {what}, found '{w}'")))
}

fn parse_constant(stmt: &Stmt, col: usize, w: &str) -> Result<f64> {
    let e = parse_expr_at(w, stmt.line, col)?;
    if !e.is_constant() {
        return Err(Error::syntax(stmt.line, col, "expected a constant"));
    }
    Ok(e.eval(&[]))
}

/// Parses `[[e11, e12], [e21, e22]]` starting at byte offset `start` of the
/// statement text.
fn parse_matrix(stmt: &Stmt, start: usize) -> Result<Vec<Vec<(Expr, usize)>>> {
    let text = &stmt.text[start..];
    let chars: Vec<char> = text.chars().collect();
    let base_col = stmt.col + stmt.text[..start].chars().count();
    let err = |i: usize, m: &str| Error::syntax(stmt.line, base_col + i, m.to_string());
    let mut i = 0;
    let skip = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    skip(&mut i);
    if chars.get(i) != Some(&'[') {
        return Err(err(i, "expected '[' to open the matrix"));
    }
    i += 1;
    let mut rows = Vec::new();
    loop {
        skip(&mut i);
        match chars.get(i) {
            Some('[') => i += 1,
            Some(']') if !rows.is_empty() => {
                i += 1;
                break;
            }
            _ => return Err(err(i, "expected '[' to open a matrix row")),
        }
        let mut row = Vec::new();
        loop {
            let begin = i;
            let mut depth = 0;
            while i < chars.len() {
                match chars[i] {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    ',' | ']' if depth == 0 => break,
                    '[' => return Err(err(i, "unexpected '['")),
                    _ => {}
                }
                i += 1;
            }
            if i >= chars.len() {
                return Err(err(i, "unclosed '[' in matrix"));
            }
            let src: String = chars[begin..i].iter().collect();
            if src.trim().is_empty() {
                return Err(err(begin, "empty matrix entry"));
            }
            row.push((parse_expr_at(&src, stmt.line, base_col + begin)?, base_col + begin));
            let sep = chars[i];
            i += 1;
            if sep == ']' {
                break;
            }
        }
        rows.push(row);
        skip(&mut i);
        match chars.get(i) {
            Some(',') => i += 1,
            Some(']') => {
                i += 1;
                break;
            }
            _ => return Err(err(i, "expected ',' or ']' after a matrix row")),
        }
    }
    skip(&mut i);
    if i < chars.len() {
        return Err(err(i, "unexpected text after the matrix"));
    }
    Ok(rows)
}

fn check_arity(stmt: &Stmt, col: usize, e: &Expr, n: usize) -> Result<()> {
    if e.arity() > n {
        return Err(Error::syntax(
            stmt.line,
            col,
            format!("expression uses coordinate {} but dim is {n}", e.arity()),
        ));
    }
    Ok(())
}

/// Parses a manifold-definition document.
///
/// ```
/// use gtf_core::geometry::parse_manifold;
///
/// let m = parse_manifold("dim 2; domain -1 1 0.1 3; metric [[1/(y*y), 0], [0, 1/(y*y)]]").unwrap();
/// let g = m.christoffel(&[0.0, 1.0]).unwrap();
/// assert!((g.get(1, 1, 1) + 1.0).abs() < 1e-8);
/// assert!(parse_manifold("dim 2; metric [[1,0],[0,1]").is_err());
/// ```
pub fn parse_manifold(text: &str) -> Result<ChartManifold> {
    let mut dim: Option<usize> = None;
    let mut domain: Option<BoxDomain> = None;
    let mut metric: Option<(Vec<Expr>, usize, usize)> = None;
    let mut entries: Vec<((usize, usize, usize), Expr)> = Vec::new();
    let need_dim = |dim: Option<usize>, stmt: &Stmt| {
        dim.ok_or_else(|| Error::syntax(stmt.line, stmt.col, "'dim' must come first"))
    };
    for stmt in statements(text)? {
        let ws = words(&stmt);
        let (kcol, keyword) = ws[0];
        match keyword {
            "dim" => {
                if ws.len() != 2 {
                    return Err(Error::syntax(stmt.line, kcol, "usage: dim <n>"));
                }
                let n = parse_usize(&stmt, ws[1].0, ws[1].1, "a dimension")?;
                if n == 0 {
                    return Err(Error::syntax(stmt.line, ws[1].0, "dimension must be positive"));
                }
                dim = Some(n);
            }
            "domain" => {
                let n = need_dim(dim, &stmt)?;
                if ws.len() - 1 != 2 * n {
                    return Err(Error::DimensionMismatch {
                        expected: 2 * n,
                        found: ws.len() - 1,
                    });
                }
                let vals = ws[1..]
                    .iter()
                    .map(|(c, w)| parse_constant(&stmt, *c, w))
                    .collect::<Result<Vec<_>>>()?;
                let lo = vals.iter().step_by(2).copied().collect();
                let hi = vals.iter().skip(1).step_by(2).copied().collect();
                domain = Some(BoxDomain::new(lo, hi).map_err(|e| match e {
                    Error::InvalidArgument(m) => Error::syntax(stmt.line, kcol, m),
                    other => other,
                })?);
            }
            "metric" => {
                let n = need_dim(dim, &stmt)?;
                let rows = parse_matrix(&stmt, keyword.len())?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: if rows.len() != n {
                            rows.len()
                        } else {
                            rows.iter().find(|r| r.len() != n).map(|r| r.len()).unwrap_or(n)
                        },
                    });
                }
                let mut flat = Vec::with_capacity(n * n);
                for row in rows {
                    for (e, col) in row {
                        check_arity(&stmt, col, &e, n)?;
                        flat.push(e);
                    }
                }
                metric = Some((flat, stmt.line, stmt.col));
            }
            "christoffel" => {
                let n = need_dim(dim, &stmt)?;
                if ws.len() < 5 {
                    return Err(Error::syntax(stmt.line, kcol, "usage: christoffel k i j <expr>"));
                }
                let mut idx = [0usize; 3];
                for (slot, (c, w)) in ws[1..4].iter().enumerate() {
                    let v = parse_usize(&stmt, *c, w, "an index")?;
                    if v == 0 || v > n {
                        return Err(Error::syntax(stmt.line, *c, format!("index {v} outside 1..={n}")));
                    }
                    idx[slot] = v - 1;
                }
                let (ecol, _) = ws[4];
                let offset = stmt.text.char_indices().nth(ecol - stmt.col).map(|(b, _)| b).unwrap_or(0);
                let e = parse_expr_at(&stmt.text[offset..], stmt.line, ecol)?;
                check_arity(&stmt, ecol, &e, n)?;
                entries.push(((idx[0], idx[1], idx[2]), e));
            }
            other => {
                return Err(Error::syntax(stmt.line, kcol, format!("unknown statement '{other}'")));
            }
        }
    }
    let n = dim.ok_or_else(|| Error::syntax(1, 1, "missing 'dim' statement"))?;
    let domain = domain.unwrap_or_else(|| BoxDomain::unbounded(n));
    let metric = match metric {
        Some((m, line, col)) => {
            for i in 0..n {
                for j in 0..i {
                    if m[i * n + j] != m[j * n + i] {
                        let sym = domain.sample_points().iter().all(|p| {
                            let (a, b) = (m[i * n + j].eval(p), m[j * n + i].eval(p));
                            (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
                        });
                        if !sym {
                            return Err(Error::NonSymmetricMetric { i: i + 1, j: j + 1 });
                        }
                    }
                }
            }
            Some((Metric::Exprs(m), line, col))
        }
        None => None,
    };
    let manifold = match (metric, entries.is_empty()) {
        (Some((m, _, _)), true) => ChartManifold::from_metric(domain, m),
        (Some((m, line, col)), false) => {
            let mf = ChartManifold::from_christoffel_entries(domain.clone(), entries, Some(m.clone()))?;
            for p in domain.sample_points() {
                let want = christoffel_from_metric(|y| m.eval(n, y), &p)?;
                let got = mf.christoffel(&p)?;
                for (a, b) in got.components().iter().zip(want.components()) {
                    if (a - b).abs() > 1e-6 * (1.0 + b.abs()) {
                        return Err(Error::syntax(
                            line,
                            col,
                            format!("christoffel entries disagree with the metric at {p:?}"),
                        ));
                    }
                }
            }
            mf
        }
        (None, true) => ChartManifold::from_christoffel_entries(domain, vec![], None)?,
        (None, false) => ChartManifold::from_christoffel_entries(domain, entries, None)?,
    };
    manifold.validate_metric()?;
    Ok(manifold)
}
