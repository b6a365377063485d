//! Scalar expression language used by manifold, field and distribution files.
//!
//! Supported: numbers, `pi`, variables `x`, `y`, `z` or `x1`..`xn`, the binary
//! operators `+ - * /`, integer powers `^`, unary minus and the functions
//! `sin`, `cos`, `exp`, `sqrt`.
//!
//! ```
//! use gtf_core::geometry::Expr;
//!
//! let e = Expr::parse("x^2*y - sin(x)").unwrap();
//! let v = e.eval(&[2.0, 3.0]);
//! assert!((v - (12.0 - 2f64.sin())).abs() < 1e-15);
//! let dx = e.derivative(0);
//! assert!((dx.eval(&[2.0, 3.0]) - (12.0 - 2f64.cos())).abs() < 1e-14);
//! ```

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

/// Expression tree. Variables are zero-based coordinate indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Parses a single expression.
    pub fn parse(src: &str) -> Result<Expr> {
        parse_expr_at(src, 1, 1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, k) => a.eval(x).powi(*k),
            Expr::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Pi => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.arity().max(b.arity())
            }
        }
    }

    /// True if the expression is a polynomial in the variables.
    pub fn is_polynomial(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi | Expr::Var(_) => true,
            Expr::Neg(a) => a.is_polynomial(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.is_polynomial() && b.is_polynomial()
            }
            Expr::Div(a, b) => a.is_polynomial() && b.is_constant(),
            Expr::Pow(a, k) => *k >= 0 && a.is_polynomial(),
            Expr::Call(_, a) => a.is_constant(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.arity() == 0
    }

    /// Exact derivative with respect to variable `var`, lightly simplified.
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Num(_) | Pi => Num(0.0),
            Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
            Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Div(a, b) => {
                let num = sub(
                    mul(a.derivative(var), (**b).clone()),
                    mul((**a).clone(), b.derivative(var)),
                );
                div(num, pow((**b).clone(), 2))
            }
            Pow(a, k) => {
                if *k == 0 {
                    return Num(0.0);
                }
                mul(
                    mul(Num(*k as f64), pow((**a).clone(), k - 1)),
                    a.derivative(var),
                )
            }
            Call(f, a) => {
                let inner = a.derivative(var);
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Sqrt => div(Num(0.5), Call(Func::Sqrt, a.clone())),
                };
                mul(outer, inner)
            }
        }
    }
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => Expr::Num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&a, 0.0) => Expr::Num(0.0),
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    match k {
        0 => Expr::Num(1.0),
        1 => a,
        _ => match a {
            Expr::Num(v) => Expr::Num(v.powi(k)),
            other => Expr::Pow(Box::new(other), k),
        },
    }
}

// Precedence: 1 additive, 2 multiplicative, 3 unary minus, 4 power, 5 atom.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v.is_sign_negative() {
        write!(f, "-")?;
    }
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        write!(f, "{a:e}")
    } else {
        write!(f, "{a}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write_num(f, *v),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(i) => match i {
                0 => write!(f, "x"),
                1 => write!(f, "y"),
                2 => write!(f, "z"),
                _ => write!(f, "x{}", i + 1),
            },
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, 3)
            }
            Expr::Add(a, b) => {
                write_child(f, a, 1)?;
                write!(f, " + ")?;
                write_child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                write!(f, " - ")?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                write_child(f, a, 2)?;
                write!(f, "*")?;
                write_child(f, b, 3)
            }
            Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                write!(f, "/")?;
                write_child(f, b, 4)
            }
            Expr::Pow(a, k) => {
                write_child(f, a, 5)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col0: usize,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, line: usize, col0: usize) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line,
            col0,
            _src: src,
        }
    }

    fn column(&self) -> usize {
        self.col0 + self.pos
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::syntax(self.line, self.column(), msg)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    /// Returns the next token and the column where it starts.
    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.column();
        let Some(&c) = self.chars.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            let begin = self.pos;
            while self.pos < self.chars.len()
                && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.')
            {
                self.pos += 1;
            }
            if self.pos < self.chars.len() && matches!(self.chars[self.pos], 'e' | 'E') {
                let save = self.pos;
                self.pos += 1;
                if self.pos < self.chars.len() && matches!(self.chars[self.pos], '+' | '-') {
                    self.pos += 1;
                }
                let digits = self.pos;
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos == digits {
                    self.pos = save;
                }
            }
            let text: String = self.chars[begin..self.pos].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| Error::syntax(self.line, start, format!("invalid number '{text}'")))?;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let begin = self.pos;
            while self.pos < self.chars.len()
                && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
            {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.chars[begin..self.pos].iter().collect()), start));
        }
        if "+-*/^()".contains(c) {
            self.pos += 1;
            return Ok((Tok::Op(c), start));
        }
        Err(self.err(format!("unexpected character '{c}'")))
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    tok_col: usize,
}

/// Parses `src` as one expression; positions in errors are reported relative
/// to `line` and starting column `col0`.
pub(crate) fn parse_expr_at(src: &str, line: usize, col0: usize) -> Result<Expr> {
    let mut lex = Lexer::new(src, line, col0);
    let (tok, tok_col) = lex.next()?;
    let mut p = Parser { lex, tok, tok_col };
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.err_here("unexpected trailing input"));
    }
    Ok(e)
}

impl Parser<'_> {
    fn bump(&mut self) -> Result<()> {
        let (t, c) = self.lex.next()?;
        self.tok = t;
        self.tok_col = c;
        Ok(())
    }

    fn err_here(&self, msg: &str) -> Error {
        let found = match &self.tok {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::End => "end of input".to_string(),
        };
        Error::syntax(self.lex.line, self.tok_col, format!("{msg} (found {found})"))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.bump()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.bump()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.tok {
            Tok::Op('-') => {
                self.bump()?;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.tok != Tok::Op('^') {
            return Ok(base);
        }
        self.bump()?;
        let k = self.int_exponent()?;
        Ok(Expr::Pow(Box::new(base), k))
    }

    fn int_exponent(&mut self) -> Result<i32> {
        let parens = self.tok == Tok::Op('(');
        if parens {
            self.bump()?;
        }
        let negative = self.tok == Tok::Op('-');
        if negative {
            self.bump()?;
        }
        let Tok::Num(v) = self.tok else {
            return Err(self.err_here("expected an integer exponent"));
        };
        if v.fract() != 0.0 || v > i32::MAX as f64 {
            return Err(self.err_here("exponent must be an integer"));
        }
        self.bump()?;
        if parens {
            if self.tok != Tok::Op(')') {
                return Err(self.err_here("expected ')'"));
            }
            self.bump()?;
        }
        Ok(if negative { -(v as i32) } else { v as i32 })
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::Op('(') => {
                self.bump()?;
                let e = self.expr()?;
                if self.tok != Tok::Op(')') {
                    return Err(self.err_here("expected ')'"));
                }
                self.bump()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let col = self.tok_col;
                self.bump()?;
                if let Some(f) = Func::from_name(&name) {
                    if self.tok != Tok::Op('(') {
                        return Err(self.err_here("expected '(' after function name"));
                    }
                    self.bump()?;
                    let arg = self.expr()?;
                    if self.tok != Tok::Op(')') {
                        return Err(self.err_here("expected ')'"));
                    }
                    self.bump()?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                variable(&name)
                    .map(|v| v.unwrap_or(Expr::Pi))
                    .ok_or_else(|| {
                        Error::syntax(self.lex.line, col, format!("unknown identifier '{name}'"))
                    })
            }
            _ => Err(self.err_here("expected a number, variable, function or '('")),
        }
    }
}

/// Maps an identifier to a variable; `Some(None)` means the constant `pi`.
fn variable(name: &str) -> Option<Option<Expr>> {
    match name {
        "x" => Some(Some(Expr::Var(0))),
        "y" => Some(Some(Expr::Var(1))),
        "z" => Some(Some(Expr::Var(2))),
        "pi" => Some(None),
        _ => {
            let idx: usize = name.strip_prefix('x')?.parse().ok()?;
            (idx >= 1).then(|| Some(Expr::Var(idx - 1)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precedence_and_unary_minus() {
        let e = Expr::parse("-x^2 + 3*y/2").unwrap();
        assert_eq!(e.eval(&[2.0, 4.0]), -4.0 + 6.0);
        let e = Expr::parse("2^-1").unwrap();
        assert_eq!(e.eval(&[]), 0.5);
        let e = Expr::parse("x1*x3 - x2").unwrap();
        assert_eq!(e.eval(&[2.0, 1.0, 5.0]), 9.0);
        assert_eq!(e.arity(), 3);
    }

    #[test]
    fn reports_position_of_errors() {
        match Expr::parse("x + * y") {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 5)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Expr::parse("sin x").is_err());
        assert!(Expr::parse("x^1.5").is_err());
        assert!(Expr::parse("w").is_err());
        assert!(Expr::parse("(x").is_err());
    }

    #[test]
    fn derivative_matches_central_difference() {
        let e = Expr::parse("sqrt(1 + x^2)*exp(-y) + cos(x*y)/(2 + sin(y))").unwrap();
        let p = [0.3, -0.7];
        for var in 0..2 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[var] += h;
            b[var] -= h;
            let fd = (e.eval(&a) - e.eval(&b)) / (2.0 * h);
            assert!((e.derivative(var).eval(&p) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn polynomial_detection() {
        assert!(Expr::parse("x^2*y - 3*x/2 + 1").unwrap().is_polynomial());
        assert!(!Expr::parse("1/y").unwrap().is_polynomial());
        assert!(!Expr::parse("sin(x)").unwrap().is_polynomial());
        assert!(Expr::parse("sin(pi)*x").unwrap().is_polynomial());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|v| Expr::Num(v as f64 / 8.0)),
            (0usize..4).prop_map(Expr::Var),
            Just(Expr::Pi),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
                (inner.clone(), -3i32..5).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
                (inner, 0usize..4).prop_map(|(a, f)| {
                    let f = [Func::Sin, Func::Cos, Func::Exp, Func::Sqrt][f];
                    Expr::Call(f, Box::new(a))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = Expr::parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }
    }
}
