//! Polynomial-style cost expressions.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = ("+" | "-") unary | power ;
//! power   = primary [ "^" unary ] ;          (* right-associative *)
//! primary = number | variable | "(" expr ")" ;
//! variable = "theta" digit { digit } ;       (* theta1 .. thetaN *)
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ]
//!         | "." digit { digit } ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-theta1^2` is `-(theta1^2)`.
//! Positions in errors are 1-based character offsets; running off the end of
//! the input reports `len + 1`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("`{name}` at position {position} is outside theta1..theta{dimension}")]
    WrongArity { name: String, position: usize, dimension: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// zero-based variable index
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => theta[*i],
            Expr::Neg(e) => -e.eval(theta),
            Expr::Bin(op, l, r) => {
                let a = l.eval(theta);
                match op {
                    BinOp::Add => a + r.eval(theta),
                    BinOp::Sub => a - r.eval(theta),
                    BinOp::Mul => a * r.eval(theta),
                    BinOp::Div => a / r.eval(theta),
                    BinOp::Pow => pow(a, r.eval(theta)),
                }
            }
        }
    }
}

fn pow(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "({v})"),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "theta{}", i + 1),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l} {sym} {r})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
}

impl Lexer {
    /// Returns the token and its 1-based start position.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
        let start = self.pos + 1;
        let Some(&c) = self.chars.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number(start).map(|v| (Tok::Num(v), start));
        }
        if c.is_alphabetic() || c == '_' {
            let begin = self.pos;
            while self.pos < self.chars.len()
                && (self.chars[self.pos].is_alphanumeric() || self.chars[self.pos] == '_')
            {
                self.pos += 1;
            }
            let name: String = self.chars[begin..self.pos].iter().collect();
            return Ok((Tok::Ident(name), start));
        }
        self.pos += 1;
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            other => {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<f64, ParseError> {
        let begin = self.pos;
        let digits = |lx: &mut Lexer| {
            let from = lx.pos;
            while lx.pos < lx.chars.len() && lx.chars[lx.pos].is_ascii_digit() {
                lx.pos += 1;
            }
            lx.pos - from
        };
        let mut mantissa = digits(self);
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            mantissa += digits(self);
        }
        if mantissa == 0 {
            return Err(ParseError::Syntax { position: start, message: "malformed number".into() });
        }
        if matches!(self.chars.get(self.pos), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.chars.get(self.pos), Some('+' | '-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // not an exponent after all; leave `e...` for the identifier lexer
                self.pos = save;
            }
        }
        let text: String = self.chars[begin..self.pos].iter().collect();
        text.parse::<f64>()
            .map_err(|_| ParseError::Syntax { position: start, message: format!("malformed number `{text}`") })
    }
}

struct Parser {
    lexer: Lexer,
    tok: Tok,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn advance(&mut self) -> Result<(), ParseError> {
        let (tok, pos) = self.lexer.next()?;
        self.tok = tok;
        self.pos = pos;
        Ok(())
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match &self.tok {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
        };
        ParseError::Syntax { position: self.pos, message: format!("expected {wanted}, found {found}") }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = self.tok {
            self.advance()?;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = self.tok {
            self.advance()?;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.tok {
            Tok::Op('-') => {
                self.advance()?;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.advance()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.tok == Tok::Op('^') {
            self.advance()?;
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match std::mem::replace(&mut self.tok, Tok::End) {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                let position = self.pos;
                let index = variable_index(&name)
                    .ok_or_else(|| ParseError::UnknownIdentifier { name: name.clone(), position })?;
                if index == 0 || index > self.dim {
                    return Err(ParseError::WrongArity { name, position, dimension: self.dim });
                }
                self.advance()?;
                Ok(Expr::Var(index - 1))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.advance()?;
                Ok(inner)
            }
            other => {
                self.tok = other;
                Err(self.unexpected("a number, variable or `(`"))
            }
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("theta")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses `text` into an expression over `theta1..theta{dim}`.
pub fn parse_expr(text: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut parser = Parser {
        lexer: Lexer { chars: text.chars().collect(), pos: 0 },
        tok: Tok::End,
        pos: 1,
        dim,
    };
    parser.advance()?;
    let expr = parser.expr()?;
    if parser.tok != Tok::End {
        return Err(parser.unexpected("an operator or end of input"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(text: &str, theta: &[f64]) -> f64 {
        parse_expr(text, theta.len()).unwrap().eval(theta)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 + 2 * 3", &[0.0]), 7.0);
        assert_eq!(eval("2 ^ 3 ^ 2", &[0.0]), 512.0);
        assert_eq!(eval("-theta1^2", &[3.0]), -9.0);
        assert_eq!(eval("(-theta1)^2", &[3.0]), 9.0);
        assert_eq!(eval("8 / 4 / 2", &[0.0]), 1.0);
        assert_eq!(eval("10 - 4 - 3", &[0.0]), 3.0);
        assert_eq!(eval("2^-1", &[0.0]), 0.5);
        assert_eq!(eval("theta2 - theta1", &[1.0, 5.0]), 4.0);
        assert_eq!(eval("1.5e2 + .5", &[0.0]), 150.5);
    }

    #[test]
    fn quartic_and_quadratic_forms() {
        assert!((eval("theta1^4 / 24", &[2.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval("3 + 0.5*theta1^2", &[1.0]), 3.5);
    }

    #[test]
    fn unbalanced_parenthesis_reports_end_position() {
        let err = parse_expr("theta1 + (", 1).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { position: 11, .. }), "{err:?}");
        let err = parse_expr("(theta1 + 1", 1).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { position: 12, .. }), "{err:?}");
    }

    #[test]
    fn syntax_errors_point_at_offending_token() {
        assert!(matches!(parse_expr("1 + * 2", 1), Err(ParseError::Syntax { position: 5, .. })));
        assert!(matches!(parse_expr("theta1 2", 1), Err(ParseError::Syntax { position: 8, .. })));
        assert!(matches!(parse_expr("1 # 2", 1), Err(ParseError::Syntax { position: 3, .. })));
        assert!(matches!(parse_expr("", 1), Err(ParseError::Syntax { position: 1, .. })));
        assert!(matches!(parse_expr(")", 1), Err(ParseError::Syntax { position: 1, .. })));
    }

    #[test]
    fn identifier_errors() {
        assert_eq!(
            parse_expr("x + 1", 1),
            Err(ParseError::UnknownIdentifier { name: "x".into(), position: 1 })
        );
        assert_eq!(
            parse_expr("theta1 + theta3", 2),
            Err(ParseError::WrongArity { name: "theta3".into(), position: 10, dimension: 2 })
        );
        assert!(matches!(parse_expr("theta0", 2), Err(ParseError::WrongArity { .. })));
        assert!(matches!(parse_expr("thetax", 2), Err(ParseError::UnknownIdentifier { .. })));
    }

    #[test]
    fn display_reparses_to_same_value() {
        let e = parse_expr("-(theta1 - 0.25)^2 * 3 / (1 + theta2^2) - 2^-3", 2).unwrap();
        let again = parse_expr(&e.to_string(), 2).unwrap();
        for p in [[0.3, -1.2], [2.0, 0.0], [-4.5, 7.25]] {
            assert_eq!(e.eval(&p), again.eval(&p));
        }
    }
}
