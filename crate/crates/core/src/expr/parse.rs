//! Recursive-descent parser for the expression DSL.

use super::Expression;

/// How identifiers map to coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarNames {
    /// `x1, x2, ...` plus the aliases `x, y, z` for the first three coordinates.
    Default,
    /// An explicit list; index `i` is named `names[i]`.
    Custom(Vec<String>),
}

impl VarNames {
    pub fn custom<S: AsRef<str>>(names: &[S]) -> Self {
        VarNames::Custom(names.iter().map(|s| s.as_ref().to_string()).collect())
    }

    pub(crate) fn name(&self, index: usize) -> String {
        match self {
            VarNames::Default => format!("x{}", index + 1),
            VarNames::Custom(names) => names.get(index).cloned().unwrap_or_else(|| format!("x{}", index + 1)),
        }
    }

    fn lookup(&self, ident: &str) -> Option<usize> {
        match self {
            VarNames::Default => match ident {
                "x" => Some(0),
                "y" => Some(1),
                "z" => Some(2),
                _ => {
                    let digits = ident.strip_prefix('x')?;
                    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
                        return None;
                    }
                    let k: usize = digits.parse().ok()?;
                    Some(k - 1)
                }
            },
            VarNames::Custom(names) => names.iter().position(|n| n == ident),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownIdentifier(String),
    NonIntegerExponent,
}

/// A parse failure at byte `offset` of the source.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} at offset {offset}", describe(.kind))]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Syntax(msg) => format!("syntax error: {msg}"),
        ParseErrorKind::UnknownIdentifier(name) => format!("unknown identifier `{name}`"),
        ParseErrorKind::NonIntegerExponent => "exponent must be an integer constant".to_string(),
    }
}

pub(crate) fn parse(source: &str, names: &VarNames) -> Result<Expression, ParseError> {
    let mut p = Parser { src: source.as_bytes(), pos: 0, names };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    names: &'a VarNames,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{}`", c as char)))
        }
    }

    fn syntax(&self, msg: String) -> ParseError {
        ParseError { offset: self.pos, kind: ParseErrorKind::Syntax(msg) }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = lhs + self.term()?;
            } else if self.eat(b'-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = lhs * self.unary()?;
            } else if self.eat(b'/') {
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if self.eat(b'-') {
            return Ok(-self.unary()?);
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression, ParseError> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let exponent = self.exponent()?;
        if self.peek() == Some(b'^') {
            return Err(self.syntax("chained `^` needs parentheses".to_string()));
        }
        Ok(base.powi(exponent))
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let start = {
            self.skip_ws();
            self.pos
        };
        let parenthesised = self.eat(b'(');
        let negative = if self.eat(b'-') {
            true
        } else {
            self.eat(b'+');
            false
        };
        self.skip_ws();
        let non_integer = ParseError { offset: start, kind: ParseErrorKind::NonIntegerExponent };
        if !matches!(self.src.get(self.pos), Some(b) if b.is_ascii_digit() || *b == b'.') {
            return Err(non_integer);
        }
        let value = self.number()?;
        if parenthesised {
            if self.peek() != Some(b')') {
                return Err(non_integer);
            }
            self.pos += 1;
        }
        if value.fract() != 0.0 || value.abs() > f64::from(i32::MAX) {
            return Err(non_integer);
        }
        let k = value as i32;
        Ok(if negative { -k } else { k })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let digits = |s: &mut Self| {
            let from = s.pos;
            while s.pos < s.src.len() && s.src[s.pos].is_ascii_digit() {
                s.pos += 1;
            }
            s.pos - from
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number".to_string()));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = mark;
                return Err(self.syntax("malformed exponent in number".to_string()));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map_err(|_| ParseError { offset: start, kind: ParseErrorKind::Syntax("malformed number".to_string()) })
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input".to_string())),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => Ok(Expression::constant(self.number()?)),
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.identifier(),
            Some(b) => Err(self.syntax(format!("unexpected `{}`", b as char))),
        }
    }

    fn identifier(&mut self) -> Result<Expression, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let ident = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii").to_string();
        if let Some(index) = self.names.lookup(&ident) {
            return Ok(Expression::var(index));
        }
        let unary: Option<fn(&Expression) -> Expression> = match ident.as_str() {
            "exp" => Some(Expression::exp),
            "sin" => Some(Expression::sin),
            "cos" => Some(Expression::cos),
            "bump" | "h" => Some(Expression::bump),
            _ => None,
        };
        if let Some(f) = unary {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(f(&arg));
        }
        match ident.as_str() {
            "flat" => {
                self.expect(b'(')?;
                let u = self.expr()?;
                self.expect(b',')?;
                let body = self.expr()?;
                self.expect(b')')?;
                Ok(u.flat(body))
            }
            "pi" => Ok(Expression::constant(std::f64::consts::PI)),
            _ => Err(ParseError { offset: start, kind: ParseErrorKind::UnknownIdentifier(ident) }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, pt: &[f64]) -> f64 {
        Expression::parse(src).unwrap().eval(pt).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 - 2 - 3", &[]), -4.0);
        assert_eq!(eval("8 / 4 / 2", &[]), 1.0);
        assert_eq!(eval("2 + 3*4", &[]), 14.0);
        assert_eq!(eval("-x^2", &[3.0]), -9.0);
        assert_eq!(eval("(-x)^2", &[3.0]), 9.0);
        assert_eq!(eval("x^(-1)", &[4.0]), 0.25);
        assert_eq!(eval("x^-2", &[2.0]), 0.25);
        assert_eq!(eval("2*-x", &[2.0]), -4.0);
    }

    #[test]
    fn numbers() {
        assert_eq!(eval("1e-3", &[]), 1e-3);
        assert_eq!(eval(".5 + 2.", &[]), 2.5);
        assert_eq!(eval("1.5E+2", &[]), 150.0);
        assert!((eval("pi", &[]) - std::f64::consts::PI).abs() < 1e-16);
    }

    #[test]
    fn variables() {
        assert_eq!(eval("x1 + 10*x2 + 100*x3", &[1.0, 2.0, 3.0]), 321.0);
        assert_eq!(eval("x + 10*y + 100*z", &[1.0, 2.0, 3.0]), 321.0);
        let t = Expression::parse_with("sin(t)", &VarNames::custom(&["t"])).unwrap();
        assert_eq!(t.eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn syntax_error_offset() {
        let e = Expression::parse("x +* y").unwrap_err();
        assert_eq!(e.offset, 3);
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn error_kinds() {
        let e = Expression::parse("foo(x)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("foo".into()));
        assert_eq!(e.offset, 0);
        assert_eq!(Expression::parse("x^1.5").unwrap_err().kind, ParseErrorKind::NonIntegerExponent);
        assert_eq!(Expression::parse("x^y").unwrap_err().kind, ParseErrorKind::NonIntegerExponent);
        assert!(Expression::parse("x^2^3").is_err());
        assert!(Expression::parse("x0").is_err());
        assert!(Expression::parse("(x").is_err());
        assert!(Expression::parse("").is_err());
        assert!(Expression::parse("x y").is_err());
        assert!(Expression::parse("1e").is_err());
    }
}
