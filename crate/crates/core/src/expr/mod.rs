//! Scalar expressions over the coordinates `x1..xn`.
//!
//! Expressions are immutable trees with shared subterms (`Arc`), closed under
//! symbolic differentiation. Construction goes through folding constructors
//! that collapse constant subterms and the trivial identities `0 + e`,
//! `1 * e`, `0 * e`, so repeated derivatives of polynomial coefficients stay
//! small. No further simplification is attempted.
//!
//! The `bump` primitive is `exp(-1/(1-u^2))` on `|u| < 1` and exactly `0.0`
//! elsewhere. Its derivatives are expressed with the `flat(u, body)` node,
//! which evaluates `body` on `|u| < 1` and `0.0` elsewhere; the body of such a
//! node must itself be flat at `|u| = 1` for the derivative rule to hold.

mod parse;
mod program;

use std::fmt;
use std::ops;
use std::sync::Arc;

pub use parse::{ParseError, ParseErrorKind, VarNames};
pub use program::Program;

/// Errors raised while evaluating an expression.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("expression uses x{needed} but the point has dimension {got}")]
    Dimension { needed: usize, got: usize },
    #[error("non-finite result")]
    NonFinite,
}

#[derive(Debug)]
pub(crate) enum Node {
    Const(f64),
    Var(usize),
    Add(Expression, Expression),
    Sub(Expression, Expression),
    Mul(Expression, Expression),
    Div(Expression, Expression),
    Pow(Expression, i32),
    Neg(Expression),
    Exp(Expression),
    Sin(Expression),
    Cos(Expression),
    Bump(Expression),
    Flat(Expression, Expression),
}

/// A symbolic scalar function of the coordinates.
#[derive(Clone)]
pub struct Expression(Arc<Node>);

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({self})")
    }
}

/// `exp(-1/(1-u^2))` on the open interval, the unguarded bump body.
fn bump_body(u: &Expression) -> Expression {
    let one = Expression::constant(1.0);
    (-(one.clone() / (one - u.powi(2)))).exp()
}

impl Expression {
    fn new(node: Node) -> Self {
        Expression(Arc::new(node))
    }

    pub(crate) fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Node::Const(value))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// The coordinate function with zero-based index `index` (printed `x{index+1}`).
    pub fn var(index: usize) -> Self {
        Self::new(Node::Var(index))
    }

    /// Parse with the default variable names `x1, x2, ...` and the aliases `x, y, z`.
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        parse::parse(source, &VarNames::Default)
    }

    /// Parse with an explicit list of variable names, e.g. `["t"]`.
    pub fn parse_with(source: &str, names: &VarNames) -> Result<Self, ParseError> {
        parse::parse(source, names)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// One more than the largest variable index used, i.e. the minimal point dimension.
    pub fn arity(&self) -> usize {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Flat(a, b) => {
                a.arity().max(b.arity())
            }
            Node::Pow(a, _) | Node::Neg(a) | Node::Exp(a) | Node::Sin(a) | Node::Cos(a) | Node::Bump(a) => a.arity(),
        }
    }

    /// Number of nodes in the tree, counting shared subterms once per use.
    pub fn tree_size(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Flat(a, b) => {
                1 + a.tree_size() + b.tree_size()
            }
            Node::Pow(a, _) | Node::Neg(a) | Node::Exp(a) | Node::Sin(a) | Node::Cos(a) | Node::Bump(a) => {
                1 + a.tree_size()
            }
        }
    }

    pub fn powi(&self, exponent: i32) -> Self {
        match exponent {
            0 => return Self::one(),
            1 => return self.clone(),
            _ => {}
        }
        if let Some(c) = self.as_constant() {
            let v = c.powi(exponent);
            if v.is_finite() {
                return Self::constant(v);
            }
        }
        Self::new(Node::Pow(self.clone(), exponent))
    }

    pub fn exp(&self) -> Self {
        match self.as_constant() {
            Some(c) => Self::constant(c.exp()),
            None => Self::new(Node::Exp(self.clone())),
        }
    }

    pub fn sin(&self) -> Self {
        match self.as_constant() {
            Some(c) => Self::constant(c.sin()),
            None => Self::new(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Self {
        match self.as_constant() {
            Some(c) => Self::constant(c.cos()),
            None => Self::new(Node::Cos(self.clone())),
        }
    }

    pub fn bump(&self) -> Self {
        match self.as_constant() {
            Some(c) => Self::constant(bump_value(c)),
            None => Self::new(Node::Bump(self.clone())),
        }
    }

    /// `body` restricted to `|self| < 1`, extended by zero.
    ///
    /// The derivative rule treats the restriction as smooth, so `body` must
    /// vanish to all orders at `|self| = 1`.
    pub fn flat(&self, body: Expression) -> Self {
        if body.is_zero() {
            return body;
        }
        match self.as_constant() {
            Some(c) if c.abs() < 1.0 => body,
            Some(_) => Self::zero(),
            None => Self::new(Node::Flat(self.clone(), body)),
        }
    }

    /// Exact partial derivative with respect to the zero-based coordinate `index`.
    pub fn diff(&self, index: usize) -> Expression {
        match self.node() {
            Node::Const(_) => Self::zero(),
            Node::Var(i) => Self::constant(if *i == index { 1.0 } else { 0.0 }),
            Node::Add(a, b) => a.diff(index) + b.diff(index),
            Node::Sub(a, b) => a.diff(index) - b.diff(index),
            Node::Mul(a, b) => a.diff(index) * b + a * b.diff(index),
            Node::Div(a, b) => {
                let da = a.diff(index);
                let db = b.diff(index);
                if db.is_zero() {
                    da / b
                } else {
                    (da * b - a * db) / b.powi(2)
                }
            }
            Node::Pow(a, k) => Self::constant(f64::from(*k)) * a.powi(k - 1) * a.diff(index),
            Node::Neg(a) => -a.diff(index),
            Node::Exp(a) => self * a.diff(index),
            Node::Sin(a) => a.cos() * a.diff(index),
            Node::Cos(a) => -(a.sin() * a.diff(index)),
            Node::Bump(u) => {
                let du = u.diff(index);
                if du.is_zero() {
                    return Self::zero();
                }
                // bump'(u) = bump(u) * (-2u) / (1-u^2)^2 on the open interval
                let one = Self::one();
                let slope = bump_body(u) * (Self::constant(-2.0) * u) / (one - u.powi(2)).powi(2);
                u.flat(slope) * du
            }
            Node::Flat(u, body) => u.flat(body.diff(index)),
        }
    }

    /// Replace every coordinate `x_i` by `values[i]`.
    ///
    /// Panics if the expression uses a coordinate outside `values`.
    pub fn substitute(&self, values: &[Expression]) -> Expression {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => values[*i].clone(),
            Node::Add(a, b) => a.substitute(values) + b.substitute(values),
            Node::Sub(a, b) => a.substitute(values) - b.substitute(values),
            Node::Mul(a, b) => a.substitute(values) * b.substitute(values),
            Node::Div(a, b) => a.substitute(values) / b.substitute(values),
            Node::Pow(a, k) => a.substitute(values).powi(*k),
            Node::Neg(a) => -a.substitute(values),
            Node::Exp(a) => a.substitute(values).exp(),
            Node::Sin(a) => a.substitute(values).sin(),
            Node::Cos(a) => a.substitute(values).cos(),
            Node::Bump(a) => a.substitute(values).bump(),
            Node::Flat(u, b) => u.substitute(values).flat(b.substitute(values)),
        }
    }

    /// Evaluate at `point`. Division by an exact zero is an error; `bump`
    /// and `flat` are exactly zero outside `(-1, 1)`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(i) => *point.get(*i).ok_or(EvalError::Dimension { needed: i + 1, got: point.len() })?,
            Node::Add(a, b) => a.eval(point)? + b.eval(point)?,
            Node::Sub(a, b) => a.eval(point)? - b.eval(point)?,
            Node::Mul(a, b) => a.eval(point)? * b.eval(point)?,
            Node::Div(a, b) => {
                let den = b.eval(point)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(point)? / den
            }
            Node::Pow(a, k) => {
                let base = a.eval(point)?;
                if base == 0.0 && *k < 0 {
                    return Err(EvalError::DivisionByZero);
                }
                base.powi(*k)
            }
            Node::Neg(a) => -a.eval(point)?,
            Node::Exp(a) => a.eval(point)?.exp(),
            Node::Sin(a) => a.eval(point)?.sin(),
            Node::Cos(a) => a.eval(point)?.cos(),
            Node::Bump(a) => bump_value(a.eval(point)?),
            Node::Flat(u, body) => {
                if u.eval(point)?.abs() < 1.0 {
                    body.eval(point)?
                } else {
                    0.0
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Print with custom variable names.
    pub fn display_with<'a>(&'a self, names: &'a VarNames) -> impl fmt::Display + 'a {
        Printer { expr: self, names }
    }
}

/// The smooth bump `exp(-1/(1-u^2))` on `(-1, 1)`, exactly `0.0` elsewhere.
pub fn bump_value(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

fn fold_add(a: &Expression, b: &Expression) -> Expression {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expression::constant(x + y),
        (Some(0.0), _) => b.clone(),
        (_, Some(0.0)) => a.clone(),
        _ => Expression::new(Node::Add(a.clone(), b.clone())),
    }
}

fn fold_sub(a: &Expression, b: &Expression) -> Expression {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expression::constant(x - y),
        (_, Some(0.0)) => a.clone(),
        (Some(0.0), _) => fold_neg(b),
        _ => Expression::new(Node::Sub(a.clone(), b.clone())),
    }
}

fn fold_mul(a: &Expression, b: &Expression) -> Expression {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expression::constant(x * y),
        (Some(0.0), _) => Expression::zero(),
        (_, Some(0.0)) => Expression::zero(),
        (Some(1.0), _) => b.clone(),
        (_, Some(1.0)) => a.clone(),
        (Some(x), _) if x == -1.0 => fold_neg(b),
        (_, Some(y)) if y == -1.0 => fold_neg(a),
        _ => Expression::new(Node::Mul(a.clone(), b.clone())),
    }
}

fn fold_div(a: &Expression, b: &Expression) -> Expression {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) if y != 0.0 => Expression::constant(x / y),
        (Some(x), _) if x == 0.0 => Expression::zero(),
        (_, Some(y)) if y == 1.0 => a.clone(),
        _ => Expression::new(Node::Div(a.clone(), b.clone())),
    }
}

fn fold_neg(a: &Expression) -> Expression {
    match a.node() {
        Node::Const(c) => Expression::constant(-c),
        Node::Neg(inner) => inner.clone(),
        _ => Expression::new(Node::Neg(a.clone())),
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $fold:ident) => {
        impl ops::$trait<Expression> for Expression {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                $fold(&self, &rhs)
            }
        }
        impl ops::$trait<&Expression> for Expression {
            type Output = Expression;
            fn $method(self, rhs: &Expression) -> Expression {
                $fold(&self, rhs)
            }
        }
        impl ops::$trait<Expression> for &Expression {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                $fold(self, &rhs)
            }
        }
        impl ops::$trait<&Expression> for &Expression {
            type Output = Expression;
            fn $method(self, rhs: &Expression) -> Expression {
                $fold(self, rhs)
            }
        }
        impl ops::$trait<f64> for Expression {
            type Output = Expression;
            fn $method(self, rhs: f64) -> Expression {
                $fold(&self, &Expression::constant(rhs))
            }
        }
        impl ops::$trait<f64> for &Expression {
            type Output = Expression;
            fn $method(self, rhs: f64) -> Expression {
                $fold(self, &Expression::constant(rhs))
            }
        }
    };
}

binary_op!(Add, add, fold_add);
binary_op!(Sub, sub, fold_sub);
binary_op!(Mul, mul, fold_mul);
binary_op!(Div, div, fold_div);

impl ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        fold_neg(&self)
    }
}

impl ops::Neg for &Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        fold_neg(self)
    }
}

impl std::iter::Sum for Expression {
    fn sum<I: Iterator<Item = Expression>>(iter: I) -> Expression {
        iter.fold(Expression::zero(), |acc, e| acc + e)
    }
}

impl From<f64> for Expression {
    fn from(value: f64) -> Self {
        Expression::constant(value)
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, ParseError> {
        Expression::parse(s)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_with(&VarNames::Default))
    }
}

impl serde::Serialize for Expression {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Expression {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Expression::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct Printer<'a> {
    expr: &'a Expression,
    names: &'a VarNames,
}

// binding strength: sums 1, products 2, unary minus 3, powers 4, atoms 5
fn precedence(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(_) => 3,
        Node::Const(c) if *c < 0.0 => 3,
        Node::Pow(..) => 4,
        _ => 5,
    }
}

impl Printer<'_> {
    fn write(&self, f: &mut fmt::Formatter<'_>, e: &Expression, min_prec: u8) -> fmt::Result {
        let prec = precedence(e.node());
        if prec < min_prec {
            write!(f, "(")?;
            self.write_node(f, e)?;
            write!(f, ")")
        } else {
            self.write_node(f, e)
        }
    }

    fn write_node(&self, f: &mut fmt::Formatter<'_>, e: &Expression) -> fmt::Result {
        match e.node() {
            Node::Const(c) => write_number(f, *c),
            Node::Var(i) => write!(f, "{}", self.names.name(*i)),
            Node::Add(a, b) => {
                self.write(f, a, 1)?;
                write!(f, " + ")?;
                self.write(f, b, 2)
            }
            Node::Sub(a, b) => {
                self.write(f, a, 1)?;
                write!(f, " - ")?;
                self.write(f, b, 2)
            }
            Node::Mul(a, b) => {
                self.write(f, a, 2)?;
                write!(f, "*")?;
                self.write(f, b, 3)
            }
            Node::Div(a, b) => {
                self.write(f, a, 2)?;
                write!(f, "/")?;
                self.write(f, b, 3)
            }
            Node::Pow(a, k) => {
                self.write(f, a, 5)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                self.write(f, a, 3)
            }
            Node::Exp(a) => self.call(f, "exp", &[a]),
            Node::Sin(a) => self.call(f, "sin", &[a]),
            Node::Cos(a) => self.call(f, "cos", &[a]),
            Node::Bump(a) => self.call(f, "bump", &[a]),
            Node::Flat(u, b) => self.call(f, "flat", &[u, b]),
        }
    }

    fn call(&self, f: &mut fmt::Formatter<'_>, name: &str, args: &[&Expression]) -> fmt::Result {
        write!(f, "{name}(")?;
        for (k, a) in args.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            self.write(f, a, 0)?;
        }
        write!(f, ")")
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `{:?}` is the shortest representation that parses back to the same f64
    if c < 0.0 {
        write!(f, "-{:?}", -c)
    } else {
        write!(f, "{c:?}")
    }
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.expr, 0)
    }
}
