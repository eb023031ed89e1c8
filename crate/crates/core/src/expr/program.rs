//! Flattened evaluation of many expressions at once.
//!
//! A [`Program`] walks the expression DAGs once, assigns every distinct node
//! (by pointer) a register, and evaluates the registers in topological order.
//! Shared subterms produced by differentiation are computed once per point.
//! Arithmetic follows IEEE semantics internally so that the unused branch of
//! a `flat` node may overflow harmlessly; a non-finite output is an error.

use std::collections::HashMap;

use super::{EvalError, Expression, Node};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, i32),
    Neg(u32),
    Exp(u32),
    Sin(u32),
    Cos(u32),
    Bump(u32),
    Flat(u32, u32),
}

/// A compiled batch of expressions sharing one register file.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    arity: usize,
}

struct Compiler {
    ops: Vec<Op>,
    seen: HashMap<*const Node, u32>,
    consts: HashMap<u64, u32>,
}

impl Compiler {
    fn push(&mut self, op: Op) -> u32 {
        self.ops.push(op);
        (self.ops.len() - 1) as u32
    }

    fn compile(&mut self, e: &Expression) -> u32 {
        if let Some(&r) = self.seen.get(&e.ptr()) {
            return r;
        }
        let op = match e.node() {
            Node::Const(c) => {
                if let Some(&r) = self.consts.get(&c.to_bits()) {
                    self.seen.insert(e.ptr(), r);
                    return r;
                }
                let r = self.push(Op::Const(*c));
                self.consts.insert(c.to_bits(), r);
                self.seen.insert(e.ptr(), r);
                return r;
            }
            Node::Var(i) => Op::Var(*i),
            Node::Add(a, b) => Op::Add(self.compile(a), self.compile(b)),
            Node::Sub(a, b) => Op::Sub(self.compile(a), self.compile(b)),
            Node::Mul(a, b) => Op::Mul(self.compile(a), self.compile(b)),
            Node::Div(a, b) => Op::Div(self.compile(a), self.compile(b)),
            Node::Pow(a, k) => Op::Pow(self.compile(a), *k),
            Node::Neg(a) => Op::Neg(self.compile(a)),
            Node::Exp(a) => Op::Exp(self.compile(a)),
            Node::Sin(a) => Op::Sin(self.compile(a)),
            Node::Cos(a) => Op::Cos(self.compile(a)),
            Node::Bump(a) => Op::Bump(self.compile(a)),
            Node::Flat(u, b) => Op::Flat(self.compile(u), self.compile(b)),
        };
        let r = self.push(op);
        self.seen.insert(e.ptr(), r);
        r
    }
}

impl Program {
    pub fn new(outputs: &[Expression]) -> Self {
        let mut c = Compiler { ops: Vec::new(), seen: HashMap::new(), consts: HashMap::new() };
        let outs: Vec<u32> = outputs.iter().map(|e| c.compile(e)).collect();
        let arity = outputs.iter().map(Expression::arity).max().unwrap_or(0);
        Program { ops: c.ops, outputs: outs, arity }
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Minimal point dimension.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn n_registers(&self) -> usize {
        self.ops.len()
    }

    fn check_point(&self, point: &[f64]) -> Result<(), EvalError> {
        if point.len() < self.arity {
            Err(EvalError::Dimension { needed: self.arity, got: point.len() })
        } else {
            Ok(())
        }
    }

    fn run(&self, point: &[f64], regs: &mut Vec<f64>) {
        regs.clear();
        regs.reserve(self.ops.len());
        for op in &self.ops {
            let r = |i: u32| regs[i as usize];
            let v = match *op {
                Op::Const(c) => c,
                Op::Var(i) => point[i],
                Op::Add(a, b) => r(a) + r(b),
                Op::Sub(a, b) => r(a) - r(b),
                Op::Mul(a, b) => r(a) * r(b),
                Op::Div(a, b) => r(a) / r(b),
                Op::Pow(a, k) => r(a).powi(k),
                Op::Neg(a) => -r(a),
                Op::Exp(a) => r(a).exp(),
                Op::Sin(a) => r(a).sin(),
                Op::Cos(a) => r(a).cos(),
                Op::Bump(a) => super::bump_value(r(a)),
                Op::Flat(u, b) => {
                    if r(u).abs() < 1.0 {
                        r(b)
                    } else {
                        0.0
                    }
                }
            };
            regs.push(v);
        }
    }

    /// Evaluate every output at `point` into `out`, reusing `regs` as scratch.
    pub fn eval_into(&self, point: &[f64], regs: &mut Vec<f64>, out: &mut [f64]) -> Result<(), EvalError> {
        self.check_point(point)?;
        self.run(point, regs);
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            let v = regs[i as usize];
            if !v.is_finite() {
                return Err(EvalError::NonFinite);
            }
            *o = v;
        }
        Ok(())
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(point, &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    /// Evaluate outputs together with a magnitude estimate for each.
    ///
    /// The magnitude is a first-order running bound on the rounding error in
    /// units of the machine epsilon, so `|value| <= tol * magnitude` flags a
    /// value that is zero up to cancellation error.
    pub fn eval_with_magnitude(&self, point: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        self.check_point(point)?;
        let mut regs = Vec::with_capacity(self.ops.len());
        self.run(point, &mut regs);
        let mut mags: Vec<f64> = Vec::with_capacity(self.ops.len());
        for (k, op) in self.ops.iter().enumerate() {
            let v = regs[k].abs();
            let m = |i: u32| mags[i as usize];
            let val = |i: u32| regs[i as usize].abs();
            let mag = match *op {
                Op::Const(_) | Op::Var(_) => v,
                Op::Add(a, b) | Op::Sub(a, b) => m(a) + m(b) + v,
                Op::Mul(a, b) => val(b) * m(a) + val(a) * m(b) + v,
                Op::Div(a, b) => (m(a) + v * m(b)) / val(b) + v,
                Op::Pow(a, e) => {
                    let base = val(a);
                    let k = f64::from(e.abs());
                    if e > 0 {
                        k * base.powi(e - 1) * m(a) + (k - 1.0) * v
                    } else {
                        k * v / base * m(a) + k * v
                    }
                }
                Op::Neg(a) => m(a),
                Op::Exp(a) => v * (1.0 + m(a)),
                Op::Sin(a) | Op::Cos(a) => v + m(a),
                Op::Bump(u) => {
                    let x = val(u);
                    if x < 1.0 {
                        v * (1.0 + 2.0 * x * m(u) / (1.0 - x * x).powi(2))
                    } else {
                        0.0
                    }
                }
                Op::Flat(u, b) => {
                    if val(u) < 1.0 {
                        m(b)
                    } else {
                        0.0
                    }
                }
            };
            mags.push(if mag.is_nan() { f64::INFINITY } else { mag });
        }
        let mut values = Vec::with_capacity(self.outputs.len());
        let mut magnitudes = Vec::with_capacity(self.outputs.len());
        for &i in &self.outputs {
            let v = regs[i as usize];
            if !v.is_finite() {
                return Err(EvalError::NonFinite);
            }
            values.push(v);
            magnitudes.push(mags[i as usize]);
        }
        Ok((values, magnitudes))
    }
}
