use super::{Expr, Func, Var};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{}` is not bound", .0.name())]
    Unbound(Var),
    #[error("domain error: {op} of {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result in {op}")]
    NonFinite { op: &'static str },
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env {
    vals: [Option<f64>; 4],
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    /// All four variables bound.
    pub fn at(t: f64, s: f64, x: f64, xi: f64) -> Env {
        Env { vals: [Some(t), Some(s), Some(x), Some(xi)] }
    }

    pub fn set(mut self, v: Var, value: f64) -> Env {
        self.vals[v.slot()] = Some(value);
        self
    }

    /// Bind by name; unknown names are rejected.
    pub fn bind(self, name: &str, value: f64) -> Result<Env, super::ParseError> {
        let v = Var::from_name(name).ok_or_else(|| super::ParseError::UnknownIdentifier {
            pos: 0,
            name: name.to_string(),
        })?;
        Ok(self.set(v, value))
    }

    pub fn get(&self, v: Var) -> Result<f64, EvalError> {
        self.vals[v.slot()].ok_or(EvalError::Unbound(v))
    }
}

#[inline]
fn apply_func(f: Func, u: f64) -> Result<f64, EvalError> {
    let r = match f {
        Func::Exp => u.exp(),
        Func::Log => {
            if u <= 0.0 {
                return Err(EvalError::Domain { op: "log", arg: u });
            }
            u.ln()
        }
        Func::Sin => u.sin(),
        Func::Cos => u.cos(),
        Func::Sqrt => {
            if u < 0.0 {
                return Err(EvalError::Domain { op: "sqrt", arg: u });
            }
            u.sqrt()
        }
        Func::Ang => u.hypot(1.0),
    };
    if r.is_finite() {
        Ok(r)
    } else {
        Err(EvalError::NonFinite { op: f.name() })
    }
}

#[inline]
fn apply_div(a: f64, b: f64) -> Result<f64, EvalError> {
    if b == 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    let r = a / b;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(EvalError::NonFinite { op: "div" })
    }
}

#[inline]
fn apply_pow(a: f64, n: i32) -> Result<f64, EvalError> {
    if n < 0 && a == 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    let r = a.powi(n);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(EvalError::NonFinite { op: "pow" })
    }
}

#[inline]
fn finite(r: f64, op: &'static str) -> Result<f64, EvalError> {
    if r.is_finite() {
        Ok(r)
    } else {
        Err(EvalError::NonFinite { op })
    }
}

pub(super) fn eval_tree(e: &Expr, env: &Env) -> Result<f64, EvalError> {
    match e {
        Expr::Num(c) => Ok(*c),
        Expr::Var(v) => env.get(*v),
        Expr::Neg(a) => Ok(-eval_tree(a, env)?),
        Expr::Call(f, a) => apply_func(*f, eval_tree(a, env)?),
        Expr::Add(a, b) => finite(eval_tree(a, env)? + eval_tree(b, env)?, "add"),
        Expr::Sub(a, b) => finite(eval_tree(a, env)? - eval_tree(b, env)?, "sub"),
        Expr::Mul(a, b) => finite(eval_tree(a, env)? * eval_tree(b, env)?, "mul"),
        Expr::Div(a, b) => apply_div(eval_tree(a, env)?, eval_tree(b, env)?),
        Expr::Pow(a, n) => apply_pow(eval_tree(a, env)?, *n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(u8),
    Neg,
    Call(Func),
    Add,
    Sub,
    Mul,
    Div,
    Pow(i32),
}

/// An expression flattened to postfix form for fast repeated evaluation at
/// fully bound points.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    stack: usize,
}

const INLINE_STACK: usize = 96;

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut ops = Vec::with_capacity(e.node_count());
        let stack = emit(e, &mut ops);
        Program { ops, stack }
    }

    /// Evaluate at `[t, s, x, xi]`.
    pub fn eval(&self, p: [f64; 4]) -> Result<f64, EvalError> {
        if self.stack <= INLINE_STACK {
            let mut st = [0.0f64; INLINE_STACK];
            self.run(p, &mut st)
        } else {
            let mut st = vec![0.0f64; self.stack];
            self.run(p, &mut st)
        }
    }

    /// True when the program is a single constant.
    pub fn constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(c)] => Some(*c),
            _ => None,
        }
    }

    #[inline]
    fn run(&self, p: [f64; 4], st: &mut [f64]) -> Result<f64, EvalError> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    st[sp] = c;
                    sp += 1;
                }
                Op::Load(k) => {
                    st[sp] = p[k as usize];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::Call(f) => st[sp - 1] = apply_func(f, st[sp - 1])?,
                Op::Pow(n) => st[sp - 1] = apply_pow(st[sp - 1], n)?,
                Op::Add => {
                    sp -= 1;
                    st[sp - 1] = finite(st[sp - 1] + st[sp], "add")?;
                }
                Op::Sub => {
                    sp -= 1;
                    st[sp - 1] = finite(st[sp - 1] - st[sp], "sub")?;
                }
                Op::Mul => {
                    sp -= 1;
                    st[sp - 1] = finite(st[sp - 1] * st[sp], "mul")?;
                }
                Op::Div => {
                    sp -= 1;
                    st[sp - 1] = apply_div(st[sp - 1], st[sp])?;
                }
            }
        }
        Ok(st[0])
    }
}

/// Emits postfix code and returns the stack depth needed.
fn emit(e: &Expr, ops: &mut Vec<Op>) -> usize {
    match e {
        Expr::Num(c) => {
            ops.push(Op::Const(*c));
            1
        }
        Expr::Var(v) => {
            ops.push(Op::Load(v.slot() as u8));
            1
        }
        Expr::Neg(a) => {
            let d = emit(a, ops);
            ops.push(Op::Neg);
            d
        }
        Expr::Call(f, a) => {
            let d = emit(a, ops);
            ops.push(Op::Call(*f));
            d
        }
        Expr::Pow(a, n) => {
            let d = emit(a, ops);
            ops.push(Op::Pow(*n));
            d
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let da = emit(a, ops);
            let db = emit(b, ops);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
            da.max(db + 1)
        }
    }
}
