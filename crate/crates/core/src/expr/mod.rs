//! Small expression language for symbols and coefficients.
//!
//! Expressions are real-valued trees over the variables `t`, `s`, `x`, `xi`.
//! Every tree can be differentiated symbolically, so a symbol written in a
//! config file carries exact derivatives to any bounded order.

mod diff;
mod eval;
mod parse;

use std::fmt;

pub use eval::{Env, EvalError, Program};
pub use parse::{parse, ParseError};

/// Default cap on tree depth after differentiation.
pub const DEFAULT_DEPTH_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    T,
    S,
    X,
    Xi,
}

impl Var {
    pub const ALL: [Var; 4] = [Var::T, Var::S, Var::X, Var::Xi];

    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::S => "s",
            Var::X => "x",
            Var::Xi => "xi",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        match name {
            "t" => Some(Var::T),
            "s" => Some(Var::S),
            "x" => Some(Var::X),
            "xi" => Some(Var::Xi),
            _ => None,
        }
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    /// The weight `sqrt(1 + u^2)`.
    Ang,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Ang => "ang",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "sqrt" => Some(Func::Sqrt),
            "ang" => Some(Func::Ang),
            _ => None,
        }
    }
}

/// Expression tree. Numeric literals are never negative in trees built by
/// the parser or by [`Expr::num`]; negation is always an explicit node.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Expr {
    /// Literal constructor that keeps the "no negative literal" convention.
    pub fn num(c: f64) -> Expr {
        if c < 0.0 {
            Expr::Neg(Box::new(Expr::Num(-c)))
        } else {
            Expr::Num(c)
        }
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn call(f: Func, e: Expr) -> Expr {
        Expr::Call(f, Box::new(e))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 1.0)
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => 1 + a.depth(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => 1 + a.node_count(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }

    /// True if `v` occurs anywhere in the tree.
    pub fn uses(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.uses(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses(v) || b.uses(v)
            }
        }
    }

    pub fn free_vars(&self) -> Vec<Var> {
        Var::ALL.into_iter().filter(|v| self.uses(*v)).collect()
    }

    /// Exact symbolic derivative with respect to `v`.
    pub fn differentiate(&self, v: Var) -> Expr {
        diff::derivative(self, v)
    }

    /// Tree-walking evaluation.
    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        eval::eval_tree(self, env)
    }
}

/// Differentiate an expression given a variable name.
pub fn differentiate(e: &Expr, var: &str) -> Result<Expr, ParseError> {
    let v = Var::from_name(var).ok_or_else(|| ParseError::UnknownIdentifier {
        pos: 0,
        name: var.to_string(),
    })?;
    Ok(e.differentiate(v))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
        }
    }
}
