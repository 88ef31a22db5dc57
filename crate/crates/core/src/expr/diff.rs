//! Forward symbolic differentiation.
//!
//! The constructors below fold the trivial identities `0 + e`, `1 * e`,
//! `e^1` and friends so that derivative trees stay readable. Nothing else is
//! simplified.

use super::{Expr, Func, Var};

fn add(a: Expr, b: Expr) -> Expr {
    if a.is_zero() {
        b
    } else if b.is_zero() {
        a
    } else {
        Expr::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    if b.is_zero() {
        a
    } else if a.is_zero() {
        neg(b)
    } else {
        Expr::Sub(Box::new(a), Box::new(b))
    }
}

fn neg(a: Expr) -> Expr {
    if a.is_zero() {
        a
    } else {
        Expr::Neg(Box::new(a))
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        Expr::Num(0.0)
    } else if a.is_one() {
        b
    } else if b.is_one() {
        a
    } else {
        Expr::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_one() {
        a
    } else {
        Expr::Div(Box::new(a), Box::new(b))
    }
}

fn pow(a: Expr, n: i32) -> Expr {
    match n {
        0 => Expr::Num(1.0),
        1 => a,
        _ => Expr::Pow(Box::new(a), n),
    }
}

fn call(f: Func, a: &Expr) -> Expr {
    Expr::Call(f, Box::new(a.clone()))
}

pub(super) fn derivative(e: &Expr, v: Var) -> Expr {
    match e {
        Expr::Num(_) => Expr::Num(0.0),
        Expr::Var(w) => Expr::Num(if *w == v { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(derivative(a, v)),
        Expr::Add(a, b) => add(derivative(a, v), derivative(b, v)),
        Expr::Sub(a, b) => sub(derivative(a, v), derivative(b, v)),
        // Product rule
        Expr::Mul(a, b) => add(
            mul(derivative(a, v), (**b).clone()),
            mul((**a).clone(), derivative(b, v)),
        ),
        // Quotient rule
        Expr::Div(a, b) => {
            let da = derivative(a, v);
            let db = derivative(b, v);
            if db.is_zero() {
                div(da, (**b).clone())
            } else {
                div(
                    sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    pow((**b).clone(), 2),
                )
            }
        }
        Expr::Pow(a, n) => {
            let da = derivative(a, v);
            if da.is_zero() || *n == 0 {
                return Expr::Num(0.0);
            }
            mul(mul(Expr::num(*n as f64), pow((**a).clone(), n - 1)), da)
        }
        Expr::Call(f, a) => {
            let da = derivative(a, v);
            if da.is_zero() {
                return Expr::Num(0.0);
            }
            match f {
                Func::Exp => mul(call(Func::Exp, a), da),
                Func::Log => div(da, (**a).clone()),
                Func::Sin => mul(call(Func::Cos, a), da),
                Func::Cos => neg(mul(call(Func::Sin, a), da)),
                Func::Sqrt => div(da, mul(Expr::Num(2.0), call(Func::Sqrt, a))),
                Func::Ang => div(mul((**a).clone(), da), call(Func::Ang, a)),
            }
        }
    }
}
