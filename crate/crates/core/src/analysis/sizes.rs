//! Size-parameter rules declared by `//@` annotations.

use std::collections::BTreeMap;

use crate::minilang::{BinOp, Expr, FunctionIR, SizeHint};

pub type SizeMap = BTreeMap<String, i64>;

/// Hint lookup for one function.
#[derive(Debug, Clone, Default)]
pub struct SizeRules {
    hints: Vec<SizeHint>,
}

impl SizeRules {
    pub fn of(f: &FunctionIR) -> Self {
        SizeRules { hints: f.hints.clone() }
    }

    fn hint(&self, param: &str) -> Option<&SizeHint> {
        self.hints.iter().find(|h| h.param() == param)
    }

    pub fn is_derived(&self, param: &str) -> bool {
        matches!(self.hint(param), Some(SizeHint::Derive { .. }))
    }

    pub fn fixed(&self, param: &str) -> Option<i64> {
        match self.hint(param) {
            Some(SizeHint::Fixed { value, .. }) => Some(*value),
            _ => None,
        }
    }

    /// Smallest admissible value ≥ `v` (or the fixed value).
    pub fn conform(&self, param: &str, v: i64) -> i64 {
        let v = v.max(1);
        match self.hint(param) {
            Some(SizeHint::MultipleOf { factor, .. }) if *factor > 0 => (v + factor - 1) / factor * factor,
            Some(SizeHint::PowerOfTwo { .. }) => (v as u64).next_power_of_two() as i64,
            Some(SizeHint::Fixed { value, .. }) => *value,
            _ => v,
        }
    }

    /// Largest admissible value ≤ `v`, if any is ≥ 1.
    pub fn conform_down(&self, param: &str, v: i64) -> Option<i64> {
        let r = match self.hint(param) {
            Some(SizeHint::MultipleOf { factor, .. }) if *factor > 0 => v / factor * factor,
            Some(SizeHint::PowerOfTwo { .. }) if v >= 1 => 1 << (63 - (v as u64).leading_zeros()),
            Some(SizeHint::Fixed { value, .. }) => *value,
            _ => v,
        };
        (r >= 1).then_some(r)
    }

    pub fn admits(&self, param: &str, v: i64) -> bool {
        v >= 1
            && match self.hint(param) {
                Some(SizeHint::MultipleOf { factor, .. }) => *factor > 0 && v % factor == 0,
                Some(SizeHint::PowerOfTwo { .. }) => (v as u64).is_power_of_two(),
                Some(SizeHint::Fixed { value, .. }) => v == *value,
                _ => true,
            }
    }

    /// Fills in derived parameters; fails if a derivation is unresolvable or non-positive.
    pub fn derive(&self, sizes: &mut SizeMap) -> Result<(), String> {
        let pending: Vec<(&str, &Expr)> = self
            .hints
            .iter()
            .filter_map(|h| match h {
                SizeHint::Derive { param, expr } => Some((param.as_str(), expr)),
                _ => None,
            })
            .collect();
        let mut left = pending;
        while !left.is_empty() {
            let before = left.len();
            let mut rest = Vec::new();
            for (param, expr) in left {
                match eval_size_expr(expr, sizes) {
                    Some(v) if v >= 1 => {
                        sizes.insert(param.to_string(), v);
                    }
                    Some(v) => return Err(format!("derived size `{param}` = {v} is not positive")),
                    None => rest.push((param, expr)),
                }
            }
            if rest.len() == before {
                return Err(format!("cannot derive `{}`", rest[0].0));
            }
            left = rest;
        }
        Ok(())
    }
}

pub fn eval_size_expr(e: &Expr, env: &SizeMap) -> Option<i64> {
    match e {
        Expr::Int(v) => Some(*v),
        Expr::Var(v) => env.get(v).copied(),
        Expr::Binary { op, lhs, rhs } => {
            let (a, b) = (eval_size_expr(lhs, env)?, eval_size_expr(rhs, env)?);
            match op {
                BinOp::Add => a.checked_add(b),
                BinOp::Sub => a.checked_sub(b),
                BinOp::Mul => a.checked_mul(b),
                BinOp::Div => a.checked_div(b),
                BinOp::Rem => a.checked_rem(b),
                _ => None,
            }
        }
        Expr::Unary { op: crate::minilang::UnOp::Neg, expr } => eval_size_expr(expr, env)?.checked_neg(),
        _ => None,
    }
}
