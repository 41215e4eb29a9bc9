use super::ast::{ArithOp, AttrRef, BoolExpr, NumExpr};

/// Supplies attribute values for one candidate row.
pub trait Bindings {
    fn value(&self, attr: &AttrRef) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
}

pub fn eval_num(e: &NumExpr, b: &impl Bindings) -> Result<f64, EvalError> {
    Ok(match e {
        NumExpr::Literal { value, .. } => *value,
        NumExpr::Attribute(a) => b.value(a),
        NumExpr::Neg { operand, .. } => -eval_num(operand, b)?,
        NumExpr::Binary { op, lhs, rhs, .. } => {
            let x = eval_num(lhs, b)?;
            let y = eval_num(rhs, b)?;
            match op {
                ArithOp::Add => x + y,
                ArithOp::Sub => x - y,
                ArithOp::Mul => x * y,
                ArithOp::Div => {
                    if y == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    x / y
                }
            }
        }
    })
}

/// Evaluates left to right with short-circuit `AND`/`OR`; an error in a
/// skipped operand is not raised.
pub fn eval_bool(e: &BoolExpr, b: &impl Bindings) -> Result<bool, EvalError> {
    Ok(match e {
        BoolExpr::Compare { op, lhs, rhs, .. } => op.apply(eval_num(lhs, b)?, eval_num(rhs, b)?),
        BoolExpr::And { lhs, rhs } => eval_bool(lhs, b)? && eval_bool(rhs, b)?,
        BoolExpr::Or { lhs, rhs } => eval_bool(lhs, b)? || eval_bool(rhs, b)?,
        BoolExpr::Not { operand, .. } => !eval_bool(operand, b)?,
    })
}
