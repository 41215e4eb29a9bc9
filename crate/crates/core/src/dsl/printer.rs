//! Canonical rendering: single spaces around binary operators, upper-case
//! keywords, and only the parentheses the grammar needs.

use std::fmt::{self, Display, Write};

use super::ast::{BoolExpr, NumExpr};

const OR: u8 = 1;
const AND: u8 = 2;
const UNARY: u8 = 6;
const PRIMARY: u8 = 7;

fn bool_precedence(e: &BoolExpr) -> u8 {
    match e {
        BoolExpr::Or { .. } => OR,
        BoolExpr::And { .. } => AND,
        // A comparison is not a primary, so NOT needs parentheses around it.
        BoolExpr::Compare { .. } => 3,
        BoolExpr::Not { .. } => UNARY,
    }
}

fn num_precedence(e: &NumExpr) -> u8 {
    match e {
        NumExpr::Binary { op, .. } => op.precedence(),
        NumExpr::Neg { .. } => UNARY,
        NumExpr::Literal { .. } | NumExpr::Attribute(_) => PRIMARY,
    }
}

fn wrap(f: &mut fmt::Formatter<'_>, parens: bool, inner: &dyn Display) -> fmt::Result {
    if parens {
        write!(f, "({inner})")
    } else {
        write!(f, "{inner}")
    }
}

impl Display for NumExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumExpr::Literal { text, .. } => f.write_str(text),
            NumExpr::Attribute(a) => write!(f, "{}.{}", a.namespace, a.name),
            NumExpr::Neg { operand, .. } => {
                f.write_char('-')?;
                wrap(f, num_precedence(operand) < UNARY, operand)
            }
            NumExpr::Binary { op, lhs, rhs, .. } => {
                let p = op.precedence();
                wrap(f, num_precedence(lhs) < p, lhs)?;
                write!(f, " {} ", op.symbol())?;
                wrap(f, num_precedence(rhs) <= p, rhs)
            }
        }
    }
}

impl Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Compare { op, lhs, rhs, .. } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            BoolExpr::And { lhs, rhs } | BoolExpr::Or { lhs, rhs } => {
                let p = bool_precedence(self);
                let kw = if p == AND { "AND" } else { "OR" };
                wrap(f, bool_precedence(lhs) < p, lhs)?;
                write!(f, " {kw} ")?;
                wrap(f, bool_precedence(rhs) <= p, rhs)
            }
            BoolExpr::Not { operand, .. } => {
                f.write_str("NOT ")?;
                wrap(f, bool_precedence(operand) < UNARY, operand)
            }
        }
    }
}
