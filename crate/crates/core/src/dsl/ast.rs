use serde::{Deserialize, Serialize};

use super::catalog::{Column, Namespace, RuleClass};

/// Source position. Spans never take part in AST equality, so a printed and
/// reparsed rule compares equal to the original.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ne, CmpOp::Gt, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 4,
            ArithOp::Mul | ArithOp::Div => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttrRef {
    pub namespace: Namespace,
    /// Canonical attribute name.
    pub name: String,
    pub column: Column,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum NumExpr {
    /// A decimal literal; `text` keeps its spelling.
    Literal { value: f64, text: String, span: Span },
    Attribute(AttrRef),
    Neg { operand: Box<NumExpr>, span: Span },
    Binary {
        op: ArithOp,
        lhs: Box<NumExpr>,
        rhs: Box<NumExpr>,
        span: Span,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum BoolExpr {
    Compare {
        op: CmpOp,
        lhs: NumExpr,
        rhs: NumExpr,
        span: Span,
    },
    And { lhs: Box<BoolExpr>, rhs: Box<BoolExpr> },
    Or { lhs: Box<BoolExpr>, rhs: Box<BoolExpr> },
    Not { operand: Box<BoolExpr>, span: Span },
}

impl NumExpr {
    pub fn span(&self) -> Span {
        match self {
            NumExpr::Literal { span, .. } | NumExpr::Neg { span, .. } | NumExpr::Binary { span, .. } => *span,
            NumExpr::Attribute(a) => a.span,
        }
    }

    pub fn visit_attributes<'a>(&'a self, f: &mut impl FnMut(&'a AttrRef)) {
        match self {
            NumExpr::Literal { .. } => {}
            NumExpr::Attribute(a) => f(a),
            NumExpr::Neg { operand, .. } => operand.visit_attributes(f),
            NumExpr::Binary { lhs, rhs, .. } => {
                lhs.visit_attributes(f);
                rhs.visit_attributes(f);
            }
        }
    }

    fn visit_attributes_mut(&mut self, f: &mut impl FnMut(&mut AttrRef)) {
        match self {
            NumExpr::Literal { .. } => {}
            NumExpr::Attribute(a) => f(a),
            NumExpr::Neg { operand, .. } => operand.visit_attributes_mut(f),
            NumExpr::Binary { lhs, rhs, .. } => {
                lhs.visit_attributes_mut(f);
                rhs.visit_attributes_mut(f);
            }
        }
    }
}

impl BoolExpr {
    pub fn visit_attributes<'a>(&'a self, f: &mut impl FnMut(&'a AttrRef)) {
        match self {
            BoolExpr::Compare { lhs, rhs, .. } => {
                lhs.visit_attributes(f);
                rhs.visit_attributes(f);
            }
            BoolExpr::And { lhs, rhs } | BoolExpr::Or { lhs, rhs } => {
                lhs.visit_attributes(f);
                rhs.visit_attributes(f);
            }
            BoolExpr::Not { operand, .. } => operand.visit_attributes(f),
        }
    }

    pub(crate) fn visit_attributes_mut(&mut self, f: &mut impl FnMut(&mut AttrRef)) {
        match self {
            BoolExpr::Compare { lhs, rhs, .. } => {
                lhs.visit_attributes_mut(f);
                rhs.visit_attributes_mut(f);
            }
            BoolExpr::And { lhs, rhs } | BoolExpr::Or { lhs, rhs } => {
                lhs.visit_attributes_mut(f);
                rhs.visit_attributes_mut(f);
            }
            BoolExpr::Not { operand, .. } => operand.visit_attributes_mut(f),
        }
    }

    /// Namespaces referenced anywhere in the expression.
    pub fn namespaces(&self) -> Vec<Namespace> {
        let mut out = Vec::new();
        self.visit_attributes(&mut |a| {
            if !out.contains(&a.namespace) {
                out.push(a.namespace);
            }
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Severity {
    /// Entailed by the game rules: any match is a flaw.
    #[default]
    Sound,
    /// Usually true; matches deserve a look.
    Suspicion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryRule {
    pub name: String,
    pub description: String,
    pub class: RuleClass,
    pub severity: Severity,
    pub expr: BoolExpr,
    pub source: String,
}
