//! The rule language: catalog, parser, printer, evaluator and rule files.

pub mod ast;
pub mod catalog;
pub mod eval;
pub mod library;
pub mod parser;
pub mod printer;
pub mod rulefile;

pub use ast::{ArithOp, AttrRef, BoolExpr, CmpOp, NumExpr, QueryRule, Severity, Span};
pub use catalog::{CatalogEntry, Column, Namespace, RuleClass, SchemaCatalog};
pub use eval::{eval_bool, eval_num, Bindings, EvalError};
pub use parser::{parse_expr, parse_expr_with, rebind, validate_expr, Diagnostic, DiagnosticKind, ParseError};
pub use rulefile::{load_rule_file, parse_rule_file, parse_rule_specs, render_rule_file, RuleFileError, RuleSpec};
