//! Rule DSL: lexer, parser, binder, and the lowering compiler that turns
//! rule text into an executable DAG of mask kernels.

pub mod ast;
pub mod bind;
mod lexer;
mod parser;
pub mod plan;

pub use ast::{print_formula, Formula, WHOLE_IMAGE};
pub use bind::{
    bind, BindOptions, BoundFormula, BoundKind, ChannelBinding, DomainBinding, ScaleStep,
    ScalingPolicy,
};
pub use parser::parse;
pub use plan::{evaluate, lower, EvalOutput, EvalPlan, PlanNode, PlanOp};

use crate::mask::MaskError;
use crate::scene::SceneError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("lexical error at {line}:{col}: {message}")]
    Lex {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("variable {var:?} is already bound by an enclosing quantifier")]
    VariableRebound { var: String },
    #[error("more than one free pixel variable: {vars:?}")]
    MultipleFreeVariables { vars: Vec<String> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BindError {
    #[error(transparent)]
    Invalid(ParseError),
    #[error("unknown predicate {name:?}: no such channel in the manifest")]
    UnknownPredicate { name: String },
    #[error("unknown domain {name:?}: not the whole image and no such channel")]
    UnknownDomain { name: String },
    #[error("channel {name:?} at {stored:?} cannot be reconciled to {target:?} under the scaling policy")]
    Irreconcilable {
        name: String,
        stored: (usize, usize),
        target: (usize, usize),
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("subformula relates two quantified pixels ({a:?}, {b:?}) outside a closeby pattern")]
    CrossPixel { a: String, b: String },
    #[error("closeby({a}, {b}) cannot be lowered in this position")]
    BareCloseBy { a: String, b: String },
    #[error("variable {var:?} is not in scope")]
    UnboundVariable { var: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("channel {name:?}: scene shape {found:?} does not match bound shape {expected:?}")]
    ChannelShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}
