//! Noncommutative symbolic engine for Hudson–Parthasarathy increments:
//! the quantum Itô table, subset expansion of product differentials,
//! vacuum dt-extraction of generators, and the filter-gain recipe.
//!
//! The rewrite system is scoped to the derivations it is built for
//! (cocycle × observed-process products up to four factors, one observed
//! channel at a time); it is not a general noncommutative normal-form
//! engine.

pub mod expr;
pub mod recipe;
pub mod render;

pub use expr::{
    cond_word, eval_expr, expectation, ito_product, ito_table, Assignment, EvalError, Expr,
    Factor, Increment, Symbol, SymbolKind,
};
pub use recipe::{
    assemble_belavkin_equation, derive_filter_gain, expand_product_differential,
    product_differential, vacuum_dt_generator, BelavkinEquation, Cocycle, DeriveError, FilterGain,
    Measurement, Process,
};
pub use render::{render_equation, render_expr, render_expr_state};
