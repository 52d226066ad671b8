//! Symbolic regression by genetic programming over `{+, −, ×, ÷}` with
//! variables and real constants.

mod expr;
mod front;
mod gp;

pub use expr::{BinOp, DisplayExpr, Expr, DIV_GUARD};
pub use front::{select_best, selection_scores, FrontEntry, ParetoFront};
pub use gp::{crossover, mse, mutate, optimize_constants, random_tree, search, GPConfig, SymDataset};
