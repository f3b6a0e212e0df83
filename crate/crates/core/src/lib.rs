// SPDX-License-Identifier: Apache-2.0

//! Quantum programs with quantum control flow.
//!
//! The crate covers the whole pipeline for a small imperative language whose
//! programs allocate, transform, measure and discard qubits and branch either
//! classically (`meas`, `while`) or coherently (`qcase`):
//!
//! * [`syntax`]: AST, parser, pretty-printer, contexts.
//! * [`wellformed`]: environment judgments and the in/out variable analysis.
//! * [`linalg`]: dense complex linear algebra on qubit environments.
//! * [`opsem`]: the operational semantics, as ensembles of weighted states.
//! * [`densem`]: the denotational semantics as vacuum extensions.
//! * [`analysis`]: adequacy, probability and equivalence checks.
//! * [`synth`]: synthesis of programs from vacuum extensions.
//! * [`random`]: seeded generators for programs, states and channels.

pub mod syntax;
pub mod wellformed;
pub mod linalg;
pub mod opsem;
pub mod densem;
pub mod analysis;
pub mod synth;
pub mod random;

pub use syntax::{var, Context, Environment, Gate, GateName, Program, Statement, VarName};
