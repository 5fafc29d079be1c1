//! Many-eigenstate solvers built on Riemannian optimization over the Stiefel
//! and Grassmann manifolds.
//!
//! Tangent vectors are carried as pairs of skew-symmetric generators
//! `(L, A)` with `Z = L X - X A`, so the same optimizers run unchanged on a
//! dense classical frame or on a simulated entangled statevector that only
//! exposes measured quantities (`X K Xᵀ`, `Xᵀ B X`) and exponential
//! retractions.
//!
//! Module map:
//!
//! * [`linalg`]: dense kernels, matrix exponential of skew matrices, Kronecker
//!   products, vectorization, MatrixMarket I/O.
//! * [`manifold`]: points, tangent projections, left/right actions, metric,
//!   retractions and action transport.
//! * [`eigenproblems`]: cost, gradient and Hessian for the subspace
//!   (Grassmann) and ordered-eigenvector (Stiefel) problems.
//! * [`optim`]: Riemannian trust-region Newton and nonlinear conjugate
//!   gradient.
//! * [`qsim`]: statevector backend, Pauli algebra, Trotterized retractions and
//!   shot sampling.
//! * [`hamiltonian`]: FCIDUMP ingestion, Jordan-Wigner assembly, symmetry
//!   sectors and screened initial frames.
//! * [`driver`]: the four end-to-end strategies and run output.

// `!(x <= tol)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod eigenproblems;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod manifold;
pub mod optim;
pub mod qsim;

pub use error::{Error, Result};
