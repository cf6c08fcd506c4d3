//! Numerical laboratory for stable blow-up of `u_t = u_xx + |u|^{p-1}u + h(u)`.

pub mod params;
pub mod perturbation;
pub mod phi;
pub mod profile;

pub use params::{PerturbationCase, ProblemParams};
pub use perturbation::PerturbationFamily;
pub use phi::{solve_phi_ode, PhiSolution};
pub mod cutoff;
pub mod decomposition;
pub mod grid;
pub mod hermite;
pub mod fit;
pub mod sources;
pub mod linear_pde;
pub mod kernels;
pub mod shrinking_set;
pub mod selfsim;
pub mod shooting;
pub mod physical;
