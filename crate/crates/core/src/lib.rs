//! Data-driven stabilizing feedback design for control-affine nonlinear systems.
//!
//! The pipeline approximates Koopman eigenfunctions from simulated snapshot
//! data (EDMD over a monomial dictionary), rewrites the control system in the
//! realified eigenfunction coordinates as a bilinear model
//! `ż = A z + u (B z + b₀)`, searches for a quadratic control Lyapunov
//! function `V(z) = zᵀPz` with a small semidefinite program, and closes the
//! loop with one of several CLF-based feedback laws.
//!
//! Module map:
//!
//! * [`dynamics`]: benchmark systems, ODE integration, snapshot generation.
//! * [`edmd`]: monomial dictionary, Gram assembly, Koopman matrix and spectrum.
//! * [`lifting`]: realified eigenbasis and the bilinear model.
//! * [`clf`]: SDP for the CLF, stabilizability check, controllers, LQR reference.
//! * [`pipeline`]: staged orchestration and artifact I/O behind `koopctl`.

// NaN-rejecting `!(x > 0.0)` checks and index loops over matrices are deliberate.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod clf;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod json;
pub mod lifting;
pub mod linalg;
pub mod pipeline;
pub mod poly;

pub use clf::{
    check_stabilizability, check_stabilizability_affine, clf_derivative, control_input, lqr_reference, solve_clf_sdp,
    ControllerKind, ControllerSpec, FeedbackLaw, QuadraticClf, SdpDiagnostics, SdpOptions, StabilizabilityReport,
    StateCost, GAMMA_SCHEDULE,
};
pub use dynamics::{
    generate_snapshots, integrate, make_system, ControlAffineSystem, IntegrationMethod, IntegrationOptions,
    SamplingBox, SamplingMode, SnapshotDataset, SnapshotMap, SnapshotSpec, SystemKind, Trajectory,
};
pub use edmd::{build_gram, fit_koopman, spectrum, KoopmanFile, KoopmanModel, MonomialDictionary, Spectrum};
pub use error::{Error, Result};
pub use lifting::{
    build_a, build_b_exact, build_b_lsq, realify, BilinearModel, CoordinateKind, DriftBlock, ModelFile, RealEigenbasis,
};
pub use num_complex::Complex64;
pub use pipeline::{RunConfig, RunManifest};
pub use poly::{PolyField, Polynomial};
