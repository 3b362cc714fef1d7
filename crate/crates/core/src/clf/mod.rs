//! Quadratic control Lyapunov functions for the lifted bilinear model and
//! the feedback laws built on them.

mod check;
mod control;
mod lqr;
mod sdp;

pub use check::{check_stabilizability, check_stabilizability_affine, StabilizabilityReport};
pub use control::{clf_derivative, control_input, ControllerKind, ControllerSpec, FeedbackLaw, StateCost};
pub use lqr::lqr_reference;
pub use sdp::{solve_clf_sdp, QuadraticClf, SdpDiagnostics, SdpOptions};

/// Values of `γ` tried in order until the stabilizability check passes.
pub const GAMMA_SCHEDULE: [f64; 8] = [2.0, 4.0, 1.0, 8.0, 0.5, 16.0, 0.25, 32.0];
