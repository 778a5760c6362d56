//! Elastodynamic spring-mass networks: assembly, terminal response by
//! elimination of interior nodes, realizability checks for static and modal
//! responses, and constructive synthesis of networks realizing a target.

pub mod assembly;
pub mod dynsynth;
pub mod error;
pub mod generate;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod realizability;
pub mod reduce;
pub mod robust;
pub mod scalar;
pub mod synth2d;

pub use assembly::{assemble, AssembledSystem};
pub use error::{Error, Result};
pub use model::{
    check_balanced, evaluate_modal, evaluate_modal_with, rigid_motions, wedge, BalanceCheck,
    BalancedForceSystem, ModalResponse, ModalTerm, Network, NetworkBuilder, Node, NodeKind,
    Spring, StaticResponse,
};
pub use dynsynth::{make_resonant_gadget, synth_dynamic, ResonantGadget};
pub use realizability::{validate_modal, validate_static, ModalReport, StaticReport};
pub use reduce::{
    dynamic_response_at, extract_modal, floppy_modes, resonances, static_response, FloppyModes,
    Partition,
};
pub use robust::{
    apply_perturbation, eliminate_floppy, floppy_nullspace_containment, stability_experiment,
    FloppyFixReport, Perturbation, StabilityReport,
};
pub use synth2d::{synth_rank_one, synth_static, PlacementPolicy, SynthesisReport};
pub use scalar::{Scalar, Tolerances};

pub type Network64 = Network<f64>;
pub type Network32 = Network<f32>;
pub type StaticResponse64 = StaticResponse<f64>;
pub type StaticResponse32 = StaticResponse<f32>;
pub type ModalResponse64 = ModalResponse<f64>;
pub type ModalResponse32 = ModalResponse<f32>;
pub type PlacementPolicy64 = PlacementPolicy<f64>;
pub type PlacementPolicy32 = PlacementPolicy<f32>;
