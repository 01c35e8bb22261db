//! System bundles: schema, validation, synthetic generation and
//! finite-difference gradient assembly.

pub mod bundle;
pub mod gradients;
pub mod synthetic;

pub use bundle::{
    load_bundle, load_bundle_path, load_bundle_str, load_bundle_with, AtomRecord, Axis, BundleMeta,
    PhononMode, SystemBundle, TensorGradients, ValidationOptions, ZfsTensor, FORMAT_TAG,
};
pub use gradients::{
    finite_difference_gradients, FiniteDifferenceGradients, TabulatedOracle, TensorOracle,
    TensorSet, DEFAULT_DX_ANG,
};
pub use synthetic::{
    generate_synthetic, lattice_sites, synthetic_modes, LatticeKind, LatticeSpec, ModeRecipe,
    PointDipoleOracle, SyntheticSpec,
};
