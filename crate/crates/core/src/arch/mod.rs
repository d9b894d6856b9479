//! Architecture specs, block planning, model construction and weight files.

pub mod catalog;
mod model;
mod plan;
mod spec;
pub mod weights;

pub use catalog::{builtin_specs, Reference};
pub use model::{build_mod_block, build_model, standalone_block, ConvStack, Network};
pub use plan::{
    families, plan_architecture, shortcut, stack_convs, BlockPlan, BlockRecord, Family, HeadPlan, Shortcut,
    StemPlan,
};
pub use spec::{ArchSpec, BlockKind, Placement, StemKind, ARCH_KEYS};
