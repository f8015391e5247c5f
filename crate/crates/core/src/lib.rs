//! Static analysis of Android permission-group expansion and normal-level
//! custom-permission exposure across app corpora.

pub mod aosp;
pub mod catalog;
pub mod custom;
pub mod dex;
pub mod expansion;
pub mod fixture;
pub mod labels;
pub mod manifest;
pub mod monitor;
pub mod report;
pub mod simulator;
pub mod stats;

pub use dex::{Attribution, CallSite, DexError, OpKind, ProviderSensitivity, StoreKind};
pub use manifest::{ApkFacts, ComponentDecl, ComponentKind, ManifestError, PermissionDef, ProtectionLevel};
