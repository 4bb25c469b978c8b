//! Obfuscation simulators and black-box adversarial example generation.

mod attack;
mod obfuscate;

pub use attack::{
    constraint_violations, perturb_many, perturb_sample, train_adversarial_generator, AdversarialGenerator,
    AttackBudget, AttackEpoch, AttackHyper, BlackBox, DEFAULT_ALLOWED_DF, DEFAULT_GEN_HIDDEN, DEFAULT_NOISE_DIM,
    DEFAULT_PROTECTED_BENIGN_MAX, DEFAULT_PROTECTED_DF,
};
pub use obfuscate::{
    encrypt_region, indirect_calls, insert_junk, obfuscate, rename_identifiers, shannon_entropy, ObfuscationMode,
    ObfuscationSpec, DEFAULT_ENCRYPTION_RATIO, DEFAULT_INDIRECTION_RATIO, DEFAULT_JUNK_RATIO, INDIRECTION_STEM,
};
