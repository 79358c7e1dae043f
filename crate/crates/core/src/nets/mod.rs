//! Generator, patch critic, character inspector, and word classifiers.

mod classifier;
mod critic;
mod generator;
pub mod layers;
mod params;

pub use classifier::{Classifier, ClassifierConfig, ClassifierOutput, RecurrentBackend};
pub use critic::{CriticConfig, Discriminator, Inspector};
pub use generator::{Generator, GeneratorConfig};
pub use params::{normal_vec, orthogonal_vec, uniform_vec, ParamId, ParamStore};
