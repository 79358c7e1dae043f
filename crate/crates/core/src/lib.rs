pub mod blend;
pub mod chargrid;
pub mod clip;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod synthcorpus;
pub mod tensor;
pub mod trainer;
pub mod vsgc;

pub use chargrid::{
    Alphabet, CharIndicator, CharLabelSequence, Conditioning, ConditioningVolume, WordVocabulary,
};
pub use clip::VideoClip;
pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
