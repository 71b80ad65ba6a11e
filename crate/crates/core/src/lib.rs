//! Multi-scale temporal aggregate representations for video understanding.
//!
//! The pipeline: frame features are max-pooled into "recent" and
//! "spanning" snippet sets at several temporal scales ([`sampler`]),
//! coupled through non-local attention blocks and aggregated per recent
//! scope ([`model`]), trained with Adam under a step-decay schedule
//! ([`trainer`]), and scored with EPIC-style metrics plus multimodal
//! late fusion ([`evaluate`]). [`dataio`] holds the file formats and a
//! synthetic-data generator; [`tensor`] is the in-crate autodiff engine
//! everything runs on.

pub mod dataio;
pub mod evaluate;
pub mod model;
pub mod sampler;
pub mod tensor;
pub mod trainer;
