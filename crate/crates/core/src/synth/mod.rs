//! Deterministic synthetic fringe patterns.

pub mod corpus;
pub mod lcg;
pub mod noise;
pub mod scene;

pub use corpus::{generate_corpus, generate_pair, GeneratedPair};
pub use lcg::LcgState;
pub use noise::{apply_pupil, render_corrupted, render_pair, NoiseKind, NoiseSpec};
pub use scene::{make_scene, rbf_surface, render_normalised, FringeScene, RbfSurface, TargetMode};
