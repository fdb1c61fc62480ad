//! Robust text classification against synonym-substitution attacks.
//!
//! The pipeline: sample virtual training points from Dirichlet-weighted
//! convex hulls of word/synonym embeddings ([`simplex`]), search those hulls
//! for hard points in log-space ([`training`]), predict through a Monte-Carlo
//! smoothed ensemble ([`smoothing`]), and measure the robustness gain with
//! word-substitution attacks ([`attacks`]).

pub mod attacks;
pub mod autodiff;
pub mod error;
pub mod harness;
pub mod lexicon;
pub mod models;
pub mod seeding;
pub mod simplex;
pub mod smoothing;
pub mod training;

pub use attacks::{AttackBudget, AttackKind, AttackResult, RobustnessReport};
pub use error::{Error, Result};
pub use harness::{Dataset, ExperimentSpec, SyntheticSpec};
pub use lexicon::{EmbeddingMatrix, Neighborhood, SynonymGraph, TokenId, Vocabulary, PAD, UNK};
pub use models::{Arch, Classifier, ClassifierConfig};
pub use simplex::{ConcentrationVector, DirichletParams, SimplexPoint};
pub use smoothing::{EnsembleConfig, EnsembleResult};
pub use training::{TrainConfig, TrainMode, VirtualSentence};
