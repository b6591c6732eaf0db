//! Core library for the robustness-carbon trade-off benchmark.
//!
//! The pipeline trains baseline and adversarially trained MNIST-style
//! classifiers, attacks them with fast-gradient and projected-gradient
//! evasion attacks over an epsilon grid, meters the energy and carbon of
//! each pipeline span, and scores the result with the Robustness-Carbon
//! Trade-off Index (RCTI) and its eco-elasticity classification.
//!
//! Modules:
//! - [`tensor`], [`rng`]: dense f64 arrays and the deterministic generator.
//! - [`nn`]: minimal network engine with exact input/parameter gradients.
//! - [`dataset`]: IDX ingestion, seeded subsets, batching.
//! - [`attacks`]: FGSM and PGD plus adversarial test-set crafting.
//! - [`training`]: baseline and adversarial training loops.
//! - [`energy`]: span metering with a CPU+RAM power model and carbon
//!   intensity.
//! - [`rcti`]: the trade-off index and elasticity classification.
//! - [`synth`]: deterministic digit-style fixture data for self-tests.

pub mod attacks;
pub mod dataset;
pub mod energy;
pub mod nn;
pub mod rcti;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;
