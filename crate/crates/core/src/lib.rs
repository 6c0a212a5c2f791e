//! Toolkit for perspectivist stance-detection experiments.
//!
//! Disaggregated annotations are turned into hard (majority) and soft
//! (softmax) supervision, a linear softmax classifier is trained under
//! either regime, and predictions are calibrated with temperature scaling
//! and audited with Expected Calibration Error. Agreement statistics, summary
//! metrics and an LLM annotation client round out the pipeline.

pub mod agreement;
pub mod calibration;
pub mod classifier;
pub mod corpus;
pub mod experiment;
pub mod labels;
pub mod llmclient;
pub mod synthetic;
pub mod textmetrics;

pub use labels::{StanceLabel, NUM_CLASSES};
