//! Desk-scale synthetic fingerprint laboratory.
//!
//! Procedural fingerprint corpora, a three-stage preprocessing pipeline, a
//! from-scratch DDPM (schedule, sampler, U-shaped denoiser with its own
//! reverse-mode engine), identity-branching impression sampling, classical
//! minutiae extraction, a pair-table minutiae matcher and the evaluation
//! metrics used to compare generated and reference sets.

pub mod cli;
pub mod denoiser;
pub mod diffusion;
pub mod evaluate;
pub mod imagecore;
pub mod matcher;
pub mod minutiae;
pub mod preprocess;
pub mod synthcorpus;
