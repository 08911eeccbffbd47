//! Vulnerability detection from control-flow execution paths, trained as a
//! two-player game (a detector and a fix-aware calibrator) that share an
//! encoder trunk and a bank of class prototypes.

pub mod artifact;
pub mod cfgpath;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod lexer;
pub mod nn;
pub mod pipeline;
pub mod protogame;
pub mod synth;
pub mod transform;
