pub mod actor_critic;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod crspp;
pub mod ensemble;
pub mod envs;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod num;
pub mod plot;
pub mod png;
pub mod replay;
pub mod rng;
pub mod self_revision;
pub mod trainer;
pub mod world_model;
