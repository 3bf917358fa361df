//! GeoNimbus: a self-hosted serverless framework for building and running
//! earth-observation pipelines as chains of stages deployed across
//! endpoints, with wide-area data stores and throughput-driven autoscaling.

pub mod autoscaler;
pub mod controller;
pub mod daemon;
pub mod eos;
pub mod events;
pub mod local;
pub mod spec;
pub mod storage;
pub mod wire;
