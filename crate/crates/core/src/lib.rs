//! Indicator extraction, rubric alignment and white-box rating models.

pub mod alignment;
pub mod catalog;
pub mod config;
pub mod corpus;
pub mod extraction;
pub mod gateway;
pub mod model;
pub mod parse;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod table;
