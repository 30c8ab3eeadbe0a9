pub mod attack;
pub mod cli;
pub mod corpus;
pub mod lm;
pub mod metrics;
