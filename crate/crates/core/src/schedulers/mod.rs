pub mod bwalk;
pub mod markov_walk;
pub mod sg;
pub mod tspb;
