pub mod eval;
pub mod executor;
pub mod gateway;
pub mod graph;
pub mod nodes;
pub mod planner;
pub mod prompts;
pub mod retrieval;
