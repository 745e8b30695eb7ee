pub mod evaluate;
pub mod labels;
pub mod metrics;
pub mod phantom;
pub mod preview;
pub mod segment;
pub mod train;
pub mod vote;
