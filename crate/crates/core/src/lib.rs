pub mod baselines;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod follower;
pub mod hypergame;
pub mod leader;
pub mod oracle;
pub mod outcome;
pub mod perception;
pub mod scenario;
pub mod strategy;
pub mod utilities;
