pub mod cli;
pub mod fixtures;
pub mod io;
pub mod lp;
pub mod markets;
pub mod polyhedra;
pub mod riskcore;
pub mod timeconsistency;
pub mod scalar;
pub mod tree;
