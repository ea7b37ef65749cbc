pub mod analytics;
pub mod config;
pub mod fit;
pub mod harness;
pub mod model;
pub mod output;
pub mod potentials;
pub mod seed;
pub mod spectral;
pub mod ssmc;
pub mod sturm;
