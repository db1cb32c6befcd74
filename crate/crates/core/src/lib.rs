pub mod geometry;
pub mod roadnet;
pub mod scalar;
pub mod rng;
pub mod trafficgen;
pub mod scenario;
pub mod autodiff;
pub mod features;
pub mod riskmodel;
pub mod losses;
pub mod traineval;
