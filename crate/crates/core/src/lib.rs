pub mod autodiff;
pub mod config;
pub mod eval;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod sim;
pub mod training;
