pub mod config;
pub mod fom;
pub mod linalg;
pub mod mesh;
pub mod sampling;
pub mod pce;
pub mod pipeline;
pub mod pod;
pub mod rom;
