pub mod gmres;
pub mod grid;
pub mod kinetics;
pub mod reconstruct;
pub mod reduced;
pub mod simulator;
