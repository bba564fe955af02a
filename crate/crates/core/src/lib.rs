pub mod aero;
pub mod backends;
pub mod mesh;
pub mod novelty;
pub mod objective;
pub mod refine;
pub mod render;
pub mod report;
pub mod seed;
pub mod semantic;
