pub mod controller;
pub mod crypto;
pub mod experiment;
pub mod linalg;
pub mod matrix_time;
pub mod plant_sim;
pub mod quantizer;
pub mod stability;
