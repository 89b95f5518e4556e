pub mod analysis;
pub mod binio;
pub mod datagen;
pub mod geom;
pub mod models;
pub mod render;
pub mod samples;
pub mod sensor;
pub mod sim;
pub mod training;
