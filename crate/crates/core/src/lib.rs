pub mod cost;
pub mod crc;
pub mod geometry;
pub mod grid;
pub mod raster;
pub mod redundancy;
pub mod scene;
pub mod signature;
