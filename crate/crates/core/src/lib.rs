pub mod camera;
pub mod geometry;
pub mod raster;
pub mod depth;
pub mod pipeline;
pub mod metrics;
pub mod assignment;
pub mod eval;
pub mod decode;
pub mod io;
pub mod capture;
pub mod synthetic;
