pub mod calibration;
pub mod classifier;
pub mod cli;
pub mod detectors;
pub mod imaging;
pub mod pipeline;
pub mod theory;
pub mod timeseries;
