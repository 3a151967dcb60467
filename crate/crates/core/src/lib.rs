pub mod affine;
pub mod atlas;
pub mod cli;
pub mod dataset;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod grade;
pub mod metrics;
pub mod nifti;
pub mod numfmt;
pub mod phantom;
pub mod seed;
