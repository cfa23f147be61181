pub mod fit;
pub mod predict;
pub mod score;
pub mod simulate;
pub mod sweep;
