pub mod model;
pub mod detectors;
pub mod oc_solver;
pub mod asymptotics;
pub mod design;
pub mod anomaly;
pub mod benchmarks;
