pub mod depanalysis;
pub mod gantt;
pub mod pipeline;
pub mod platform;
pub mod preprocess;
pub mod report;
pub mod runtime;
pub mod schedgen;
pub mod sim;
pub mod tir;
pub mod tracer;
pub mod workload;
