//! Hybrid element-based modeling and simulation.
//!
//! Models are built from discrete-valued elements of mixed resolution joined
//! by signed influences. Each non-input element is updated either by an
//! incremental score rule ([`rule`]) or by a lookup table quantized from a
//! component-model dataset ([`lut`], [`quantizer`]). The [`engine`] runs
//! random-order sequential simulations with time-series forcing and averages
//! ensembles of runs.

pub mod cli;
pub mod engine;
pub mod format;
pub mod ingest;
pub mod lut;
pub mod model;
pub mod quantizer;
pub mod rule;

pub use engine::{
    compare_traces, simulate_ensemble, simulate_run, EnsembleOptions, Reference, Trace, TraceMetrics, TraceSet,
};
pub use lut::{
    build_lookup_table, integrate_component_model, lut_completeness, lut_lookup, CoverageReport, LookupTable,
    MapTarget, MissingPolicy,
};
pub use model::{
    build_model, initial_state, normalize, Element, Influence, Model, Scenario, Sign, State, TimeSeries, UpdateRule,
};
pub use quantizer::{dequantize, make_uniform_thresholds, msqe, quantize_series, quantize_value, Quantizer};
pub use rule::{
    evaluate_expression, next_value_incremental, parse_rule_expression, Expression, IncrementMode, IncrementalRule,
};
