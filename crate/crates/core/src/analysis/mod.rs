//! Representation similarity across incremental stages, and grid studies
//! over component choices and network scale.

mod cka;
mod grid;

pub use cka::{cka_across_stages, linear_cka, probe_indices, CkaMatrix, FeatureMatrix, PROBE_SIZE};
pub use grid::{
    component_cells, gap_trend, run_component_grid, run_grid, run_scaling_grid, scaling_cells, GridCell, GridConfig,
    GridRecord, GridReport, GridRow, MeanStd,
};
