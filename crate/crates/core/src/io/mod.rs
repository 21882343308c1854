//! Tab-separated inputs and outputs, library filtering and normalization,
//! batch fitting across genes and simulation reports.
//!
//! Floating-point output uses the shortest decimal that round-trips, so
//! tables are byte-stable across runs and thread counts.

mod batch;
mod design;
mod normalize;
mod simulate;
mod table;

pub use batch::{fit_with_fallback, run_fit_all, Attempt, Batch, FitAllOptions, FitAllResults, GeneResult, OffsetSource};
pub use design::{hypothesis_from_path, parse_shorthand, read_hypothesis_matrix, DesignSpec, NamedHypothesis, INTERCEPT};
pub use normalize::{cpm_filter, tmm_offsets, FilterReport, TmmOptions, TmmResult};
pub use simulate::{batch_tables, run_simulation, SimulationOutput, SimulationRequest};
pub use table::{Column, ColumnValues, CountsTable, SampleSheet, OFFSET_COL, SAMPLE_COL, SUBJECT_COL, TIME_COL};

/// Shortest round-trip decimal; `NA` for NaN.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else if x.is_infinite() {
        if x > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else if x == 0.0 || (1e-5..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_f64;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -2.5e-300, 1.0 / 3.0, 6.02e23, 12345.678, -0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(f64::NAN), "NA");
    }
}
