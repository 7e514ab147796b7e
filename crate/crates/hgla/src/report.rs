//! Output formatting: six-significant-digit numbers and the cost CSV schema.

use std::fmt::Write as _;

/// Formats with six significant digits, locale-independent, `.` separator.
/// Zero renders as `0.000000`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.000000".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..9).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Column order of every cost table row. `speedup` extends the base schema;
/// cells that do not apply stay empty.
pub const CSV_HEADER: &str =
    "T,H,W,D,K,branch,analytic_map,counted_map,counted_total,wall_ms,speedup";

/// One row of the cost CSV.
#[derive(Debug, Clone, Default)]
pub struct CostRow {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub k: usize,
    pub branch: &'static str,
    pub analytic_map: Option<u128>,
    pub counted_map: Option<u64>,
    pub counted_total: Option<u64>,
    pub wall_ms: Option<f64>,
    pub speedup: Option<f64>,
}

impl CostRow {
    pub fn to_csv(&self) -> String {
        let mut line = String::new();
        let _ = write!(
            line,
            "{},{},{},{},{},{}",
            self.t, self.h, self.w, self.d, self.k, self.branch
        );
        let opt_u128 = |v: Option<u128>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_u64 = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = write!(line, ",{}", opt_u128(self.analytic_map));
        let _ = write!(line, ",{}", opt_u64(self.counted_map));
        let _ = write!(line, ",{}", opt_u64(self.counted_total));
        let _ = write!(
            line,
            ",{}",
            self.wall_ms.map(|x| format!("{x:.3}")).unwrap_or_default()
        );
        let _ = write!(
            line,
            ",{}",
            self.speedup.map(|x| format!("{x:.4}")).unwrap_or_default()
        );
        line
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(0.0), "0.000000");
        assert_eq!(fmt_sig6(1.0), "1.00000");
        assert_eq!(fmt_sig6(12.190476), "12.1905");
        assert_eq!(fmt_sig6(390.191234), "390.191");
        assert_eq!(fmt_sig6(0.00123456), "0.00123456");
        assert_eq!(fmt_sig6(-2.5), "-2.50000");
    }

    #[test]
    fn csv_row_renders_empty_cells() {
        let row = CostRow {
            t: 1,
            h: 64,
            w: 64,
            d: 16,
            k: 4,
            branch: "total",
            analytic_map: Some(88_080_384 / 4),
            counted_map: None,
            counted_total: None,
            wall_ms: None,
            speedup: Some(1024.0 / 84.0),
        };
        assert_eq!(row.to_csv(), "1,64,64,16,4,total,22020096,,,,12.1905");
    }
}
