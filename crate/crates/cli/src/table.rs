use hada::eval::{DirectionReport, RetrievalReport};
use serde::Serialize;

/// One row of a comparison table.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub name: String,
    pub i2t: DirectionReport,
    pub t2i: DirectionReport,
    pub total_rsum: f64,
    /// Total RSum minus the reference row's.
    pub delta_r: f64,
}

impl Row {
    pub fn new(name: impl Into<String>, r: &RetrievalReport) -> Self {
        Self {
            name: name.into(),
            i2t: r.i2t,
            t2i: r.t2i,
            total_rsum: r.total_rsum,
            delta_r: 0.0,
        }
    }

    fn cells(&self) -> [f64; 8] {
        let (a, b) = (&self.i2t, &self.t2i);
        [a.r1, a.r5, a.r10, a.rsum, b.r1, b.r5, b.r10, b.rsum]
    }
}

const HEADER: [&str; 8] = ["R@1", "R@5", "R@10", "RSum", "R@1", "R@5", "R@10", "RSum"];

/// Fixed-width table: I2T block, T2I block, total, optional ΔR.
pub fn render(rows: &[Row], with_delta: bool) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:name_w$} | {:^31} | {:^31} | {:>8}",
        "", "I2T", "T2I", "Total"
    );
    if with_delta {
        out.push_str(&format!(" | {:>8}", "ΔR"));
    }
    out.push('\n');
    out.push_str(&format!("{:name_w$} |", "model"));
    for (k, h) in HEADER.iter().enumerate() {
        if k == 4 {
            out.push_str(" |");
        }
        out.push_str(&format!(" {h:>7}"));
    }
    out.push_str(&format!(" | {:>8}", "RSum"));
    if with_delta {
        out.push_str(&format!(" | {:>8}", ""));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:name_w$} |", row.name));
        for (k, c) in row.cells().iter().enumerate() {
            if k == 4 {
                out.push_str(" |");
            }
            out.push_str(&format!(" {c:>7.2}"));
        }
        out.push_str(&format!(" | {:>8.2}", row.total_rsum));
        if with_delta {
            out.push_str(&format!(" | {:>+8.2}", row.delta_r));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, r1: f64) -> Row {
        let d = DirectionReport {
            r1,
            r5: 100.0,
            r10: 100.0,
            rsum: r1 + 200.0,
        };
        Row {
            name: name.into(),
            i2t: d,
            t2i: d,
            total_rsum: 2.0 * d.rsum,
            delta_r: 0.0,
        }
    }

    #[test]
    fn lines_align() {
        let text = render(&[row("single:alpha", 50.0), row("hada", 92.9)], true);
        let widths: Vec<usize> = text.lines().map(|l| l.chars().count()).collect();
        assert_eq!(widths.len(), 4);
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
        assert!(text.contains("  92.90"));
    }
}
