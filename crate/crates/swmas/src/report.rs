//! Text reports and CSV output.
//!
//! Every CSV starts with `#` comment lines recording the tool version, the
//! command and each configuration value, so a file documents how to
//! regenerate it.

use std::fmt::{Display, Write as _};

use swmas_core::graphs::{laplacian, spectrum, FamilyReport, GraphError, GraphFamily};
use swmas_core::lmi::LmiCertificate;
use swmas_core::Matrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Accumulates configuration for the comment header of a CSV file.
#[derive(Debug, Clone, Default)]
pub struct Header {
    command: String,
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &str) -> Self {
        Header {
            command: command.to_owned(),
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.entries.push((key.to_owned(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("# swmas {VERSION} {}\n", self.command);
        for (k, v) in &self.entries {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        out
    }
}

/// Formats a list of floats as `[a, b, c]` for headers.
pub fn list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// `Some(x)` as `x`, `None` as an empty CSV cell.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    writeln!(out, "{name} ({}x{}):", m.rows(), m.cols()).unwrap();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(out, "  {}", row.join(" ")).unwrap();
    }
}

pub fn certificate_report(cert: &LmiCertificate) -> String {
    let mut out = String::new();
    writeln!(out, "status: {:?}", cert.status).unwrap();
    writeln!(out, "agents: {}", cert.n_agents).unwrap();
    writeln!(out, "bounds: [{}, {}]", cert.lambda_lo, cert.lambda_hi).unwrap();
    writeln!(out, "p: {}", cert.p).unwrap();
    writeln!(out, "deflated: {}", cert.deflated).unwrap();
    writeln!(out, "h2_bound: {:.10}", cert.h2_bound).unwrap();
    writeln!(out, "gamma: {:.10}", cert.gamma).unwrap();
    writeln!(out, "beta: {:.10}", cert.beta).unwrap();
    writeln!(out, "strictness: {:e}", cert.strictness).unwrap();
    writeln!(out, "newton_steps: {}", cert.iterations).unwrap();
    write_matrix(&mut out, "Q", &cert.q);
    write_matrix(&mut out, "Z1", &cert.z1);
    if let Some(z2) = &cert.z2 {
        write_matrix(&mut out, "Z2", z2);
    }
    out.push_str("residuals (max eigenvalue, all must be < 0):\n");
    for r in &cert.residuals {
        match r.lambda {
            Some(l) => writeln!(
                out,
                "  {} at lambda={l}: {:e}",
                r.condition, r.max_eigenvalue
            ),
            None => writeln!(out, "  {}: {:e}", r.condition, r.max_eigenvalue),
        }
        .unwrap();
    }
    out
}

/// Rows `graph_index, eig_index, value` (both 0-based) of every Laplacian
/// spectrum in the family.
pub fn spectra_csv(family: &GraphFamily, header: &Header) -> Result<String, GraphError> {
    let mut out = header.render();
    out.push_str("graph_index,eig_index,value\n");
    for (j, g) in family.graphs().iter().enumerate() {
        for (k, v) in spectrum(&laplacian(g))?.into_iter().enumerate() {
            writeln!(out, "{j},{k},{v}").unwrap();
        }
    }
    Ok(out)
}

/// Human-readable summary of a bound validation.
pub fn family_summary(report: &FamilyReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "bounds [{}, {}]: {}",
        report.lambda_lo,
        report.lambda_hi,
        if report.pass { "hold" } else { "violated" }
    )
    .unwrap();
    writeln!(
        out,
        "tightest valid bounds: [{}, {}]",
        report.tightest_lo, report.tightest_hi
    )
    .unwrap();
    for g in &report.graphs {
        let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.6}"));
        writeln!(
            out,
            "  graph {}: lambda_2 = {}, lambda_max = {}{}",
            g.index,
            fmt(g.min_nonzero),
            fmt(g.max),
            if g.within_bounds { "" } else { "  (outside)" }
        )
        .unwrap();
    }
    out
}
