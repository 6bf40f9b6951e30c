use serde::Serialize;

/// Which pipeline produced a flow value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Brute-force density-matrix evolution.
    Oracle,
    /// Second-order diagrams (W block or Golden-rule rates).
    SecondOrder,
    /// Fourth-order two-world "quantum" diagrams.
    FourthOrder,
    /// Dominant eigenvalue of a multi-world rate generator.
    D0,
    /// Heat-engine decomposition into incoherent and coherent parts.
    Qhe,
    /// Counting-statistics side of the flow/FCS correspondence.
    Correspondence,
}

/// A flow of a conserved measure (usually `d ln S_M / dt`) with named parts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowReport {
    pub m: f64,
    pub flow: f64,
    pub method: Method,
    pub breakdown: Vec<(String, f64)>,
}

impl FlowReport {
    pub fn new(m: f64, flow: f64, method: Method) -> Self {
        Self { m, flow, method, breakdown: Vec::new() }
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.breakdown.push((name.into(), value));
        self
    }

    pub fn part(&self, name: &str) -> Option<f64> {
        self.breakdown.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}
