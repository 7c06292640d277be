//! Rendered output files: CSV with `#`-prefixed metadata, JSON certificates.
//!
//! Every file starts with three metadata lines (tool + command + format
//! version, config hash, effective seed) so results remain attributable to
//! the exact configuration that produced them.  Rendering is pure string
//! building; writing to disk happens once, in the main thread.

/// Documented column schemas, one per file-producing subcommand.  `verify`
/// compares these against what the renderers actually emit, so editing a
/// renderer without updating the schema here is a detected drift.
pub const SCHEMAS: &[(&str, &str)] = &[
    ("kernel", "kind,row,col,value"),
    ("sample", "sample,statistic,key,value"),
    ("dv-rate", "quantity,value"),
    ("free-energy", "quantity,n,value"),
    ("trace", "n_particles,route,value"),
];

pub fn schema_for(command: &str) -> &'static str {
    SCHEMAS
        .iter()
        .find(|(c, _)| *c == command)
        .map(|(_, s)| *s)
        .expect("every tabular command has a documented schema")
}

pub struct Csv {
    lines: Vec<String>,
}

impl Csv {
    pub fn new(command: &str, config_hash: u64, seed: u64) -> Self {
        let mut lines = header(command, config_hash, seed);
        lines.push(schema_for(command).to_string());
        Csv { lines }
    }

    pub fn row(&mut self, fields: &[&str]) {
        self.lines.push(fields.join(","));
    }

    pub fn finish(self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

pub fn header(command: &str, config_hash: u64, seed: u64) -> Vec<String> {
    vec![
        format!("# symwalk {command} v1"),
        format!("# config_hash = {config_hash:016x}"),
        format!("# seed = {seed}"),
    ]
}

/// Shortest-roundtrip decimal rendering; reparsing gives the same f64, and
/// the text is independent of thread count and platform.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}
