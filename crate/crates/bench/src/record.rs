//! Benchmark result rows and their CSV / JSON encodings.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 9] =
    ["scenario", "mechanism", "shape", "repeat", "iters", "wall_ms_med", "wall_ms_p10", "wall_ms_p90", "peak_bytes"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    AttentionRepeat,
    FawaVsPool,
    #[serde(rename = "complexity_sweep")]
    Complexity,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::AttentionRepeat, Scenario::FawaVsPool, Scenario::Complexity];

    /// Value of the `scenario` column.
    pub fn name(self) -> &'static str {
        match self {
            Scenario::AttentionRepeat => "attention_repeat",
            Scenario::FawaVsPool => "fawa_vs_pool",
            Scenario::Complexity => "complexity_sweep",
        }
    }

    /// Command-line spelling, also the stem of the output files.
    pub fn command(self) -> &'static str {
        match self {
            Scenario::AttentionRepeat => "attention-repeat",
            Scenario::FawaVsPool => "fawa-vs-pool",
            Scenario::Complexity => "complexity",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s || sc.command() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}; expected attention-repeat, fawa-vs-pool or complexity"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "FWA")]
    Fwa,
    #[serde(rename = "FWA_cached")]
    FwaCached,
    #[serde(rename = "MHSA")]
    Mhsa,
    #[serde(rename = "PooledKey")]
    PooledKey,
    #[serde(rename = "FAWA_op")]
    FawaOp,
    #[serde(rename = "Pool_op")]
    PoolOp,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Fwa => "FWA",
            Mechanism::FwaCached => "FWA_cached",
            Mechanism::Mhsa => "MHSA",
            Mechanism::PooledKey => "PooledKey",
            Mechanism::FawaOp => "FAWA_op",
            Mechanism::PoolOp => "Pool_op",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: Scenario,
    pub mechanism: Mechanism,
    pub shape: Vec<usize>,
    pub repeat: usize,
    pub iters: usize,
    pub wall_ms: f64,
    pub wall_ms_p10: f64,
    pub wall_ms_p90: f64,
    pub peak_bytes: u64,
}

impl BenchRecord {
    /// `8x96x32x32`
    pub fn shape_label(&self) -> String {
        self.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }

    /// Every field except the wall-clock ones.
    pub fn deterministic_fields(&self) -> (Scenario, Mechanism, &[usize], usize, usize, u64) {
        (self.scenario, self.mechanism, &self.shape, self.repeat, self.iters, self.peak_bytes)
    }
}

/// JSON row: the CSV columns plus the schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonRecord {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub mechanism: Mechanism,
    pub shape: Vec<usize>,
    pub repeat: usize,
    pub iters: usize,
    pub wall_ms_med: f64,
    pub wall_ms_p10: f64,
    pub wall_ms_p90: f64,
    pub peak_bytes: u64,
}

impl From<&BenchRecord> for JsonRecord {
    fn from(r: &BenchRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario,
            mechanism: r.mechanism,
            shape: r.shape.clone(),
            repeat: r.repeat,
            iters: r.iters,
            wall_ms_med: r.wall_ms,
            wall_ms_p10: r.wall_ms_p10,
            wall_ms_p90: r.wall_ms_p90,
            peak_bytes: r.peak_bytes,
        }
    }
}

pub fn write_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.scenario.name().to_string(),
            r.mechanism.name().to_string(),
            r.shape_label(),
            r.repeat.to_string(),
            r.iters.to_string(),
            format!("{:.6}", r.wall_ms),
            format!("{:.6}", r.wall_ms_p10),
            format!("{:.6}", r.wall_ms_p90),
            r.peak_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json(records: &[BenchRecord]) -> Result<String> {
    let rows: Vec<JsonRecord> = records.iter().map(JsonRecord::from).collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// Writes `<scenario>.csv` and `<scenario>.json` into `dir`.
pub fn write_outputs(dir: &Path, scenario: Scenario, records: &[BenchRecord]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", scenario.command()));
    let json_path = dir.join(format!("{}.json", scenario.command()));
    write_csv(File::create(&csv_path)?, records)?;
    let mut json = to_json(records)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BenchRecord {
        BenchRecord {
            scenario: Scenario::FawaVsPool,
            mechanism: Mechanism::FawaOp,
            shape: vec![1, 96, 80, 80],
            repeat: 1,
            iters: 5,
            wall_ms: 0.5,
            wall_ms_p10: 0.4,
            wall_ms_p90: 0.7,
            peak_bytes: 1024,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[sample()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "scenario,mechanism,shape,repeat,iters,wall_ms_med,wall_ms_p10,wall_ms_p90,peak_bytes");
        assert_eq!(lines.next().unwrap(), "fawa_vs_pool,FAWA_op,1x96x80x80,1,5,0.500000,0.400000,0.700000,1024");
    }

    #[test]
    fn json_carries_schema_version() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&[sample()]).unwrap()).unwrap();
        assert_eq!(v[0]["schema_version"], 1);
        assert_eq!(v[0]["mechanism"], "FAWA_op");
        assert_eq!(v[0]["scenario"], "fawa_vs_pool");
        assert_eq!(v[0]["wall_ms_med"], 0.5);
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
            assert_eq!(s.command().parse::<Scenario>().unwrap(), s);
        }
        assert!("attention".parse::<Scenario>().is_err());
    }
}
