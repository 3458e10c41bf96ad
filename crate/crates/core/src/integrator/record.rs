use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

/// Named real-valued time series sampled on a common uniform grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpectationTraces {
    pub dt: f64,
    pub t: Vec<f64>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl ExpectationTraces {
    pub fn new(dt: f64, t: Vec<f64>) -> Self {
        Self {
            dt,
            t,
            series: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.series.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with a `t` column followed by one column per series, in name order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let names: Vec<&String> = self.series.keys().collect();
        write!(w, "t")?;
        for n in &names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (k, t) in self.t.iter().enumerate() {
            write!(w, "{t:.9e}")?;
            for n in &names {
                write!(w, ",{:.12e}", self.series[*n][k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty traces file".into()))??;
        let names: Vec<String> = header.split(',').map(str::to_string).collect();
        if names.first().map(String::as_str) != Some("t") {
            return Err(bad("traces header must start with `t`".into()));
        }
        let mut t = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len() - 1];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_, _>>()?;
            if vals.len() != names.len() {
                return Err(bad(format!("row has {} fields, expected {}", vals.len(), names.len())));
            }
            t.push(vals[0]);
            for (c, v) in cols.iter_mut().zip(&vals[1..]) {
                c.push(*v);
            }
        }
        let dt = if t.len() > 1 { t[1] - t[0] } else { 0.0 };
        Ok(Self {
            dt,
            t,
            series: names.into_iter().skip(1).zip(cols).collect(),
        })
    }
}

/// One homodyne realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub seed: u64,
    /// Sample spacing of `current` (the record bin width).
    pub dt: f64,
    /// Homodyne current `J = √(η κ_A) ⟨Ŷ_A⟩ + ξ`, averaged over each record bin.
    pub current: Vec<f64>,
    pub traces: Option<ExpectationTraces>,
    /// Population of the top measurement-mode level at the end of the run.
    pub top_level_pop: f64,
    /// Its peak over the run.
    pub top_level_peak: f64,
}
