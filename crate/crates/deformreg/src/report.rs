//! Flat JSON reports.
//!
//! Keys are dotted paths with fixed names:
//!
//! | key | value |
//! |-----|-------|
//! | `dice.mean`, `dice.per_class.<k>` | Dice (`null` when class `k` is in neither map) |
//! | `hd95.mean`, `hd95.per_class.<k>` | HD95 in mm |
//! | `tre.mean`, `tre.per_landmark` | TRE in mm (number, array) |
//! | `sdlogj` | std of log Jacobian determinant |
//! | `dice30`, `tre30` | worst-30% scores, when set |
//! | `timing.<stage>` | seconds per pipeline stage (verbose only) |
//!
//! Batch reports prefix every case key with `case.<n>.` and add `cohort.*`.

use std::collections::BTreeMap;
use std::path::Path;

use deformreg_core::{CohortSummary, DiceScores, MetricReport, SurfaceScores, TreScores};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: BTreeMap<String, Value>,
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value) {
        self.entries.insert(key.into(), value);
    }

    pub fn set_num(&mut self, key: impl Into<String>, v: f64) {
        self.set(key, num(v));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(Value::as_f64)
    }

    pub fn from_metrics(m: &MetricReport) -> Self {
        let mut r = Self::new();
        r.add_metrics("", m);
        r
    }

    /// Inserts the metric keys under `prefix`.
    pub fn add_metrics(&mut self, prefix: &str, m: &MetricReport) {
        let key = |k: &str| format!("{prefix}{k}");
        if let Some(d) = &m.dice {
            self.set(key("dice.mean"), d.mean.map_or(Value::Null, num));
            for (k, v) in &d.per_class {
                self.set(key(&format!("dice.per_class.{k}")), v.map_or(Value::Null, num));
            }
        }
        if let Some(h) = &m.hd95 {
            self.set_num(key("hd95.mean"), h.mean);
            for (k, v) in &h.per_class {
                self.set_num(key(&format!("hd95.per_class.{k}")), *v);
            }
        }
        if let Some(t) = &m.tre {
            self.set_num(key("tre.mean"), t.mean);
            self.set(key("tre.per_landmark"), Value::Array(t.per_landmark.iter().map(|&v| num(v)).collect()));
        }
        if let Some(v) = m.sdlogj {
            self.set_num(key("sdlogj"), v);
        }
        if let Some(v) = m.dice30 {
            self.set_num(key("dice30"), v);
        }
        if let Some(v) = m.tre30 {
            self.set_num(key("tre30"), v);
        }
    }

    pub fn add_cohort(&mut self, c: &CohortSummary) {
        self.set("cohort.cases", Value::from(c.cases));
        let fields = [
            ("cohort.dice.mean", c.mean_dice),
            ("cohort.dice30", c.dice30),
            ("cohort.hd95.mean", c.mean_hd95),
            ("cohort.tre.mean", c.mean_tre),
            ("cohort.tre30", c.tre30),
            ("cohort.sdlogj.mean", c.mean_sdlogj),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                self.set_num(k, v);
            }
        }
    }

    /// Reads the metric keys back; inverse of [`Report::from_metrics`].
    pub fn to_metrics(&self) -> Result<MetricReport> {
        let bad = |k: &str| Error::Input(format!("report key {k:?} has an unexpected value"));
        let f = |k: &str| -> Result<Option<f64>> {
            match self.get(k) {
                None => Ok(None),
                Some(v) => v.as_f64().map(Some).ok_or_else(|| bad(k)),
            }
        };
        let per_class = |prefix: &str| -> Result<BTreeMap<u32, Value>> {
            let mut out = BTreeMap::new();
            for (k, v) in self.entries.range(prefix.to_string()..) {
                let Some(class) = k.strip_prefix(prefix) else { break };
                out.insert(class.parse().map_err(|_| bad(k))?, v.clone());
            }
            Ok(out)
        };
        let mut m = MetricReport::default();
        if let Some(v) = self.get("dice.mean") {
            let mean = if v.is_null() { None } else { Some(v.as_f64().ok_or_else(|| bad("dice.mean"))?) };
            let per_class = per_class("dice.per_class.")?
                .into_iter()
                .map(|(k, v)| if v.is_null() { Ok((k, None)) } else { v.as_f64().map(|x| (k, Some(x))).ok_or_else(|| bad("dice.per_class")) })
                .collect::<Result<_>>()?;
            m.dice = Some(DiceScores { per_class, mean });
        }
        if let Some(mean) = f("hd95.mean")? {
            let per_class = per_class("hd95.per_class.")?
                .into_iter()
                .map(|(k, v)| v.as_f64().map(|x| (k, x)).ok_or_else(|| bad("hd95.per_class")))
                .collect::<Result<_>>()?;
            m.hd95 = Some(SurfaceScores { per_class, mean });
        }
        if let Some(mean) = f("tre.mean")? {
            let per_landmark = self
                .get("tre.per_landmark")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("tre.per_landmark"))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| bad("tre.per_landmark")))
                .collect::<Result<_>>()?;
            m.tre = Some(TreScores { per_landmark, mean });
        }
        m.sdlogj = f("sdlogj")?;
        m.dice30 = f("dice30")?;
        m.tre30 = f("tre30")?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("report serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries = serde_json::from_str(text).map_err(|e| Error::Input(format!("invalid report: {e}")))?;
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
