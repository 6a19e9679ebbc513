use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SampleRecord, TreatmentFrame};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Assignment {
    /// Integer arm column with values `1..=H`.
    Arm(String),
    /// One 0/1 column per arm.
    OneHot(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Regressors {
    /// The same columns for every arm.
    Shared(Vec<String>),
    /// `per_arm[h]` are the columns of arm `h + 1`.
    PerArm(Vec<Vec<String>>),
}

/// Column roles of a delimited input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub outcome: String,
    pub assignment: Assignment,
    /// Arm count; inferred from the largest arm value when omitted.
    #[serde(default)]
    pub arms: Option<usize>,
    pub regressors: Regressors,
    /// Prepend a constant 1 to every regressor vector.
    #[serde(default)]
    pub intercept: bool,
    #[serde(default)]
    pub confounders: Vec<String>,
}

impl ColumnSchema {
    pub fn declared_arms(&self) -> Option<usize> {
        match (&self.assignment, &self.regressors) {
            (Assignment::OneHot(c), _) => Some(c.len()),
            (_, Regressors::PerArm(r)) => Some(r.len()),
            _ => self.arms,
        }
    }

    /// Roles must not share columns; per-arm lengths must agree.
    pub fn validate(&self) -> Result<()> {
        let assignment: Vec<&String> = match &self.assignment {
            Assignment::Arm(c) => vec![c],
            Assignment::OneHot(c) => c.iter().collect(),
        };
        let regressors: HashSet<&String> = match &self.regressors {
            Regressors::Shared(c) => c.iter().collect(),
            Regressors::PerArm(c) => c.iter().flatten().collect(),
        };
        let roles: [(&str, Vec<&String>); 4] = [
            ("outcome", vec![&self.outcome]),
            ("assignment", assignment),
            ("regressor", regressors.into_iter().collect()),
            ("confounder", self.confounders.iter().collect()),
        ];
        for (i, (ra, ca)) in roles.iter().enumerate() {
            for (rb, cb) in &roles[i + 1..] {
                if let Some(c) = ca.iter().find(|c| cb.contains(c)) {
                    return Err(Error::config(format!("column {c:?} is used as both {ra} and {rb}")));
                }
            }
        }
        if let Regressors::PerArm(r) = &self.regressors {
            if r.iter().any(|c| c.len() != r[0].len()) {
                return Err(Error::config("every arm needs the same number of regressor columns"));
            }
        }
        if let (Some(a), Some(d)) = (self.arms, self.declared_arms()) {
            if a != d {
                return Err(Error::config(format!("schema declares {a} arms but lists columns for {d}")));
            }
        }
        if self.dim_x() == 0 {
            return Err(Error::config("schema lists no regressors"));
        }
        Ok(())
    }

    pub fn dim_x(&self) -> usize {
        let n = match &self.regressors {
            Regressors::Shared(c) => c.len(),
            Regressors::PerArm(c) => c.first().map_or(0, Vec::len),
        };
        n + usize::from(self.intercept)
    }

    /// Display names of the regressors; per-arm columns are joined with `|`.
    pub fn regressor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.intercept {
            out.push("(intercept)".to_string());
        }
        match &self.regressors {
            Regressors::Shared(c) => out.extend(c.iter().cloned()),
            Regressors::PerArm(c) => {
                let k = c.first().map_or(0, Vec::len);
                out.extend((0..k).map(|j| c.iter().map(|a| a[j].as_str()).collect::<Vec<_>>().join("|")));
            }
        }
        out
    }

    /// Schema of the files written by [`write_frame`].
    pub fn for_frame(frame: &TreatmentFrame) -> Self {
        let shared = frame.records().iter().all(|r| r.x.iter().all(|x| x == &r.x[0]));
        let regressors = if shared {
            Regressors::Shared((1..=frame.dim_x()).map(|j| format!("x{j}")).collect())
        } else {
            Regressors::PerArm(
                (1..=frame.arms())
                    .map(|h| (1..=frame.dim_x()).map(|j| format!("x{h}_{j}")).collect())
                    .collect(),
            )
        };
        ColumnSchema {
            outcome: "y".into(),
            assignment: Assignment::Arm("arm".into()),
            arms: Some(frame.arms()),
            regressors,
            intercept: false,
            confounders: (1..=frame.dim_z()).map(|j| format!("z{j}")).collect(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::ingest(None, format!("missing column {name:?}")))
}

fn number(rec: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::ingest(Some(row), format!("column {name:?}: {raw:?} is not a finite number")))
}

/// Reads a delimited file with a header row. Rows are numbered from 1 after
/// the header.
pub fn ingest(path: &Path, schema: &ColumnSchema, delimiter: u8) -> Result<TreatmentFrame> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ingest(None, format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let y_col = column(&headers, &schema.outcome)?;
    let assign_cols: Vec<usize> = match &schema.assignment {
        Assignment::Arm(c) => vec![column(&headers, c)?],
        Assignment::OneHot(cs) => cs.iter().map(|c| column(&headers, c)).collect::<Result<_>>()?,
    };
    let x_cols: Vec<Vec<(usize, &str)>> = match &schema.regressors {
        Regressors::Shared(cs) => vec![cs
            .iter()
            .map(|c| Ok((column(&headers, c)?, c.as_str())))
            .collect::<Result<_>>()?],
        Regressors::PerArm(arms) => arms
            .iter()
            .map(|cs| cs.iter().map(|c| Ok((column(&headers, c)?, c.as_str()))).collect::<Result<_>>())
            .collect::<Result<_>>()?,
    };
    let z_cols: Vec<usize> = schema.confounders.iter().map(|c| column(&headers, c)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut max_arm = 0;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::ingest(Some(row), e.to_string()))?;
        let y = number(&rec, y_col, &schema.outcome, row)?;
        let arm = match &schema.assignment {
            Assignment::Arm(name) => {
                let v = number(&rec, assign_cols[0], name, row)?;
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(Error::ingest(Some(row), format!("arm value {v} is not an integer in 1..H")));
                }
                v as usize - 1
            }
            Assignment::OneHot(names) => {
                let t: Vec<f64> = assign_cols
                    .iter()
                    .zip(names)
                    .map(|(&c, n)| number(&rec, c, n, row))
                    .collect::<Result<_>>()?;
                if t.iter().any(|v| *v != 0.0 && *v != 1.0) {
                    return Err(Error::ingest(Some(row), "one-hot assignment entries must be 0 or 1"));
                }
                let ones = t.iter().filter(|v| **v == 1.0).count();
                if ones != 1 {
                    return Err(Error::ingest(Some(row), format!("one-hot assignment has {ones} active arms")));
                }
                t.iter().position(|v| *v == 1.0).expect("one active arm")
            }
        };
        max_arm = max_arm.max(arm + 1);
        let read = |cols: &[(usize, &str)]| -> Result<Vec<f64>> {
            let mut x = Vec::with_capacity(cols.len() + 1);
            if schema.intercept {
                x.push(1.0);
            }
            for &(c, n) in cols {
                x.push(number(&rec, c, n, row)?);
            }
            Ok(x)
        };
        let xs: Vec<Vec<f64>> = x_cols.iter().map(|c| read(c)).collect::<Result<_>>()?;
        let z: Vec<f64> = z_cols
            .iter()
            .zip(&schema.confounders)
            .map(|(&c, n)| number(&rec, c, n, row))
            .collect::<Result<_>>()?;
        records.push((y, arm, xs, z, row));
    }
    if records.is_empty() {
        return Err(Error::ingest(None, "file has no data rows"));
    }
    let arms = schema.declared_arms().unwrap_or(max_arm);
    let frame_records = records
        .into_iter()
        .map(|(y, arm, xs, z, row)| {
            if arm >= arms {
                return Err(Error::ingest(Some(row), format!("arm {} exceeds the {arms} declared arms", arm + 1)));
            }
            let x = if xs.len() == 1 { vec![xs[0].clone(); arms] } else { xs };
            Ok(SampleRecord::new(y, arm, x, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let frame = TreatmentFrame::new(frame_records, arms, schema.dim_x(), schema.confounders.len())?;
    if let Some(h) = frame.arm_counts().iter().position(|&c| c == 0) {
        return Err(Error::ingest(None, format!("arm {} has no records", h + 1)));
    }
    Ok(frame)
}

/// Writes `frame` with the layout of [`ColumnSchema::for_frame`]. Values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_frame(frame: &TreatmentFrame, path: &Path) -> Result<ColumnSchema> {
    let schema = ColumnSchema::for_frame(frame);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y".to_string(), "arm".to_string()];
    let shared = matches!(schema.regressors, Regressors::Shared(_));
    match &schema.regressors {
        Regressors::Shared(c) => header.extend(c.iter().cloned()),
        Regressors::PerArm(c) => header.extend(c.iter().flatten().cloned()),
    }
    header.extend(schema.confounders.iter().cloned());
    w.write_record(&header)?;
    for r in frame.records() {
        let mut row = vec![r.y.to_string(), (r.arm + 1).to_string()];
        let xs = if shared { &r.x[..1] } else { &r.x[..] };
        row.extend(xs.iter().flatten().map(f64::to_string));
        row.extend(r.z.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(schema)
}
