//! Tables, CSV ingestion with declarative encodings, random imputation,
//! seeded train/test splits and confusion-matrix evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    /// Small-integer codes indexing into the column's level labels.
    Categorical,
    /// 0/1 only.
    Binary,
}

/// One named column. Missingness is carried per cell as `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    name: String,
    kind: ColumnKind,
    values: Vec<Option<f64>>,
    levels: Vec<String>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            values: values.into_iter().map(Some).collect(),
            levels: Vec::new(),
        }
    }

    pub fn numeric_with_missing(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            values,
            levels: Vec::new(),
        }
    }

    pub fn binary(name: impl Into<String>, values: Vec<Option<f64>>) -> Result<Self> {
        let name = name.into();
        for (row, v) in values.iter().enumerate() {
            if let Some(v) = v {
                if *v != 0.0 && *v != 1.0 {
                    return Err(Error::InvalidValue {
                        column: name,
                        row,
                        reason: format!("binary column holds {v}"),
                    });
                }
            }
        }
        Ok(Column {
            name,
            kind: ColumnKind::Binary,
            values,
            levels: Vec::new(),
        })
    }

    /// Categorical column; levels are sorted so codes do not depend on row order.
    pub fn categorical(name: impl Into<String>, labels: Vec<Option<String>>) -> Self {
        let mut levels: Vec<String> = labels
            .iter()
            .flatten()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        levels.shrink_to_fit();
        let code: HashMap<&str, usize> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let values = labels
            .iter()
            .map(|l| l.as_ref().map(|l| code[l.as_str()] as f64))
            .collect();
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            values,
            levels,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.kind
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Display label of a cell: the level for categorical columns, the number otherwise.
    pub fn label(&self, row: usize) -> Option<String> {
        self.values[row].map(|v| match self.kind {
            ColumnKind::Categorical => self.levels[v as usize].clone(),
            _ => format_number(v),
        })
    }

    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    fn take(&self, rows: &[usize]) -> Column {
        Column {
            name: self.name.clone(),
            kind: self.kind,
            values: rows.iter().map(|&r| self.values[r]).collect(),
            levels: self.levels.clone(),
        }
    }
}

pub(crate) fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Immutable rectangular dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    columns: Vec<Column>,
    n_rows: usize,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
            if c.len() != n_rows {
                return Err(Error::LengthMismatch {
                    left: n_rows,
                    right: c.len(),
                });
            }
        }
        Ok(Table { columns, n_rows })
    }

    /// Convenience constructor for fully observed numeric data.
    pub fn from_numeric(columns: Vec<(&str, Vec<f64>)>) -> Result<Self> {
        Table::new(
            columns
                .into_iter()
                .map(|(n, v)| Column::numeric(n, v))
                .collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Fully observed values of a column; errors if any cell is missing.
    pub fn complete(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        col.values
            .iter()
            .map(|v| {
                v.ok_or_else(|| Error::MissingValues {
                    column: name.to_string(),
                })
            })
            .collect()
    }

    pub fn take_rows(&self, rows: &[usize]) -> Table {
        Table {
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Replace the column of the same name, or append it.
    pub fn with_column(&self, column: Column) -> Result<Table> {
        if column.len() != self.n_rows && !self.columns.is_empty() {
            return Err(Error::LengthMismatch {
                left: self.n_rows,
                right: column.len(),
            });
        }
        let mut columns = self.columns.clone();
        match columns.iter_mut().find(|c| c.name == column.name) {
            Some(slot) => *slot = column,
            None => columns.push(column),
        }
        Table::new(columns)
    }

    pub fn select(&self, names: &[&str]) -> Result<Table> {
        let cols = names
            .iter()
            .map(|n| self.column(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        Table::new(cols)
    }

    /// Rows where the named column's display label equals `label`.
    pub fn filter_eq(&self, name: &str, label: &str) -> Result<Table> {
        let col = self.column(name)?;
        let rows: Vec<usize> = (0..self.n_rows)
            .filter(|&r| col.label(r).as_deref() == Some(label))
            .collect();
        Ok(self.take_rows(&rows))
    }

    /// Drop every row with a missing cell in any of `names`.
    pub fn drop_incomplete(&self, names: &[&str]) -> Result<Table> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<usize> = (0..self.n_rows)
            .filter(|&r| cols.iter().all(|c| c.values[r].is_some()))
            .collect();
        Ok(self.take_rows(&rows))
    }

    /// Row-wise union of tables; absent columns become missing.
    pub fn concat(tables: &[Table]) -> Result<Table> {
        let mut order: Vec<String> = Vec::new();
        let mut kinds: HashMap<String, ColumnKind> = HashMap::new();
        for t in tables {
            for c in &t.columns {
                match kinds.get(&c.name) {
                    None => {
                        kinds.insert(c.name.clone(), c.kind);
                        order.push(c.name.clone());
                    }
                    Some(k) if *k == c.kind => {}
                    Some(k) => {
                        return Err(Error::Degenerate(format!(
                            "column `{}` is {:?} in one table and {:?} in another",
                            c.name, k, c.kind
                        )))
                    }
                }
            }
        }
        let mut columns = Vec::with_capacity(order.len());
        for name in &order {
            let kind = kinds[name];
            if kind == ColumnKind::Categorical {
                let mut labels = Vec::new();
                for t in tables {
                    match t.column(name) {
                        Ok(c) => labels.extend((0..t.n_rows).map(|r| c.label(r))),
                        Err(_) => labels.extend(std::iter::repeat_n(None, t.n_rows)),
                    }
                }
                columns.push(Column::categorical(name.clone(), labels));
            } else {
                let mut values = Vec::new();
                for t in tables {
                    match t.column(name) {
                        Ok(c) => values.extend_from_slice(&c.values),
                        Err(_) => values.extend(std::iter::repeat_n(None, t.n_rows)),
                    }
                }
                columns.push(Column {
                    name: name.clone(),
                    kind,
                    values,
                    levels: Vec::new(),
                });
            }
        }
        Table::new(columns)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.names())?;
        for r in 0..self.n_rows {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|c| c.label(r).unwrap_or_default())
                .collect();
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Binary,
    #[default]
    Ordinal,
    /// Continuous values inside the bounds, no rounding.
    Normalized,
}

/// Declarative recoding of one raw column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingRule {
    #[serde(skip)]
    pub source: String,
    /// Output column name; defaults to the source name.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub kind: ScaleKind,
    /// Inclusive output bounds.
    pub scale: [f64; 2],
    /// Raw string to code.
    #[serde(default)]
    pub map: BTreeMap<String, f64>,
    /// Raw numeric range mapped linearly onto `scale`.
    #[serde(default)]
    pub rescale: Option<[f64; 2]>,
    /// Ascending cutpoints; code = scale[0] + number of cutpoints <= value.
    #[serde(default)]
    pub bins: Vec<f64>,
}

impl EncodingRule {
    pub fn target(&self) -> &str {
        self.target.as_deref().unwrap_or(&self.source)
    }

    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale;
        let bad = |msg: String| Err(Error::Rules(format!("`{}`: {msg}", self.source)));
        if !(lo < hi) {
            return bad(format!("scale [{lo}, {hi}] is empty"));
        }
        if self.kind == ScaleKind::Binary && (lo != 0.0 || hi != 1.0) {
            return bad("binary rules must use scale [0, 1]".into());
        }
        for (raw, code) in &self.map {
            if *code < lo || *code > hi {
                return bad(format!("code {code} for `{raw}` is outside [{lo}, {hi}]"));
            }
            if self.kind == ScaleKind::Binary && *code != 0.0 && *code != 1.0 {
                return bad(format!("binary code {code} for `{raw}`"));
            }
        }
        if let Some([a, b]) = self.rescale {
            if !(a < b) {
                return bad(format!("rescale range [{a}, {b}] is empty"));
            }
        }
        if self.bins.windows(2).any(|w| w[0] >= w[1]) {
            return bad("bins must be strictly ascending".into());
        }
        Ok(())
    }

    /// Encode one raw cell. Unmapped or unparsable values become missing.
    pub fn encode(&self, raw: &str) -> Option<f64> {
        let raw = raw.trim();
        if raw.is_empty() {
            return None;
        }
        if let Some(code) = self.map.get(raw) {
            return Some(*code);
        }
        if !self.map.is_empty() && self.rescale.is_none() && self.bins.is_empty() {
            return None;
        }
        let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite())?;
        let [lo, hi] = self.scale;
        let scaled = if !self.bins.is_empty() {
            lo + self.bins.iter().filter(|c| **c <= v).count() as f64
        } else if let Some([a, b]) = self.rescale {
            lo + (v - a) / (b - a) * (hi - lo)
        } else {
            v
        };
        let scaled = match self.kind {
            // f64::round rounds half away from zero.
            ScaleKind::Binary | ScaleKind::Ordinal => scaled.round(),
            ScaleKind::Normalized => scaled,
        };
        Some(scaled.clamp(lo, hi))
    }
}

/// A set of encoding rules keyed by source column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<EncodingRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<EncodingRule>) -> Result<Self> {
        let mut targets = HashSet::new();
        for r in &rules {
            r.validate()?;
            if !targets.insert(r.target().to_string()) {
                return Err(Error::Rules(format!("target `{}` defined twice", r.target())));
            }
        }
        Ok(RuleSet { rules })
    }

    /// Parse a TOML document whose tables are keyed by source column name.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, EncodingRule> =
            toml::from_str(text).map_err(|e| Error::Rules(e.to_string()))?;
        RuleSet::new(
            raw.into_iter()
                .map(|(source, mut rule)| {
                    rule.source = source;
                    rule
                })
                .collect(),
        )
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RuleSet::from_toml_str(&text)
    }

    pub fn rules(&self) -> &[EncodingRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn get(&self, source: &str) -> Option<&EncodingRule> {
        self.rules.iter().find(|r| r.source == source)
    }

    /// Rule sources absent from `header`.
    pub fn unmatched(&self, header: &[&str]) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| !header.contains(&r.source.as_str()))
            .map(|r| r.source.clone())
            .collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>, rules: &RuleSet) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, rules)
}

/// Parse CSV text. Rule-governed columns are encoded; other columns are
/// numeric when every present cell parses, categorical otherwise.
pub fn read_csv<R: Read>(reader: R, rules: &RuleSet) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let unmatched = rules.unmatched(&header_refs);
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedColumns(unmatched));
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row: i + 1,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            raw[j].push(field.to_string());
        }
    }

    let mut columns = Vec::with_capacity(header.len());
    for (name, cells) in header.iter().zip(raw) {
        let column = match rules.get(name) {
            Some(rule) => {
                let values: Vec<Option<f64>> = cells.iter().map(|c| rule.encode(c)).collect();
                let col = if rule.kind == ScaleKind::Binary {
                    Column::binary(name.clone(), values)?
                } else {
                    Column::numeric_with_missing(name.clone(), values)
                };
                col.renamed(rule.target())
            }
            None => infer_column(name, &cells),
        };
        columns.push(column);
    }
    Table::new(columns)
}

fn infer_column(name: &str, cells: &[String]) -> Column {
    let parsed: Vec<Option<Option<f64>>> = cells
        .iter()
        .map(|c| {
            let c = c.trim();
            if c.is_empty() {
                Some(None)
            } else {
                c.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
            }
        })
        .collect();
    if parsed.iter().all(Option::is_some) {
        Column::numeric_with_missing(name, parsed.into_iter().flatten().collect())
    } else {
        Column::categorical(
            name,
            cells
                .iter()
                .map(|c| {
                    let c = c.trim();
                    (!c.is_empty()).then(|| c.to_string())
                })
                .collect(),
        )
    }
}

/// Fill missing cells of `column` by sampling, with replacement, from the
/// observed cells of the same column within the same group.
pub fn random_impute(
    t: &Table,
    column: &str,
    group_column: Option<&str>,
    seed: u64,
) -> Result<Table> {
    let col = t.column(column)?;
    if col.missing_count() == 0 {
        return Ok(t.clone());
    }
    let group_of: Vec<String> = match group_column {
        Some(g) => {
            let gc = t.column(g)?;
            (0..t.n_rows())
                .map(|r| gc.label(r).unwrap_or_else(|| "<missing>".into()))
                .collect()
        }
        None => vec!["<all>".to_string(); t.n_rows()],
    };
    let mut pools: HashMap<&str, Vec<f64>> = HashMap::new();
    for (r, v) in col.values.iter().enumerate() {
        let pool = pools.entry(group_of[r].as_str()).or_default();
        if let Some(v) = v {
            pool.push(*v);
        }
    }
    let mut rng = rng::seeded(seed);
    let mut values = col.values.clone();
    for (r, slot) in values.iter_mut().enumerate() {
        if slot.is_none() {
            let pool = &pools[group_of[r].as_str()];
            if pool.is_empty() {
                return Err(Error::EmptyGroup {
                    column: column.to_string(),
                    group: group_of[r].clone(),
                });
            }
            *slot = Some(pool[rng.random_range(0..pool.len())]);
        }
    }
    let filled = Column {
        values,
        ..col.clone()
    };
    t.with_column(filled)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_size: usize,
    pub seed: u64,
}

/// Random train/test partition; both parts keep the original row order.
pub fn split(t: &Table, spec: &SplitSpec) -> Result<(Table, Table)> {
    let n = t.n_rows();
    if spec.test_size > n {
        return Err(Error::InvalidParameter(format!(
            "test size {} exceeds {n} rows",
            spec.test_size
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let mut in_test = vec![false; n];
    for i in index::sample(&mut rng, n, spec.test_size) {
        in_test[i] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_test[i]);
    Ok((t.take_rows(&train), t.take_rows(&test)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn evaluate(predicted: &[f64], actual: &[f64]) -> Result<EvalReport> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::TooFewRows {
            needed: 1,
            found: 0,
        });
    }
    let check = |i: usize, v: f64| {
        if v == 0.0 || v == 1.0 {
            Ok(v == 1.0)
        } else {
            Err(Error::NonBinary { index: i, value: v })
        }
    };
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (i, (&p, &a)) in predicted.iter().zip(actual).enumerate() {
        match (check(i, p)?, check(i, a)?) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = (tp + tn + fp + fn_) as f64;
    Ok(EvalReport {
        tp,
        tn,
        fp,
        fn_,
        accuracy: (tp + tn) as f64 / total,
    })
}
