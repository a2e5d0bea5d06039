//! CSV loading, column type inference and initial-state facts.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::FeatureType;

/// Token substituted for missing categorical/text cells at featurization time.
pub const MISSING_TOKEN: &str = "__missing__";

const CATEGORICAL_RATIO: f64 = 0.05;
const CATEGORICAL_COUNT: usize = 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IngestError {
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("≥2 rows required (found {0})")]
    TooFewRows(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("untyped column `{0}`: every value is missing")]
    UntypedColumn(String),
    #[error("column `{column}`, row {row}: `{value}` does not parse as {expected}")]
    TypeMismatch {
        column: String,
        row: usize,
        value: String,
        expected: FeatureType,
    },
    #[error("malformed fact set: {0}")]
    Facts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Train,
    Test,
}

impl DatasetRole {
    fn as_str(self) -> &'static str {
        match self {
            DatasetRole::Train => "train",
            DatasetRole::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ColumnSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub feature_type: FeatureType,
    /// Header text before normalization, when the column came from a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetSchema {
    pub dataset_name: String,
    pub columns: Vec<ColumnSchema>,
    pub target_name: Option<String>,
    pub role: DatasetRole,
}

impl DatasetSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Resolves a raw or normalized column name to the normalized one.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        let normalized = normalize_field_name(name);
        self.columns
            .iter()
            .find(|c| c.name == name || c.name == normalized || c.source_name.as_deref() == Some(name))
            .map(|c| c.name.as_str())
    }

    /// Every column except the target, in schema order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns
            .iter()
            .filter(move |c| Some(c.name.as_str()) != self.target_name.as_deref())
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(IngestError::Config(format!("duplicate column `{}`", c.name)));
            }
        }
        match (&self.target_name, self.role) {
            (Some(t), _) if self.column(t).is_none() => {
                Err(IngestError::Config(format!("target column `{t}` absent")))
            }
            (None, DatasetRole::Train) => {
                Err(IngestError::Config("train dataset needs a target column".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Column-major cell storage; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "lowercase")]
pub enum ColumnValues {
    Integer(Vec<Option<i64>>),
    Float(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
    Text(Vec<Option<String>>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Integer(v) => v.len(),
            ColumnValues::Float(v) => v.len(),
            ColumnValues::Categorical(v) | ColumnValues::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_type(&self) -> FeatureType {
        match self {
            ColumnValues::Integer(_) => FeatureType::Integer,
            ColumnValues::Float(_) => FeatureType::Float,
            ColumnValues::Categorical(_) => FeatureType::Categorical,
            ColumnValues::Text(_) => FeatureType::Text,
        }
    }

    /// Numeric view of a cell; `None` for missing or non-numeric columns.
    pub fn numeric(&self, row: usize) -> Option<f64> {
        match self {
            ColumnValues::Integer(v) => v[row].map(|x| x as f64),
            ColumnValues::Float(v) => v[row],
            _ => None,
        }
    }

    /// String view of a cell, with missing cells mapped to [`MISSING_TOKEN`].
    pub fn token(&self, row: usize) -> String {
        match self {
            ColumnValues::Integer(v) => v[row].map_or_else(|| MISSING_TOKEN.to_string(), |x| x.to_string()),
            ColumnValues::Float(v) => v[row].map_or_else(|| MISSING_TOKEN.to_string(), |x| x.to_string()),
            ColumnValues::Categorical(v) | ColumnValues::Text(v) => {
                v[row].clone().unwrap_or_else(|| MISSING_TOKEN.to_string())
            }
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnValues::Integer(v) => v[row].is_none(),
            ColumnValues::Float(v) => v[row].is_none(),
            ColumnValues::Categorical(v) | ColumnValues::Text(v) => v[row].is_none(),
        }
    }

    fn take(&self, rows: &[usize]) -> ColumnValues {
        match self {
            ColumnValues::Integer(v) => ColumnValues::Integer(rows.iter().map(|&r| v[r]).collect()),
            ColumnValues::Float(v) => ColumnValues::Float(rows.iter().map(|&r| v[r]).collect()),
            ColumnValues::Categorical(v) => {
                ColumnValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
            ColumnValues::Text(v) => ColumnValues::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }

    /// Parses raw cells under a declared type.
    pub fn parse(
        column: &str,
        cells: &[Option<String>],
        ty: FeatureType,
    ) -> Result<ColumnValues, IngestError> {
        let mismatch = |row: usize, value: &str| IngestError::TypeMismatch {
            column: column.to_string(),
            row,
            value: value.to_string(),
            expected: ty,
        };
        Ok(match ty {
            FeatureType::Integer => ColumnValues::Integer(
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| match c {
                        None => Ok(None),
                        Some(s) => parse_integer(s).map(Some).ok_or_else(|| mismatch(i, s)),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            FeatureType::Float => ColumnValues::Float(
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| match c {
                        None => Ok(None),
                        Some(s) => parse_real(s).map(Some).ok_or_else(|| mismatch(i, s)),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            FeatureType::Categorical => ColumnValues::Categorical(cells.to_vec()),
            FeatureType::Text => ColumnValues::Text(cells.to_vec()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub columns: Vec<ColumnValues>,
    pub row_count: usize,
}

impl Dataset {
    /// Builds a dataset from raw string cells. Types come from `overrides`
    /// (keyed by raw or normalized name) or from [`infer_type`].
    pub fn from_raw_columns(
        dataset_name: &str,
        raw: Vec<(String, Vec<Option<String>>)>,
        target_name: Option<&str>,
        overrides: &BTreeMap<String, FeatureType>,
    ) -> Result<Dataset, IngestError> {
        let row_count = raw.first().map_or(0, |(_, cells)| cells.len());
        if row_count < 2 {
            return Err(IngestError::TooFewRows(row_count));
        }
        let mut schema_columns = Vec::with_capacity(raw.len());
        let mut columns = Vec::with_capacity(raw.len());
        for (source, cells) in &raw {
            if cells.len() != row_count {
                return Err(IngestError::Config(format!(
                    "column `{source}` has {} cells, expected {row_count}",
                    cells.len()
                )));
            }
            let name = normalize_field_name(source);
            let ty = match overrides.get(source).or_else(|| overrides.get(&name)) {
                Some(t) => *t,
                None => infer_type(cells).map_err(|_| IngestError::UntypedColumn(name.clone()))?,
            };
            columns.push(ColumnValues::parse(&name, cells, ty)?);
            schema_columns.push(ColumnSchema {
                name,
                feature_type: ty,
                source_name: Some(source.clone()),
            });
        }
        let mut schema = DatasetSchema {
            dataset_name: normalize_identifier(dataset_name),
            columns: schema_columns,
            target_name: None,
            role: if target_name.is_some() { DatasetRole::Train } else { DatasetRole::Test },
        };
        if let Some(t) = target_name {
            let resolved = schema
                .resolve(t)
                .ok_or_else(|| IngestError::Config(format!("target column `{t}` absent")))?
                .to_string();
            schema.target_name = Some(resolved);
        }
        schema.validate()?;
        Ok(Dataset { schema, columns, row_count })
    }

    pub fn column(&self, name: &str) -> Option<&ColumnValues> {
        self.schema.column_index(name).map(|i| &self.columns[i])
    }

    /// Class label of every row, as strings.
    pub fn target_labels(&self) -> Result<Vec<String>, IngestError> {
        let target = self
            .schema
            .target_name
            .as_deref()
            .ok_or_else(|| IngestError::Config("dataset has no target".into()))?;
        let col = self.column(target).expect("validated target");
        (0..self.row_count)
            .map(|r| {
                if col.is_missing(r) {
                    Err(IngestError::Config(format!("missing target value at row {r}")))
                } else {
                    Ok(col.token(r))
                }
            })
            .collect()
    }

    /// Row subset, preserving schema.
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            row_count: rows.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
    pub target_name: Option<String>,
    pub type_overrides: BTreeMap<String, FeatureType>,
    /// Defaults to the file stem.
    pub dataset_name: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            delimiter: b',',
            target_name: None,
            type_overrides: BTreeMap::new(),
            dataset_name: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let name = options.dataset_name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    });
    read_csv(file, &name, options)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    dataset_name: &str,
    options: &CsvOptions,
) -> Result<Dataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |e: csv::Error| IngestError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let mut names: Vec<String> = if options.has_header {
        rdr.headers().map_err(parse_err)?.iter().map(|h| h.trim().to_string()).collect()
    } else {
        Vec::new()
    };
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); names.len()];
    for record in rdr.records() {
        let record = record.map_err(parse_err)?;
        if names.is_empty() {
            names = (1..=record.len()).map(|i| format!("column_{i}")).collect();
            cells = vec![Vec::new(); names.len()];
        }
        if record.len() != names.len() {
            return Err(IngestError::Parse {
                line: record.position().map_or(0, |p| p.line()),
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            cells[i].push(if is_missing(field) { None } else { Some(field.trim().to_string()) });
        }
    }
    let raw = names.into_iter().zip(cells).collect::<Vec<_>>();
    if raw.is_empty() {
        return Err(IngestError::TooFewRows(0));
    }
    Dataset::from_raw_columns(
        dataset_name,
        raw,
        options.target_name.as_deref(),
        &options.type_overrides,
    )
}

/// Cells treated as missing: empty, `?`, `NA`, `N/A`, `NaN`, `null`.
pub fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty()
        || t == "?"
        || ["na", "n/a", "nan", "null"].iter().any(|m| t.eq_ignore_ascii_case(m))
}

fn parse_integer(s: &str) -> Option<i64> {
    s.trim().parse::<i64>().ok()
}

fn parse_real(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Infers a column type from its cells. Cells that are `None`, or strings
/// recognized by [`is_missing`], do not vote.
pub fn infer_type<S: AsRef<str>>(values: &[Option<S>]) -> Result<FeatureType, IngestError> {
    let present: Vec<&str> = values
        .iter()
        .filter_map(|v| v.as_ref().map(AsRef::as_ref))
        .filter(|s| !is_missing(s))
        .collect();
    if present.is_empty() {
        return Err(IngestError::UntypedColumn(String::new()));
    }
    if present.iter().all(|s| parse_integer(s).is_some()) {
        return Ok(FeatureType::Integer);
    }
    if present.iter().all(|s| parse_real(s).is_some()) {
        return Ok(FeatureType::Float);
    }
    let distinct = present.iter().collect::<HashSet<_>>().len();
    let ratio = distinct as f64 / present.len() as f64;
    if ratio <= CATEGORICAL_RATIO || distinct <= CATEGORICAL_COUNT {
        Ok(FeatureType::Categorical)
    } else {
        Ok(FeatureType::Text)
    }
}

pub fn normalize_identifier(raw: &str) -> String {
    raw.trim()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .flat_map(char::to_lowercase)
        .collect()
}

/// `Age` → `field_age`; names already carrying the prefix are kept.
pub fn normalize_field_name(raw: &str) -> String {
    let base = normalize_identifier(raw);
    if base.starts_with("field_") {
        base
    } else {
        format!("field_{base}")
    }
}

/// Initial-state facts for the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum Fact {
    Datatype { dataset: String, role: DatasetRole },
    HasField { column: String },
    HasType { column: String, feature_type: FeatureType },
    HasTargetfield { dataset: String, column: String },
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::Datatype { dataset, role } => write!(f, "datatype({dataset},{})", role.as_str()),
            Fact::HasField { column } => write!(f, "has_field(data,{column})"),
            Fact::HasType { column, feature_type } => write!(f, "has_type({column},{feature_type})"),
            Fact::HasTargetfield { dataset, column } => {
                write!(f, "has_targetfield({dataset},{column})")
            }
        }
    }
}

pub fn to_initial_facts(schema: &DatasetSchema) -> Vec<Fact> {
    let mut facts = vec![Fact::Datatype {
        dataset: schema.dataset_name.clone(),
        role: schema.role,
    }];
    for c in &schema.columns {
        facts.push(Fact::HasField { column: c.name.clone() });
        facts.push(Fact::HasType {
            column: c.name.clone(),
            feature_type: c.feature_type,
        });
    }
    if let Some(t) = &schema.target_name {
        facts.push(Fact::HasTargetfield {
            dataset: schema.dataset_name.clone(),
            column: t.clone(),
        });
    }
    facts
}

/// Inverse of [`to_initial_facts`] (source header names are not part of the facts).
pub fn schema_from_facts(facts: &[Fact]) -> Result<DatasetSchema, IngestError> {
    let mut dataset = None;
    let mut target = None;
    let mut order: Vec<String> = Vec::new();
    let mut types: BTreeMap<String, FeatureType> = BTreeMap::new();
    for fact in facts {
        match fact {
            Fact::Datatype { dataset: d, role } => {
                if dataset.replace((d.clone(), *role)).is_some() {
                    return Err(IngestError::Facts("more than one datatype fact".into()));
                }
            }
            Fact::HasField { column } => order.push(column.clone()),
            Fact::HasType { column, feature_type } => {
                types.insert(column.clone(), *feature_type);
            }
            Fact::HasTargetfield { column, .. } => target = Some(column.clone()),
        }
    }
    let (dataset_name, role) = dataset.ok_or_else(|| IngestError::Facts("no datatype fact".into()))?;
    let columns = order
        .into_iter()
        .map(|name| {
            let feature_type = *types
                .get(&name)
                .ok_or_else(|| IngestError::Facts(format!("no has_type for `{name}`")))?;
            Ok(ColumnSchema { name, feature_type, source_name: None })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    let schema = DatasetSchema { dataset_name, columns, target_name: target, role };
    schema.validate()?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cells(v: &[&str]) -> Vec<Option<String>> {
        v.iter().map(|s| Some(s.to_string())).collect()
    }

    #[test]
    fn inference_rules() {
        assert_eq!(infer_type(&cells(&["3", "7", "2"])).unwrap(), FeatureType::Integer);
        assert_eq!(infer_type(&cells(&["3.5", "7", "2"])).unwrap(), FeatureType::Float);
        // three distinct strings: the distinct-count rule fires before the text fallback
        assert_eq!(infer_type(&cells(&["1.5", "2.0", "x"])).unwrap(), FeatureType::Categorical);
        let twelve: Vec<String> = (0..1000).map(|i| format!("c{}", i % 12)).collect();
        let twelve: Vec<Option<&str>> = twelve.iter().map(|s| Some(s.as_str())).collect();
        assert_eq!(infer_type(&twelve).unwrap(), FeatureType::Categorical);
        let many: Vec<Option<String>> = (0..100).map(|i| Some(format!("word{i} other"))).collect();
        assert_eq!(infer_type(&many).unwrap(), FeatureType::Text);
        assert!(matches!(
            infer_type(&[None::<String>, Some("?".into())]),
            Err(IngestError::UntypedColumn(_))
        ));
    }

    #[test]
    fn missing_cells_do_not_vote() {
        let v = vec![Some("1"), None, Some(""), Some("4")];
        assert_eq!(infer_type(&v).unwrap(), FeatureType::Integer);
    }

    #[test]
    fn normalizes_names() {
        assert_eq!(normalize_field_name("Age"), "field_age");
        assert_eq!(normalize_field_name("capital-gain"), "field_capital_gain");
        assert_eq!(normalize_field_name("field_sex"), "field_sex");
    }

    #[test]
    fn loads_csv_with_target_and_missing() {
        let text = "age,workclass,salary\n39,State-gov,<=50K\n,Private,>50K\n50,?,<=50K\n";
        let opts = CsvOptions { target_name: Some("salary".into()), ..Default::default() };
        let ds = read_csv(text.as_bytes(), "adult_data", &opts).unwrap();
        assert_eq!(ds.row_count, 3);
        assert_eq!(ds.schema.target_name.as_deref(), Some("field_salary"));
        assert_eq!(ds.schema.column("field_age").unwrap().feature_type, FeatureType::Integer);
        assert_eq!(ds.column("field_age").unwrap().numeric(1), None);
        assert_eq!(ds.column("field_workclass").unwrap().token(2), MISSING_TOKEN);
        assert_eq!(ds.target_labels().unwrap(), vec!["<=50K", ">50K", "<=50K"]);
    }

    #[test]
    fn csv_errors() {
        let header_only = "a\n";
        assert_eq!(
            read_csv(header_only.as_bytes(), "d", &CsvOptions::default()).unwrap_err(),
            IngestError::TooFewRows(0)
        );
        let ragged = "a,b\n1,2\n3\n4,5\n";
        match read_csv(ragged.as_bytes(), "d", &CsvOptions::default()).unwrap_err() {
            IngestError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
        let opts = CsvOptions { target_name: Some("nope".into()), ..Default::default() };
        assert!(matches!(
            read_csv("a,b\n1,2\n3,4\n".as_bytes(), "d", &opts),
            Err(IngestError::Config(_))
        ));
    }

    #[test]
    fn semicolon_delimiter_and_quotes() {
        let text = "name;score\n\"Smith; J\";1.5\nLee;2\n";
        let opts = CsvOptions { delimiter: b';', ..Default::default() };
        let ds = read_csv(text.as_bytes(), "d", &opts).unwrap();
        assert_eq!(ds.column("field_name").unwrap().token(0), "Smith; J");
        assert_eq!(ds.schema.column("field_score").unwrap().feature_type, FeatureType::Float);
    }

    #[test]
    fn overrides_win() {
        let text = "zip,y\n10001,a\n94110,b\n";
        let mut opts = CsvOptions { target_name: Some("y".into()), ..Default::default() };
        opts.type_overrides.insert("zip".into(), FeatureType::Categorical);
        let ds = read_csv(text.as_bytes(), "d", &opts).unwrap();
        assert_eq!(ds.schema.column("field_zip").unwrap().feature_type, FeatureType::Categorical);
    }

    fn adult_schema() -> DatasetSchema {
        let col = |n: &str, t| ColumnSchema { name: n.into(), feature_type: t, source_name: None };
        DatasetSchema {
            dataset_name: "adult_data".into(),
            columns: vec![
                col("field_age", FeatureType::Integer),
                col("field_sex", FeatureType::Categorical),
                col("field_salary", FeatureType::Categorical),
            ],
            target_name: Some("field_salary".into()),
            role: DatasetRole::Train,
        }
    }

    #[test]
    fn facts_match_listing() {
        let facts = to_initial_facts(&adult_schema());
        let text: Vec<String> = facts.iter().map(ToString::to_string).collect();
        assert_eq!(text[0], "datatype(adult_data,train)");
        assert!(text.contains(&"has_field(data,field_age)".to_string()));
        assert!(text.contains(&"has_type(field_age,integer)".to_string()));
        assert_eq!(text.last().unwrap(), "has_targetfield(adult_data,field_salary)");
        assert_eq!(facts.len(), 2 + 2 * 3);
    }

    fn arb_type() -> impl Strategy<Value = FeatureType> {
        prop::sample::select(FeatureType::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn facts_round_trip(types in prop::collection::vec(arb_type(), 1..8), target in 0usize..8) {
            let columns: Vec<ColumnSchema> = types.iter().enumerate().map(|(i, t)| ColumnSchema {
                name: format!("field_c{i}"), feature_type: *t, source_name: None,
            }).collect();
            let target = format!("field_c{}", target % columns.len());
            let schema = DatasetSchema {
                dataset_name: "d".into(), columns, target_name: Some(target), role: DatasetRole::Train,
            };
            let facts = to_initial_facts(&schema);
            prop_assert_eq!(facts.len(), 2 + 2 * schema.columns.len());
            let back = schema_from_facts(&facts).unwrap();
            prop_assert_eq!(&back, &schema);
            prop_assert_eq!(to_initial_facts(&back), facts);
        }

        #[test]
        fn inference_is_permutation_invariant(
            mut values in prop::collection::vec(prop_oneof![
                "[0-9]{1,3}", "[0-9]{1,2}\\.[0-9]", "[a-c]{1,2}", Just(String::new())
            ], 1..40),
            seed in any::<u64>(),
        ) {
            let before = infer_type(&values.iter().map(|v| Some(v.as_str())).collect::<Vec<_>>());
            use rand::{seq::SliceRandom, SeedableRng};
            values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let after = infer_type(&values.iter().map(|v| Some(v.as_str())).collect::<Vec<_>>());
            prop_assert_eq!(before, after);
        }
    }
}
