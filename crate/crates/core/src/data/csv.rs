//! Long-format CSV: one row per (series id, time step).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compare_ids, DataError, Result, Sample, SeriesDataset, Split, Target, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id_col: String,
    /// Rows are taken in file order within an id when absent.
    pub time_col: Option<String>,
    pub value_cols: Vec<String>,
    pub label_col: Option<String>,
    /// Rows without a split column are training rows.
    pub split_col: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_col: "id".into(),
            time_col: Some("time".into()),
            value_cols: Vec::new(),
            label_col: Some("label".into()),
            split_col: Some("split".into()),
        }
    }
}

struct Row {
    time: f64,
    order: usize,
    values: Vec<f64>,
    label: Option<String>,
    split: Split,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::Schema(format!("missing column {name:?}")))
}

fn optional_column(headers: &csv::StringRecord, name: &Option<String>) -> Result<Option<usize>> {
    name.as_deref().map(|n| column(headers, n)).transpose()
}

/// Parse CSV text. `task` selects how labels are read: classification needs
/// a label column; forecasting ignores it.
pub fn parse_csv(path_label: &str, text: &str, schema: &CsvSchema, task: &Task) -> Result<SeriesDataset> {
    let perr = |line: usize, msg: String| DataError::Parse {
        path: path_label.to_string(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| perr(1, e.to_string()))?
        .clone();
    let id = column(&headers, &schema.id_col)?;
    let time = optional_column(&headers, &schema.time_col)?;
    if schema.value_cols.is_empty() {
        return Err(DataError::Schema("at least one value column is required".into()));
    }
    let values: Vec<usize> = schema.value_cols.iter().map(|c| column(&headers, c)).collect::<Result<_>>()?;
    let classify = matches!(task, Task::Classification { .. });
    let label = match (&schema.label_col, classify) {
        (Some(l), true) => Some(column(&headers, l).map_err(|_| {
            DataError::Schema(format!("classification requested but label column {l:?} is absent"))
        })?),
        (None, true) => return Err(DataError::Schema("classification requested without a label column".into())),
        _ => None,
    };
    let split = match &schema.split_col {
        Some(s) => headers.iter().position(|h| h.trim() == s),
        None => None,
    };

    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (order, rec) in reader.records().enumerate() {
        let line = order + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, what: &str| -> Result<f64> {
            let s = field(i);
            let v: f64 = s.parse().map_err(|_| perr(line, format!("{what}: {s:?} is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(perr(line, format!("{what}: non-finite value {s:?}")))
            }
        };
        let row = Row {
            time: match time {
                Some(t) => num(t, "time")?,
                None => order as f64,
            },
            order,
            values: values
                .iter()
                .zip(&schema.value_cols)
                .map(|(&i, name)| num(i, name))
                .collect::<Result<_>>()?,
            label: label.map(|l| field(l).to_string()),
            split: match split {
                Some(s) => field(s).parse().map_err(|e: String| perr(line, e))?,
                None => Split::Train,
            },
        };
        groups.entry(field(id).to_string()).or_default().push(row);
    }
    if groups.is_empty() {
        return Err(DataError::Format(format!("{path_label}: no data rows")));
    }

    let mut ids: Vec<String> = groups.keys().cloned().collect();
    ids.sort_by(|a, b| compare_ids(a, b));
    let mut class_names: Vec<String> = match task {
        Task::Classification { class_names } => class_names.clone(),
        Task::Forecast { .. } => Vec::new(),
    };
    if classify && class_names.is_empty() {
        let mut seen: Vec<String> = groups.values().flatten().filter_map(|r| r.label.clone()).collect();
        seen.sort();
        seen.dedup();
        class_names = seen;
    }

    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let mut rows = groups.remove(&id).expect("id present");
        rows.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.order.cmp(&b.order)));
        let first = &rows[0];
        if rows.iter().any(|r| r.split != first.split) {
            return Err(DataError::Format(format!("series {id:?} spans both splits")));
        }
        let target = if classify {
            let l = first.label.clone().unwrap_or_default();
            if rows.iter().any(|r| r.label.as_deref() != Some(l.as_str())) {
                return Err(DataError::Format(format!("series {id:?} has more than one label")));
            }
            let c = class_names
                .iter()
                .position(|n| *n == l)
                .ok_or_else(|| DataError::Format(format!("series {id:?}: unknown label {l:?}")))?;
            Some(Target::Class(c))
        } else {
            None
        };
        let split = first.split;
        samples.push(Sample::new(id, rows.into_iter().map(|r| r.values).collect(), target, split));
    }
    let task = match task {
        Task::Classification { .. } => Task::Classification { class_names },
        t => t.clone(),
    };
    let name = Path::new(path_label)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path_label.to_string());
    let mut ds = SeriesDataset {
        name,
        dim: schema.value_cols.len(),
        task,
        samples,
        scaler: None,
    };
    ds.pad_to_max();
    ds.validate()?;
    Ok(ds)
}

pub fn load_csv(path: &Path, schema: &CsvSchema, task: &Task) -> Result<SeriesDataset> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&path.display().to_string(), &text, schema, task)
}

/// Long-format CSV with columns `id,time,split,label,v0..v{D-1}`; the label
/// column is omitted for forecasting datasets. Padded steps are dropped.
pub fn write_csv(ds: &SeriesDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let value_cols: Vec<String> = (0..ds.dim).map(|d| format!("v{d}")).collect();
    let names = match &ds.task {
        Task::Classification { class_names } => Some(class_names),
        Task::Forecast { .. } => None,
    };
    let mut header = vec!["id".to_string(), "time".into(), "split".into()];
    if names.is_some() {
        header.push("label".into());
    }
    header.extend(value_cols);
    let io = |e: csv::Error| DataError::Format(e.to_string());
    w.write_record(&header).map_err(io)?;
    for s in &ds.samples {
        for (t, (v, _)) in s.values.iter().zip(&s.mask).filter(|(_, &m)| m).enumerate() {
            let mut rec = vec![s.id.clone(), t.to_string(), s.split.as_str().to_string()];
            if let Some(names) = names {
                let c = s
                    .class()
                    .ok_or_else(|| DataError::Contract(format!("sample {} has no class label", s.id)))?;
                rec.push(names[c].clone());
            }
            rec.extend(v.iter().map(|x| format!("{x}")));
            w.write_record(&rec).map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| DataError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Schema matching [`write_csv`] output.
pub fn written_schema(ds: &SeriesDataset) -> CsvSchema {
    CsvSchema {
        value_cols: (0..ds.dim).map(|d| format!("v{d}")).collect(),
        label_col: matches!(ds.task, Task::Classification { .. }).then(|| "label".into()),
        ..CsvSchema::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(values: &[&str], label: bool) -> CsvSchema {
        CsvSchema {
            value_cols: values.iter().map(|s| s.to_string()).collect(),
            label_col: label.then(|| "label".into()),
            ..CsvSchema::default()
        }
    }

    const FORECAST: Task = Task::Forecast { horizon: 1 };

    #[test]
    fn one_id_maps_directly() {
        let text = "id,time,a,b\nx,0,1,2\nx,1,3,4\nx,2,5,6\nx,3,7,8\nx,4,9,10\n";
        let ds = parse_csv("one.csv", text, &schema(&["a", "b"], false), &FORECAST).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.samples[0].values.len(), 5);
        assert_eq!(ds.samples[0].values[4], vec![9.0, 10.0]);
        assert_eq!(ds.name, "one");
    }

    #[test]
    fn interleaved_ids_are_order_independent() {
        let a = "id,time,v,label\n2,1,20,q\n1,0,1,p\n2,0,10,q\n1,1,2,p\n";
        let b = "id,time,v,label\n1,1,2,p\n2,0,10,q\n2,1,20,q\n1,0,1,p\n";
        let task = Task::Classification { class_names: vec![] };
        let da = parse_csv("a", a, &schema(&["v"], true), &task).unwrap();
        let db = parse_csv("a", b, &schema(&["v"], true), &task).unwrap();
        assert_eq!(da, db);
        assert_eq!(da.samples[0].values, vec![vec![1.0], vec![2.0]]);
        assert_eq!(da.samples[1].target, Some(Target::Class(1)));
    }

    #[test]
    fn schema_and_parse_errors() {
        let task = Task::Classification { class_names: vec![] };
        let text = "id,time,v\n1,0,1\n";
        assert!(matches!(parse_csv("a", text, &schema(&["v"], true), &task), Err(DataError::Schema(_))));
        assert!(matches!(parse_csv("a", text, &schema(&["w"], false), &FORECAST), Err(DataError::Schema(_))));
        let bad = "id,time,v\n1,0,1\n1,1,abc\n";
        assert!(matches!(
            parse_csv("a", bad, &schema(&["v"], false), &FORECAST),
            Err(DataError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let text = "id,time,split,label,v\n1,0,train,p,0.1\n1,1,train,p,0.30000000000000004\n2,0,test,q,-7\n2,1,test,q,1e-9\n";
        let task = Task::Classification { class_names: vec![] };
        let ds = parse_csv("r", text, &schema(&["v"], true), &task).unwrap();
        assert_eq!(ds.samples[1].split, Split::Test);
        let out = write_csv(&ds).unwrap();
        let back = parse_csv("r", &out, &written_schema(&ds), &ds.task).unwrap();
        assert_eq!(back.samples, ds.samples);
    }
}
