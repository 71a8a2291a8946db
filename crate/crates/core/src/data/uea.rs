//! The UEA/UCR `.ts` text format: `@`-prefixed header lines, then one
//! sample per line with `:`-separated dimensions, comma-separated values
//! and a trailing class label.

use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, Result, Sample, SeriesDataset, Split, Target, Task};

#[derive(Debug, Default)]
struct Header {
    name: Option<String>,
    dimensions: Option<usize>,
    class_labels: Option<Vec<String>>,
    has_labels: bool,
}

struct RawRow {
    line: usize,
    dims: Vec<Vec<f64>>,
    label: Option<String>,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_header(path: &str, line: usize, text: &str, h: &mut Header) -> Result<bool> {
    let mut parts = text[1..].split_whitespace();
    let key = parts.next().unwrap_or("").to_ascii_lowercase();
    let rest: Vec<&str> = parts.collect();
    let flag = |rest: &[&str]| match rest.first().map(|s| s.to_ascii_lowercase()) {
        Some(v) if v == "true" => Ok(true),
        Some(v) if v == "false" => Ok(false),
        _ => Err(parse_err(path, line, format!("@{key} expects true or false"))),
    };
    match key.as_str() {
        "data" => return Ok(true),
        "problemname" => h.name = rest.first().map(|s| s.to_string()),
        "dimensions" => {
            let d = rest
                .first()
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&d| d > 0)
                .ok_or_else(|| parse_err(path, line, "@dimensions expects a positive integer"))?;
            h.dimensions = Some(d);
        }
        "classlabel" => {
            h.has_labels = flag(&rest)?;
            if h.has_labels {
                if rest.len() < 2 {
                    return Err(parse_err(path, line, "@classLabel true must list the class labels"));
                }
                h.class_labels = Some(rest[1..].iter().map(|s| s.to_string()).collect());
            }
        }
        "timestamps" => {
            if flag(&rest)? {
                return Err(parse_err(path, line, "timestamped series are not supported"));
            }
        }
        "univariate" | "equallength" | "missing" => {
            flag(&rest)?;
        }
        "serieslength" | "targetlabel" => {}
        _ => return Err(parse_err(path, line, format!("unknown header @{key}"))),
    }
    Ok(false)
}

fn parse_row(path: &str, line: usize, text: &str, has_labels: bool) -> Result<RawRow> {
    let mut fields: Vec<&str> = text.split(':').collect();
    let label = if has_labels {
        if fields.len() < 2 {
            return Err(parse_err(path, line, "row has no class label"));
        }
        let l = fields.pop().unwrap_or_default().trim().to_string();
        if l.is_empty() {
            return Err(parse_err(path, line, "empty class label"));
        }
        Some(l)
    } else {
        None
    };
    let mut dims = Vec::with_capacity(fields.len());
    for (d, field) in fields.iter().enumerate() {
        let mut values = Vec::new();
        for (j, v) in field.split(',').enumerate() {
            let v = v.trim();
            if v.is_empty() {
                return Err(parse_err(path, line, format!("dimension {d}: empty value field at position {j}")));
            }
            if v == "?" {
                return Err(parse_err(path, line, format!("dimension {d}: missing values are not supported")));
            }
            let x: f64 = v
                .parse()
                .map_err(|_| parse_err(path, line, format!("dimension {d}: {v:?} is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(path, line, format!("dimension {d}: non-finite value {v:?}")));
            }
            values.push(x);
        }
        dims.push(values);
    }
    let len = dims[0].len();
    if dims.iter().any(|d| d.len() != len) {
        return Err(parse_err(path, line, "dimensions of one sample have different lengths"));
    }
    Ok(RawRow { line, dims, label })
}

struct Parsed {
    header: Header,
    rows: Vec<RawRow>,
}

fn parse_text(path: &str, text: &str) -> Result<Parsed> {
    let mut header = Header::default();
    let mut in_data = false;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !in_data {
            if !t.starts_with('@') {
                return Err(parse_err(path, line, "expected a header line or @data"));
            }
            in_data = parse_header(path, line, t, &mut header)?;
            continue;
        }
        if t.starts_with('@') {
            return Err(parse_err(path, line, "header line after @data"));
        }
        let row = parse_row(path, line, t, header.has_labels)?;
        let d = header.dimensions.unwrap_or(row.dims.len());
        if row.dims.len() != d {
            return Err(DataError::Format(format!(
                "{path}:{line}: sample has {} dimensions, expected {d}",
                row.dims.len()
            )));
        }
        header.dimensions = Some(d);
        rows.push(row);
    }
    if !in_data {
        return Err(parse_err(path, text.lines().count().max(1), "missing @data section"));
    }
    if rows.is_empty() {
        return Err(DataError::Format(format!("{path}: no samples after @data")));
    }
    Ok(Parsed { header, rows })
}

fn class_names(parts: &[&Parsed]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for p in parts {
        if let Some(ls) = &p.header.class_labels {
            for l in ls {
                if !names.contains(l) {
                    names.push(l.clone());
                }
            }
        }
    }
    if !names.is_empty() {
        return names;
    }
    names = parts
        .iter()
        .flat_map(|p| p.rows.iter().filter_map(|r| r.label.clone()))
        .collect();
    names.sort();
    names.dedup();
    names
}

fn build(name: String, parts: Vec<(Parsed, Split, &str)>) -> Result<SeriesDataset> {
    let refs: Vec<&Parsed> = parts.iter().map(|(p, _, _)| p).collect();
    let dim = refs[0].header.dimensions.unwrap_or(1);
    if let Some(p) = refs.iter().find(|p| p.header.dimensions != Some(dim)) {
        return Err(DataError::Format(format!(
            "files disagree on dimension: {dim} vs {}",
            p.header.dimensions.unwrap_or(0)
        )));
    }
    let labelled = refs.iter().all(|p| p.header.has_labels);
    let names = class_names(&refs);
    let mut samples = Vec::new();
    for (p, split, path) in &parts {
        for (i, row) in p.rows.iter().enumerate() {
            let len = row.dims[0].len();
            let values = (0..len).map(|t| row.dims.iter().map(|d| d[t]).collect()).collect();
            let target = match &row.label {
                Some(l) if labelled => Some(Target::Class(names.iter().position(|n| n == l).ok_or_else(|| {
                    parse_err(path, row.line, format!("label {l:?} is not declared"))
                })?)),
                _ => None,
            };
            samples.push(Sample::new(format!("{}-{i}", split.as_str()), values, target, *split));
        }
    }
    if !labelled {
        return Err(DataError::Schema("classification files must declare @classLabel true".into()));
    }
    let mut ds = SeriesDataset {
        name,
        dim,
        task: Task::Classification { class_names: names },
        samples,
        scaler: None,
    };
    ds.pad_to_max();
    ds.validate()?;
    Ok(ds)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse `.ts` text; all samples are placed in `split`.
pub fn parse_uea(path_label: &str, text: &str, split: Split) -> Result<SeriesDataset> {
    let p = parse_text(path_label, text)?;
    let name = p.header.name.clone().unwrap_or_else(|| path_label.to_string());
    build(name, vec![(p, split, path_label)])
}

/// Load one file; every sample lands in the train split.
pub fn load_uea(path: &Path) -> Result<SeriesDataset> {
    let label = path.display().to_string();
    parse_uea(&label, &read(path)?, Split::Train)
}

/// Load a `_TRAIN`/`_TEST` pair into one dataset with splits set per file.
pub fn load_uea_pair(train: &Path, test: &Path) -> Result<SeriesDataset> {
    let (lt, ls) = (train.display().to_string(), test.display().to_string());
    let pt = parse_text(&lt, &read(train)?)?;
    let ps = parse_text(&ls, &read(test)?)?;
    let name = pt.header.name.clone().unwrap_or_else(|| lt.clone());
    build(name, vec![(pt, Split::Train, &lt), (ps, Split::Test, &ls)])
}

/// Serialize the given samples; values use shortest round-trip formatting.
pub fn write_uea(ds: &SeriesDataset, samples: &[&Sample]) -> Result<String> {
    let Task::Classification { class_names } = &ds.task else {
        return Err(DataError::Contract("only classification datasets can be written as .ts".into()));
    };
    let mut out = String::new();
    let equal = samples.iter().all(|s| s.observed_len() == samples[0].observed_len());
    let _ = writeln!(out, "@problemName {}", ds.name.replace(char::is_whitespace, "_"));
    let _ = writeln!(out, "@timeStamps false");
    let _ = writeln!(out, "@missing false");
    let _ = writeln!(out, "@univariate {}", ds.dim == 1);
    let _ = writeln!(out, "@dimensions {}", ds.dim);
    let _ = writeln!(out, "@equalLength {equal}");
    let _ = writeln!(out, "@classLabel true {}", class_names.join(" "));
    let _ = writeln!(out, "@data");
    for s in samples {
        let class = s
            .class()
            .ok_or_else(|| DataError::Contract(format!("sample {} has no class label", s.id)))?;
        let steps: Vec<&Vec<f64>> = s.values.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(v, _)| v).collect();
        let dims: Vec<String> = (0..ds.dim)
            .map(|d| steps.iter().map(|v| format!("{}", v[d])).collect::<Vec<_>>().join(","))
            .collect();
        let _ = writeln!(out, "{}:{}", dims.join(":"), class_names[class]);
    }
    Ok(out)
}
