//! Publication records: CSV/JSONL readers and writers, the text fed to the
//! embedder, and the type breakdown of a collection.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },
    #[error("duplicate publication id {id:?} at line {line}")]
    DuplicateId { id: String, line: u64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot infer record format from {0:?}; expected .csv or .jsonl")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Ok(RecordFormat::Csv),
            Some(ext)
                if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") =>
            {
                Ok(RecordFormat::Jsonl)
            }
            _ => Err(IngestError::UnknownFormat(path.display().to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Publication {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(rename = "type")]
    pub pub_type: String,
    pub year: Option<i32>,
    pub authors: Vec<String>,
}

/// Lower-cased, trimmed publication type; missing types become "other".
pub fn normalize_type(raw: &str) -> String {
    let t = raw.trim().to_lowercase();
    if t.is_empty() {
        "other".to_string()
    } else {
        t
    }
}

/// Title and abstract joined by one space; the title alone when there is no abstract.
pub fn publication_text(publication: &Publication) -> String {
    let title = publication.title.trim();
    let abstract_text = publication.abstract_text.trim();
    if abstract_text.is_empty() {
        title.to_string()
    } else {
        format!("{title} {abstract_text}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TypeDistribution {
    pub counts: BTreeMap<String, usize>,
    pub shares: BTreeMap<String, f64>,
}

pub fn type_distribution<'a>(pubs: impl IntoIterator<Item = &'a Publication>) -> TypeDistribution {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in pubs {
        *counts.entry(p.pub_type.clone()).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let shares = counts
        .iter()
        .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
        .collect();
    TypeDistribution { counts, shares }
}

pub fn read_publications(
    path: impl AsRef<Path>,
    format: RecordFormat,
) -> Result<Vec<Publication>, IngestError> {
    let file = File::open(path)?;
    match format {
        RecordFormat::Csv => read_csv(file),
        RecordFormat::Jsonl => read_jsonl(BufReader::new(file)),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Authors {
    List(Vec<String>),
    Joined(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Year {
    Number(i64),
    Text(String),
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<String>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(rename = "type")]
    pub_type: Option<String>,
    year: Option<Year>,
    authors: Option<Authors>,
}

struct Fields<'a> {
    id: &'a str,
    title: &'a str,
    abstract_text: &'a str,
    pub_type: &'a str,
    year: Option<i64>,
    authors: Vec<String>,
}

fn split_authors(joined: &str) -> Vec<String> {
    joined
        .split(';')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_year(raw: &str, line: u64) -> Result<Option<i64>, IngestError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| IngestError::MalformedRecord {
            line,
            reason: format!("year {raw:?} is not an integer"),
        })
}

fn build(fields: Fields<'_>, line: u64) -> Result<Publication, IngestError> {
    let id = fields.id.trim();
    if id.is_empty() {
        return Err(IngestError::MalformedRecord {
            line,
            reason: "missing id".into(),
        });
    }
    let title = fields.title.trim();
    if title.is_empty() {
        return Err(IngestError::MalformedRecord {
            line,
            reason: format!("publication {id:?} has no title"),
        });
    }
    let year = match fields.year {
        None => None,
        Some(y) => Some(i32::try_from(y).map_err(|_| IngestError::MalformedRecord {
            line,
            reason: format!("year {y} out of range"),
        })?),
    };
    Ok(Publication {
        id: id.to_string(),
        title: title.to_string(),
        abstract_text: fields.abstract_text.trim().to_string(),
        pub_type: normalize_type(fields.pub_type),
        year,
        authors: fields.authors,
    })
}

fn push_unique(
    out: &mut Vec<Publication>,
    seen: &mut HashSet<String>,
    publication: Publication,
    line: u64,
) -> Result<(), IngestError> {
    if !seen.insert(publication.id.clone()) {
        return Err(IngestError::DuplicateId {
            id: publication.id,
            line,
        });
    }
    out.push(publication);
    Ok(())
}

fn read_csv(reader: impl Read) -> Result<Vec<Publication>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let (Some(id_col), Some(title_col)) = (column("id"), column("title")) else {
        return Err(IngestError::MalformedRecord {
            line: 1,
            reason: "header must contain id and title columns".into(),
        });
    };
    let abstract_col = column("abstract");
    let type_col = column("type");
    let year_col = column("year");
    let authors_col = column("authors");

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |col: Option<usize>| col.and_then(|c| record.get(c)).unwrap_or("");
        let fields = Fields {
            id: get(Some(id_col)),
            title: get(Some(title_col)),
            abstract_text: get(abstract_col),
            pub_type: get(type_col),
            year: parse_year(get(year_col), line)?,
            authors: split_authors(get(authors_col)),
        };
        push_unique(&mut out, &mut seen, build(fields, line)?, line)?;
    }
    Ok(out)
}

fn read_jsonl(reader: impl BufRead) -> Result<Vec<Publication>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let year = match &rec.year {
            None => None,
            Some(Year::Number(n)) => Some(*n),
            Some(Year::Text(s)) => parse_year(s, line_no)?,
        };
        let authors = match rec.authors {
            None => Vec::new(),
            Some(Authors::List(list)) => list
                .into_iter()
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect(),
            Some(Authors::Joined(s)) => split_authors(&s),
        };
        let fields = Fields {
            id: rec.id.as_deref().unwrap_or(""),
            title: rec.title.as_deref().unwrap_or(""),
            abstract_text: rec.abstract_text.as_deref().unwrap_or(""),
            pub_type: rec.pub_type.as_deref().unwrap_or(""),
            year,
            authors,
        };
        push_unique(&mut out, &mut seen, build(fields, line_no)?, line_no)?;
    }
    Ok(out)
}

pub fn write_publications(
    path: impl AsRef<Path>,
    format: RecordFormat,
    pubs: &[Publication],
) -> Result<(), IngestError> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        RecordFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["id", "title", "abstract", "type", "year", "authors"])?;
            for p in pubs {
                let year = p.year.map(|y| y.to_string()).unwrap_or_default();
                let authors = p.authors.join(";");
                w.write_record([
                    p.id.as_str(),
                    &p.title,
                    &p.abstract_text,
                    &p.pub_type,
                    &year,
                    &authors,
                ])?;
            }
            w.flush()?;
        }
        RecordFormat::Jsonl => {
            let mut w = file;
            for p in pubs {
                serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
