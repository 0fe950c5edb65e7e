//! Report rendering: tab-separated tables for people, JSON lines for scripts.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

pub trait Row {
    fn header() -> Vec<&'static str>;
    fn cells(&self) -> Vec<String>;
}

pub fn render<T: Row + Serialize>(rows: &[T], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            out.push_str(&T::header().join("\t"));
            out.push('\n');
            for row in rows {
                out.push_str(&row.cells().join("\t"));
                out.push('\n');
            }
        }
        ReportFormat::JsonLines => {
            for row in rows {
                // plain data structs always serialize
                out.push_str(&serde_json::to_string(row).expect("serializable row"));
                out.push('\n');
            }
        }
    }
    out
}
