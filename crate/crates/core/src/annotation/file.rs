//! CelebA-style attribute list files.
//!
//! ```text
//! 202599
//! 5_o_Clock_Shadow Arched_Eyebrows ... Young
//! 000001.jpg -1  1  1 ...
//! ```
//!
//! The extended variant also allows `0` (info not visible) and keeps
//! unusable image ids in a sidecar `<stem>.unusable.txt` next to the file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{AnnotationMatrix, ImageRecord, LabelValue, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeFormat {
    /// Values in {1, -1}.
    CelebaOriginal,
    /// Values in {1, -1, 0} plus the unusable sidecar.
    Extended,
}

impl std::str::FromStr for AttributeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "celeba" | "celeba_original" | "original" => Ok(AttributeFormat::CelebaOriginal),
            "extended" => Ok(AttributeFormat::Extended),
            other => Err(Error::InvalidArgument(format!("unknown attribute format {other:?}"))),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.unusable.txt"))
}

pub fn ingest_attribute_file(path: &Path, format: AttributeFormat) -> Result<AnnotationMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut matrix = parse_attribute_file(&text, format)?;
    if format == AttributeFormat::Extended {
        let sidecar = sidecar_path(path);
        if sidecar.exists() {
            let ids = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            for id in ids.lines().map(str::trim).filter(|l| !l.is_empty()) {
                matrix.push_unusable(id)?;
            }
        }
    }
    Ok(matrix)
}

pub fn parse_attribute_file(text: &str, format: AttributeFormat) -> Result<AnnotationMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, count_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let declared: usize = count_line.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        message: format!("expected image count, found {:?}", count_line.trim()),
    })?;
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 2,
        message: "missing attribute names".into(),
    })?;
    let attributes: Vec<String> = header.split_whitespace().map(str::to_string).collect();
    if attributes.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no attribute names".into(),
        });
    }
    let mut matrix = AnnotationMatrix::new(attributes)?;
    let n_attr = matrix.attributes().len();
    let mut row = Vec::with_capacity(n_attr);
    let mut actual = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(image_id) = tokens.next() else {
            continue;
        };
        row.clear();
        for (col, token) in tokens.enumerate() {
            if col >= n_attr {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("more than {n_attr} values"),
                });
            }
            row.push(parse_value(token, format).ok_or_else(|| Error::BadValue {
                line: line_no,
                column: col + 1,
                token: token.to_string(),
            })?);
        }
        if row.len() != n_attr {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {n_attr} values, found {}", row.len()),
            });
        }
        matrix.push_image(ImageRecord::new(image_id), &row)?;
        actual += 1;
    }
    if actual != declared {
        return Err(Error::CountMismatch { declared, actual });
    }
    Ok(matrix)
}

fn parse_value(token: &str, format: AttributeFormat) -> Option<LabelValue> {
    match (token, format) {
        ("1", _) => Some(LabelValue::True),
        ("-1", _) => Some(LabelValue::False),
        ("0", AttributeFormat::Extended) => Some(LabelValue::InfoNotVisible),
        _ => None,
    }
}

/// Writes usable rows only; unusable images are not representable in the
/// file body.
pub fn write_attribute_file<W: Write>(matrix: &AnnotationMatrix, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", matrix.n_usable())?;
    writeln!(out, "{}", matrix.attributes().join(" "))?;
    let n_attr = matrix.attributes().len();
    for (i, record) in matrix.usable_images() {
        write!(out, "{}", record.image_id)?;
        for a in 0..n_attr {
            // cell() is Some for usable rows
            let v = matrix.cell(i, a).unwrap_or(LabelValue::InfoNotVisible);
            write!(out, " {}", v.code())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes the extended file and, when any image is unusable, its sidecar.
/// A stale sidecar from an earlier export is removed.
pub fn export_cleaned(matrix: &AnnotationMatrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_attribute_file(matrix, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))?;

    let sidecar = sidecar_path(path);
    let unusable: Vec<&str> = matrix.unusable_ids().collect();
    if unusable.is_empty() {
        if sidecar.exists() {
            fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        }
    } else {
        let mut body = unusable.join("\n");
        body.push('\n');
        fs::write(&sidecar, body).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

/// Applies a CelebA evaluation partition file (`filename 0|1|2`) to the
/// matrix. Ids not present in the matrix are ignored.
pub fn load_partition(matrix: &mut AnnotationMatrix, path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut applied = 0;
    for (idx, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let (Some(id), Some(code)) = (tokens.next(), tokens.next()) else {
            continue;
        };
        let split = match code {
            "0" => Split::Train,
            "1" => Split::Val,
            "2" => Split::Test,
            other => {
                return Err(Error::BadValue {
                    line: idx + 1,
                    column: 1,
                    token: other.to_string(),
                })
            }
        };
        if matrix.contains_image(id) {
            matrix.set_split(id, split)?;
            applied += 1;
        }
    }
    Ok(applied)
}
