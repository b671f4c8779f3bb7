//! Plain-text tensor, mask and operator files.
//!
//! Tensor files start with `dims I J K` and list one `i j k value` line per
//! stored entry with 1-based indices. Entries absent from the file are
//! unobserved. Mask files use the same layout with 0/1 values.
//!
//! Operator files hold the three aggregation matrices, each introduced by
//! `matrix <U|V|W> <rows> <cols> <sum|average|identity>` and followed by
//! `row col value` triplets (1-based). Identity matrices need no triplets.
//!
//! Fields may be separated by whitespace or commas; `#` starts a comment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::aggregation::{AggregationKind, AggregationOperator, ModeOperator};
use crate::error::{Error, Result};
use crate::tensor::{Dims, MaskTensor3, Matrix, Tensor3};

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(r: impl Read) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        let fields: Vec<String> = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(str::to_string)
            .collect();
        if !fields.is_empty() {
            out.push((n + 1, fields));
        }
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(line: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .or_else(|_| parse_err(line, format!("cannot parse {what} `{field}`")))
}

fn parse_index(line: usize, field: &str, size: usize, what: &str) -> Result<usize> {
    let idx: usize = parse_num(line, field, what)?;
    if idx == 0 || idx > size {
        return parse_err(line, format!("{what} {idx} outside 1..={size}"));
    }
    Ok(idx - 1)
}

fn parse_dims(lines: &[(usize, Vec<String>)]) -> Result<Dims> {
    let Some((n, head)) = lines.first() else {
        return parse_err(1, "empty file, expected `dims I J K`");
    };
    if head.len() != 4 || head[0] != "dims" {
        return parse_err(*n, "expected header `dims I J K`");
    }
    let d = Dims::new(
        parse_num(*n, &head[1], "dimension")?,
        parse_num(*n, &head[2], "dimension")?,
        parse_num(*n, &head[3], "dimension")?,
    );
    if d.is_empty() {
        return parse_err(*n, "dimensions must be positive");
    }
    Ok(d)
}

/// Reads a tensor file; the mask marks the entries that were listed.
pub fn read_tensor(r: impl Read) -> Result<(Tensor3, MaskTensor3)> {
    let lines = content_lines(r)?;
    let dims = parse_dims(&lines)?;
    let mut values = vec![0.0; dims.len()];
    let mut bits = vec![false; dims.len()];
    for (n, f) in &lines[1..] {
        if f.len() != 4 {
            return parse_err(*n, format!("expected `i j k value`, found {} fields", f.len()));
        }
        let i = parse_index(*n, &f[0], dims.i, "index i")?;
        let j = parse_index(*n, &f[1], dims.j, "index j")?;
        let k = parse_index(*n, &f[2], dims.k, "index k")?;
        let v: f64 = parse_num(*n, &f[3], "value")?;
        if !v.is_finite() {
            return parse_err(*n, "value is not finite");
        }
        let off = dims.offset(i, j, k);
        if bits[off] {
            return parse_err(*n, format!("duplicate entry ({} {} {})", i + 1, j + 1, k + 1));
        }
        bits[off] = true;
        values[off] = v;
    }
    Ok((Tensor3::from_vec(dims, values)?, MaskTensor3::from_bits(dims, bits)?))
}

/// Writes the observed entries of `t` (all entries when `mask` is `None`).
/// Values use the shortest representation that parses back exactly.
pub fn write_tensor(mut w: impl Write, t: &Tensor3, mask: Option<&MaskTensor3>) -> Result<()> {
    let d = t.dims();
    if let Some(m) = mask {
        crate::tensor::check_dims(d, m.dims(), "tensor file mask")?;
    }
    writeln!(w, "dims {} {} {}", d.i, d.j, d.k)?;
    for k in 0..d.k {
        for j in 0..d.j {
            for i in 0..d.i {
                if mask.is_none_or(|m| m.get(i, j, k)) {
                    writeln!(w, "{} {} {} {}", i + 1, j + 1, k + 1, t.get(i, j, k))?;
                }
            }
        }
    }
    Ok(())
}

/// Reads a 0/1 mask file. Entries not listed are unobserved.
pub fn read_mask(r: impl Read) -> Result<MaskTensor3> {
    let lines = content_lines(r)?;
    let dims = parse_dims(&lines)?;
    let mut mask = MaskTensor3::empty(dims)?;
    for (n, f) in &lines[1..] {
        if f.len() != 4 {
            return parse_err(*n, format!("expected `i j k 0|1`, found {} fields", f.len()));
        }
        let i = parse_index(*n, &f[0], dims.i, "index i")?;
        let j = parse_index(*n, &f[1], dims.j, "index j")?;
        let k = parse_index(*n, &f[2], dims.k, "index k")?;
        let bit = match f[3].as_str() {
            "0" => false,
            "1" => true,
            other => return parse_err(*n, format!("mask value must be 0 or 1, got `{other}`")),
        };
        mask.set(i, j, k, bit);
    }
    Ok(mask)
}

pub fn write_mask(mut w: impl Write, m: &MaskTensor3) -> Result<()> {
    let d = m.dims();
    writeln!(w, "dims {} {} {}", d.i, d.j, d.k)?;
    for k in 0..d.k {
        for j in 0..d.j {
            for i in 0..d.i {
                writeln!(w, "{} {} {} {}", i + 1, j + 1, k + 1, m.get(i, j, k) as u8)?;
            }
        }
    }
    Ok(())
}

pub fn read_operator(r: impl Read) -> Result<AggregationOperator> {
    let lines = content_lines(r)?;
    let mut found: [Option<ModeOperator>; 3] = [None, None, None];
    let mut idx = 0;
    while idx < lines.len() {
        let (n, head) = &lines[idx];
        if head.len() != 5 || head[0] != "matrix" {
            return parse_err(*n, "expected `matrix <U|V|W> <rows> <cols> <kind>`");
        }
        let slot = match head[1].as_str() {
            "U" => 0,
            "V" => 1,
            "W" => 2,
            other => return parse_err(*n, format!("unknown matrix name `{other}`, expected U, V or W")),
        };
        if found[slot].is_some() {
            return parse_err(*n, format!("matrix {} given twice", head[1]));
        }
        let rows: usize = parse_num(*n, &head[2], "row count")?;
        let cols: usize = parse_num(*n, &head[3], "column count")?;
        let kind = AggregationKind::parse(&head[4]).or_else(|e| parse_err(*n, e.to_string()))?;
        idx += 1;
        let mut m = Matrix::zeros(rows, cols);
        while idx < lines.len() && lines[idx].1[0] != "matrix" {
            let (ln, f) = &lines[idx];
            if f.len() != 3 {
                return parse_err(*ln, format!("expected `row col value`, found {} fields", f.len()));
            }
            let r = parse_index(*ln, &f[0], rows, "row")?;
            let c = parse_index(*ln, &f[1], cols, "column")?;
            let v: f64 = parse_num(*ln, &f[2], "value")?;
            m[(r, c)] = v;
            idx += 1;
        }
        let op = if kind == AggregationKind::Identity {
            if rows != cols {
                return parse_err(*n, "identity matrix must be square");
            }
            ModeOperator::identity(rows)
        } else {
            ModeOperator::from_matrix(m, kind).or_else(|e| parse_err(*n, e.to_string()))?
        };
        found[slot] = Some(op);
    }
    let [u, v, w] = found;
    let missing = |name: &str| Error::Parse {
        line: lines.last().map_or(1, |l| l.0),
        message: format!("matrix {name} missing"),
    };
    Ok(AggregationOperator::new(
        u.ok_or_else(|| missing("U"))?,
        v.ok_or_else(|| missing("V"))?,
        w.ok_or_else(|| missing("W"))?,
    ))
}

pub fn write_operator(mut w: impl Write, op: &AggregationOperator) -> Result<()> {
    for (name, m) in [("U", &op.u), ("V", &op.v), ("W", &op.w)] {
        writeln!(w, "matrix {} {} {} {}", name, m.rows(), m.cols(), m.kind().name())?;
        if m.kind() == AggregationKind::Identity {
            continue;
        }
        for c in 0..m.cols() {
            for r in 0..m.rows() {
                let v = m.matrix()[(r, c)];
                if v != 0.0 {
                    writeln!(w, "{} {} {}", r + 1, c + 1, v)?;
                }
            }
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn load_tensor(path: &Path) -> Result<(Tensor3, MaskTensor3)> {
    with_path(path, read_tensor(open(path)?))
}

pub fn save_tensor(path: &Path, t: &Tensor3, mask: Option<&MaskTensor3>) -> Result<()> {
    let mut w = create(path)?;
    write_tensor(&mut w, t, mask)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<MaskTensor3> {
    with_path(path, read_mask(open(path)?))
}

pub fn save_mask(path: &Path, m: &MaskTensor3) -> Result<()> {
    let mut w = create(path)?;
    write_mask(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_operator(path: &Path) -> Result<AggregationOperator> {
    with_path(path, read_operator(open(path)?))
}

pub fn save_operator(path: &Path, op: &AggregationOperator) -> Result<()> {
    let mut w = create(path)?;
    write_operator(&mut w, op)?;
    w.flush()?;
    Ok(())
}
