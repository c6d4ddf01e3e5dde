//! Text sidecar format for pre-computed motion vector fields.
//!
//! ```text
//! MVF 1 <frame_w> <frame_h> <block_size> <num_fields>
//! FIELD <src_index>
//! <dx> <dy>            (grid_w * grid_h lines, row-major)
//! ```

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{grid_dims, MotionVector, MotionVectorField};

#[derive(Debug, Error)]
pub enum MvfError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> MvfError {
    MvfError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self, what: &str) -> Result<(usize, String), MvfError> {
        match self.inner.next() {
            Some(line) => {
                self.line_no += 1;
                Ok((self.line_no, line?))
            }
            None => Err(parse_err(self.line_no + 1, format!("unexpected end of input, expected {what}"))),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MvfError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

/// Parses every field in the stream. Fields must appear in strictly
/// ascending `src_index` order.
pub fn read_mvf<R: BufRead>(reader: R) -> Result<Vec<MotionVectorField>, MvfError> {
    let mut lines = Lines {
        inner: reader.lines(),
        line_no: 0,
    };
    let (ln, header) = lines.next_line("MVF header")?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("MVF") {
        return Err(parse_err(ln, "header must start with 'MVF'"));
    }
    let version: u32 = parse_num(toks.next(), ln, "version")?;
    if version != 1 {
        return Err(parse_err(ln, format!("unsupported version {version}")));
    }
    let frame_w: usize = parse_num(toks.next(), ln, "frame width")?;
    let frame_h: usize = parse_num(toks.next(), ln, "frame height")?;
    let block_size: usize = parse_num(toks.next(), ln, "block size")?;
    let num_fields: usize = parse_num(toks.next(), ln, "field count")?;
    if toks.next().is_some() {
        return Err(parse_err(ln, "trailing tokens in header"));
    }
    if frame_w == 0 || frame_h == 0 || block_size == 0 || num_fields == 0 {
        return Err(parse_err(ln, "dimensions, block size and field count must be positive"));
    }
    let (gw, gh) = grid_dims(frame_w, frame_h, block_size);
    let per_field = gw * gh;

    let mut fields = Vec::with_capacity(num_fields);
    let mut last_src: Option<usize> = None;
    for _ in 0..num_fields {
        let (ln, line) = lines.next_line("FIELD line")?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some("FIELD") {
            return Err(parse_err(ln, format!("expected 'FIELD <src_index>', got '{line}'")));
        }
        let src: usize = parse_num(toks.next(), ln, "src_index")?;
        if toks.next().is_some() {
            return Err(parse_err(ln, "trailing tokens after src_index"));
        }
        if last_src.is_some_and(|prev| src <= prev) {
            return Err(parse_err(ln, format!("src_index {src} is not ascending")));
        }
        last_src = Some(src);

        let mut vectors = Vec::with_capacity(per_field);
        for k in 0..per_field {
            let (ln, line) = lines.next_line("vector line")?;
            let mut toks = line.split_whitespace();
            let first = toks.next();
            if first == Some("FIELD") {
                return Err(parse_err(
                    ln,
                    format!("field {src} has {k} vectors, expected {per_field}"),
                ));
            }
            let dx: i32 = parse_num(first, ln, "dx")?;
            let dy: i32 = parse_num(toks.next(), ln, "dy")?;
            if toks.next().is_some() {
                return Err(parse_err(ln, "trailing tokens after vector"));
            }
            vectors.push(MotionVector::new(dx, dy));
        }
        let field = MotionVectorField::new(src, frame_w, frame_h, block_size, vectors)
            .map_err(|e| parse_err(ln, e.to_string()))?;
        fields.push(field);
    }
    if let Some(extra) = lines.inner.next() {
        let extra = extra?;
        if !extra.trim().is_empty() {
            return Err(parse_err(
                lines.line_no + 1,
                format!("more data than the {num_fields} fields declared in the header"),
            ));
        }
    }
    Ok(fields)
}

pub fn write_mvf<W: Write>(fields: &[MotionVectorField], mut sink: W) -> Result<(), MvfError> {
    let first = fields
        .first()
        .ok_or_else(|| MvfError::InvalidInput("no fields to write".into()))?;
    for pair in fields.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (b.frame_w, b.frame_h, b.block_size) != (a.frame_w, a.frame_h, a.block_size) {
            return Err(MvfError::InvalidInput(format!(
                "field {} has geometry {}x{}/{} but field {} has {}x{}/{}",
                b.src_index, b.frame_w, b.frame_h, b.block_size, a.src_index, a.frame_w, a.frame_h, a.block_size
            )));
        }
        if b.src_index <= a.src_index {
            return Err(MvfError::InvalidInput(format!(
                "src_index {} follows {}; fields must be ascending",
                b.src_index, a.src_index
            )));
        }
    }
    writeln!(
        sink,
        "MVF 1 {} {} {} {}",
        first.frame_w,
        first.frame_h,
        first.block_size,
        fields.len()
    )?;
    for f in fields {
        writeln!(sink, "FIELD {}", f.src_index)?;
        for v in &f.vectors {
            writeln!(sink, "{} {}", v.dx, v.dy)?;
        }
    }
    sink.flush()?;
    Ok(())
}
