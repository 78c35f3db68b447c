//! File helpers shared by every writer in the crate.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to `path` via a sibling temporary file and a rename, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Canonical number formatting: 17 significant digits, enough for an exact
/// f64 round trip.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "NaN" | "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad number `{t}`: {e}"))),
    }
}

const MAGIC: &[u8; 8] = b"PPKTAB01";

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Int = 0,
    Float = 1,
    Text = 2,
    UInt = 3,
}

fn column_kind(cells: &[&str]) -> ColumnKind {
    let present = || cells.iter().filter(|c| !c.is_empty());
    if present().all(|c| c.parse::<i64>().is_ok_and(|i| i.to_string() == *c)) {
        ColumnKind::Int
    } else if present().all(|c| c.parse::<u64>().is_ok_and(|i| i.to_string() == *c)) {
        ColumnKind::UInt
    } else if present().all(|c| parse_f64(c).is_ok()) {
        ColumnKind::Float
    } else {
        ColumnKind::Text
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Encode a comma-separated table (header line plus rows, no quoting) in the
/// compact binary layout described in `docs/formats.md`.
pub fn csv_to_binary(text: &str) -> Result<Vec<u8>> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty table".into()))?
        .split(',')
        .collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    if let Some((i, r)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != header.len())
    {
        return Err(Error::Parse(format!(
            "row {} has {} fields, header has {}",
            i + 1,
            r.len(),
            header.len()
        )));
    }
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for (j, name) in header.iter().enumerate() {
        let cells: Vec<&str> = rows.iter().map(|r| r[j]).collect();
        let kind = column_kind(&cells);
        put_str(&mut out, name);
        out.push(kind as u8);
        for c in cells {
            if kind != ColumnKind::Text {
                out.push(!c.is_empty() as u8);
                if c.is_empty() {
                    continue;
                }
            }
            match kind {
                ColumnKind::Int => out.extend_from_slice(&c.parse::<i64>().unwrap().to_le_bytes()),
                ColumnKind::UInt => out.extend_from_slice(&c.parse::<u64>().unwrap().to_le_bytes()),
                ColumnKind::Float => out.extend_from_slice(&parse_f64(c)?.to_bits().to_le_bytes()),
                ColumnKind::Text => put_str(&mut out, c),
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse("truncated binary table".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Parse(format!("binary table: {e}")))
    }
}

/// Decode a table written by [`csv_to_binary`] back to CSV text. Floats are
/// written in the canonical 17-digit form.
pub fn binary_to_csv(bytes: &[u8]) -> Result<String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Parse("not a binary table (bad magic)".into()));
    }
    let n_cols = r.u32()? as usize;
    let n_rows =
        usize::try_from(r.u64()?).map_err(|_| Error::Parse("row count overflow".into()))?;
    if n_rows > bytes.len() {
        return Err(Error::Parse("truncated binary table".into()));
    }
    let mut names = Vec::with_capacity(n_cols);
    let mut cols: Vec<Vec<String>> = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        names.push(r.string()?);
        let kind = r.u8()?;
        let mut col = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            if kind != ColumnKind::Text as u8 && r.u8()? == 0 {
                col.push(String::new());
                continue;
            }
            col.push(match kind {
                0 => i64::from_le_bytes(r.take(8)?.try_into().unwrap()).to_string(),
                1 => fmt_f64(f64::from_bits(r.u64()?)),
                2 => r.string()?,
                3 => r.u64()?.to_string(),
                k => return Err(Error::Parse(format!("unknown column kind {k}"))),
            });
        }
        cols.push(col);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after binary table".into()));
    }
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..n_rows {
        let row: Vec<&str> = cols.iter().map(|c| c[i].as_str()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn number_format_round_trips(v in any::<f64>()) {
            let back = parse_f64(&fmt_f64(v)).unwrap();
            if v.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), v.to_bits());
            }
        }
    }

    proptest! {
        #[test]
        fn binary_table_round_trips(
            rows in proptest::collection::vec((any::<f64>(), any::<i64>(), "l[a-z :;]{0,8}", any::<bool>(), any::<u64>()), 0..20)
        ) {
            let mut csv = String::from("x,id,label,opt,seed\n");
            for (x, i, l, b, u) in &rows {
                let opt = if *b { fmt_f64(*x) } else { String::new() };
                csv.push_str(&format!("{},{i},{l},{opt},{}\n", fmt_f64(*x), u | 1 << 63));
            }
            let back = binary_to_csv(&csv_to_binary(&csv).unwrap()).unwrap();
            prop_assert_eq!(back, csv);
        }
    }

    #[test]
    fn binary_table_rejects_damage() {
        let bin = csv_to_binary("a,b\n1,2.5\n").unwrap();
        assert!(binary_to_csv(&bin[..bin.len() - 1]).is_err());
        assert!(binary_to_csv(b"PPKTAB02").is_err());
        assert!(csv_to_binary("a,b\n1\n").is_err());
        let text = binary_to_csv(&csv_to_binary("a,b\n1,0.5\n").unwrap()).unwrap();
        assert_eq!(text, format!("a,b\n1,{}\n", fmt_f64(0.5)));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
