//! Minimal CSV emission: '.' decimal, '\n' line endings, 17 significant digits.

use std::fmt::Write;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Appends one row; `fields` are already formatted.
pub fn row<I, S>(out: &mut String, fields: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(f.as_ref());
    }
    out.push('\n');
}

pub fn header(names: &[&str]) -> String {
    let mut s = String::new();
    row(&mut s, names.iter());
    s
}

/// Builds a CSV from a header and numeric rows.
pub fn table(names: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header(names);
    for r in rows {
        row(&mut s, r.into_iter().map(num));
    }
    s
}

pub(crate) fn fmt_time_header(times: &[f64]) -> String {
    let mut s = String::new();
    for (i, t) in times.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{}", num(*t));
    }
    s.push('\n');
    s
}
