//! Whitespace-separated dataset text format, one sample per line, floats
//! written with 17 significant digits so values round-trip exactly.
//! AUC lines hold `d` features then the label; transition lines hold `φ, φ', r`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

use super::auc::AucDataset;
use super::pe::Transition;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(buf: &mut String, vals: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in vals {
        if !first {
            buf.push(' ');
        }
        first = false;
        buf.push_str(&fmt_f64(v));
    }
}

pub fn auc_to_string(ds: &AucDataset) -> String {
    let mut buf = String::new();
    for i in 0..ds.n() {
        push_row(&mut buf, ds.x.row(i).iter().copied());
        let _ = writeln!(buf, " {}", ds.y[i]);
    }
    buf
}

pub fn transitions_to_string(ts: &[Transition]) -> String {
    let mut buf = String::new();
    for t in ts {
        push_row(
            &mut buf,
            t.phi.iter().chain(&t.phi_next).copied().chain([t.reward]),
        );
        buf.push('\n');
    }
    buf
}

pub fn write_auc(path: &Path, ds: &AucDataset) -> Result<()> {
    fs::write(path, auc_to_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn write_transitions(path: &Path, ts: &[Transition]) -> Result<()> {
    fs::write(path, transitions_to_string(ts)).map_err(|e| Error::io(path, e))
}

fn parse_line(path: &Path, lineno: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("bad number {tok:?}: {e}"),
            })
        })
        .collect()
}

pub fn parse_auc(path: &Path, text: &str) -> Result<AucDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut d = None;
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals = parse_line(path, k + 1, line)?;
        let width = vals.len();
        if width < 2 || d.is_some_and(|d| d + 1 != width) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("expected {} fields, found {width}", d.map_or(2, |d| d + 1)),
            });
        }
        d = Some(width - 1);
        let label = vals[width - 1];
        if label != 1.0 && label != -1.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("label must be 1 or -1, found {label}"),
            });
        }
        labels.push(label as i8);
        data.extend_from_slice(&vals[..width - 1]);
    }
    let d = d.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "empty dataset".into(),
    })?;
    AucDataset::new(DenseMatrix::from_row_major(labels.len(), d, data), labels)
}

pub fn parse_transitions(path: &Path, text: &str) -> Result<(Vec<Transition>, usize)> {
    let mut out = Vec::new();
    let mut d = None;
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals = parse_line(path, k + 1, line)?;
        let width = vals.len();
        if width < 3 || width % 2 == 0 || d.is_some_and(|d| 2 * d + 1 != width) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("expected 2d+1 fields, found {width}"),
            });
        }
        let dd = (width - 1) / 2;
        d = Some(dd);
        out.push(Transition {
            phi: vals[..dd].to_vec(),
            phi_next: vals[dd..2 * dd].to_vec(),
            reward: vals[2 * dd],
        });
    }
    let d = d.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "empty transition file".into(),
    })?;
    Ok((out, d))
}

pub fn read_auc(path: &Path) -> Result<AucDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_auc(path, &text)
}

pub fn read_transitions(path: &Path) -> Result<(Vec<Transition>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transitions(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_auc_dataset, gen_random_mdp, random_features, sample_transitions};

    #[test]
    fn auc_round_trip_exact() {
        let ds = gen_auc_dataset(30, 4, 0.2, 0.1, 1).unwrap();
        let text = auc_to_string(&ds);
        assert!(!text.contains('\r'));
        let back = parse_auc(Path::new("mem"), &text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn transitions_round_trip_exact() {
        let mdp = gen_random_mdp(4, 2, 1).unwrap();
        let f = random_features(4, 3, 1).unwrap();
        let ts = sample_transitions(&mdp, 20, &f, 1).unwrap();
        let (back, d) = parse_transitions(Path::new("mem"), &transitions_to_string(&ts)).unwrap();
        assert_eq!(d, 3);
        assert_eq!(ts, back);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_auc(Path::new("f"), "1 2 1\n1 x 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_transitions(Path::new("f"), "1 2 3\n1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
