//! The synthetic studies. Each returns its raw results plus CSV tables whose
//! rows all carry the run id.
//!
//! Tasks run on the ambient rayon pool and are collected in task order, so
//! outputs do not depend on the number of threads. Every seed inside a
//! replicate is shared along the swept axis (noise level or angle), which
//! makes neighbouring grid points differ only through that axis.

pub mod disparate;
pub mod finetune;
pub mod freeze;
pub mod phase_sweep;

use crate::error::Result;
use crate::formats::finish_csv;

/// A named CSV file held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub contents: String,
}

pub(crate) fn table<I>(name: &str, header: &[&str], rows: I) -> Result<Table>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(Table { name: name.to_string(), contents: finish_csv(w)? })
}

/// Mean and standard error of the mean; the error is 0 for fewer than two
/// values.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn class_name(c: dpfl_core::data::Class) -> &'static str {
    match c {
        dpfl_core::data::Class::One => "1",
        dpfl_core::data::Class::Two => "2",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn tables_have_headers() {
        let t = table("t.csv", &["a", "b"], vec![vec!["1".into(), "x".into()]]).unwrap();
        assert_eq!(t.contents, "a,b\n1,x\n");
    }
}
