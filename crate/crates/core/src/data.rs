//! Observed response data and its CSV format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{BlessError, Result};

/// `N x p` matrix of responses, stored 0-based row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    n: usize,
    p: usize,
    d: usize,
    values: Vec<u16>,
}

impl Dataset {
    /// Build from 0-based rows; every value must be `< d`.
    pub fn from_rows(rows: &[Vec<u16>], d: usize) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(BlessError::Dimension("dataset has no rows or no items".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(BlessError::Dimension(format!(
                    "row {} has {} responses, expected {p}",
                    i + 1,
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), p, d, values)
    }

    pub fn from_flat(n: usize, p: usize, d: usize, values: Vec<u16>) -> Result<Self> {
        if values.len() != n * p {
            return Err(BlessError::Dimension(format!(
                "{} values for {n} x {p} dataset",
                values.len()
            )));
        }
        if d < 2 || d > u16::MAX as usize {
            return Err(BlessError::Dimension(format!("d = {d} out of range")));
        }
        if let Some(pos) = values.iter().position(|&v| v as usize >= d) {
            return Err(BlessError::InvalidArgument(format!(
                "response {} at row {}, item {} outside 1..={d}",
                values[pos] as usize + 1,
                pos / p + 1,
                pos % p + 1
            )));
        }
        Ok(Self { n, p, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.values[i * self.p + j] as usize
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.values.chunks_exact(self.p)
    }

    /// Same data with rows reordered: row `i` of the result is row
    /// `order[i]` of `self`.
    pub fn reorder_rows(&self, order: &[usize]) -> Self {
        let values = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            n: order.len(),
            p: self.p,
            d: self.d,
            values,
        }
    }

    /// Row-major index of each row's response pattern (first item most
    /// significant). Requires `d^p` to fit in `usize`.
    pub fn cell_index(&self, i: usize) -> usize {
        self.row(i)
            .iter()
            .fold(0usize, |acc, &v| acc * self.d + v as usize)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record((1..=self.p).map(|j| format!("y{j}")))?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|&v| (v + 1).to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Parse the CSV format: header `y1..yp`, 1-based categories.
    pub fn read_csv<R: Read>(r: R, d: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let p = rdr.headers()?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != p {
                return Err(BlessError::Dimension(format!(
                    "CSV row {} has {} fields, expected {p}",
                    n + 1,
                    rec.len()
                )));
            }
            for field in rec.iter() {
                let v: usize = field.trim().parse().map_err(|_| {
                    BlessError::InvalidArgument(format!("CSV row {}: bad category {field:?}", n + 1))
                })?;
                if v == 0 || v > d {
                    return Err(BlessError::InvalidArgument(format!(
                        "CSV row {}: category {v} outside 1..={d}",
                        n + 1
                    )));
                }
                values.push((v - 1) as u16);
            }
            n += 1;
        }
        Self::from_flat(n, p, d, values)
    }

    pub fn read_csv_path(path: &Path, d: usize) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, d)
    }
}

/// Distinct response patterns with (possibly fractional) weights. Every
/// likelihood-based routine works on this compressed form; the result is
/// identical to iterating over subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCounts {
    pub p: usize,
    pub d: usize,
    patterns: Vec<u16>,
    pub weights: Vec<f64>,
    /// For each subject of the source dataset, the index of its pattern.
    pub subject_pattern: Vec<usize>,
}

impl PatternCounts {
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut index: BTreeMap<&[u16], usize> = BTreeMap::new();
        for row in data.rows() {
            let next = index.len();
            index.entry(row).or_insert(next);
        }
        // renumber in sorted order for a deterministic layout
        let mut remap = vec![0; index.len()];
        let mut patterns = Vec::with_capacity(index.len() * data.p());
        for (sorted_pos, (row, &first_seen)) in index.iter().enumerate() {
            remap[first_seen] = sorted_pos;
            patterns.extend_from_slice(row);
        }
        let mut weights = vec![0.0; index.len()];
        let subject_pattern: Vec<usize> = data
            .rows()
            .map(|row| {
                let u = remap[index[row]];
                weights[u] += 1.0;
                u
            })
            .collect();
        Self {
            p: data.p(),
            d: data.d(),
            patterns,
            weights,
            subject_pattern,
        }
    }

    /// Every pattern of `{0..d-1}^p` weighted by `total * probs[cell]`
    /// (expected counts); cells of zero probability are dropped.
    pub fn from_pmf(probs: &[f64], p: usize, d: usize, total: f64) -> Self {
        let mut patterns = Vec::new();
        let mut weights = Vec::new();
        let mut resp = vec![0u16; p];
        for &pr in probs {
            if pr > 0.0 {
                patterns.extend_from_slice(&resp);
                weights.push(total * pr);
            }
            for j in (0..p).rev() {
                resp[j] += 1;
                if (resp[j] as usize) < d {
                    break;
                }
                resp[j] = 0;
            }
        }
        Self {
            p,
            d,
            patterns,
            weights,
            subject_pattern: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn pattern(&self, u: usize) -> &[u16] {
        &self.patterns[u * self.p..(u + 1) * self.p]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::from_rows(&[vec![0, 1], vec![1, 1], vec![0, 1], vec![2, 0]], 3).unwrap()
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Dataset::from_rows(&[vec![0, 3]], 3).is_err());
        assert!(Dataset::from_rows(&[vec![0, 1], vec![1]], 3).is_err());
    }

    #[test]
    fn csv_round_trip_is_one_based() {
        let ds = small();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y1,y2\n1,2\n"));
        assert_eq!(Dataset::read_csv(&buf[..], 3).unwrap(), ds);
        assert!(Dataset::read_csv("y1\n0\n".as_bytes(), 3).is_err());
        assert!(Dataset::read_csv("y1\nx\n".as_bytes(), 3).is_err());
    }

    #[test]
    fn pattern_counts_compress() {
        let pc = PatternCounts::from_dataset(&small());
        assert_eq!(pc.len(), 3);
        assert_eq!(pc.total_weight(), 4.0);
        assert_eq!(pc.pattern(0), &[0, 1]);
        assert_eq!(pc.weights[0], 2.0);
        assert_eq!(pc.subject_pattern, vec![0, 1, 0, 2]);
    }

    #[test]
    fn pmf_counts_enumerate_cells() {
        let pc = PatternCounts::from_pmf(&[0.25, 0.0, 0.5, 0.25], 2, 2, 8.0);
        assert_eq!(pc.len(), 3);
        assert_eq!(pc.pattern(1), &[1, 0]);
        assert_eq!(pc.weights, vec![2.0, 4.0, 2.0]);
    }
}
