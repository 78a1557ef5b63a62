//! Hypergraph data model with multiplicity, text ingestion, incidence
//! representation and audit statistics.
//!
//! Vertices and hyperlinks are zero-based in the Rust API. The text format and
//! all user-facing reports are one-based.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Serialize, Serializer};

use crate::{Error, Result};

/// A list of hyperlinks over `n` vertices. Identical hyperlinks are kept as
/// separate entries; empty hyperlinks are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    n: usize,
    links: Vec<Vec<usize>>,
    labels: Option<Vec<String>>,
}

impl Hypergraph {
    /// Build from zero-based vertex lists. Repeated vertices inside one link
    /// collapse to a single membership.
    pub fn new(n: usize, links: Vec<Vec<usize>>) -> Result<Self> {
        let links = links
            .into_iter()
            .enumerate()
            .map(|(j, mut e)| {
                e.sort_unstable();
                e.dedup();
                match e.last() {
                    Some(&v) if v >= n => Err(Error::domain(format!(
                        "link {} references vertex {} but n = {n}",
                        j + 1,
                        v + 1
                    ))),
                    _ => Ok(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            links,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::dims(format!(
                "{} labels for {} vertices",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Vec<usize>] {
        &self.links
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Display name of vertex `i`: its label, or its one-based index.
    pub fn vertex_name(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => (i + 1).to_string(),
        }
    }

    pub fn order(&self, j: usize) -> usize {
        self.links[j].len()
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        if i >= self.n {
            return Err(Error::domain(format!(
                "vertex {} out of range 1..={}",
                i + 1,
                self.n
            )));
        }
        Ok(self
            .links
            .iter()
            .filter(|e| e.binary_search(&i).is_ok())
            .count())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for e in &self.links {
            for &i in e {
                d[i] += 1;
            }
        }
        d
    }

    /// The same hypergraph with every hyperlink listed `times` times
    /// (the whole list repeated, link order preserved within each copy).
    pub fn repeated(&self, times: usize) -> Self {
        let mut links = Vec::with_capacity(self.links.len() * times);
        for _ in 0..times {
            links.extend(self.links.iter().cloned());
        }
        Self {
            n: self.n,
            links,
            labels: self.labels.clone(),
        }
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix::from_rows(
            self.n,
            self.links
                .iter()
                .map(|e| e.iter().map(|&i| i as u32).collect())
                .collect(),
        )
    }

    pub fn audit(&self) -> Result<AuditReport> {
        let deg = self.degrees();
        let cells = self.m() * self.n;
        if cells == 0 {
            return Err(Error::domain(
                "density undefined for an empty incidence matrix (mn = 0)",
            ));
        }
        let ones: usize = self.links.iter().map(Vec::len).sum();
        Ok(AuditReport {
            null_vertices: (0..self.n).filter(|&i| deg[i] == 0).collect(),
            non_informative_links: (0..self.m())
                .filter(|&j| self.links[j].is_empty())
                .collect(),
            density: ones as f64 / cells as f64,
        })
    }

    /// Render in the hyperlink-list text format. Empty hyperlinks are written
    /// as a lone `-`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.links {
            if e.is_empty() {
                out.push('-');
            } else {
                let names: Vec<String> = e.iter().map(|&i| self.vertex_name(i)).collect();
                out.push_str(&names.join(" "));
            }
            out.push('\n');
        }
        out
    }
}

/// Parse the hyperlink-list text format.
///
/// One hyperlink per line; vertex identifiers are separated by whitespace or
/// commas; blank lines and lines starting with `#` are skipped; a line holding
/// only `-` is an empty hyperlink. If the first identifier is an integer the
/// whole input is read as one-based integer ids, otherwise every identifier is
/// a label interned in order of first appearance.
pub fn parse_hyperlinks<R: BufRead>(reader: R, n_hint: Option<usize>) -> Result<Hypergraph> {
    enum Mode {
        Unknown,
        Integer,
        Label,
    }
    let mut mode = Mode::Unknown;
    let mut raw: Vec<Vec<usize>> = Vec::new();
    let mut table: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut max_id = 0usize;

    for (ln, line) in reader.lines().enumerate() {
        let line_no = ln + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "-" {
            raw.push(Vec::new());
            continue;
        }
        let mut link = Vec::new();
        for tok in line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            if matches!(mode, Mode::Unknown) {
                mode = if tok.parse::<i64>().is_ok() {
                    Mode::Integer
                } else {
                    Mode::Label
                };
            }
            match mode {
                Mode::Integer => {
                    let v: i64 = tok.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("expected an integer vertex id, found {tok:?}"),
                    })?;
                    if v <= 0 {
                        return Err(Error::domain(format!(
                            "line {line_no}: vertex ids are one-based, found {v}"
                        )));
                    }
                    let v = v as usize;
                    max_id = max_id.max(v);
                    link.push(v - 1);
                }
                Mode::Label => {
                    if tok.chars().any(char::is_control) {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("control character in label {tok:?}"),
                        });
                    }
                    let next = table.len();
                    let id = *table.entry(tok.to_string()).or_insert_with(|| {
                        labels.push(tok.to_string());
                        next
                    });
                    link.push(id);
                }
                Mode::Unknown => unreachable!(),
            }
        }
        raw.push(link);
    }

    let observed = match mode {
        Mode::Label => labels.len(),
        _ => max_id,
    };
    let n = match n_hint {
        Some(h) if h < observed => {
            return Err(Error::domain(format!(
                "n-hint {h} is smaller than the {observed} vertices observed"
            )))
        }
        Some(h) => h,
        None => observed,
    };
    let hg = Hypergraph::new(n, raw)?;
    match mode {
        Mode::Label => {
            for i in labels.len()..n {
                labels.push((i + 1).to_string());
            }
            hg.with_labels(labels)
        }
        _ => Ok(hg),
    }
}

pub fn parse_hyperlinks_str(text: &str, n_hint: Option<usize>) -> Result<Hypergraph> {
    parse_hyperlinks(text.as_bytes(), n_hint)
}

/// Binary `m x n` incidence matrix stored as sorted coordinate lists per row
/// and per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    m: usize,
    n: usize,
    rows: Vec<Vec<u32>>,
    cols: Vec<Vec<u32>>,
}

impl IncidenceMatrix {
    pub fn from_rows(n: usize, mut rows: Vec<Vec<u32>>) -> Self {
        let mut cols = vec![Vec::new(); n];
        for (j, r) in rows.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            for &i in r.iter() {
                cols[i as usize].push(j as u32);
            }
        }
        Self {
            m: rows.len(),
            n,
            rows,
            cols,
        }
    }

    /// Build from a dense 0/1 predicate.
    pub fn from_fn(m: usize, n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let rows = (0..m)
            .map(|j| (0..n).filter(|&i| f(j, i)).map(|i| i as u32).collect())
            .collect();
        Self::from_rows(n, rows)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.m * self.n) as f64
    }

    pub fn row(&self, j: usize) -> &[u32] {
        &self.rows[j]
    }

    pub fn col(&self, i: usize) -> &[u32] {
        &self.cols[i]
    }

    pub fn get(&self, j: usize, i: usize) -> bool {
        self.rows[j].binary_search(&(i as u32)).is_ok()
    }

    /// Rows stacked `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        let mut rows = Vec::with_capacity(self.m * times);
        for _ in 0..times {
            rows.extend(self.rows.iter().cloned());
        }
        Self::from_rows(self.n, rows)
    }

    /// Rows permuted: row `j` of the result is row `perm[j]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Self::from_rows(self.n, perm.iter().map(|&j| self.rows[j].clone()).collect())
    }

    /// Inverse of [`Hypergraph::incidence`].
    pub fn to_hypergraph(&self) -> Hypergraph {
        Hypergraph {
            n: self.n,
            links: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&i| i as usize).collect())
                .collect(),
            labels: None,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0u8; self.n];
                for &i in r {
                    d[i as usize] = 1;
                }
                d
            })
            .collect()
    }
}

fn one_based<S: Serializer>(v: &[usize], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x + 1))
}

/// Null vertices, empty hyperlinks and the incidence density. Indices are
/// zero-based in memory and one-based when serialized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    #[serde(serialize_with = "one_based")]
    pub null_vertices: Vec<usize>,
    #[serde(serialize_with = "one_based")]
    pub non_informative_links: Vec<usize>,
    pub density: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn parses_integer_lists() {
        let h = parse_hyperlinks_str("1 2 3\n2 3\n", None).unwrap();
        assert_eq!(h.n(), 3);
        assert_eq!(h.links(), &[vec![0, 1, 2], vec![1, 2]]);
    }

    #[test]
    fn keeps_duplicate_links() {
        let h = parse_hyperlinks_str("1 2\n1 2\n", None).unwrap();
        assert_eq!(h.m(), 2);
        assert_eq!(h.links()[0], h.links()[1]);
    }

    #[test]
    fn interns_labels_and_round_trips() {
        let h = parse_hyperlinks_str("a b\nb c\n", None).unwrap();
        assert_eq!(h.labels().unwrap(), &["a", "b", "c"]);
        assert_eq!(h.links(), &[vec![0, 1], vec![1, 2]]);
        let back = parse_hyperlinks_str(&h.to_text(), None).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn comments_commas_and_duplicates_within_a_line() {
        let h = parse_hyperlinks_str("# header\n\n3,1 , 3\n-\n", Some(4)).unwrap();
        assert_eq!(h.n(), 4);
        assert_eq!(h.links(), &[vec![0, 2], vec![]]);
    }

    #[test]
    fn rejects_bad_tokens() {
        match parse_hyperlinks_str("1 2\n3 x\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_hyperlinks_str("1 0\n", None),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            parse_hyperlinks_str("-2\n", None),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            parse_hyperlinks_str("1 5\n", Some(3)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn incidence_rows() {
        let h = Hypergraph::new(3, vec![vec![0, 2]]).unwrap();
        assert_eq!(h.incidence().to_dense(), vec![vec![1, 0, 1]]);
        let h = Hypergraph::new(2, vec![vec![]]).unwrap();
        assert_eq!(h.incidence().to_dense(), vec![vec![0, 0]]);
    }

    #[test]
    fn degrees_and_null_vertices() {
        let h = Hypergraph::new(3, vec![vec![0, 1], vec![0]]).unwrap();
        assert_eq!(h.degree(0).unwrap(), 2);
        assert_eq!(h.degree(2).unwrap(), 0);
        assert!(h.degree(3).is_err());
    }

    #[test]
    fn audit_counts() {
        let h = Hypergraph::new(2, vec![vec![0], vec![]]).unwrap();
        let a = h.audit().unwrap();
        assert_eq!(a.null_vertices, vec![1]);
        assert_eq!(a.non_informative_links, vec![1]);
        assert_eq!(a.density, 0.25);
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["null_vertices"], serde_json::json!([2]));
        assert_eq!(json["non_informative_links"], serde_json::json!([2]));

        let full = Hypergraph::new(3, vec![vec![0, 1, 2]; 4]).unwrap();
        let a = full.audit().unwrap();
        assert_eq!(a.density, 1.0);
        assert!(a.null_vertices.is_empty() && a.non_informative_links.is_empty());

        assert!(Hypergraph::new(3, vec![]).unwrap().audit().is_err());
    }

    fn random_hypergraph(seed: u64) -> Hypergraph {
        let mut r = rng::rng(seed);
        let n = r.random_range(1..15);
        let m = r.random_range(0..20);
        let links = (0..m)
            .map(|_| (0..n).filter(|_| r.random_bool(0.3)).collect())
            .collect();
        Hypergraph::new(n, links).unwrap()
    }

    #[test]
    fn incidence_round_trip_on_random_instances() {
        for seed in 0..100 {
            let h = random_hypergraph(seed);
            assert_eq!(h.incidence().to_hypergraph(), h);
            let text = h.to_text();
            assert_eq!(parse_hyperlinks_str(&text, Some(h.n())).unwrap(), h);
        }
    }

    proptest! {
        #[test]
        fn handshake_and_audit_consistency(seed in 0u64..10_000) {
            let h = random_hypergraph(seed);
            let y = h.incidence();
            let deg_sum: usize = (0..h.n()).map(|i| h.degree(i).unwrap()).sum();
            let ord_sum: usize = (0..h.m()).map(|j| h.order(j)).sum();
            prop_assert_eq!(deg_sum, ord_sum);

            // independent dense scan
            let dense = y.to_dense();
            for i in 0..h.n() {
                let col: usize = dense.iter().map(|r| r[i] as usize).sum();
                prop_assert_eq!(col, y.col(i).len());
            }
            if h.m() > 0 {
                let a = h.audit().unwrap();
                let nulls: Vec<usize> = (0..h.n()).filter(|&i| dense.iter().all(|r| r[i] == 0)).collect();
                let empties: Vec<usize> = (0..h.m()).filter(|&j| dense[j].iter().all(|&v| v == 0)).collect();
                prop_assert_eq!(&a.null_vertices, &nulls);
                prop_assert_eq!(&a.non_informative_links, &empties);
                prop_assert!((0.0..=1.0).contains(&a.density));
                prop_assert_eq!(a.density == 0.0, empties.len() == h.m());
            }
        }
    }
}
