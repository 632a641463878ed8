//! Citation-dataset ingestion, hypergraph construction from citation links,
//! and split management.
//!
//! Input layout follows the canonical public distribution of the citation
//! benchmarks: a `content` file with
//! `node_id<TAB>f_1 ... f_d<TAB>label_name` lines and a `cites` file with
//! `cited_id<TAB>citing_id` lines.

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::linalg::DenseMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

/// A parsed citation dataset: aligned node ids, features, labels, and the
/// directed citation pairs (citing -> cited).
#[derive(Debug, Clone)]
pub struct CitationDataset {
    pub node_ids: Vec<String>,
    pub features: DenseMatrix,
    /// Class id per node, in `[0, num_classes)`.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// (citing index, cited index).
    pub citations: Vec<(usize, usize)>,
    /// Citations referencing unknown node ids, dropped during parsing.
    pub dropped_citations: usize,
}

impl CitationDataset {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Disjoint train/val/test node-index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitStrategy {
    /// 20 labeled nodes per class (file order), then 500 validation nodes,
    /// with the last 1000 nodes as the test set.
    StandardPlanetoid,
    RandomStratified { train_frac: f64, val_frac: f64 },
}

/// Parse `content` + `cites` files. Feature rows are optionally normalized
/// to unit l1 mass (`normalize`, recommended). Citations that reference
/// unknown node ids are dropped and counted.
pub fn load_citation_dataset(
    content_path: &Path,
    cites_path: &Path,
    normalize: bool,
) -> Result<CitationDataset> {
    let content = BufReader::new(std::fs::File::open(content_path)?);
    let mut node_ids = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();

    for (lineno, line) in content.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected id, features, label; got {} fields", fields.len()),
            });
        }
        let id = fields[0].to_string();
        if index_of.contains_key(&id) {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("duplicate node id {id}"),
            });
        }
        let label = fields[fields.len() - 1].to_string();
        let mut feats = Vec::with_capacity(fields.len() - 2);
        for f in &fields[1..fields.len() - 1] {
            let v: f64 = f.parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("bad feature value {f:?}: {e}"),
            })?;
            feats.push(v);
        }
        if let Some(first) = feature_rows.first() {
            if feats.len() != first.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!(
                        "inconsistent feature count: {} vs {}",
                        feats.len(),
                        first.len()
                    ),
                });
            }
        }
        index_of.insert(id.clone(), node_ids.len());
        node_ids.push(id);
        feature_rows.push(feats);
        label_names.push(label);
    }
    if node_ids.is_empty() {
        return Err(Error::InvalidArgument("content file has no nodes".into()));
    }

    // class ids assigned in lexicographic label order for determinism
    let classes: BTreeMap<&String, ()> = label_names.iter().map(|l| (l, ())).collect();
    let class_names: Vec<String> = classes.keys().map(|s| (*s).clone()).collect();
    let class_id: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels: Vec<usize> = label_names.iter().map(|l| class_id[l.as_str()]).collect();

    let mut features = DenseMatrix::from_rows(&feature_rows)?;
    if normalize {
        for i in 0..features.rows() {
            let row = features.row_mut(i);
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            if l1 > 0.0 {
                for v in row {
                    *v /= l1;
                }
            }
        }
    }

    let cites = BufReader::new(std::fs::File::open(cites_path)?);
    let mut citations = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in cites.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected `cited citing`, got {} fields", fields.len()),
            });
        }
        match (index_of.get(fields[0]), index_of.get(fields[1])) {
            (Some(&cited), Some(&citing)) => citations.push((citing, cited)),
            _ => dropped += 1,
        }
    }

    Ok(CitationDataset {
        node_ids,
        features,
        labels,
        class_names,
        citations,
        dropped_citations: dropped,
    })
}

/// One hyperedge per cited document, containing all of its citers.
/// Self-citations are ignored; hyperedges over identical citer sets merge
/// per the hypergraph module's structural dedup.
pub fn citations_to_hypergraph(ds: &CitationDataset) -> Result<Hypergraph> {
    let mut citers_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(citing, cited) in &ds.citations {
        if citing == cited {
            continue;
        }
        citers_of.entry(cited).or_default().push(citing);
    }
    let raw: Vec<(Vec<usize>, f64)> = citers_of
        .into_values()
        .map(|nodes| (nodes, 1.0))
        .collect();
    Hypergraph::new(ds.node_count(), raw)
}

/// Deterministic splits for a given seed.
pub fn make_splits(ds: &CitationDataset, strategy: SplitStrategy, seed: u64) -> Result<SplitSpec> {
    let n = ds.node_count();
    let c = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(empty) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "class {empty} has no nodes; cannot stratify"
        )));
    }

    match strategy {
        SplitStrategy::StandardPlanetoid => {
            let mut train = Vec::new();
            for nodes in &by_class {
                train.extend(nodes.iter().take(20).copied());
            }
            train.sort_unstable();
            let in_train: Vec<bool> = {
                let mut v = vec![false; n];
                for &i in &train {
                    v[i] = true;
                }
                v
            };
            let test_start = n.saturating_sub(1000);
            let val: Vec<usize> = (0..test_start)
                .filter(|i| !in_train[*i])
                .take(500)
                .collect();
            let test: Vec<usize> = (test_start..n).filter(|i| !in_train[*i]).collect();
            let in_val: Vec<bool> = {
                let mut v = vec![false; n];
                for &i in &val {
                    v[i] = true;
                }
                v
            };
            let test: Vec<usize> = test.into_iter().filter(|i| !in_val[*i]).collect();
            Ok(SplitSpec { train, val, test })
        }
        SplitStrategy::RandomStratified {
            train_frac,
            val_frac,
        } => {
            if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "invalid split fractions ({train_frac}, {val_frac})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for nodes in &mut by_class {
                nodes.shuffle(&mut rng);
                let n_train = ((nodes.len() as f64) * train_frac).round().max(1.0) as usize;
                let n_val = ((nodes.len() as f64) * val_frac).round() as usize;
                for (pos, &i) in nodes.iter().enumerate() {
                    if pos < n_train {
                        train.push(i);
                    } else if pos < n_train + n_val {
                        val.push(i);
                    } else {
                        test.push(i);
                    }
                }
            }
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
            Ok(SplitSpec { train, val, test })
        }
    }
}

/// SHA-256 hex digest of a file, recorded in run manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let content = dir.join("toy.content");
        let cites = dir.join("toy.cites");
        let mut f = std::fs::File::create(&content).unwrap();
        writeln!(f, "a\t1\t0\t0\tml").unwrap();
        writeln!(f, "b\t0\t1\t0\tml").unwrap();
        writeln!(f, "c\t0\t0\t1\tdb").unwrap();
        let mut f = std::fs::File::create(&cites).unwrap();
        writeln!(f, "c\ta").unwrap(); // a cites c
        writeln!(f, "c\tb").unwrap(); // b cites c
        writeln!(f, "zzz\ta").unwrap(); // unknown target, dropped
        (content, cites)
    }

    #[test]
    fn parse_fixture_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (content, cites) = write_fixture(dir.path());
        let ds = load_citation_dataset(&content, &cites, false).unwrap();
        assert_eq!(ds.node_count(), 3);
        assert_eq!(ds.feature_dim(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.class_names, vec!["db".to_string(), "ml".to_string()]);
        assert_eq!(ds.labels, vec![1, 1, 0]);
        assert_eq!(ds.citations, vec![(0, 2), (1, 2)]);
        assert_eq!(ds.dropped_citations, 1);
        assert_eq!(ds.features.get(0, 0), 1.0);
    }

    #[test]
    fn duplicate_node_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("bad.content");
        let cites = dir.path().join("bad.cites");
        std::fs::write(&content, "a\t1\tml\na\t0\tdb\n").unwrap();
        std::fs::write(&cites, "").unwrap();
        let err = load_citation_dataset(&content, &cites, false).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn hyperedge_from_common_target() {
        let dir = tempfile::tempdir().unwrap();
        let (content, cites) = write_fixture(dir.path());
        let ds = load_citation_dataset(&content, &cites, true).unwrap();
        let g = citations_to_hypergraph(&ds).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].nodes, vec![0, 1]);
    }

    #[test]
    fn no_citations_no_hyperedges() {
        let dir = tempfile::tempdir().unwrap();
        let (content, _) = write_fixture(dir.path());
        let cites = dir.path().join("empty.cites");
        std::fs::write(&cites, "").unwrap();
        let ds = load_citation_dataset(&content, &cites, true).unwrap();
        let g = citations_to_hypergraph(&ds).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn hyperedges_match_inverse_index_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 30;
        let citations: Vec<(usize, usize)> = (0..100)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        let ds = CitationDataset {
            node_ids: (0..n).map(|i| format!("n{i}")).collect(),
            features: DenseMatrix::zeros(n, 2),
            labels: vec![0; n],
            class_names: vec!["x".into()],
            citations: citations.clone(),
            dropped_citations: 0,
        };
        let g = citations_to_hypergraph(&ds).unwrap();
        // brute-force inverse index
        let mut oracle: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (citing, cited) in citations {
            if citing != cited {
                oracle.entry(cited).or_default().push(citing);
            }
        }
        let mut expected: Vec<Vec<usize>> = oracle
            .into_values()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        expected.sort();
        expected.dedup();
        let mut got: Vec<Vec<usize>> = g.edges().iter().map(|e| e.nodes.clone()).collect();
        got.sort();
        assert_eq!(got, expected);
    }

    fn synthetic_dataset(n: usize, classes: usize) -> CitationDataset {
        CitationDataset {
            node_ids: (0..n).map(|i| format!("n{i}")).collect(),
            features: DenseMatrix::zeros(n, 2),
            labels: (0..n).map(|i| i % classes).collect(),
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            citations: Vec::new(),
            dropped_citations: 0,
        }
    }

    #[test]
    fn stratified_split_deterministic_and_disjoint() {
        let ds = synthetic_dataset(100, 4);
        let strategy = SplitStrategy::RandomStratified {
            train_frac: 0.1,
            val_frac: 0.1,
        };
        let s1 = make_splits(&ds, strategy, 42).unwrap();
        let s2 = make_splits(&ds, strategy, 42).unwrap();
        assert_eq!(s1, s2);
        let mut all: Vec<usize> = s1
            .train
            .iter()
            .chain(&s1.val)
            .chain(&s1.test)
            .copied()
            .collect();
        all.sort_unstable();
        let before = all.len();
        all.dedup();
        assert_eq!(before, all.len(), "splits must be pairwise disjoint");
        assert!(all.iter().all(|i| *i < 100));
    }

    #[test]
    fn stratified_split_preserves_proportions() {
        let ds = synthetic_dataset(200, 4);
        let s = make_splits(
            &ds,
            SplitStrategy::RandomStratified {
                train_frac: 0.2,
                val_frac: 0.2,
            },
            7,
        )
        .unwrap();
        // each class contributes 50 nodes; expect 10 +- 1 per class in train
        for c in 0..4 {
            let count = s.train.iter().filter(|&&i| ds.labels[i] == c).count();
            assert!((9..=11).contains(&count), "class {c}: {count}");
        }
    }

    #[test]
    fn round_trip_through_serialization() {
        let dir = tempfile::tempdir().unwrap();
        let (content, cites) = write_fixture(dir.path());
        let ds = load_citation_dataset(&content, &cites, true).unwrap();
        let g = citations_to_hypergraph(&ds).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let g2 = Hypergraph::read_from(ds.node_count(), buf.as_slice()).unwrap();
        assert_eq!(g, g2);
    }
}
