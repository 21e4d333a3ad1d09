//! Text model format, version 1.
//!
//! One UTF-8 document, one item per line, fields separated by single spaces.
//! Every float is written as `{:.16e}` (17 significant digits), which parses
//! back to the identical `f64`. A one-tree model looks like:
//!
//! ```text
//! cotton-yield-forest
//! format_version 1
//! n_estimators 1
//! max_depth none
//! min_samples_leaf 1
//! min_samples_split 2
//! max_features all
//! bootstrap_size 1.0000000000000000e0
//! master_seed 42
//! clamp_mode true
//! feature_names cultivar soil nitrogen_kg_ha ahu
//! train_target_range 1.0000000000000000e3 2.0000000000000000e3
//! encoder cultivar 1
//! DP1646
//! encoder soil 2
//! clay
//! loam
//! tree 0 features 4 seed 13679457532755275413 nodes 3
//! I 1 5.0000000000000000e-1
//! L 1.0000000000000000e3 4
//! L 2.0000000000000000e3 6
//! end
//! ```
//!
//! Encoder labels follow their `encoder <column> <count>` line, one per line,
//! in code order. Tree nodes are listed in preorder (node, left subtree, right
//! subtree): `I <feature_index> <threshold>` for a split (`value <=
//! threshold` goes left) and `L <value> <n_samples>` for a leaf.

use std::io::{Read, Write};
use std::path::Path;

use super::{ForestConfig, ForestError, MaxFeatures, Node, RandomForestModel, RegressionTree};
use crate::dataset::{CategoryMap, Encoder};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "cotton-yield-forest";

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a model. Equal models produce identical bytes.
pub fn write_model<W: Write>(model: &RandomForestModel, mut w: W) -> std::io::Result<()> {
    let c = &model.config;
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "format_version {FORMAT_VERSION}")?;
    writeln!(w, "n_estimators {}", c.n_estimators)?;
    match c.max_depth {
        Some(d) => writeln!(w, "max_depth {d}")?,
        None => writeln!(w, "max_depth none")?,
    }
    writeln!(w, "min_samples_leaf {}", c.min_samples_leaf)?;
    writeln!(w, "min_samples_split {}", c.min_samples_split)?;
    writeln!(w, "max_features {}", c.max_features)?;
    writeln!(w, "bootstrap_size {}", float(c.bootstrap_size))?;
    writeln!(w, "master_seed {}", c.master_seed)?;
    writeln!(w, "clamp_mode {}", model.clamp_mode)?;
    writeln!(w, "feature_names {}", model.feature_names.join(" "))?;
    let (lo, hi) = model.train_target_range;
    writeln!(w, "train_target_range {} {}", float(lo), float(hi))?;
    for map in model.encoder.columns() {
        writeln!(w, "encoder {} {}", map.column(), map.len())?;
        for label in map.labels() {
            writeln!(w, "{label}")?;
        }
    }
    for (i, tree) in model.trees.iter().enumerate() {
        writeln!(
            w,
            "tree {i} features {} seed {} nodes {}",
            tree.feature_count(),
            tree.rng_seed(),
            tree.nodes().len()
        )?;
        for node in tree.nodes() {
            match *node {
                Node::Internal {
                    feature, threshold, ..
                } => writeln!(w, "I {feature} {}", float(threshold))?,
                Node::Leaf { value, n_samples } => writeln!(w, "L {} {n_samples}", float(value))?,
            }
        }
        writeln!(w, "end")?;
    }
    Ok(())
}

pub fn save_model(model: &RandomForestModel, path: impl AsRef<Path>) -> Result<(), ForestError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(model, &mut buf).map_err(|e| ForestError::Io(e.to_string()))?;
    std::fs::write(path, buf).map_err(|e| ForestError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RandomForestModel, ForestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| ForestError::Io(format!("{}: {e}", path.display())))?;
    read_model(file)
}

struct Lines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<&'a str> {
        let (i, l) = self.lines.next()?;
        self.last = i + 1;
        Some(l)
    }

    fn err(&self, reason: impl Into<String>) -> ForestError {
        ForestError::Parse {
            line: self.last,
            reason: reason.into(),
        }
    }

    fn required(&mut self, what: &str) -> Result<&'a str, ForestError> {
        match self.next() {
            Some(l) => Ok(l),
            None => {
                self.last += 1;
                Err(self.err(format!("unexpected end of file, expected {what}")))
            }
        }
    }

    /// Next line as `key` followed by its space-separated values.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>, ForestError> {
        let line = self.required(key)?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected {key}, found {line:?}")));
        }
        Ok(parts.collect())
    }

    fn single(&mut self, key: &str) -> Result<&'a str, ForestError> {
        match self.keyed(key)?.as_slice() {
            [v] => Ok(v),
            _ => Err(self.err(format!("{key} takes one value"))),
        }
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ForestError> {
        let raw = self.single(key)?;
        self.parse(raw, key)
    }

    fn parse<T: std::str::FromStr>(&self, raw: &str, what: &str) -> Result<T, ForestError> {
        raw.parse()
            .map_err(|_| self.err(format!("bad {what}: {raw:?}")))
    }
}

/// Parses a model document. Errors leave nothing behind; a model is returned
/// only when the entire document is valid.
pub fn read_model<R: Read>(mut reader: R) -> Result<RandomForestModel, ForestError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| ForestError::Io(e.to_string()))?;
    let mut p = Lines {
        lines: text.lines().enumerate(),
        last: 0,
    };

    if p.required("header")? != MAGIC {
        return Err(p.err("not a cotton-yield forest model"));
    }
    let version = p.single("format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(ForestError::FormatVersionMismatch {
            found: version.to_owned(),
        });
    }

    let n_estimators: usize = p.value("n_estimators")?;
    let max_depth = match p.single("max_depth")? {
        "none" => None,
        d => Some(p.parse(d, "max_depth")?),
    };
    let min_samples_leaf = p.value("min_samples_leaf")?;
    let min_samples_split = p.value("min_samples_split")?;
    let max_features: MaxFeatures = p.value("max_features")?;
    let bootstrap_size = p.value("bootstrap_size")?;
    let master_seed = p.value("master_seed")?;
    let clamp_mode = p.value("clamp_mode")?;
    let config = ForestConfig {
        n_estimators,
        max_depth,
        min_samples_leaf,
        min_samples_split,
        max_features,
        bootstrap_size,
        master_seed,
    };
    config.validate()?;

    let feature_names: Vec<String> = p
        .keyed("feature_names")?
        .into_iter()
        .map(str::to_owned)
        .collect();
    if feature_names.is_empty() || feature_names.iter().any(String::is_empty) {
        return Err(p.err("feature_names is empty"));
    }
    let range = p.keyed("train_target_range")?;
    let train_target_range = match range.as_slice() {
        [lo, hi] => (p.parse(lo, "range")?, p.parse(hi, "range")?),
        _ => return Err(p.err("train_target_range takes two values")),
    };

    let mut maps = Vec::new();
    for column in ["cultivar", "soil"] {
        let head = p.keyed("encoder")?;
        let count: usize = match head.as_slice() {
            [c, n] if *c == column => p.parse(n, "label count")?,
            _ => return Err(p.err(format!("expected encoder {column} <count>"))),
        };
        let labels = (0..count)
            .map(|_| p.required("encoder label").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        maps.push(CategoryMap::from_sorted_labels(column, labels)?);
    }
    let soil = maps.pop().unwrap();
    let cultivar = maps.pop().unwrap();
    let encoder = Encoder::new(cultivar, soil)?;

    let mut trees = Vec::with_capacity(n_estimators);
    for t in 0..n_estimators {
        let corrupt = |reason: String| ForestError::CorruptTree { tree: t, reason };
        let head = match p.next() {
            Some(l) => l,
            None => {
                return Err(corrupt(format!(
                    "missing (model declares {n_estimators} trees)"
                )))
            }
        };
        let fields: Vec<&str> = head.split(' ').collect();
        let (features, seed, n_nodes) = match fields.as_slice() {
            ["tree", i, "features", f, "seed", s, "nodes", n] if *i == t.to_string() => (
                p.parse::<usize>(f, "feature count")?,
                p.parse::<u64>(s, "seed")?,
                p.parse::<usize>(n, "node count")?,
            ),
            _ => return Err(p.err(format!("expected header of tree {t}, found {head:?}"))),
        };
        if features != feature_names.len() {
            return Err(corrupt(format!(
                "{features} features, model has {}",
                feature_names.len()
            )));
        }
        let nodes = read_nodes(&mut p, t, n_nodes, features)?;
        match p.next() {
            Some("end") => {}
            Some(other) => return Err(corrupt(format!("expected end, found {other:?}"))),
            None => return Err(corrupt("truncated: missing end".into())),
        }
        let tree = RegressionTree::from_nodes(nodes, features, seed).map_err(|e| match e {
            ForestError::CorruptTree { reason, .. } => ForestError::CorruptTree { tree: t, reason },
            ForestError::UnknownFeatureIndex { index, .. } => {
                ForestError::UnknownFeatureIndex { tree: t, index }
            }
            other => other,
        })?;
        trees.push(tree);
    }
    if let Some(extra) = p.next() {
        return Err(p.err(format!("trailing content {extra:?}")));
    }

    RandomForestModel::from_parts(
        trees,
        config,
        encoder,
        feature_names,
        clamp_mode,
        train_target_range,
    )
}

/// Reads `count` preorder node lines and links children.
fn read_nodes(
    p: &mut Lines<'_>,
    tree: usize,
    count: usize,
    features: usize,
) -> Result<Vec<Node>, ForestError> {
    let corrupt = |reason: String| ForestError::CorruptTree { tree, reason };
    let mut nodes: Vec<Node> = Vec::with_capacity(count);
    // Internal nodes still waiting for children, with the number they have.
    let mut open: Vec<(usize, u8)> = Vec::new();

    for k in 0..count {
        let line = p
            .next()
            .ok_or_else(|| corrupt(format!("truncated after {k} of {count} nodes")))?;
        if k > 0 && open.is_empty() {
            return Err(corrupt(format!(
                "node {k} is outside the tree (root already complete)"
            )));
        }
        let node = match line.split(' ').collect::<Vec<_>>().as_slice() {
            ["I", f, thr] => {
                let feature: usize = p.parse(f, "feature index")?;
                if feature >= features {
                    return Err(ForestError::UnknownFeatureIndex {
                        tree,
                        index: feature,
                    });
                }
                Node::Internal {
                    feature,
                    threshold: p.parse(thr, "threshold")?,
                    left: usize::MAX,
                    right: usize::MAX,
                }
            }
            ["L", v, n] => {
                let n_samples: usize = p.parse(n, "sample count")?;
                if n_samples == 0 {
                    return Err(corrupt(format!("leaf {k} has no samples")));
                }
                Node::Leaf {
                    value: p.parse(v, "leaf value")?,
                    n_samples,
                }
            }
            _ => return Err(p.err(format!("bad node line {line:?}"))),
        };
        if let Some((parent, filled)) = open.last_mut() {
            if let Node::Internal { left, right, .. } = &mut nodes[*parent] {
                if *filled == 0 {
                    *left = k;
                } else {
                    *right = k;
                }
            }
            *filled += 1;
            if *filled == 2 {
                open.pop();
            }
        }
        let is_internal = matches!(node, Node::Internal { .. });
        nodes.push(node);
        if is_internal {
            open.push((k, 0));
        }
    }
    if let Some(&(parent, filled)) = open.last() {
        return Err(corrupt(format!(
            "internal node {parent} has {filled} children instead of 2"
        )));
    }
    if nodes.is_empty() {
        return Err(corrupt("no nodes".into()));
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode, fit_encoder, FeatureMatrix, YieldRecord};
    use crate::forest::fit_forest;
    use crate::rng::SplitMix64;

    fn model() -> RandomForestModel {
        let soils = ["clay", "loam", "sandy loam"];
        let recs: Vec<YieldRecord> = (0..60)
            .map(|i| YieldRecord {
                location: "X".into(),
                year: 2020,
                cultivar: ["DP 1646", "ST-5020"][i % 2].into(),
                soil: soils[i % 3].into(),
                nitrogen_kg_ha: (i % 5) as f64 * 61.3,
                ahu: 2000.0 + (i % 7) as f64 * 77.7,
                yield_kg_ha: Some(900.0 + ((i * 31) % 17) as f64 * 33.3),
            })
            .collect();
        let ds = encode(&recs, &fit_encoder(&recs).unwrap()).unwrap();
        fit_forest(&ds, &ForestConfig::default()).unwrap()
    }

    fn to_text(m: &RandomForestModel) -> String {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let text = to_text(&m);
        let back = read_model(text.as_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_text(&back), text);

        let mut rng = SplitMix64::new(1);
        let rows: Vec<[f64; 4]> = (0..100)
            .map(|_| {
                [
                    rng.below(2) as f64,
                    rng.below(3) as f64,
                    rng.next_f64() * 300.0,
                    1900.0 + rng.next_f64() * 700.0,
                ]
            })
            .collect();
        let matrix = FeatureMatrix::from_rows(&rows, 4);
        let a = m.predict_batch(&matrix).unwrap();
        let b = back.predict_batch(&matrix).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn worked_example_parses() {
        let text = "cotton-yield-forest\nformat_version 1\nn_estimators 1\nmax_depth none\nmin_samples_leaf 1\n\
min_samples_split 2\nmax_features all\nbootstrap_size 1.0000000000000000e0\nmaster_seed 42\nclamp_mode true\n\
feature_names cultivar soil nitrogen_kg_ha ahu\ntrain_target_range 1.0000000000000000e3 2.0000000000000000e3\n\
encoder cultivar 1\nDP1646\nencoder soil 2\nclay\nloam\ntree 0 features 4 seed 13679457532755275413 nodes 3\n\
I 1 5.0000000000000000e-1\nL 1.0000000000000000e3 4\nL 2.0000000000000000e3 6\nend\n";
        let m = read_model(text.as_bytes()).unwrap();
        assert_eq!(m.predict(&[0.0, 0.0, 100.0, 2000.0]).unwrap(), 1000.0);
        assert_eq!(m.predict(&[0.0, 1.0, 100.0, 2000.0]).unwrap(), 2000.0);
        assert_eq!(to_text(&m), text);
        assert_eq!(m.config().tree_seed(0), 13679457532755275413);
    }

    #[test]
    fn rejects_other_versions() {
        let text = to_text(&model()).replacen("format_version 1", "format_version 99", 1);
        assert_eq!(
            read_model(text.as_bytes()),
            Err(ForestError::FormatVersionMismatch { found: "99".into() })
        );
    }

    #[test]
    fn every_truncation_fails() {
        let text = to_text(&model());
        let cut_points: Vec<usize> = text.match_indices('\n').map(|(i, _)| i + 1).collect();
        for &cut in &cut_points[..cut_points.len() - 1] {
            assert!(
                read_model(&text.as_bytes()[..cut]).is_err(),
                "accepted a file cut at byte {cut}"
            );
        }
    }

    #[test]
    fn corrupt_trees_are_rejected() {
        let base = "cotton-yield-forest\nformat_version 1\nn_estimators 1\nmax_depth none\nmin_samples_leaf 1\n\
min_samples_split 2\nmax_features all\nbootstrap_size 1.0000000000000000e0\nmaster_seed 42\nclamp_mode true\n\
feature_names cultivar soil nitrogen_kg_ha ahu\ntrain_target_range 1.0000000000000000e3 2.0000000000000000e3\n\
encoder cultivar 1\nDP1646\nencoder soil 2\nclay\nloam\n";
        let one_child = format!("{base}tree 0 features 4 seed 1 nodes 2\nI 1 5e-1\nL 1e3 4\nend\n");
        assert!(matches!(
            read_model(one_child.as_bytes()),
            Err(ForestError::CorruptTree { tree: 0, .. })
        ));
        let orphan = format!("{base}tree 0 features 4 seed 1 nodes 2\nL 1e3 4\nL 1e3 4\nend\n");
        assert!(matches!(
            read_model(orphan.as_bytes()),
            Err(ForestError::CorruptTree { tree: 0, .. })
        ));
        let bad_feature =
            format!("{base}tree 0 features 4 seed 1 nodes 3\nI 7 5e-1\nL 1e3 4\nL 2e3 6\nend\n");
        assert_eq!(
            read_model(bad_feature.as_bytes()),
            Err(ForestError::UnknownFeatureIndex { tree: 0, index: 7 })
        );
        let missing_tree = base.to_string();
        assert!(matches!(
            read_model(missing_tree.as_bytes()),
            Err(ForestError::CorruptTree { tree: 0, .. })
        ));
    }

    #[test]
    fn labels_with_spaces_survive() {
        let m = model();
        let back = read_model(to_text(&m).as_bytes()).unwrap();
        assert_eq!(back.encoder().soil().encode("sandy loam").unwrap(), 2);
        assert_eq!(back.encoder().cultivar().encode("DP 1646").unwrap(), 0);
    }
}
