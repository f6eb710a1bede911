//! File formats: batch and loss CSVs, params JSON, attention dumps, SVG
//! heatmaps and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::mask::AttentionMask;
use crate::matrix::LogitMatrix;
use crate::model::ModelParams;
use crate::rng::SeedSpec;
use crate::scalar::Scalar;
use crate::train::{LossRow, RunRecord, RunSeeds};
use crate::tree::{ParityTree, TreeManifest};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// One row per sample: `sample,pos_1,...,pos_T` with padded entries as 0.
pub fn write_batch_csv(batch: &Batch, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend((1..=batch.len()).map(|m| format!("pos_{m}")));
    w.write_record(&header)?;
    for i in 0..batch.size() {
        let mut rec = vec![i.to_string()];
        rec.extend(batch.row(i).iter().map(|b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv(rows: &[LossRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["step", "stage", "train_loss", "val_loss", "val_acc"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Serialized parameters. Weights are `weights[layer][key][query]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub tool_version: String,
    pub tree: TreeManifest,
    pub link: String,
    pub kn: u32,
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl ParamsFile {
    pub fn new<S: Scalar>(params: &ModelParams<S>, tree: &ParityTree) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            tree: tree.manifest(),
            link: params.link.name().to_string(),
            kn: params.kn,
            weights: params.weights.iter().map(|w| w.cast::<f64>().to_rows()).collect(),
        }
    }

    /// Rebuilds the tree and the cosine-link parameters.
    pub fn into_params(self) -> Result<(ModelParams<f64>, ParityTree)> {
        let tree = ParityTree::from_manifest(&self.tree)?;
        let mut params = ModelParams::<f64>::zeros(&tree, self.kn);
        if self.link != params.link.name() {
            return Err(Error::InvalidParams(format!("unsupported link `{}`", self.link)));
        }
        if self.weights.len() != tree.depth() {
            return Err(Error::InvalidParams(format!(
                "{} layers for a depth-{} tree",
                self.weights.len(),
                tree.depth()
            )));
        }
        for (layer, rows) in self.weights.iter().enumerate() {
            let w = LogitMatrix::from_rows(rows)
                .filter(|w| w.dim() == tree.len())
                .ok_or_else(|| Error::InvalidParams(format!("layer {} is not {t}x{t}", layer + 1, t = tree.len())))?;
            if let Some(x) = w.as_slice().iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidParams(format!("layer {} holds {x}", layer + 1)));
            }
            params.weights[layer] = w;
        }
        Ok((params, tree))
    }
}

pub fn save_params<S: Scalar>(params: &ModelParams<S>, tree: &ParityTree, path: impl AsRef<Path>) -> Result<()> {
    write_json(&ParamsFile::new(params, tree), path)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(ModelParams<f64>, ParityTree)> {
    read_json::<ParamsFile>(path)?.into_params()
}

/// `key,q_1,...,q_T`, one row per key.
pub fn write_matrix_csv<S: Scalar>(m: &LogitMatrix<S>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["key".to_string()];
    header.extend((1..=m.dim()).map(|q| format!("q_{q}")));
    w.write_record(&header)?;
    for (j, row) in m.to_rows().iter().enumerate() {
        let mut rec = vec![(j + 1).to_string()];
        rec.extend(row.iter().map(|x| x.as_f64().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const CELL: usize = 10;
const MARGIN: usize = 40;

/// Attention heatmap: rows are keys, columns are queries, ink linear in
/// probability. Masked cells stay blank.
pub fn heatmap_svg<S: Scalar>(attn: &LogitMatrix<S>, tree: &ParityTree) -> String {
    let t = attn.dim();
    let mask = AttentionMask::new(tree);
    let side = MARGIN + t * CELL + MARGIN / 2;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#
    );
    let _ = writeln!(s, r#"<rect width="{side}" height="{side}" fill="white"/>"#);
    for m in 0..t {
        for j in 0..mask.key_limit(m).min(t) {
            let p = attn.get(j, m).as_f64().clamp(0.0, 1.0);
            let v = (255.0 * (1.0 - p)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({v},{v},255)"/>"#,
                MARGIN + m * CELL,
                MARGIN + j * CELL
            );
        }
    }
    let end = MARGIN + t * CELL;
    for &b in &tree.level_bounds()[..tree.depth()] {
        let at = MARGIN + b * CELL;
        let _ = writeln!(
            s,
            r##"<line x1="{at}" y1="{MARGIN}" x2="{at}" y2="{end}" stroke="#444" stroke-dasharray="2,2"/>"##
        );
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{at}" x2="{end}" y2="{at}" stroke="#444" stroke-dasharray="2,2"/>"##
        );
    }
    for &i in tree.secret() {
        let mid = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<line x1="{mid}" y1="{}" x2="{mid}" y2="{MARGIN}" stroke="red"/>"#,
            MARGIN - 6
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{mid}" x2="{MARGIN}" y2="{mid}" stroke="red"/>"#,
            MARGIN - 6
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="14" font-family="monospace" font-size="10">query</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{MARGIN}" font-family="monospace" font-size="10" transform="rotate(90 4 {MARGIN})">key</text>"#
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_heatmap<S: Scalar>(attn: &LogitMatrix<S>, tree: &ParityTree, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, heatmap_svg(attn, tree))?;
    Ok(())
}

/// Hash git assigns to a blob with this content.
pub fn git_blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config: Option<TrainConfig>,
    /// 1-based.
    pub secret: Vec<usize>,
    pub seed: u64,
    pub seeds: BTreeMap<String, SeedSpec>,
    /// File name to git-style SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config: None,
            secret: Vec::new(),
            seed,
            seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn for_run(command: &str, record: &RunRecord) -> Self {
        let mut m = Self::new(command, record.seeds.seed);
        m.config = Some(record.config.clone());
        m.secret = record.secret.clone();
        m.seeds = seed_map(&record.seeds);
        m.wall_time_s = record.wall_time_s;
        m
    }

    /// Hashes `dir/name` for every name.
    pub fn hash_outputs(&mut self, dir: &Path, names: &[&str]) -> Result<()> {
        for name in names {
            let bytes = fs::read(dir.join(name))?;
            self.outputs.insert(name.to_string(), git_blob_sha256(&bytes));
        }
        Ok(())
    }

    /// Names whose current content no longer matches the recorded hash.
    pub fn stale_outputs(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for (name, hash) in &self.outputs {
            if git_blob_sha256(&fs::read(dir.join(name))?) != *hash {
                stale.push(name.clone());
            }
        }
        Ok(stale)
    }
}

fn seed_map(seeds: &RunSeeds) -> BTreeMap<String, SeedSpec> {
    [
        ("secret", seeds.secret),
        ("train", seeds.train),
        ("oracle", seeds.oracle),
        ("validation", seeds.validation),
        ("test", seeds.test),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
