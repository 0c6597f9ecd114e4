//! Implicit-feedback datasets: loading, seeded splitting and conversion into
//! interaction graphs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
}

impl SplitLabel {
    fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Valid => "valid",
            SplitLabel::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitLabel::Train),
            "valid" => Some(SplitLabel::Valid),
            "test" => Some(SplitLabel::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// Whitespace-separated `user item [ignored...]` per line.
    TripletText,
    /// MovieLens `u.data` (tab separated user, item, rating, timestamp), or a
    /// directory containing it.
    Movielens,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub valid_fraction_of_train: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(train_fraction: f64, valid_fraction_of_train: f64, seed: u64) -> Self {
        SplitConfig {
            train_fraction,
            valid_fraction_of_train,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config(format!(
                "train fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if !(self.valid_fraction_of_train >= 0.0 && self.valid_fraction_of_train < 1.0) {
            return Err(Error::config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.valid_fraction_of_train
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    pub user_count: usize,
    pub item_count: usize,
    /// Deduplicated pairs with contiguous 0-based ids.
    pub pairs: Vec<(usize, usize)>,
    /// One label per pair; `None` until `split` has run.
    pub labels: Option<Vec<SplitLabel>>,
    /// Original ids from the source file, indexed by contiguous id.
    pub user_ids: Vec<i64>,
    pub item_ids: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub pairs: usize,
    pub nnz_train: usize,
    pub nnz_valid: usize,
    pub nnz_test: usize,
    /// Users with no training pair; they are skipped by sampling and metrics.
    pub cold_users: usize,
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<InteractionDataset> {
    let file_path: PathBuf = match format {
        InputFormat::Movielens if path.is_dir() => path.join("u.data"),
        _ => path.to_path_buf(),
    };
    let file = fs::File::open(&file_path)
        .map_err(|e| Error::io(format!("cannot open {}", file_path.display()), e))?;
    let reader = BufReader::new(file);

    let mut raw = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", file_path.display()), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields: Vec<&str> = match format {
            InputFormat::Movielens => trimmed.split('\t').collect(),
            InputFormat::TripletText => trimmed.split_whitespace().collect(),
        };
        if format == InputFormat::Movielens && fields.len() < 2 {
            // Some mirrors ship space-separated copies.
            fields = trimmed.split_whitespace().collect();
        }
        let bad = |message: String| Error::Format {
            path: file_path.clone(),
            line: lineno + 1,
            message,
        };
        if fields.len() < 2 {
            return Err(bad(format!("expected at least two columns, found {}", fields.len())));
        }
        let user: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("user id {:?} is not an integer", fields[0])))?;
        let item: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("item id {:?} is not an integer", fields[1])))?;
        raw.push((user, item));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(reindex(&raw))
}

fn reindex(raw: &[(i64, i64)]) -> InteractionDataset {
    let user_ids: Vec<i64> = raw.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let item_ids: Vec<i64> = raw.iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let umap: HashMap<i64, usize> = user_ids.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let imap: HashMap<i64, usize> = item_ids.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut seen = HashSet::with_capacity(raw.len());
    let mut pairs = Vec::with_capacity(raw.len());
    for &(u, i) in raw {
        let p = (umap[&u], imap[&i]);
        if seen.insert(p) {
            pairs.push(p);
        }
    }
    InteractionDataset {
        user_count: user_ids.len(),
        item_count: item_ids.len(),
        pairs,
        labels: None,
        user_ids,
        item_ids,
    }
}

impl InteractionDataset {
    /// Wraps already-contiguous pairs. Duplicates are dropped.
    pub fn from_pairs(user_count: usize, item_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        let mut kept = Vec::with_capacity(pairs.len());
        for &(u, i) in pairs {
            if u >= user_count {
                return Err(Error::Index { index: u, len: user_count });
            }
            if i >= item_count {
                return Err(Error::Index { index: i, len: item_count });
            }
            if seen.insert((u, i)) {
                kept.push((u, i));
            }
        }
        Ok(InteractionDataset {
            user_count,
            item_count,
            pairs: kept,
            labels: None,
            user_ids: (0..user_count as i64).collect(),
            item_ids: (0..item_count as i64).collect(),
        })
    }

    pub fn is_split(&self) -> bool {
        self.labels.is_some()
    }

    fn labels_or_err(&self) -> Result<&[SplitLabel]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::input("dataset has not been split"))
    }

    pub fn count(&self, which: SplitLabel) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x == which).count())
    }

    /// Pairs carrying the given label.
    pub fn pairs_with(&self, which: SplitLabel) -> Result<Vec<(usize, usize)>> {
        let labels = self.labels_or_err()?;
        Ok(self
            .pairs
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == which)
            .map(|(&p, _)| p)
            .collect())
    }

    /// Sorted item lists per user for the given labels.
    pub fn user_items(&self, which: &[SplitLabel]) -> Result<Vec<Vec<usize>>> {
        let labels = self.labels_or_err()?;
        let mut out = vec![Vec::new(); self.user_count];
        for (&(u, i), l) in self.pairs.iter().zip(labels) {
            if which.contains(l) {
                out[u].push(i);
            }
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        Ok(out)
    }

    /// Users with at least one training pair. Everyone else is kept in index
    /// space but skipped by sampling and metric averaging.
    pub fn warm_users(&self) -> Result<Vec<bool>> {
        let labels = self.labels_or_err()?;
        let mut warm = vec![false; self.user_count];
        for (&(u, _), l) in self.pairs.iter().zip(labels) {
            if *l == SplitLabel::Train {
                warm[u] = true;
            }
        }
        Ok(warm)
    }

    pub fn stats(&self) -> DatasetStats {
        let cold_users = self
            .warm_users()
            .map(|w| w.iter().filter(|&&x| !x).count())
            .unwrap_or(0);
        DatasetStats {
            users: self.user_count,
            items: self.item_count,
            pairs: self.pairs.len(),
            nnz_train: self.count(SplitLabel::Train),
            nnz_valid: self.count(SplitLabel::Valid),
            nnz_test: self.count(SplitLabel::Test),
            cold_users,
        }
    }

    /// Writes `pairs.tsv` (contiguous ids and labels), `ids.json` and
    /// `stats.json` into `dir`.
    pub fn save_split(&self, dir: &Path) -> Result<()> {
        let labels = self.labels_or_err()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join("pairs.tsv");
        let mut w = std::io::BufWriter::new(
            fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?,
        );
        writeln!(w, "# users={} items={}", self.user_count, self.item_count)?;
        for (&(u, i), l) in self.pairs.iter().zip(labels) {
            writeln!(w, "{u}\t{i}\t{}", l.as_str())?;
        }
        w.flush()?;
        let ids = IdMaps {
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        };
        fs::write(dir.join("ids.json"), serde_json::to_vec(&ids)?)?;
        fs::write(dir.join("stats.json"), serde_json::to_vec_pretty(&self.stats())?)?;
        Ok(())
    }

    pub fn load_split(dir: &Path) -> Result<Self> {
        let path = dir.join("pairs.tsv");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("cannot read split {}", path.display()), e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::EmptyDataset)?;
        let bad = |line: usize, message: &str| Error::Format {
            path: path.clone(),
            line,
            message: message.to_string(),
        };
        let mut dims = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('=').and_then(|(_, v)| v.parse::<usize>().ok()));
        let (user_count, item_count) = match (dims.next(), dims.next()) {
            (Some(u), Some(i)) => (u, i),
            _ => return Err(bad(1, "missing `# users=M items=N` header")),
        };
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let parsed = (f.len() == 3)
                .then(|| Some((f[0].parse::<usize>().ok()?, f[1].parse::<usize>().ok()?, SplitLabel::parse(f[2])?)))
                .flatten();
            let (u, i, l) = parsed.ok_or_else(|| bad(k + 2, "expected `user\\titem\\tlabel`"))?;
            if u >= user_count || i >= item_count {
                return Err(bad(k + 2, "id out of range"));
            }
            pairs.push((u, i));
            labels.push(l);
        }
        let ids: IdMaps = match fs::read(dir.join("ids.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(_) => IdMaps {
                user_ids: (0..user_count as i64).collect(),
                item_ids: (0..item_count as i64).collect(),
            },
        };
        Ok(InteractionDataset {
            user_count,
            item_count,
            pairs,
            labels: Some(labels),
            user_ids: ids.user_ids,
            item_ids: ids.item_ids,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IdMaps {
    user_ids: Vec<i64>,
    item_ids: Vec<i64>,
}

/// Seeded global split. A random subset of exactly `round(n * train_fraction)`
/// pairs is held for training; `round(n_train * valid_fraction_of_train)` of
/// those are relabelled as validation. Everything else is test.
pub fn split(ds: &InteractionDataset, cfg: &SplitConfig) -> Result<InteractionDataset> {
    cfg.validate()?;
    if ds.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ds.pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n);
    let n_valid = ((n_train as f64 * cfg.valid_fraction_of_train).round() as usize).min(n_train - 1);
    let mut labels = vec![SplitLabel::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        if rank < n_valid {
            labels[idx] = SplitLabel::Valid;
        } else if rank < n_train {
            labels[idx] = SplitLabel::Train;
        }
    }
    let mut out = ds.clone();
    out.labels = Some(labels);
    Ok(out)
}

/// Binary interaction matrix of the pairs carrying `which`, with degrees.
pub fn interaction_matrix(ds: &InteractionDataset, which: SplitLabel) -> Result<InteractionGraph> {
    let pairs = ds.pairs_with(which)?;
    InteractionGraph::from_pairs(ds.user_count, ds.item_count, &pairs)
}

/// Planted-community bipartite data for tests and smoke runs: users and items
/// are assigned to `communities` groups, and each user draws `per_user` items,
/// mostly from its own group.
pub fn synthetic(users: usize, items: usize, communities: usize, per_user: usize, seed: u64) -> Result<InteractionDataset> {
    if users == 0 || items == 0 || communities == 0 || per_user == 0 || per_user > items {
        return Err(Error::config("synthetic dataset needs positive sizes and per_user <= items"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group_items: Vec<Vec<usize>> = (0..communities)
        .map(|c| (0..items).filter(|i| i % communities == c).collect())
        .collect();
    let mut pairs = Vec::with_capacity(users * per_user);
    for u in 0..users {
        let own = &group_items[u % communities];
        let mut chosen = BTreeSet::new();
        while chosen.len() < per_user {
            let i = if !own.is_empty() && rng.random::<f64>() < 0.8 {
                own[rng.random_range(0..own.len())]
            } else {
                rng.random_range(0..items)
            };
            chosen.insert(i);
        }
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }
    InteractionDataset::from_pairs(users, items, &pairs)
}
