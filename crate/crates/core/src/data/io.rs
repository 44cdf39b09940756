//! JSON-lines dataset directory.
//!
//! ```text
//! manifest.json   {"schema_version": 1, "n_domains": N}
//! vocab.txt       one token per line, id = line index
//! users.jsonl     {"user_id": str, "sequences": [[str, ...], ...]}
//! items.jsonl     {"item_id": str, "title": str}
//! train.jsonl     {"ts": int, "user_id": str, "item_id": str, "label": 0|1}
//! valid.jsonl, test.jsonl   same as train.jsonl
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AtomicBehavior, CtrRecord, DataError, Dataset, ItemProfile, UserProfile, Vocab};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub n_domains: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub ts: u64,
    pub user_id: String,
    pub item_id: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserLine {
    pub user_id: String,
    pub sequences: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemLine {
    pub item_id: String,
    pub title: String,
}

fn parse_lines<T: DeserializeOwned>(file: &str, text: &str) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| DataError::Parse {
            file: file.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn parse_records(file: &str, text: &str) -> Result<Vec<RecordLine>, DataError> {
    let recs: Vec<RecordLine> = parse_lines(file, text)?;
    for (i, r) in recs.iter().enumerate() {
        if r.label > 1 {
            return Err(DataError::Parse {
                file: file.to_string(),
                line: i + 1,
                message: format!("label {} is not 0 or 1", r.label),
            });
        }
    }
    Ok(recs)
}

pub fn parse_users(file: &str, text: &str) -> Result<Vec<UserLine>, DataError> {
    parse_lines(file, text)
}

pub fn parse_items(file: &str, text: &str) -> Result<Vec<ItemLine>, DataError> {
    parse_lines(file, text)
}

fn read(dir: &Path, name: &str) -> Result<String, DataError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| DataError::Io { path, source })
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), DataError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|source| DataError::Io { path, source })
}

fn to_lines<T: Serialize>(rows: impl Iterator<Item = T>) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(&r).expect("plain structs serialise"));
        s.push('\n');
    }
    s
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let manifest = Manifest { schema_version: SCHEMA_VERSION, n_domains: dataset.n_domains()? };
    write(dir, "manifest.json", &(serde_json::to_string_pretty(&manifest).expect("manifest") + "\n"))?;
    write(dir, "vocab.txt", &dataset.vocab.to_file_string())?;
    write(
        dir,
        "users.jsonl",
        &to_lines(dataset.users.iter().map(|u| UserLine {
            user_id: u.user_id.clone(),
            sequences: u.sequences.iter().map(|s| s.iter().map(|b| b.text().to_string()).collect()).collect(),
        })),
    )?;
    write(
        dir,
        "items.jsonl",
        &to_lines(
            dataset.items.iter().map(|i| ItemLine { item_id: i.item_id.clone(), title: i.title.text().to_string() }),
        ),
    )?;
    for (name, split) in [("train.jsonl", &dataset.train), ("valid.jsonl", &dataset.valid), ("test.jsonl", &dataset.test)]
    {
        write(
            dir,
            name,
            &to_lines(split.iter().map(|r| RecordLine {
                ts: r.ts,
                user_id: dataset.users[r.user].user_id.clone(),
                item_id: dataset.items[r.item].item_id.clone(),
                label: r.label,
            })),
        )?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest: Manifest = serde_json::from_str(&read(dir, "manifest.json")?).map_err(|e| DataError::Parse {
        file: "manifest.json".into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(DataError::SchemaVersionMismatch { found: manifest.schema_version, expected: SCHEMA_VERSION });
    }
    let vocab = Vocab::parse(&read(dir, "vocab.txt")?)?;

    let mut interned: HashMap<String, Arc<AtomicBehavior>> = HashMap::new();
    let mut intern = |text: &str, file: &str, line: usize| -> Result<Arc<AtomicBehavior>, DataError> {
        let key = text.trim();
        if let Some(b) = interned.get(key) {
            return Ok(Arc::clone(b));
        }
        let b = Arc::new(AtomicBehavior::new(key, &vocab).map_err(|e| DataError::Parse {
            file: file.into(),
            line,
            message: e.to_string(),
        })?);
        interned.insert(key.to_string(), Arc::clone(&b));
        Ok(b)
    };

    let mut users = Vec::new();
    let mut user_index = HashMap::new();
    for (i, u) in parse_users("users.jsonl", &read(dir, "users.jsonl")?)?.into_iter().enumerate() {
        let line = i + 1;
        let sequences = u
            .sequences
            .iter()
            .map(|s| s.iter().map(|t| intern(t, "users.jsonl", line)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let profile = UserProfile { user_id: u.user_id, sequences };
        if profile.n_domains() != manifest.n_domains {
            return Err(DataError::Parse {
                file: "users.jsonl".into(),
                line,
                message: format!("{} domains, manifest says {}", profile.n_domains(), manifest.n_domains),
            });
        }
        profile.validate().map_err(|e| DataError::Parse { file: "users.jsonl".into(), line, message: e.to_string() })?;
        if user_index.insert(profile.user_id.clone(), users.len()).is_some() {
            return Err(DataError::Parse {
                file: "users.jsonl".into(),
                line,
                message: format!("duplicate user_id {}", profile.user_id),
            });
        }
        users.push(profile);
    }

    let mut items = Vec::new();
    let mut item_index = HashMap::new();
    for (i, it) in parse_items("items.jsonl", &read(dir, "items.jsonl")?)?.into_iter().enumerate() {
        let title = intern(&it.title, "items.jsonl", i + 1)?;
        if item_index.insert(it.item_id.clone(), items.len()).is_some() {
            return Err(DataError::Parse {
                file: "items.jsonl".into(),
                line: i + 1,
                message: format!("duplicate item_id {}", it.item_id),
            });
        }
        items.push(ItemProfile { item_id: it.item_id, title });
    }

    let load_split = |name: &str| -> Result<Vec<CtrRecord>, DataError> {
        parse_records(name, &read(dir, name)?)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let missing = |what: &str, id: &str| DataError::Parse {
                    file: name.into(),
                    line: i + 1,
                    message: format!("unknown {what} {id:?}"),
                };
                let user = *user_index.get(&r.user_id).ok_or_else(|| missing("user_id", &r.user_id))?;
                let item = *item_index.get(&r.item_id).ok_or_else(|| missing("item_id", &r.item_id))?;
                Ok(CtrRecord { ts: r.ts, user, item, label: r.label })
            })
            .collect()
    };
    let train = load_split("train.jsonl")?;
    let valid = load_split("valid.jsonl")?;
    let test = load_split("test.jsonl")?;
    Ok(Dataset { vocab, users, items, train, valid, test })
}
