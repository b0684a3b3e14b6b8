//! Inverted label index: metric name → series ids, and (tag, value) →
//! series ids. Posting lists are sorted sets so intersections are cheap.

use std::collections::{BTreeSet, HashMap};

use minimon_core::SeriesKey;

pub type SeriesId = u32;

#[derive(Debug, Default)]
pub(crate) struct InvertedIndex {
    names: HashMap<String, BTreeSet<SeriesId>>,
    postings: HashMap<String, HashMap<String, BTreeSet<SeriesId>>>,
    entries: u64,
}

impl InvertedIndex {
    pub fn insert(&mut self, id: SeriesId, key: &SeriesKey) {
        self.names.entry(key.name.clone()).or_default().insert(id);
        for (k, v) in key.tags.iter() {
            if self.postings.entry(k.to_string()).or_default().entry(v.to_string()).or_default().insert(id) {
                self.entries += 1;
            }
        }
    }

    pub fn remove(&mut self, id: SeriesId, key: &SeriesKey) {
        if let Some(ids) = self.names.get_mut(&key.name) {
            ids.remove(&id);
            if ids.is_empty() {
                self.names.remove(&key.name);
            }
        }
        for (k, v) in key.tags.iter() {
            let Some(values) = self.postings.get_mut(k) else { continue };
            if let Some(ids) = values.get_mut(v) {
                if ids.remove(&id) {
                    self.entries -= 1;
                }
                if ids.is_empty() {
                    values.remove(v);
                }
            }
            if values.is_empty() {
                self.postings.remove(k);
            }
        }
    }

    pub fn series_for_name(&self, name: &str) -> Option<&BTreeSet<SeriesId>> {
        self.names.get(name)
    }

    pub fn posting(&self, tag: &str, value: &str) -> Option<&BTreeSet<SeriesId>> {
        self.postings.get(tag)?.get(value)
    }

    /// Total (tag pair, series) postings.
    pub fn entries(&self) -> u64 {
        self.entries
    }

    pub fn all_postings(&self) -> impl Iterator<Item = (&str, &str, &BTreeSet<SeriesId>)> {
        self.postings.iter().flat_map(|(k, vs)| vs.iter().map(move |(v, ids)| (k.as_str(), v.as_str(), ids)))
    }
}
