use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{InteractionEvent, SequenceDataset, Vocabulary};
use crate::error::{Error, Result};

/// Line accounting from one ingest call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    /// Non-blank lines seen.
    pub lines: usize,
    pub malformed: usize,
}

fn parse_line(line: &str) -> Option<InteractionEvent> {
    let mut fields = line.split('\t');
    let user = fields.next()?;
    let item = fields.next()?;
    let ts = fields.next()?;
    if fields.next().is_some() || user.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp = ts.trim().parse::<u64>().ok()?;
    Some(InteractionEvent {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

/// Reads `user_id\titem_id\ttimestamp` lines.
///
/// Malformed lines are skipped and counted; more than 1% of them is an error.
pub fn read_events(path: &Path) -> Result<(Vec<InteractionEvent>, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    let mut report = IngestReport::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_line(line) {
            Some(ev) => events.push(ev),
            None => report.malformed += 1,
        }
    }
    if report.malformed * 100 > report.lines {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            malformed: report.malformed,
            total: report.lines,
        });
    }
    if report.malformed > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), report.malformed);
    }
    Ok((events, report))
}

/// Reads a TSV interaction log into a dataset with fresh vocabularies.
pub fn ingest(path: &Path) -> Result<(SequenceDataset, IngestReport)> {
    let (events, report) = read_events(path)?;
    Ok((SequenceDataset::from_events(&events), report))
}

/// Reads a TSV interaction log over existing vocabularies.
pub fn ingest_with(path: &Path, users: Arc<Vocabulary>, items: Arc<Vocabulary>) -> Result<SequenceDataset> {
    let (events, _) = read_events(path)?;
    SequenceDataset::from_events_with(&events, users, items)
}

/// Writes the dataset in the ingest format, users in index order.
pub fn export_tsv(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in &ds.sequences {
        let user = ds.users.id(s.user);
        for (&item, &ts) in s.items.iter().zip(&s.timestamps) {
            writeln!(out, "{user}\t{}\t{ts}", ds.items.id(item)).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes `item_id\tdense_index` lines sorted by index.
pub fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, id) in vocab.ids().iter().enumerate() {
        writeln!(out, "{id}\t{i}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a vocabulary dump written by [`write_vocab`].
pub fn read_vocab(path: &Path) -> Result<Arc<Vocabulary>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let (id, index) = line
            .split_once('\t')
            .ok_or_else(|| Error::InvalidArgument(format!("{}:{}: expected two fields", path.display(), n + 1)))?;
        if index.parse::<usize>().ok() != Some(n) {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: index {index:?} out of sequence",
                path.display(),
                n + 1
            )));
        }
        ids.push(id.to_string());
    }
    Ok(Arc::new(Vocabulary::from_ordered(ids)))
}
