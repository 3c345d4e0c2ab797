//! MIDI program (0-127, plus 128 for the drum channel) to the 39-class
//! instrument vocabulary used for conditioning.
//!
//! The table lives in `data/taxonomy.csv`, one row per program range, and is
//! parsed once on first use.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const NUM_CLASSES: usize = 39;
pub const NUM_PROGRAMS: usize = 129;
pub const DRUM_PROGRAM: u8 = 128;
pub const DRUMS: InstrumentIndex = InstrumentIndex(38);

const TABLE_CSV: &str = include_str!("../data/taxonomy.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstrumentIndex(u8);

impl InstrumentIndex {
    pub fn new(index: usize) -> Result<Self> {
        ensure!(index < NUM_CLASSES, "instrument index {index} out of range [0, {}]", NUM_CLASSES - 1);
        Ok(Self(index as u8))
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        taxonomy().classes[self.get()].name.as_str()
    }

    pub fn is_unpitched(self) -> bool {
        taxonomy().classes[self.get()].unpitched
    }

    /// Representative program used when writing MIDI (first program of the class).
    pub fn program(self) -> u8 {
        taxonomy().classes[self.get()].program
    }

    /// File-name friendly name, e.g. `acoustic_guitar`.
    pub fn slug(self) -> String {
        self.name().to_ascii_lowercase().replace(' ', "_")
    }

    pub fn all() -> impl Iterator<Item = InstrumentIndex> {
        (0..NUM_CLASSES as u8).map(InstrumentIndex)
    }
}

impl fmt::Display for InstrumentIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name(), self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProgramNumber(u8);

impl ProgramNumber {
    pub fn new(program: usize) -> Result<Self> {
        ensure!(program < NUM_PROGRAMS, "program {program} out of range [0, 128]");
        Ok(Self(program as u8))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// One row of the mapping table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableRow {
    pub program_lo: u8,
    pub program_hi: u8,
    pub name: String,
    pub index: u8,
    pub unpitched: bool,
}

#[derive(Debug)]
struct ClassInfo {
    name: String,
    unpitched: bool,
    program: u8,
}

#[derive(Debug)]
struct Taxonomy {
    rows: Vec<TableRow>,
    by_program: [u8; NUM_PROGRAMS],
    classes: Vec<ClassInfo>,
}

/// Parse the delimited table text. Lines starting with `#` are comments.
pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::domain(format!("taxonomy line {}: {what}: {line:?}", lineno + 1));
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let num = |s: &str| s.parse::<u8>().map_err(|_| bad("not an integer"));
        rows.push(TableRow {
            program_lo: num(f[0])?,
            program_hi: num(f[1])?,
            name: f[2].to_string(),
            index: num(f[3])?,
            unpitched: match f[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("unpitched flag must be 0 or 1")),
            },
        });
    }
    Ok(rows)
}

fn build(rows: Vec<TableRow>) -> Result<Taxonomy> {
    let mut by_program = [u8::MAX; NUM_PROGRAMS];
    let mut names: Vec<Option<(String, bool, u8)>> = vec![None; NUM_CLASSES];
    for r in &rows {
        ensure!(r.program_lo <= r.program_hi && (r.program_hi as usize) < NUM_PROGRAMS, "bad range {r:?}");
        ensure!((r.index as usize) < NUM_CLASSES, "bad index {r:?}");
        for p in r.program_lo..=r.program_hi {
            ensure!(by_program[p as usize] == u8::MAX, "program {p} mapped twice");
            by_program[p as usize] = r.index;
        }
        match &names[r.index as usize] {
            None => names[r.index as usize] = Some((r.name.clone(), r.unpitched, r.program_lo)),
            Some((n, u, _)) => ensure!(*n == r.name && *u == r.unpitched, "index {} has conflicting rows", r.index),
        }
    }
    ensure!(by_program.iter().all(|&i| i != u8::MAX), "table does not cover every program");
    let classes = names
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let (name, unpitched, program) = n.ok_or_else(|| Error::domain(format!("index {i} has no rows")))?;
            Ok(ClassInfo { name, unpitched, program })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    ensure!(classes.iter().all(|c| seen.insert(c.name.clone())), "class names are not unique");
    Ok(Taxonomy { rows, by_program, classes })
}

fn taxonomy() -> &'static Taxonomy {
    static T: OnceLock<Taxonomy> = OnceLock::new();
    T.get_or_init(|| build(parse_table(TABLE_CSV).expect("bundled taxonomy parses")).expect("bundled taxonomy valid"))
}

/// The bundled table rows, in file order.
pub fn table() -> &'static [TableRow] {
    &taxonomy().rows
}

pub fn map_program(program: usize) -> Result<InstrumentIndex> {
    let p = ProgramNumber::new(program)?;
    Ok(InstrumentIndex(taxonomy().by_program[p.get() as usize]))
}

pub fn instrument_name(index: usize) -> Result<&'static str> {
    Ok(InstrumentIndex::new(index)?.name())
}

/// Look a class up by its canonical name (case-insensitive) or slug.
pub fn instrument_by_name(name: &str) -> Option<InstrumentIndex> {
    let key = name.trim().to_ascii_lowercase().replace(' ', "_");
    InstrumentIndex::all().find(|i| i.slug() == key)
}

/// 39-dim instrument indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector(Vec<f64>);

impl ConditionVector {
    pub fn zeros() -> Self {
        Self(vec![0.0; NUM_CLASSES])
    }

    pub fn one_hot(i: InstrumentIndex) -> Self {
        condition_vector(&[i])
    }

    pub fn from_values(v: Vec<f64>) -> Result<Self> {
        ensure!(v.len() == NUM_CLASSES, "condition vector must have {NUM_CLASSES} entries, got {}", v.len());
        Ok(Self(v))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn active(&self) -> Vec<InstrumentIndex> {
        self.0.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| InstrumentIndex(i as u8)).collect()
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|&&v| v == 1.0).count() == 1 && self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

pub fn condition_vector(indices: &[InstrumentIndex]) -> ConditionVector {
    let mut v = vec![0.0; NUM_CLASSES];
    for i in indices {
        v[i.get()] = 1.0;
    }
    ConditionVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        assert_eq!(map_program(6).unwrap().get(), 2);
        assert_eq!(map_program(6).unwrap().name(), "Harpsichord");
        assert_eq!(map_program(128).unwrap(), DRUMS);
        assert_eq!(map_program(55).unwrap().get(), 15);
        assert_eq!(map_program(55).unwrap().name(), "Strings");
        assert_eq!(map_program(0).unwrap().get(), 0);
        assert_eq!(instrument_name(10).unwrap(), "Bass");
        assert_eq!(instrument_name(38).unwrap(), "Drums");
    }

    #[test]
    fn out_of_range_is_a_domain_error() {
        assert!(matches!(map_program(129), Err(Error::Domain(_))));
        assert!(matches!(instrument_name(39), Err(Error::Domain(_))));
    }

    #[test]
    fn only_drums_are_unpitched() {
        for i in InstrumentIndex::all() {
            assert_eq!(i.is_unpitched(), i == DRUMS, "{i}");
        }
    }

    #[test]
    fn condition_vectors() {
        assert_eq!(condition_vector(&[]), ConditionVector::zeros());
        let oh = condition_vector(&[DRUMS]);
        assert!(oh.is_one_hot());
        assert_eq!(oh.values()[38], 1.0);
        let idx: Vec<_> = [0, 10, 38].iter().map(|&i| InstrumentIndex::new(i).unwrap()).collect();
        let mh = condition_vector(&idx);
        assert_eq!(mh.values().iter().sum::<f64>(), 3.0);
        assert!(!mh.is_one_hot());
        assert_eq!(mh.active(), idx);
    }

    #[test]
    fn build_rejects_gaps_and_overlaps() {
        let mut rows = parse_table(TABLE_CSV).unwrap();
        rows.pop();
        assert!(build(rows).is_err());
        let mut rows = parse_table(TABLE_CSV).unwrap();
        rows[1].program_lo = 3;
        assert!(build(rows).is_err());
    }

    #[test]
    fn names_resolve_both_ways() {
        assert_eq!(instrument_by_name("acoustic guitar").unwrap().get(), 8);
        assert_eq!(instrument_by_name("Drums").unwrap(), DRUMS);
        assert!(instrument_by_name("kazoo").is_none());
    }
}
