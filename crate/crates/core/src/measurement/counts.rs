//! Per-setting joint outcome counts and their text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{BasisSetting, IonOutcome, MeasurementError};

/// Joint outcome of a detected sequence: analyzer port and ion result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Outcome {
    pub port: usize,
    pub ion: IonOutcome,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome { port: 0, ion: IonOutcome::D },
        Outcome { port: 0, ion: IonOutcome::S },
        Outcome { port: 1, ion: IonOutcome::D },
        Outcome { port: 1, ion: IonOutcome::S },
    ];

    pub fn new(port: usize, ion: IonOutcome) -> Self {
        assert!(port < 2, "port must be 0 or 1");
        Self { port, ion }
    }

    pub fn index(self) -> usize {
        2 * self.port + usize::from(self.ion == IonOutcome::S)
    }

    pub fn label(self) -> String {
        format!("{}{}", self.port, self.ion.label())
    }
}

/// Counts of one setting: the four joint outcomes plus sequences without a
/// click.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SettingCounts {
    pub joint: [u64; 4],
    pub none: u64,
}

impl SettingCounts {
    pub fn detected(&self) -> u64 {
        self.joint.iter().sum()
    }

    pub fn sequences(&self) -> u64 {
        self.detected() + self.none
    }

    pub fn get(&self, outcome: Outcome) -> u64 {
        self.joint[outcome.index()]
    }
}

/// Counts keyed by basis setting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTable {
    entries: BTreeMap<BasisSetting, SettingCounts>,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// A table with zero counts for each listed setting.
    pub fn with_settings(settings: &[BasisSetting]) -> Self {
        Self { entries: settings.iter().map(|&s| (s, SettingCounts::default())).collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, setting: BasisSetting) -> Option<&SettingCounts> {
        self.entries.get(&setting)
    }

    pub fn entry(&mut self, setting: BasisSetting) -> &mut SettingCounts {
        self.entries.entry(setting).or_default()
    }

    pub fn insert(&mut self, setting: BasisSetting, counts: SettingCounts) {
        self.entries.insert(setting, counts);
    }

    pub fn record(&mut self, setting: BasisSetting, outcome: Outcome) {
        self.entry(setting).joint[outcome.index()] += 1;
    }

    pub fn record_none(&mut self, setting: BasisSetting) {
        self.entry(setting).none += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (BasisSetting, &SettingCounts)> {
        self.entries.iter().map(|(s, c)| (*s, c))
    }

    pub fn settings(&self) -> Vec<BasisSetting> {
        self.entries.keys().copied().collect()
    }

    pub fn detected(&self) -> u64 {
        self.entries.values().map(SettingCounts::detected).sum()
    }

    pub fn sequences(&self) -> u64 {
        self.entries.values().map(SettingCounts::sequences).sum()
    }

    /// Sums each setting with its swapped partner, relabelling the swapped
    /// detector ports so that port `k` always means the nominal polarization
    /// `k`. The result is keyed by unswapped settings only.
    pub fn compensated(&self) -> CountTable {
        let mut out = CountTable::new();
        for (setting, counts) in self.iter() {
            let target = out.entry(BasisSetting { swapped: false, ..setting });
            for outcome in Outcome::ALL {
                let port = if setting.swapped { 1 - outcome.port } else { outcome.port };
                target.joint[Outcome::new(port, outcome.ion).index()] += counts.get(outcome);
            }
            target.none += counts.none;
        }
        out
    }

    /// Merges another table into this one.
    pub fn merge(&mut self, other: &CountTable) {
        for (setting, counts) in other.iter() {
            let target = self.entry(setting);
            for k in 0..4 {
                target.joint[k] += counts.joint[k];
            }
            target.none += counts.none;
        }
    }
}

const HEADER: &str = "setting,swapped,outcome,count";

impl fmt::Display for CountTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{HEADER}")?;
        for (setting, counts) in self.iter() {
            let id = setting.id();
            let sw = u8::from(setting.swapped);
            for outcome in Outcome::ALL {
                writeln!(f, "{id},{sw},{},{}", outcome.label(), counts.get(outcome))?;
            }
            writeln!(f, "{id},{sw},none,{}", counts.none)?;
        }
        Ok(())
    }
}

impl FromStr for CountTable {
    type Err = MeasurementError;

    /// Parses the text written by `Display`. Every setting must list all
    /// five outcome rows exactly once.
    fn from_str(text: &str) -> Result<Self, MeasurementError> {
        let err = |line: usize, msg: String| MeasurementError::Parse { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, other)) => return Err(err(n, format!("expected header '{HEADER}', found '{other}'"))),
            None => return Err(err(1, "missing header".into())),
        }
        let mut table = CountTable::new();
        let mut seen: BTreeMap<BasisSetting, (usize, [bool; 5])> = BTreeMap::new();
        let mut last_line = 1;
        for (n, line) in lines {
            last_line = n;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(err(n, format!("expected 4 comma-separated fields, found {}", fields.len())));
            }
            let swapped = match fields[1] {
                "0" => false,
                "1" => true,
                other => return Err(err(n, format!("swapped flag must be 0 or 1, found '{other}'"))),
            };
            let setting = BasisSetting::parse_id(fields[0], swapped).map_err(|m| err(n, m))?;
            let count: u64 = fields[3].parse().map_err(|_| err(n, format!("invalid count '{}'", fields[3])))?;
            let slot = match fields[2] {
                "none" => 4,
                label => {
                    let outcome = Outcome::ALL
                        .into_iter()
                        .find(|o| o.label() == label)
                        .ok_or_else(|| err(n, format!("unknown outcome '{label}'")))?;
                    outcome.index()
                }
            };
            let (_, filled) = seen.entry(setting).or_insert((n, [false; 5]));
            if filled[slot] {
                return Err(err(n, format!("duplicate row for {setting}, outcome {}", fields[2])));
            }
            filled[slot] = true;
            let entry = table.entry(setting);
            if slot == 4 {
                entry.none = count;
            } else {
                entry.joint[slot] = count;
            }
        }
        for (setting, (first, filled)) in &seen {
            if filled.iter().any(|f| !f) {
                let line = if filled[4] { *first } else { last_line + 1 };
                return Err(err(line, format!("incomplete rows for {setting}")));
            }
        }
        Ok(table)
    }
}
