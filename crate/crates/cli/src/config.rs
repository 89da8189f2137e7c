//! Scenario configuration files and run manifests.
//!
//! The format is line oriented. `#` starts a comment. A `[name]` line opens a
//! scenario section; `key = value` lines before the first section set
//! defaults for every section. Recognized keys:
//!
//! ```text
//! group            plot series label            (default: section name)
//! J                number of streams            (required)
//! m                signal count                 (alternative to signal_fraction)
//! signal_fraction  m / J                        (default 0.1)
//! mu               alternative mean             (default 0.15)
//! alpha, beta      error levels                 (default 0.05)
//! eta, r           weight informativeness/strength (default 1, 1)
//! procedure        gap | gi                     (default gap)
//! l, u             signal-count interval        (required for gi)
//! reps             replications                 (default 2000)
//! seed             master seed                  (default 0)
//! max_steps        safety cap                   (default: derived from alpha, beta, mu)
//! ```
//!
//! Manifests written by [`write_manifest`] use the same format, so a
//! manifest reloads as a config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use seqweight_core::montecarlo::SEED_DERIVATION;
use seqweight_core::{ProcedureKind, ScenarioSpec};

/// Keys written into manifest preambles; ignored when loading.
const MANIFEST_KEYS: [&str; 3] = ["code_version", "seed_derivation", "validated"];

const SCENARIO_KEYS: [&str; 15] = [
    "group",
    "J",
    "m",
    "signal_fraction",
    "mu",
    "alpha",
    "beta",
    "eta",
    "r",
    "procedure",
    "l",
    "u",
    "reps",
    "seed",
    "max_steps",
];

#[derive(Debug, Default)]
pub struct LoadedConfig {
    pub specs: Vec<ScenarioSpec>,
    /// Informational notes, e.g. which defaults were applied.
    pub notes: Vec<String>,
}

#[derive(Debug, Default)]
struct Section {
    name: String,
    line: usize,
    keys: BTreeMap<String, (String, usize)>,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let mut preamble = Section::default();
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                bail!("line {lineno}: malformed section header {raw:?}");
            };
            let name = name.trim();
            if name.is_empty() {
                bail!("line {lineno}: empty section name");
            }
            if sections.iter().any(|s| s.name == name) {
                bail!("line {lineno}: duplicate scenario [{name}]");
            }
            sections.push(Section {
                name: name.to_string(),
                line: lineno,
                keys: BTreeMap::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {lineno}: expected `key = value`, got {raw:?}");
        };
        let (key, value) = (key.trim(), value.trim());
        let in_preamble = sections.is_empty();
        if in_preamble && MANIFEST_KEYS.contains(&key) {
            continue;
        }
        if !SCENARIO_KEYS.contains(&key) {
            bail!("line {lineno}: unknown key {key:?}");
        }
        if value.is_empty() {
            bail!("line {lineno}: empty value for {key:?}");
        }
        let section = sections.last_mut().unwrap_or(&mut preamble);
        if let Some((_, first)) = section.keys.get(key) {
            bail!("line {lineno}: duplicate key {key:?} (first set on line {first})");
        }
        section.keys.insert(key.to_string(), (value.to_string(), lineno));
    }
    if sections.is_empty() {
        bail!("no scenarios");
    }
    let mut loaded = LoadedConfig::default();
    for mut section in sections {
        for (k, v) in &preamble.keys {
            section.keys.entry(k.clone()).or_insert_with(|| v.clone());
        }
        let (spec, defaulted) = build_spec(&section)?;
        if !defaulted.is_empty() {
            loaded
                .notes
                .push(format!("[{}]: defaults applied: {}", spec.name, defaulted.join(", ")));
        }
        loaded.specs.push(spec);
    }
    Ok(loaded)
}

fn build_spec(section: &Section) -> Result<(ScenarioSpec, Vec<String>)> {
    let mut defaulted = Vec::new();
    let get = |key: &str| section.keys.get(key);
    fn parse<T: std::str::FromStr>(key: &str, entry: &(String, usize)) -> Result<T> {
        entry
            .0
            .parse()
            .map_err(|_| anyhow::anyhow!("line {}: invalid value {:?} for {key}", entry.1, entry.0))
    }
    let mut number = |key: &str, default: f64| -> Result<f64> {
        match get(key) {
            Some(e) => parse(key, e),
            None => {
                defaulted.push(format!("{key}={default}"));
                Ok(default)
            }
        }
    };
    let alpha = number("alpha", 0.05)?;
    let beta = number("beta", 0.05)?;
    let mu = number("mu", 0.15)?;
    let eta = number("eta", 1.0)?;
    let r = number("r", 1.0)?;
    let Some(j_entry) = get("J") else {
        bail!("section [{}] (line {}): missing required key J", section.name, section.line);
    };
    let j: usize = parse("J", j_entry)?;
    let signal_fraction = match (get("m"), get("signal_fraction")) {
        (Some(_), Some(e)) => bail!("line {}: set either m or signal_fraction, not both", e.1),
        (Some(e), None) => parse::<usize>("m", e)? as f64 / j.max(1) as f64,
        (None, Some(e)) => parse("signal_fraction", e)?,
        (None, None) => {
            defaulted.push("signal_fraction=0.1".into());
            0.1
        }
    };
    let procedure = match get("procedure").map(|e| (e.0.as_str(), e.1)) {
        None | Some(("gap", _)) => ProcedureKind::Gap,
        Some(("gi", line)) => {
            let (Some(l), Some(u)) = (get("l"), get("u")) else {
                bail!("line {line}: procedure gi requires l and u");
            };
            ProcedureKind::GapIntersection {
                l: parse("l", l)?,
                u: parse("u", u)?,
            }
        }
        Some((other, line)) => bail!("line {line}: unknown procedure {other:?} (expected gap or gi)"),
    };
    let reps = match get("reps") {
        Some(e) => parse("reps", e)?,
        None => 2000,
    };
    let master_seed = match get("seed") {
        Some(e) => parse("seed", e)?,
        None => 0,
    };
    let max_steps = get("max_steps").map(|e| parse("max_steps", e)).transpose()?;
    let spec = ScenarioSpec {
        name: section.name.clone(),
        group: get("group").map_or_else(|| section.name.clone(), |e| e.0.clone()),
        j,
        signal_fraction,
        mu,
        alpha,
        beta,
        eta,
        r,
        procedure,
        reps,
        master_seed,
        max_steps,
    };
    Ok((spec, defaulted))
}

/// Renders specs in the config format, preceded by a manifest preamble.
pub fn render_manifest(specs: &[ScenarioSpec], validated: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "code_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "seed_derivation = {SEED_DERIVATION}");
    let _ = writeln!(out, "validated = {validated}");
    for s in specs {
        let _ = writeln!(out, "\n[{}]", s.name);
        let _ = writeln!(out, "group = {}", s.group);
        let _ = writeln!(out, "J = {}", s.j);
        let _ = writeln!(out, "signal_fraction = {}", s.signal_fraction);
        let _ = writeln!(out, "mu = {}", s.mu);
        let _ = writeln!(out, "alpha = {}", s.alpha);
        let _ = writeln!(out, "beta = {}", s.beta);
        let _ = writeln!(out, "eta = {}", s.eta);
        let _ = writeln!(out, "r = {}", s.r);
        let _ = writeln!(out, "procedure = {}", s.procedure.tag());
        if let ProcedureKind::GapIntersection { l, u } = s.procedure {
            let _ = writeln!(out, "l = {l}");
            let _ = writeln!(out, "u = {u}");
        }
        let _ = writeln!(out, "reps = {}", s.reps);
        let _ = writeln!(out, "seed = {}", s.master_seed);
        if let Some(cap) = s.max_steps {
            let _ = writeln!(out, "max_steps = {cap}");
        }
    }
    out
}

pub fn write_manifest(path: &Path, specs: &[ScenarioSpec], validated: bool) -> Result<()> {
    std::fs::write(path, render_manifest(specs, validated))
        .with_context(|| format!("cannot write manifest {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_has_no_scenarios() {
        let err = parse_config("# nothing here\n\n").unwrap_err();
        assert_eq!(err.to_string(), "no scenarios");
    }

    #[test]
    fn missing_alpha_defaults_with_note() {
        let cfg = parse_config("[s]\nJ = 100\nbeta = 0.1\nmu = 0.2\neta = 1\nr = 1\nm = 10\n").unwrap();
        assert_eq!(cfg.specs[0].alpha, 0.05);
        assert_eq!(cfg.notes.len(), 1);
        assert!(cfg.notes[0].contains("alpha=0.05"), "{:?}", cfg.notes);
    }

    #[test]
    fn duplicate_keys_rejected_with_line() {
        let err = parse_config("[s]\nJ = 100\nJ = 200\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3: duplicate key \"J\""), "{err}");
    }

    #[test]
    fn malformed_lines_reported_with_line_numbers() {
        let err = parse_config("[s]\nJ = 100\njust text\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
        let err = parse_config("[s\nJ = 1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
        let err = parse_config("[s]\nJ = abc\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = parse_config("[s]\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn preamble_sets_defaults() {
        let text = "seed = 9\nreps = 50\n[a]\nJ = 20\n[b]\nJ = 40\nreps = 10\nprocedure = gi\nl = 2\nu = 6\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.specs.len(), 2);
        assert_eq!((cfg.specs[0].master_seed, cfg.specs[0].reps), (9, 50));
        assert_eq!(cfg.specs[1].reps, 10);
        assert_eq!(cfg.specs[1].procedure, ProcedureKind::GapIntersection { l: 2, u: 6 });
        assert!(parse_config("[a]\nJ = 20\nprocedure = gi\n").is_err());
    }

    #[test]
    fn manifest_reloads_as_config() {
        let mut spec = ScenarioSpec::gap("x", 30);
        spec.procedure = ProcedureKind::GapIntersection { l: 1, u: 5 };
        spec.max_steps = Some(99);
        let specs = vec![spec, ScenarioSpec { eta: 20.0, r: 5.0, ..ScenarioSpec::gap("y", 50) }];
        let text = render_manifest(&specs, true);
        assert!(text.contains("validated = true"));
        let loaded = parse_config(&text).unwrap();
        assert_eq!(loaded.specs, specs);
        assert!(loaded.notes.is_empty());
    }
}
