//! Run configuration: TOML file, flag overrides, validation.

use std::path::PathBuf;

use rankone::analysis::TestBasis;
use rankone::dynamics::lift_set;
use rankone::{EpsBlock, EpsSchedule, Error, Family, Params, Set, Stages, Strip, Time};
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "RANKONE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "rankone-out";

/// A time written either as a number or as an anchored string (`"3*h10+0.5"`).
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum TimeValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub construction: ConstructionSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub correlate: TimesSection,
    #[serde(default)]
    pub weaklimit: WeakLimitSection,
    #[serde(default)]
    pub lemma: LemmaSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub multiplicity: MultiplicitySection,
    #[serde(default)]
    pub decay: TimesSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub escape_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionSection {
    pub family: Option<String>,
    pub eps: Option<f64>,
    pub eps0: Option<f64>,
    pub schedule: Option<Vec<BlockEntry>>,
    pub h1: Option<f64>,
    pub max_stage: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub length: usize,
    pub eps: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub preset: Option<String>,
    pub stage: Option<usize>,
    pub count: Option<usize>,
    /// Each set is a list of `[stage, x0, x1, y0, y1]` strips.
    pub sets: Option<Vec<Vec<[f64; 5]>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesSection {
    pub times: Option<Vec<TimeValue>>,
    /// `[from, to]`: the times `h_from, …, h_to`.
    pub heights: Option<[usize; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakLimitSection {
    pub times: Option<Vec<TimeValue>>,
    pub heights: Option<[usize; 2]>,
    /// Adds `Avg(a)` to the dictionary.
    pub average: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSection {
    pub a: Option<f64>,
    pub stage: Option<usize>,
    pub step: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub dt: Option<f64>,
    pub samples: Option<usize>,
    pub window: Option<String>,
    pub coeffs: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicitySection {
    pub times: Option<Vec<TimeValue>>,
    pub stage: Option<usize>,
    pub tol: Option<f64>,
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub family: Option<String>,
    pub eps: Option<f64>,
    pub h1: Option<f64>,
    pub max_stage: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration. Everything that influences CSV content is
/// here; the output directory is kept apart so that it does not enter the
/// config hash.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub construction: Params,
    pub basis: BasisSpec,
    pub seed: u64,
    pub escape_tol: f64,
    pub correlate: Vec<String>,
    pub weaklimit: WeakLimitSpec,
    pub lemma: LemmaSpec,
    pub spectrum: SpectrumSpec,
    pub multiplicity: MultiplicitySpec,
    pub decay: Vec<String>,
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    Slabs { stage: usize, count: usize },
    Explicit { sets: Vec<Vec<[f64; 5]>> },
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakLimitSpec {
    pub times: Vec<String>,
    pub average: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaSpec {
    pub a: f64,
    pub stage: usize,
    pub step: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSpec {
    pub dt: f64,
    pub samples: usize,
    pub window: String,
    pub coeffs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplicitySpec {
    pub times: Vec<String>,
    pub tol: f64,
}

/// Tracks the source text so errors can point at a line.
struct Locator<'a> {
    src: &'a str,
}

impl Locator<'_> {
    /// Line of `key` inside `[section]`, 1-based.
    fn line(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (n, raw) in self.src.lines().enumerate() {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
                current = name.trim().to_string();
                continue;
            }
            if current == section && line.split(['=', ' ', '\t']).next() == Some(key) {
                return Some(n + 1);
            }
        }
        None
    }

    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        let line = field.split_once('.').and_then(|(s, k)| self.line(s, k));
        Error::Config { line, field: field.to_string(), message: message.into() }
    }
}

/// Turns a deserialization error into a line-anchored config error.
fn syntax_error(src: &str, e: toml::de::Error) -> Error {
    let Some(span) = e.span() else {
        return Error::Config { line: None, field: "config".into(), message: e.message().to_string() };
    };
    let start = span.start.min(src.len());
    let line = 1 + src[..start].matches('\n').count();
    let mut section = String::new();
    for raw in src[..start].lines() {
        if let Some(name) = raw.trim().strip_prefix('[').and_then(|l| l.split(']').next()) {
            section = name.trim().to_string();
        }
    }
    let key = src.lines().nth(line - 1).and_then(|l| l.split_once('=')).map(|(k, _)| k.trim().to_string());
    let field = match (section.is_empty(), key) {
        (true, Some(k)) => k,
        (false, Some(k)) => format!("{section}.{k}"),
        (false, None) => section,
        (true, None) => "config".into(),
    };
    Error::Config { line: Some(line), field, message: e.message().trim().to_string() }
}

pub fn parse_file(src: &str) -> Result<FileConfig, Error> {
    toml::from_str(src).map_err(|e| syntax_error(src, e))
}

fn time_strings(loc: &Locator, field: &str, times: &Option<Vec<TimeValue>>, heights: Option<[usize; 2]>, default: &[&str]) -> Result<Vec<String>, Error> {
    let mut out = Vec::new();
    for t in times.iter().flatten() {
        let text = match t {
            TimeValue::Number(x) => Time::plain(*x).to_string(),
            TimeValue::Text(s) => s.parse::<Time>().map_err(|e| loc.err(&format!("{field}.times"), e.to_string()))?.to_string(),
        };
        out.push(text);
    }
    if let Some([from, to]) = heights {
        if from == 0 || from > to {
            return Err(loc.err(&format!("{field}.heights"), format!("need 1 ≤ from ≤ to, got [{from}, {to}]")));
        }
        out.extend((from..=to).map(|j| Time::height(j).to_string()));
    }
    if out.is_empty() {
        out = default.iter().map(|s| s.to_string()).collect();
    }
    Ok(out)
}

fn positive(loc: &Locator, field: &str, x: f64) -> Result<f64, Error> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(loc.err(field, format!("must be positive and finite, got {x}")))
    }
}

impl RunConfig {
    /// Merges the file (if any) with overrides and validates the result.
    pub fn resolve(src: Option<&str>, ov: &Overrides) -> Result<Self, Error> {
        let text = src.unwrap_or("");
        let file = parse_file(text)?;
        let loc = Locator { src: text };
        let c = &file.construction;

        let family_name = ov.family.clone().or_else(|| c.family.clone()).unwrap_or_else(|| "feps".into());
        let family: Family = family_name
            .parse()
            .map_err(|_| loc.err("construction.family", format!("unknown family `{family_name}` (expected feps, slowmix, staircase or odometer)")))?;
        let h1 = positive(&loc, "construction.h1", ov.h1.or(c.h1).unwrap_or(1.0))?;
        let max_stage = ov.max_stage.or(c.max_stage).unwrap_or(20);
        let eps = ov.eps.or(c.eps);
        let construction = match family {
            Family::FEps => Params::feps(eps.unwrap_or(0.5), h1, max_stage),
            Family::SlowMix => {
                let schedule = match &c.schedule {
                    Some(blocks) => EpsSchedule::new(blocks.iter().map(|b| EpsBlock { length: b.length, value: b.eps }).collect()),
                    None => EpsSchedule::halving(c.eps0.or(eps).unwrap_or(0.5), max_stage),
                };
                let schedule = schedule.map_err(|e| loc.err(if c.schedule.is_some() { "construction.schedule" } else { "construction.eps0" }, e.to_string()))?;
                Params::slow_mix(schedule, h1, max_stage)
            }
            Family::Staircase => Params::staircase(h1, max_stage),
            Family::OdometerControl => Params::odometer(h1, max_stage),
        };
        construction.validate().map_err(|e| match e {
            Error::Parameter { name, reason } => loc.err(&format!("construction.{name}"), reason),
            e => e,
        })?;

        let b = &file.basis;
        let basis = match (b.preset.as_deref(), &b.sets) {
            (Some(_), Some(_)) => return Err(loc.err("basis.sets", "give either a preset or explicit sets, not both")),
            (None, Some(sets)) => {
                if sets.is_empty() || sets.iter().any(|s| s.is_empty()) {
                    return Err(loc.err("basis.sets", "every set needs at least one strip"));
                }
                BasisSpec::Explicit { sets: sets.clone() }
            }
            (None | Some("slabs"), None) => {
                let stage = b.stage.unwrap_or(1);
                let count = b.count.unwrap_or(16);
                if stage == 0 || stage > max_stage {
                    return Err(loc.err("basis.stage", format!("{stage} outside 1..={max_stage}")));
                }
                if count == 0 {
                    return Err(loc.err("basis.count", "must be at least 1"));
                }
                BasisSpec::Slabs { stage, count }
            }
            (Some(p), None) => return Err(loc.err("basis.preset", format!("unknown preset `{p}` (expected slabs)"))),
        };

        let escape_tol = match file.run.escape_tol {
            Some(x) => positive(&loc, "run.escape_tol", x)?,
            None => rankone::analysis::CorrelationOptions::<f64>::default().escape_tol,
        };

        let correlate = time_strings(&loc, "correlate", &file.correlate.times, file.correlate.heights, &["0", "0.5", "1"])?;
        let w = &file.weaklimit;
        let weaklimit = WeakLimitSpec {
            times: time_strings(&loc, "weaklimit", &w.times, w.heights, &["0"])?,
            average: w.average.map(|a| positive(&loc, "weaklimit.average", a)).transpose()?,
        };
        let l = &file.lemma;
        let a = positive(&loc, "lemma.a", l.a.unwrap_or(1.0))?;
        let lemma = LemmaSpec {
            a,
            stage: l.stage.unwrap_or(max_stage.min(6)),
            step: positive(&loc, "lemma.step", l.step.unwrap_or(a / 32.0))?,
            eps: positive(&loc, "lemma.eps", l.eps.or(construction.eps).unwrap_or(0.5))?,
        };
        if lemma.stage == 0 || lemma.stage > max_stage {
            return Err(loc.err("lemma.stage", format!("{} outside 1..={max_stage}", lemma.stage)));
        }
        let s = &file.spectrum;
        let window = s.window.clone().unwrap_or_else(|| "hann".into());
        window
            .parse::<rankone::spectral::Window>()
            .map_err(|e| loc.err("spectrum.window", e.to_string()))?;
        let spectrum = SpectrumSpec {
            dt: positive(&loc, "spectrum.dt", s.dt.unwrap_or(0.1))?,
            samples: match s.samples.unwrap_or(512) {
                n if n >= 2 => n,
                n => return Err(loc.err("spectrum.samples", format!("need at least 2, got {n}"))),
            },
            window,
            coeffs: s.coeffs.clone(),
        };
        let m = &file.multiplicity;
        let probe_stage = m.stage.unwrap_or(max_stage.min(8));
        let default_times: Vec<String> = rankone::spectral::default_probe_times::<f64>(probe_stage).iter().map(|t| t.to_string()).collect();
        let default_refs: Vec<&str> = default_times.iter().map(String::as_str).collect();
        let multiplicity = MultiplicitySpec {
            times: time_strings(&loc, "multiplicity", &m.times, None, &default_refs)?,
            tol: positive(&loc, "multiplicity.tol", m.tol.unwrap_or(rankone::spectral::DEFAULT_RANK_TOL))?,
        };
        let decay = time_strings(&loc, "decay", &file.decay.times, file.decay.heights, &[])?;
        let decay = if decay.is_empty() { (1..=max_stage.saturating_sub(8).max(1)).map(|j| Time::height(j).to_string()).collect() } else { decay };

        let out = ov
            .out
            .clone()
            .or(file.run.out)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

        Ok(Self {
            construction,
            basis,
            seed: ov.seed.or(file.run.seed).unwrap_or(0),
            escape_tol,
            correlate,
            weaklimit,
            lemma,
            spectrum,
            multiplicity,
            decay,
            out,
        })
    }

    pub fn stages(&self) -> Result<Stages, Error> {
        rankone::build_stages(&self.construction)
    }

    pub fn basis(&self, stages: &Stages) -> Result<TestBasis<f64>, Error> {
        let field = |e: Error| match e {
            Error::Parameter { reason, .. } => Error::Config { line: None, field: "basis".into(), message: reason },
            e => e,
        };
        match &self.basis {
            BasisSpec::Slabs { stage, count } => TestBasis::slabs(stages, *stage, *count).map_err(field),
            BasisSpec::Explicit { sets } => {
                let built = sets.iter().map(|strips| explicit_set(stages, strips)).collect::<Result<Vec<_>, _>>().map_err(field)?;
                TestBasis::new(stages, built, format!("explicit({} sets)", sets.len())).map_err(field)
            }
        }
    }

    pub fn times(list: &[String]) -> Vec<Time> {
        list.iter().map(|s| s.parse().expect("validated during resolve")).collect()
    }
}

/// Lifts every strip to the deepest stage named in the set and unions them.
fn explicit_set(stages: &Stages, strips: &[[f64; 5]]) -> Result<Set, Error> {
    let mut target = 0;
    for s in strips {
        if !(s[0] >= 1.0 && s[0].fract() == 0.0) {
            return Err(Error::Config { line: None, field: "basis.sets".into(), message: format!("stage {} is not a positive integer", s[0]) });
        }
        target = target.max(s[0] as usize);
    }
    let mut all = Vec::new();
    for s in strips {
        let one = Set::new(stages, s[0] as usize, vec![Strip::new(s[1], s[2], s[3], s[4])])?;
        all.extend_from_slice(lift_set(stages, &one, target)?.strips());
    }
    Set::new(stages, target, all)
}
