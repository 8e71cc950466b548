//! Package names, versions, and dependency atoms.
//!
//! Atoms are the constraint vocabulary used everywhere else:
//! - `sys-cluster/slurm`: any version of a package
//! - `>=dev-libs/libffi-3.2`: version range
//! - `python:2.7`: category-less shorthand with a slot constraint
//! - `dev-lang/python[ncurses,-tk]`: USE requirements on the match
//!
//! The version grammar is `N(.N)*[letter][_suffixN][-rN]` with pure numeric
//! component comparison, suffix order alpha < beta < pre < rc < (none) < p,
//! and fewer components sorting before more (`2.7` < `2.7.0`). At most one
//! suffix is accepted per version.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Version suffix kind, ordered below/above the bare version as in the
/// module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SuffixKind {
    Alpha,
    Beta,
    Pre,
    Rc,
    P,
}

impl SuffixKind {
    /// Rank within the suffix order; a version without any suffix ranks 4.
    fn rank(self) -> u8 {
        match self {
            SuffixKind::Alpha => 0,
            SuffixKind::Beta => 1,
            SuffixKind::Pre => 2,
            SuffixKind::Rc => 3,
            SuffixKind::P => 5,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            SuffixKind::Alpha => "alpha",
            SuffixKind::Beta => "beta",
            SuffixKind::Pre => "pre",
            SuffixKind::Rc => "rc",
            SuffixKind::P => "p",
        }
    }
}

const NO_SUFFIX_RANK: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Suffix {
    pub kind: SuffixKind,
    pub number: u64,
}

/// A parsed package version.
///
/// Equality is structural; `1.0` and `1.0-r0` are the same version, while
/// `1.0` and `1.0.0` are distinct (and ordered).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Version {
    pub components: Vec<u64>,
    pub letter: Option<char>,
    pub suffixes: Vec<Suffix>,
    pub revision: u64,
}

impl Version {
    /// Parses the canonical text form. Errors carry the byte index of the
    /// offending character.
    pub fn parse(text: &str) -> Result<Version> {
        let err = |index: usize, reason: &str| Error::VersionParse {
            text: text.to_string(),
            index,
            reason: reason.to_string(),
        };
        if text.is_empty() {
            return Err(err(0, "empty version"));
        }
        let bytes = text.as_bytes();
        let mut pos = 0usize;

        let read_number = |pos: &mut usize, what: &str| -> Result<u64> {
            let start = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            if *pos == start {
                return Err(err(start, &format!("expected digits for {what}")));
            }
            text[start..*pos]
                .parse::<u64>()
                .map_err(|_| err(start, &format!("{what} out of range")))
        };

        let mut components = vec![read_number(&mut pos, "numeric component")?];
        while pos < bytes.len() && bytes[pos] == b'.' {
            pos += 1;
            components.push(read_number(&mut pos, "numeric component")?);
        }

        let mut letter = None;
        if pos < bytes.len() && bytes[pos].is_ascii_lowercase() {
            // A lowercase run here is either the single version letter or
            // the start of trailing garbage; only one letter is legal.
            letter = Some(bytes[pos] as char);
            pos += 1;
        }

        let mut suffixes = Vec::new();
        if pos < bytes.len() && bytes[pos] == b'_' {
            pos += 1;
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_lowercase() {
                pos += 1;
            }
            let kind = match &text[start..pos] {
                "alpha" => SuffixKind::Alpha,
                "beta" => SuffixKind::Beta,
                "pre" => SuffixKind::Pre,
                "rc" => SuffixKind::Rc,
                "p" => SuffixKind::P,
                "" => return Err(err(start, "empty suffix")),
                other => return Err(err(start, &format!("unknown suffix `{other}`"))),
            };
            let number = if pos < bytes.len() && bytes[pos].is_ascii_digit() {
                read_number(&mut pos, "suffix number")?
            } else {
                0
            };
            suffixes.push(Suffix { kind, number });
            if pos < bytes.len() && bytes[pos] == b'_' {
                return Err(err(pos, "suffix chains are not supported"));
            }
        }

        let mut revision = 0;
        if pos + 1 < bytes.len() && bytes[pos] == b'-' && bytes[pos + 1] == b'r' {
            pos += 2;
            revision = read_number(&mut pos, "revision")?;
        }

        if pos != bytes.len() {
            return Err(err(pos, "trailing garbage"));
        }

        Ok(Version {
            components,
            letter,
            suffixes,
            revision,
        })
    }

    /// True when `self` and `other` are equal ignoring the revision, the
    /// matching rule of the `~` atom operator.
    pub fn eq_ignoring_revision(&self, other: &Version) -> bool {
        self.components == other.components
            && self.letter == other.letter
            && self.suffixes == other.suffixes
    }
}

impl FromStr for Version {
    type Err = Error;
    fn from_str(s: &str) -> Result<Version> {
        Version::parse(s)
    }
}

fn cmp_suffix_chains(a: &[Suffix], b: &[Suffix]) -> Ordering {
    let mut i = 0;
    loop {
        match (a.get(i), b.get(i)) {
            (None, None) => return Ordering::Equal,
            (Some(x), Some(y)) => {
                let o = x
                    .kind
                    .rank()
                    .cmp(&y.kind.rank())
                    .then(x.number.cmp(&y.number));
                if o != Ordering::Equal {
                    return o;
                }
            }
            // The exhausted side behaves like a bare version at this
            // position: above rc, below p.
            (None, Some(y)) => return NO_SUFFIX_RANK.cmp(&y.kind.rank()),
            (Some(x), None) => return x.kind.rank().cmp(&NO_SUFFIX_RANK),
        }
        i += 1;
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Version) -> Ordering {
        for (a, b) in self.components.iter().zip(other.components.iter()) {
            match a.cmp(b) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.components
            .len()
            .cmp(&other.components.len())
            .then_with(|| self.letter.cmp(&other.letter))
            .then_with(|| cmp_suffix_chains(&self.suffixes, &other.suffixes))
            .then_with(|| self.revision.cmp(&other.revision))
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Version) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{c}")?;
        }
        if let Some(l) = self.letter {
            write!(f, "{l}")?;
        }
        for s in &self.suffixes {
            write!(f, "_{}", s.kind.as_str())?;
            if s.number > 0 {
                write!(f, "{}", s.number)?;
            }
        }
        if self.revision > 0 {
            write!(f, "-r{}", self.revision)?;
        }
        Ok(())
    }
}

/// Version constraint operator of an atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Operator {
    #[default]
    None,
    Equal,
    GreaterEqual,
    LessEqual,
    Greater,
    Less,
    /// Matches versions equal ignoring the revision.
    Tilde,
}

impl Operator {
    fn as_str(self) -> &'static str {
        match self {
            Operator::None => "",
            Operator::Equal => "=",
            Operator::GreaterEqual => ">=",
            Operator::LessEqual => "<=",
            Operator::Greater => ">",
            Operator::Less => "<",
            Operator::Tilde => "~",
        }
    }
}

/// USE requirement attached to an atom: `[flag]` must be enabled on the
/// candidate, `[-flag]` must be disabled.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UseDep {
    pub flag: String,
    pub enabled: bool,
}

/// A textual package constraint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub op: Operator,
    pub category: Option<String>,
    pub name: String,
    pub version: Option<Version>,
    pub slot: Option<String>,
    pub use_deps: Vec<UseDep>,
}

fn is_category_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '+' || c == '-'
}

fn is_flag_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '+' || c == '-'
}

/// True when the text after the last hyphen parses as a complete version,
/// i.e. the name would illegally "end in a version".
fn ends_in_version(name: &str) -> bool {
    match name.rfind('-') {
        Some(i) => Version::parse(&name[i + 1..]).is_ok(),
        None => false,
    }
}

impl Atom {
    pub fn parse(text: &str) -> Result<Atom> {
        let err = |reason: String| Error::AtomParse {
            text: text.to_string(),
            reason,
        };
        if text.is_empty() {
            return Err(err("empty atom".into()));
        }
        if text.chars().any(|c| c.is_whitespace()) {
            return Err(err("atoms may not contain whitespace".into()));
        }

        let mut rest = text;
        let op = if let Some(r) = rest.strip_prefix(">=") {
            rest = r;
            Operator::GreaterEqual
        } else if let Some(r) = rest.strip_prefix("<=") {
            rest = r;
            Operator::LessEqual
        } else if let Some(r) = rest.strip_prefix('>') {
            rest = r;
            Operator::Greater
        } else if let Some(r) = rest.strip_prefix('<') {
            rest = r;
            Operator::Less
        } else if let Some(r) = rest.strip_prefix('=') {
            rest = r;
            Operator::Equal
        } else if let Some(r) = rest.strip_prefix('~') {
            rest = r;
            Operator::Tilde
        } else {
            Operator::None
        };

        let mut use_deps = Vec::new();
        if rest.ends_with(']') {
            let open = rest
                .rfind('[')
                .ok_or_else(|| err("unmatched `]`".into()))?;
            let inner = &rest[open + 1..rest.len() - 1];
            if inner.is_empty() {
                return Err(err("empty USE dependency block".into()));
            }
            for tok in inner.split(',') {
                let (enabled, flag) = match tok.strip_prefix('-') {
                    Some(f) => (false, f),
                    None => (true, tok),
                };
                if flag.is_empty() || !flag.chars().all(is_flag_char) {
                    return Err(err(format!("illegal USE dependency `{tok}`")));
                }
                use_deps.push(UseDep {
                    flag: flag.to_string(),
                    enabled,
                });
            }
            rest = &rest[..open];
        } else if rest.contains('[') {
            return Err(err("unmatched `[`".into()));
        }

        let mut slot = None;
        if let Some(colon) = rest.find(':') {
            let s = &rest[colon + 1..];
            if s.is_empty() {
                return Err(err("empty slot".into()));
            }
            if s.contains(':') {
                return Err(err("slot may not contain `:`".into()));
            }
            slot = Some(s.to_string());
            rest = &rest[..colon];
        }

        let (category, name_ver) = match rest.find('/') {
            Some(slash) => {
                let cat = &rest[..slash];
                if cat.is_empty() || !cat.chars().all(is_category_char) {
                    return Err(err(format!("illegal category `{cat}`")));
                }
                (Some(cat.to_string()), &rest[slash + 1..])
            }
            None => (None, rest),
        };
        if name_ver.contains('/') {
            return Err(err("more than one `/`".into()));
        }

        let (name, version) = if op == Operator::None {
            (name_ver.to_string(), None)
        } else {
            // The version starts at the rightmost hyphen whose tail parses
            // as a complete version ("-r1" alone does not, so revisions
            // stay attached).
            let mut split = None;
            let mut search = name_ver.len();
            while let Some(i) = name_ver[..search].rfind('-') {
                if let Ok(v) = Version::parse(&name_ver[i + 1..]) {
                    split = Some((i, v));
                    break;
                }
                search = i;
            }
            let (i, v) = split.ok_or_else(|| err("operator requires a version".into()))?;
            (name_ver[..i].to_string(), Some(v))
        };

        if name.is_empty() || !name.chars().all(is_name_char) {
            return Err(err(format!("illegal package name `{name}`")));
        }
        if ends_in_version(&name) {
            return Err(err(format!(
                "package name `{name}` must not end in a version"
            )));
        }

        Ok(Atom {
            op,
            category,
            name,
            version,
            slot,
            use_deps,
        })
    }

    /// `category/name` when the category is known, bare name otherwise.
    pub fn display_name(&self) -> String {
        match &self.category {
            Some(c) => format!("{}/{}", c, self.name),
            None => self.name.clone(),
        }
    }

    /// True iff `candidate` (with the given enabled USE flags) satisfies
    /// this atom. A missing category matches any category; callers resolve
    /// the shorthand before relying on that.
    pub fn matches(&self, candidate: &PackageId, candidate_use: &BTreeSet<String>) -> bool {
        if let Some(cat) = &self.category {
            if cat != &candidate.category {
                return false;
            }
        }
        if self.name != candidate.name {
            return false;
        }
        if let Some(slot) = &self.slot {
            if slot != &candidate.slot {
                return false;
            }
        }
        let version_ok = match (&self.op, &self.version) {
            (Operator::None, _) => true,
            (Operator::Equal, Some(v)) => &candidate.version == v,
            (Operator::Tilde, Some(v)) => candidate.version.eq_ignoring_revision(v),
            (Operator::GreaterEqual, Some(v)) => candidate.version >= *v,
            (Operator::LessEqual, Some(v)) => candidate.version <= *v,
            (Operator::Greater, Some(v)) => candidate.version > *v,
            (Operator::Less, Some(v)) => candidate.version < *v,
            _ => false,
        };
        if !version_ok {
            return false;
        }
        self.use_deps
            .iter()
            .all(|d| candidate_use.contains(&d.flag) == d.enabled)
    }
}

impl FromStr for Atom {
    type Err = Error;
    fn from_str(s: &str) -> Result<Atom> {
        Atom::parse(s)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op.as_str())?;
        if let Some(cat) = &self.category {
            write!(f, "{cat}/")?;
        }
        write!(f, "{}", self.name)?;
        if let Some(v) = &self.version {
            write!(f, "-{v}")?;
        }
        if let Some(s) = &self.slot {
            write!(f, ":{s}")?;
        }
        if !self.use_deps.is_empty() {
            write!(f, "[")?;
            for (i, d) in self.use_deps.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                if !d.enabled {
                    write!(f, "-")?;
                }
                write!(f, "{}", d.flag)?;
            }
            write!(f, "]")?;
        }
        Ok(())
    }
}

/// Identity of one concrete package: recipe in a repository or installed
/// entry in a VDB.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackageId {
    pub category: String,
    pub name: String,
    pub version: Version,
    pub slot: String,
    pub repository: String,
}

impl PackageId {
    /// `category/name`
    pub fn cn(&self) -> String {
        format!("{}/{}", self.category, self.name)
    }

    /// `category/name-version`
    pub fn cnv(&self) -> String {
        format!("{}/{}-{}", self.category, self.name, self.version)
    }

    /// `category/name-version:slot`, the plan-line identity.
    pub fn cnvs(&self) -> String {
        format!("{}:{}", self.cnv(), self.slot)
    }

    /// Lexicographic key used for deterministic tie-breaking everywhere.
    pub fn sort_key(&self) -> (String, String, String) {
        (
            self.category.clone(),
            self.name.clone(),
            self.version.to_string(),
        )
    }
}

impl fmt::Display for PackageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}-{}", self.category, self.name, self.version)
    }
}
