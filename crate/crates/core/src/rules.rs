//! Attribute schema and the line-oriented rule language.
//!
//! ```text
//! # comments run to end of line
//! attributes clean_shaven, chin_area, len_short
//! group BeardArea { clean_shaven, chin_area } exclusive exhaustive
//! mutex Bald, Receding_Hairline
//! implies clean_shaven -> !len_short
//! ```
//!
//! A [`RuleSet`] owns the schema it was resolved against, so every index it
//! carries is valid for that schema.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// Ordered, unique attribute names. Index `i` is column `i` of every label matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeSchema {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

fn valid_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl AttributeSchema {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut schema = AttributeSchema::default();
        for n in names {
            schema.push(n.as_ref())?;
        }
        Ok(schema)
    }

    fn push(&mut self, name: &str) -> Result<()> {
        if !valid_ident(name) {
            return Err(Error::InvalidName(name.to_string()));
        }
        if self.index.contains_key(name) {
            return Err(Error::DuplicateAttribute(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }
}

/// An attribute asserted true (`positive`) or false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Literal {
    pub attr: usize,
    pub positive: bool,
}

impl Literal {
    pub fn pos(attr: usize) -> Self {
        Literal { attr, positive: true }
    }

    pub fn neg(attr: usize) -> Self {
        Literal { attr, positive: false }
    }

    pub fn holds(&self, row: &[bool]) -> bool {
        row[self.attr] == self.positive
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub members: Vec<usize>,
    /// At most one member positive.
    pub exclusive: bool,
    /// At least one member positive.
    pub exhaustive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Implication {
    pub antecedent: Vec<Literal>,
    pub consequent: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Group(Group),
    /// At most one positive among the members.
    Mutex(Vec<usize>),
    Implies(Implication),
}

impl Rule {
    /// Every attribute index the rule mentions, in declaration order.
    pub fn attributes(&self) -> Vec<usize> {
        match self {
            Rule::Group(g) => g.members.clone(),
            Rule::Mutex(m) => m.clone(),
            Rule::Implies(imp) => imp.antecedent.iter().chain(&imp.consequent).map(|l| l.attr).collect(),
        }
    }

    /// Renders the rule as one line of rule-language source.
    pub fn render(&self, schema: &AttributeSchema) -> String {
        let names = |idx: &[usize]| idx.iter().map(|&i| schema.name(i)).collect::<Vec<_>>().join(", ");
        let lits = |ls: &[Literal]| {
            ls.iter()
                .map(|l| {
                    if l.positive {
                        schema.name(l.attr).to_string()
                    } else {
                        format!("!{}", schema.name(l.attr))
                    }
                })
                .collect::<Vec<_>>()
                .join(" & ")
        };
        match self {
            Rule::Group(g) => {
                let mut s = format!("group {} {{ {} }}", g.name, names(&g.members));
                if g.members.is_empty() {
                    s = format!("group {} {{ }}", g.name);
                }
                if g.exclusive {
                    s.push_str(" exclusive");
                }
                if g.exhaustive {
                    s.push_str(" exhaustive");
                }
                s
            }
            Rule::Mutex(m) => format!("mutex {}", names(m)),
            Rule::Implies(imp) => {
                format!("implies {} -> {}", lits(&imp.antecedent), lits(&imp.consequent))
            }
        }
    }
}

/// Stable rule identifier: the rule's position in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleId(pub usize);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A validated set of rules bound to its schema. Rules keep declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    schema: AttributeSchema,
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(schema: AttributeSchema, rules: Vec<Rule>) -> Result<Self> {
        let set = RuleSet { schema, rules };
        set.validate()?;
        Ok(set)
    }

    /// A rule set with no constraints over `schema`.
    pub fn empty(schema: AttributeSchema) -> Self {
        RuleSet {
            schema,
            rules: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.schema.len();
        let check_idx = |i: usize| {
            if i < m {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: m,
                    got: i + 1,
                })
            }
        };
        let no_dups = |idx: &mut dyn Iterator<Item = usize>| {
            let mut seen = HashSet::new();
            for i in idx {
                check_idx(i)?;
                if !seen.insert(i) {
                    return Err(Error::DuplicateMember(self.schema.name(i).to_string()));
                }
            }
            Ok(())
        };
        let mut group_names = HashSet::new();
        for rule in &self.rules {
            match rule {
                Rule::Group(g) => {
                    if !valid_ident(&g.name) {
                        return Err(Error::InvalidName(g.name.clone()));
                    }
                    if !group_names.insert(g.name.as_str()) {
                        return Err(Error::DuplicateGroup(g.name.clone()));
                    }
                    if g.exhaustive && g.members.is_empty() {
                        return Err(Error::EmptyExhaustiveGroup(g.name.clone()));
                    }
                    no_dups(&mut g.members.iter().copied())?;
                }
                Rule::Mutex(members) => {
                    if members.len() < 2 {
                        return Err(Error::syntax(0, 0, "mutex needs at least two members"));
                    }
                    no_dups(&mut members.iter().copied())?;
                }
                Rule::Implies(imp) => {
                    if imp.antecedent.is_empty() || imp.consequent.is_empty() {
                        return Err(Error::syntax(0, 0, "implication sides must be non-empty"));
                    }
                    no_dups(&mut imp.antecedent.iter().map(|l| l.attr))?;
                    no_dups(&mut imp.consequent.iter().map(|l| l.attr))?;
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.0]
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn groups(&self) -> impl Iterator<Item = (RuleId, &Group)> {
        self.rules.iter().enumerate().filter_map(|(i, r)| match r {
            Rule::Group(g) => Some((RuleId(i), g)),
            _ => None,
        })
    }

    pub fn exclusive_groups(&self) -> impl Iterator<Item = (RuleId, &Group)> {
        self.groups().filter(|(_, g)| g.exclusive)
    }

    pub fn exhaustive_groups(&self) -> impl Iterator<Item = (RuleId, &Group)> {
        self.groups().filter(|(_, g)| g.exhaustive)
    }

    pub fn mutexes(&self) -> impl Iterator<Item = (RuleId, &[usize])> {
        self.rules.iter().enumerate().filter_map(|(i, r)| match r {
            Rule::Mutex(m) => Some((RuleId(i), m.as_slice())),
            _ => None,
        })
    }

    pub fn implications(&self) -> impl Iterator<Item = (RuleId, &Implication)> {
        self.rules.iter().enumerate().filter_map(|(i, r)| match r {
            Rule::Implies(imp) => Some((RuleId(i), imp)),
            _ => None,
        })
    }

    pub fn render_rule(&self, id: RuleId) -> String {
        self.rule(id).render(&self.schema)
    }

    /// Appends unconstrained attributes to the schema. Existing indices are kept.
    pub fn with_extra_attributes<S: AsRef<str>>(&self, extra: &[S]) -> Result<RuleSet> {
        let mut schema = self.schema.clone();
        for n in extra {
            schema.push(n.as_ref())?;
        }
        Ok(RuleSet {
            schema,
            rules: self.rules.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Comma,
    LBrace,
    RBrace,
    Amp,
    Bang,
    Arrow,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Comma => "`,`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Arrow => "`->`".into(),
        }
    }
}

fn lex_line(line: &str, lineno: usize) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            '#' => break,
            c if c.is_whitespace() => i += 1,
            ',' => {
                out.push((Tok::Comma, col));
                i += 1;
            }
            '{' => {
                out.push((Tok::LBrace, col));
                i += 1;
            }
            '}' => {
                out.push((Tok::RBrace, col));
                i += 1;
            }
            '&' => {
                out.push((Tok::Amp, col));
                i += 1;
            }
            '!' => {
                out.push((Tok::Bang, col));
                i += 1;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push((Tok::Arrow, col));
                i += 2;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            }
            other => return Err(Error::syntax(lineno, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

#[derive(Debug)]
struct Name {
    text: String,
}

#[derive(Debug)]
struct RawLiteral {
    name: Name,
    positive: bool,
}

#[derive(Debug)]
enum RawRule {
    Group {
        name: String,
        members: Vec<Name>,
        exclusive: bool,
        exhaustive: bool,
    },
    Mutex(Vec<Name>),
    Implies(Vec<RawLiteral>, Vec<RawLiteral>),
}

struct Cursor<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    line: usize,
    eol_col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.eol_col)
    }

    fn err(&self, what: &str) -> Error {
        let found = match self.peek() {
            Some(t) => t.describe(),
            None => "end of line".into(),
        };
        Error::syntax(self.line, self.col(), format!("expected {what}, found {found}"))
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    fn ident(&mut self, what: &str) -> Result<Name> {
        match self.toks.get(self.pos) {
            Some((Tok::Ident(s), _)) => {
                let name = Name { text: s.clone() };
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.err(what)),
        }
    }

    fn name_list(&mut self) -> Result<Vec<Name>> {
        let mut names = vec![self.ident("attribute name")?];
        while self.eat(&Tok::Comma) {
            names.push(self.ident("attribute name")?);
        }
        Ok(names)
    }

    fn literal(&mut self) -> Result<RawLiteral> {
        let positive = !self.eat(&Tok::Bang);
        Ok(RawLiteral {
            name: self.ident("attribute name")?,
            positive,
        })
    }

    fn conjunction(&mut self) -> Result<Vec<RawLiteral>> {
        let mut lits = vec![self.literal()?];
        while self.eat(&Tok::Amp) {
            lits.push(self.literal()?);
        }
        Ok(lits)
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(self.err("end of line"))
        }
    }
}

enum Stmt {
    Attributes(Vec<Name>),
    Rule(RawRule),
}

fn parse_line(toks: &[(Tok, usize)], line: usize, eol_col: usize) -> Result<Stmt> {
    let mut cur = Cursor {
        toks,
        pos: 0,
        line,
        eol_col,
    };
    let kw = cur.ident("a statement keyword")?;
    let stmt = match kw.text.as_str() {
        "attributes" => Stmt::Attributes(cur.name_list()?),
        "group" => {
            let name = cur.ident("group name")?.text;
            cur.expect(Tok::LBrace, "`{`")?;
            let members = if cur.peek() == Some(&Tok::RBrace) {
                Vec::new()
            } else {
                cur.name_list()?
            };
            cur.expect(Tok::RBrace, "`}` or `,`")?;
            let (mut exclusive, mut exhaustive) = (false, false);
            while cur.peek().is_some() {
                let col = cur.col();
                let flag = cur.ident("`exclusive` or `exhaustive`")?;
                let slot = match flag.text.as_str() {
                    "exclusive" => &mut exclusive,
                    "exhaustive" => &mut exhaustive,
                    other => return Err(Error::syntax(line, col, format!("unknown group flag `{other}`"))),
                };
                if *slot {
                    return Err(Error::syntax(line, col, format!("repeated flag `{}`", flag.text)));
                }
                *slot = true;
            }
            Stmt::Rule(RawRule::Group {
                name,
                members,
                exclusive,
                exhaustive,
            })
        }
        "mutex" => {
            let members = cur.name_list()?;
            if members.len() < 2 {
                return Err(Error::syntax(line, cur.col(), "mutex needs at least two members"));
            }
            Stmt::Rule(RawRule::Mutex(members))
        }
        "implies" => {
            let lhs = cur.conjunction()?;
            cur.expect(Tok::Arrow, "`->` or `&`")?;
            let rhs = cur.conjunction()?;
            Stmt::Rule(RawRule::Implies(lhs, rhs))
        }
        other => return Err(Error::syntax(line, toks[0].1, format!("unknown statement `{other}`"))),
    };
    cur.finish()?;
    Ok(stmt)
}

/// Parses rule-language source.
///
/// The schema comes from, in order of preference: the supplied `schema`, inline
/// `attributes` lines, or first appearance of each name in the rules. When both
/// a schema and inline declarations are present they must agree exactly.
pub fn parse_rules(text: &str, schema: Option<&AttributeSchema>) -> Result<RuleSet> {
    let mut declared: Vec<Name> = Vec::new();
    let mut raw_rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks = lex_line(line, lineno)?;
        if toks.is_empty() {
            continue;
        }
        match parse_line(&toks, lineno, line.chars().count() + 1)? {
            Stmt::Attributes(names) => declared.extend(names),
            Stmt::Rule(r) => raw_rules.push(r),
        }
    }

    let mut inline = AttributeSchema::default();
    for n in &declared {
        inline.push(&n.text)?;
    }

    let (schema, strict) = match schema {
        Some(given) => {
            if !declared.is_empty() && inline != *given {
                return Err(Error::SchemaConflict(format!(
                    "declared [{}] but schema is [{}]",
                    inline.names().join(", "),
                    given.names().join(", ")
                )));
            }
            (given.clone(), true)
        }
        None if !declared.is_empty() => (inline, true),
        None => (AttributeSchema::default(), false),
    };
    let mut schema = schema;

    let resolve = |n: &Name, schema: &mut AttributeSchema| -> Result<usize> {
        match schema.index_of(&n.text) {
            Some(i) => Ok(i),
            None if !strict => {
                schema.push(&n.text)?;
                Ok(schema.len() - 1)
            }
            None => Err(Error::UnknownAttribute(n.text.clone())),
        }
    };

    let mut rules = Vec::with_capacity(raw_rules.len());
    for raw in raw_rules {
        let rule = match raw {
            RawRule::Group {
                name,
                members,
                exclusive,
                exhaustive,
            } => Rule::Group(Group {
                name,
                members: members.iter().map(|n| resolve(n, &mut schema)).collect::<Result<_>>()?,
                exclusive,
                exhaustive,
            }),
            RawRule::Mutex(members) => {
                Rule::Mutex(members.iter().map(|n| resolve(n, &mut schema)).collect::<Result<_>>()?)
            }
            RawRule::Implies(lhs, rhs) => {
                let mut lits = |raw: &[RawLiteral]| -> Result<Vec<Literal>> {
                    raw.iter()
                        .map(|l| {
                            Ok(Literal {
                                attr: resolve(&l.name, &mut schema)?,
                                positive: l.positive,
                            })
                        })
                        .collect()
                };
                let antecedent = lits(&lhs)?;
                let consequent = lits(&rhs)?;
                Rule::Implies(Implication { antecedent, consequent })
            }
        };
        rules.push(rule);
    }
    RuleSet::new(schema, rules)
}

/// Canonical source for `rules`: an `attributes` header followed by one line per rule.
pub fn serialize_rules(rules: &RuleSet) -> String {
    let mut out = String::new();
    if !rules.schema.is_empty() {
        let _ = writeln!(out, "attributes {}", rules.schema.names().join(", "));
    }
    for rule in &rules.rules {
        let _ = writeln!(out, "{}", rule.render(&rules.schema));
    }
    out
}

// ---------------------------------------------------------------------------
// Condition groups
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Mutex,
    Implication,
}

/// One strong relationship split into its two sides. For a mutex the cause is
/// the first member and the effect the rest, all as positive literals; for an
/// implication they are the antecedent and consequent literals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionPair {
    pub rule: RuleId,
    pub kind: RelationKind,
    pub cause: Vec<Literal>,
    pub effect: Vec<Literal>,
}

impl ConditionPair {
    pub fn cause_attrs(&self) -> Vec<usize> {
        self.cause.iter().map(|l| l.attr).collect()
    }

    pub fn effect_attrs(&self) -> Vec<usize> {
        self.effect.iter().map(|l| l.attr).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConditionGroups {
    pub pairs: Vec<ConditionPair>,
}

impl ConditionGroups {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn derive_condition_groups(rules: &RuleSet) -> ConditionGroups {
    let pairs = rules
        .rules
        .iter()
        .enumerate()
        .filter_map(|(i, rule)| match rule {
            Rule::Group(_) => None,
            Rule::Mutex(m) => Some(ConditionPair {
                rule: RuleId(i),
                kind: RelationKind::Mutex,
                cause: vec![Literal::pos(m[0])],
                effect: m[1..].iter().map(|&a| Literal::pos(a)).collect(),
            }),
            Rule::Implies(imp) => Some(ConditionPair {
                rule: RuleId(i),
                kind: RelationKind::Implication,
                cause: imp.antecedent.clone(),
                effect: imp.consequent.clone(),
            }),
        })
        .collect();
    ConditionGroups { pairs }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

const FH_MINI: &str = "\
# facial hair: beard area and beard length, each exactly one of four
attributes clean_shaven, chin_area, side_to_side, ba_invisible, len_short, len_medium, len_long, bl_invisible
group BeardArea { clean_shaven, chin_area, side_to_side, ba_invisible } exclusive exhaustive
group BeardLength { len_short, len_medium, len_long, bl_invisible } exclusive exhaustive
implies clean_shaven -> !len_short & !len_medium & !len_long
";

const CELEBA_STRONG_MINI: &str = "\
attributes Bald, Receding_Hairline, Mustache, No_Beard, Male
mutex Bald, Receding_Hairline
implies Mustache -> !No_Beard
implies !Male -> No_Beard
";

pub const PRESETS: &[&str] = &["fh-mini", "celeba-strong-mini"];

pub fn builtin_rules(name: &str) -> Result<(AttributeSchema, RuleSet)> {
    let src = match name {
        "fh-mini" => FH_MINI,
        "celeba-strong-mini" => CELEBA_STRONG_MINI,
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    let rules = parse_rules(src, None)?;
    Ok((rules.schema.clone(), rules))
}
