//! Pseudo-code rule representation: parsing, rendering, structural
//! validation, synthesis from rule programs and body merging.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GrammarRule;
use crate::ruleengine::{PositionSpec, RuleProgram, SentencePredicate, Step, TokenPredicate};

pub const PARAMETERS: [&str; 2] = ["source_sentence", "dictionary"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeStyle {
    /// Simulates translating with the rule; returns a sentence.
    Application,
    /// Decides whether the rule applies; returns a boolean.
    RetrievalCheck,
}

impl CodeStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeStyle::Application => "application",
            CodeStyle::RetrievalCheck => "retrieval_check",
        }
    }

    pub fn default_function_name(self) -> &'static str {
        match self {
            CodeStyle::Application => "apply_rule",
            CodeStyle::RetrievalCheck => "check_whether_apply",
        }
    }
}

impl std::str::FromStr for CodeStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "application" => Ok(CodeStyle::Application),
            "retrieval_check" | "retrieval" => Ok(CodeStyle::RetrievalCheck),
            o => Err(format!("unknown code style {o:?}")),
        }
    }
}

/// A rule as a commented pseudo-code function.
///
/// `body` holds the function body lines with their original indentation
/// (four spaces at the top level). `helpers` are functions the body calls,
/// rendered before it; they only occur on combined rules.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRule {
    pub style: CodeStyle,
    pub function_name: String,
    #[serde(default = "default_parameters")]
    pub parameters: Vec<String>,
    pub comment_block: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub helpers: Vec<CodeRule>,
}

fn default_parameters() -> Vec<String> {
    PARAMETERS.iter().map(|s| s.to_string()).collect()
}

impl CodeRule {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for h in &self.helpers {
            out.push_str(&h.render());
            out.push_str("\n\n");
        }
        out.push_str(&format!("def {}({}):\n", self.function_name, self.parameters.join(", ")));
        out.push_str("    \"\"\"\n");
        for line in self.comment_block.lines() {
            if line.trim().is_empty() {
                out.push('\n');
            } else {
                out.push_str("    ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push_str("    \"\"\"\n");
        out.push_str(self.body.trim_end());
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeParseError {
    #[error("no function definition found")]
    NoFunction,
    #[error("unterminated docstring")]
    UnterminatedDocstring,
}

fn def_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(([^)]*)\)\s*:\s*$").unwrap())
}

/// Strips a surrounding markdown code fence if present.
fn unfence(text: &str) -> &str {
    let Some(start) = text.find("```") else { return text };
    let after = &text[start + 3..];
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn dedent(lines: &[&str]) -> String {
    let indent = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    lines
        .iter()
        .map(|l| if l.len() >= indent { &l[indent..] } else { l.trim_start() })
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim_matches('\n')
        .to_string()
}

fn parse_one(lines: &[&str], style: CodeStyle) -> Result<CodeRule, CodeParseError> {
    let caps = def_re().captures(lines[0].trim_end()).ok_or(CodeParseError::NoFunction)?;
    let function_name = caps[1].to_string();
    let parameters: Vec<String> =
        caps[2].split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
    let mut i = 1;
    while i < lines.len() && lines[i].trim().is_empty() {
        i += 1;
    }
    let mut comment_block = String::new();
    if i < lines.len() && lines[i].trim_start().starts_with("\"\"\"") {
        let first = lines[i].trim_start().trim_start_matches("\"\"\"");
        if let Some(end) = first.find("\"\"\"") {
            comment_block = first[..end].trim().to_string();
            i += 1;
        } else {
            let mut doc: Vec<&str> = Vec::new();
            if !first.trim().is_empty() {
                doc.push(first);
            }
            i += 1;
            loop {
                if i >= lines.len() {
                    return Err(CodeParseError::UnterminatedDocstring);
                }
                if let Some(end) = lines[i].find("\"\"\"") {
                    let tail = &lines[i][..end];
                    if !tail.trim().is_empty() {
                        doc.push(tail);
                    }
                    i += 1;
                    break;
                }
                doc.push(lines[i]);
                i += 1;
            }
            comment_block = dedent(&doc);
        }
    }
    let body = lines[i..].iter().map(|l| l.trim_end()).collect::<Vec<_>>().join("\n").trim_matches('\n').to_string();
    Ok(CodeRule { style, function_name, parameters, comment_block, body, helpers: Vec::new() })
}

/// Parses a generated reply into a code rule. Text after the first function's
/// docstring, including any further definitions, becomes the body; the
/// validator flags extra definitions.
pub fn parse_code_rule(text: &str, style: CodeStyle) -> Result<CodeRule, CodeParseError> {
    let lines: Vec<&str> = unfence(text).lines().collect();
    let start = lines.iter().position(|l| def_re().is_match(l.trim_end())).ok_or(CodeParseError::NoFunction)?;
    parse_one(&lines[start..], style)
}

/// Parses every top-level function in `text` separately.
pub fn parse_functions(text: &str, style: CodeStyle) -> Vec<CodeRule> {
    let lines: Vec<&str> = unfence(text).lines().collect();
    let starts: Vec<usize> = lines.iter().enumerate().filter(|(_, l)| def_re().is_match(l.trim_end())).map(|(i, _)| i).collect();
    let mut out = Vec::new();
    for (k, &s) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(lines.len());
        if let Ok(rule) = parse_one(&lines[s..end], style) {
            out.push(rule);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum Violation {
    MultipleFunctions,
    WrongParameters(Vec<String>),
    StyleReturnMismatch(String),
    MissingRuleText,
    UnbalancedDelimiters(String),
    ForbiddenStatement(String),
    EmptyBody,
    MissingReturn,
    MissingHelperCall(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MultipleFunctions => write!(f, "the code must define exactly one function"),
            Violation::WrongParameters(p) => {
                write!(f, "parameters must be (source_sentence, dictionary), found ({})", p.join(", "))
            }
            Violation::StyleReturnMismatch(e) => write!(f, "return value `{e}` does not match the code style"),
            Violation::MissingRuleText => write!(f, "the docstring must contain the rule text verbatim"),
            Violation::UnbalancedDelimiters(d) => write!(f, "unbalanced delimiters: {d}"),
            Violation::ForbiddenStatement(s) => write!(f, "forbidden statement: {s}"),
            Violation::EmptyBody => write!(f, "the function body is empty"),
            Violation::MissingReturn => write!(f, "the function never returns"),
            Violation::MissingHelperCall(h) => write!(f, "the function must call {h}"),
        }
    }
}

/// Code outside string literals and comments; string contents become spaces.
fn strip_strings(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
            let q = if triple { 3 } else { 1 };
            i += q;
            while i < chars.len() {
                if chars[i] == '\\' {
                    i += 2;
                    continue;
                }
                if !triple && chars[i] == '\n' {
                    break;
                }
                if chars[i] == c && (!triple || (i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c)) {
                    i += q;
                    break;
                }
                i += 1;
            }
            out.push_str("\"\"");
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

fn check_delimiters(code: &str) -> Option<String> {
    let mut stack = Vec::new();
    for c in code.chars() {
        match c {
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let open = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(open) {
                    return Some(format!("unexpected `{c}`"));
                }
            }
            _ => {}
        }
    }
    stack.last().map(|c| format!("unclosed `{c}`"))
}

const FORBIDDEN_CALLS: [&str; 7] = ["open(", "eval(", "exec(", "print(", "input(", "__import__", "subprocess"];

fn is_boolean_expr(expr: &str) -> bool {
    let e = expr.trim();
    matches!(e, "True" | "False")
        || e.starts_with("not ")
        || [" and ", " or ", " in ", "==", "!=", "<", ">"].iter().any(|op| e.contains(op))
        || ["is_", "has_", "should_", "check", "any(", "all(", "bool("].iter().any(|p| e.starts_with(p))
}

/// Structural checks that do not need the source rule.
pub fn validate_code_rule(c: &CodeRule) -> Vec<Violation> {
    let mut v = Vec::new();
    let code = strip_strings(&c.body);
    if code.lines().any(|l| l.trim_start().starts_with("def ")) {
        v.push(Violation::MultipleFunctions);
    }
    if c.parameters.iter().map(String::as_str).ne(PARAMETERS) {
        v.push(Violation::WrongParameters(c.parameters.clone()));
    }
    if c.comment_block.trim().is_empty() {
        v.push(Violation::MissingRuleText);
    }
    if let Some(d) = check_delimiters(&code) {
        v.push(Violation::UnbalancedDelimiters(d));
    }
    for line in code.lines() {
        let t = line.trim_start();
        if t.starts_with("import ") || (t.starts_with("from ") && t.contains(" import ")) {
            v.push(Violation::ForbiddenStatement(t.to_string()));
        } else if let Some(f) = FORBIDDEN_CALLS.iter().find(|f| t.contains(*f)) {
            v.push(Violation::ForbiddenStatement(f.trim_end_matches('(').to_string()));
        }
    }
    if code.lines().all(|l| l.trim().is_empty() || l.trim() == "pass") {
        v.push(Violation::EmptyBody);
    }
    let returns: Vec<String> = c
        .body
        .lines()
        .map(str::trim_start)
        .filter_map(|l| l.strip_prefix("return").filter(|r| r.is_empty() || r.starts_with(' ')))
        .map(|r| r.split('#').next().unwrap_or("").trim().to_string())
        .collect();
    if returns.is_empty() {
        v.push(Violation::MissingReturn);
    }
    for r in returns {
        let ok = match c.style {
            CodeStyle::RetrievalCheck => is_boolean_expr(&r),
            CodeStyle::Application => !matches!(r.as_str(), "True" | "False" | ""),
        };
        if !ok {
            v.push(Violation::StyleReturnMismatch(r));
        }
    }
    for h in &c.helpers {
        v.extend(validate_code_rule(h));
        if !c.body.contains(&format!("{}(", h.function_name)) {
            v.push(Violation::MissingHelperCall(h.function_name.clone()));
        }
    }
    v
}

/// Structural checks plus the verbatim-embedding check against `rule`.
pub fn validate_for_rule(c: &CodeRule, rule: &GrammarRule) -> Vec<Violation> {
    let mut v = validate_code_rule(c);
    if !c.comment_block.contains(rule.text.trim()) && !v.contains(&Violation::MissingRuleText) {
        v.push(Violation::MissingRuleText);
    }
    v
}

// ---------------------------------------------------------------------------
// Synthesis from programs (used by the mock backend and for fixtures).

struct Phrases {
    rule: &'static str,
    app_steps: &'static str,
    check_steps: &'static str,
    segment: &'static str,
    map: &'static str,
    insert: &'static str,
    delete: &'static str,
    permute: &'static str,
    split: &'static str,
    branch: &'static str,
    join: &'static str,
    triggers: &'static str,
    pattern: &'static str,
    generic_check: &'static str,
    generic_apply: &'static str,
}

const ZH: Phrases = Phrases {
    rule: "语法规则：",
    app_steps: "## 翻译步骤：",
    check_steps: "## 判断步骤：",
    segment: "切分句子并取出词语",
    map: "根据字典翻译每个词",
    insert: "插入",
    delete: "删除不需要的词",
    permute: "调整词序",
    split: "把词拆分为多个部分",
    branch: "根据句子内容选择处理方式",
    join: "拼接并返回译文",
    triggers: "若句子包含触发词，返回 True",
    pattern: "若句子包含相关词类搭配，返回 True",
    generic_check: "判断句子是否符合规则描述，符合则返回 True，否则返回 False",
    generic_apply: "按规则描述处理句子",
};

const EN: Phrases = Phrases {
    rule: "Grammar rule: ",
    app_steps: "## Steps:",
    check_steps: "## Checks:",
    segment: "Split the sentence into words",
    map: "Translate each word with the dictionary",
    insert: "Insert",
    delete: "Drop words that are not expressed",
    permute: "Reorder the words",
    split: "Split words into parts",
    branch: "Choose the treatment from the sentence content",
    join: "Join and return the translation",
    triggers: "Return True if the sentence contains a trigger word",
    pattern: "Return True if the sentence contains the relevant word-class pattern",
    generic_check: "Check whether the sentence matches the rule description; return True if so, else False",
    generic_apply: "Process the sentence as the rule describes",
};

fn phrases(lang: &str) -> &'static Phrases {
    if lang == "zh" {
        &ZH
    } else {
        &EN
    }
}

fn q(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn qlist(v: &[String]) -> String {
    format!("[{}]", v.iter().map(|s| q(s)).collect::<Vec<_>>().join(", "))
}

fn token_pred(p: &TokenPredicate, var: &str) -> String {
    match p {
        TokenPredicate::Eq(s) => format!("{var} == {}", q(s)),
        TokenPredicate::OneOf(v) => format!("{var} in {}", qlist(v)),
        TokenPredicate::Tag(t) => format!("is_tag({var}, {})", q(t)),
        TokenPredicate::Any => "True".into(),
    }
}

fn pattern_arg(p: &TokenPredicate) -> String {
    match p {
        TokenPredicate::Eq(s) => q(s),
        TokenPredicate::OneOf(v) => qlist(v),
        TokenPredicate::Tag(t) => q(t),
        TokenPredicate::Any => q("*"),
    }
}

fn sentence_pred(p: &SentencePredicate) -> String {
    match p {
        SentencePredicate::Contains(s) => format!("{} in words", q(s)),
        SentencePredicate::ContainsAny(v) => format!("any(x in words for x in {})", qlist(v)),
        SentencePredicate::ContainsTag(t) => format!("any(is_tag(w, {}) for w in words)", q(t)),
        SentencePredicate::Not(inner) => format!("not ({})", sentence_pred(inner)),
    }
}

fn step_lines(step: &Step, indent: usize, out: &mut Vec<String>) {
    let pad = " ".repeat(indent);
    match step {
        Step::MapTokens => out.push(format!("{pad}words = [dictionary.get(w, w) for w in words]")),
        Step::Insert { token, position } => {
            let t = q(token);
            out.push(match position {
                PositionSpec::Start => format!("{pad}words = [{t}] + words"),
                PositionSpec::End => format!("{pad}words = words + [{t}]"),
                PositionSpec::Index(n) => format!("{pad}words.insert({n}, {t})"),
                PositionSpec::Before(p) => format!("{pad}words = insert_before(words, lambda w: {}, {t})", token_pred(p, "w")),
                PositionSpec::After(p) => format!("{pad}words = insert_after(words, lambda w: {}, {t})", token_pred(p, "w")),
            });
        }
        Step::Delete { predicate } => {
            out.push(format!("{pad}words = [w for w in words if not ({})]", token_pred(predicate, "w")))
        }
        Step::Permute { pattern, order, .. } => out.push(format!(
            "{pad}words = reorder(words, pattern=[{}], order={order:?})",
            pattern.iter().map(pattern_arg).collect::<Vec<_>>().join(", ")
        )),
        Step::Split { predicate, parts } => out.push(format!(
            "{pad}words = split_words(words, lambda w: {}, {})",
            token_pred(predicate, "w"),
            qlist(parts)
        )),
        Step::Branch { predicate, then_steps, else_steps } => {
            out.push(format!("{pad}if {}:", sentence_pred(predicate)));
            if then_steps.is_empty() {
                out.push(format!("{pad}    pass"));
            }
            for s in then_steps {
                step_lines(s, indent + 4, out);
            }
            if !else_steps.is_empty() {
                out.push(format!("{pad}else:"));
                for s in else_steps {
                    step_lines(s, indent + 4, out);
                }
            }
        }
    }
}

fn step_summary(step: &Step, ph: &Phrases) -> String {
    match step {
        Step::MapTokens => ph.map.to_string(),
        Step::Insert { token, .. } => format!("{} {}", ph.insert, q(token.trim_matches('+'))),
        Step::Delete { .. } => ph.delete.to_string(),
        Step::Permute { .. } => ph.permute.to_string(),
        Step::Split { .. } => ph.split.to_string(),
        Step::Branch { .. } => ph.branch.to_string(),
    }
}

/// Input-side words whose presence signals that a program matters.
fn triggers(program: &RuleProgram) -> (Vec<String>, Vec<Vec<String>>) {
    fn token_words(p: &TokenPredicate, out: &mut BTreeSet<String>) {
        match p {
            TokenPredicate::Eq(s) => {
                out.insert(s.clone());
            }
            TokenPredicate::OneOf(v) => out.extend(v.iter().cloned()),
            _ => {}
        }
    }
    fn sent_words(p: &SentencePredicate, out: &mut BTreeSet<String>) {
        match p {
            SentencePredicate::Contains(s) => {
                out.insert(s.clone());
            }
            SentencePredicate::ContainsAny(v) => out.extend(v.iter().cloned()),
            SentencePredicate::ContainsTag(_) => {}
            SentencePredicate::Not(inner) => sent_words(inner, out),
        }
    }
    fn walk(steps: &[Step], words: &mut BTreeSet<String>, patterns: &mut Vec<Vec<String>>) {
        for s in steps {
            match s {
                Step::Delete { predicate } | Step::Split { predicate, .. } => token_words(predicate, words),
                Step::Permute { pattern, .. } => {
                    patterns.push(pattern.iter().map(|p| pattern_arg(p).trim_matches('"').to_string()).collect())
                }
                Step::Branch { predicate, then_steps, else_steps } => {
                    sent_words(predicate, words);
                    walk(then_steps, words, patterns);
                    walk(else_steps, words, patterns);
                }
                _ => {}
            }
        }
    }
    let mut words: BTreeSet<String> = program.lexicon.keys().cloned().collect();
    words.extend(program.segments.iter().cloned());
    let mut patterns = Vec::new();
    walk(&program.steps, &mut words, &mut patterns);
    (words.into_iter().collect(), patterns)
}

/// Deterministic code form of `rule` in `style`, derived from its program
/// when present. `lang` selects comment language (`zh` or `en`).
pub fn synthesize_code(rule: &GrammarRule, style: CodeStyle, lang: &str) -> CodeRule {
    let ph = phrases(lang);
    let mut steps_doc: Vec<String> = Vec::new();
    let mut body: Vec<String> = Vec::new();
    match (style, &rule.program) {
        (CodeStyle::Application, Some(p)) => {
            steps_doc.push(ph.segment.to_string());
            body.push(format!("    # 1. {}", ph.segment));
            body.push("    words = segment(source_sentence, dictionary)".into());
            for (i, s) in p.steps.iter().enumerate() {
                let d = step_summary(s, ph);
                body.push(format!("    # {}. {d}", i + 2));
                steps_doc.push(d);
                step_lines(s, 4, &mut body);
            }
            steps_doc.push(ph.join.to_string());
            body.push(format!("    # {}. {}", steps_doc.len(), ph.join));
            body.push("    return join_words(words)".into());
        }
        (CodeStyle::Application, None) => {
            for (i, d) in [ph.segment, ph.generic_apply, ph.join].iter().enumerate() {
                steps_doc.push(d.to_string());
                body.push(format!("    # {}. {d}", i + 1));
                body.push(
                    match i {
                        0 => "    words = segment(source_sentence, dictionary)",
                        1 => "    words = apply_described_rule(words, dictionary)",
                        _ => "    return join_words(words)",
                    }
                    .into(),
                );
            }
        }
        (CodeStyle::RetrievalCheck, program) => {
            let (words, patterns) = program.as_ref().map(triggers).unwrap_or_default();
            if !words.is_empty() {
                steps_doc.push(ph.triggers.to_string());
                body.push(format!("    # {}. {}", steps_doc.len(), ph.triggers));
                body.push(format!("    if any(t in source_sentence for t in {}):", qlist(&words)));
                body.push("        return True".into());
            }
            for pat in &patterns {
                steps_doc.push(ph.pattern.to_string());
                body.push(format!("    # {}. {}", steps_doc.len(), ph.pattern));
                body.push(format!("    if has_pattern(source_sentence, dictionary, {}):", qlist(pat)));
                body.push("        return True".into());
            }
            if steps_doc.is_empty() {
                steps_doc.push(ph.generic_check.to_string());
                body.push(format!("    # 1. {}", ph.generic_check));
                body.push("    if rule_applies(source_sentence, dictionary):".into());
                body.push("        return True".into());
            }
            body.push("    return False".into());
        }
    }
    let heading = match style {
        CodeStyle::Application => ph.app_steps,
        CodeStyle::RetrievalCheck => ph.check_steps,
    };
    let numbered: Vec<String> = steps_doc.iter().enumerate().map(|(i, d)| format!("{}. {d}", i + 1)).collect();
    CodeRule {
        style,
        function_name: style.default_function_name().to_string(),
        parameters: default_parameters(),
        comment_block: format!("# {}{}\n\n{heading}\n{}", ph.rule, rule.text.trim(), numbered.join("\n")),
        body: body.join("\n"),
        helpers: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Merging two application-style rules.

fn ident_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:for\s+)?([A-Za-z_][A-Za-z0-9_]*(?:\s*,\s*[A-Za-z_][A-Za-z0-9_]*)*)\s*(?:=[^=]|\s+in\s)").unwrap())
}

/// Names assigned in `body` (assignment targets and loop variables).
pub fn local_names(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for line in body.lines() {
        if let Some(c) = ident_re().captures(line) {
            for name in c[1].split(',') {
                let n = name.trim();
                if !PARAMETERS.contains(&n) && n != "for" {
                    out.insert(n.to_string());
                }
            }
        }
    }
    out
}

/// Appends `suffix` to every local name in `body`.
pub fn rename_locals(body: &str, suffix: &str) -> String {
    let mut out = body.to_string();
    for name in local_names(body) {
        let re = Regex::new(&format!(r"\b{}\b", regex::escape(&name))).expect("identifier regex");
        out = re.replace_all(&out, format!("{name}{suffix}").as_str()).into_owned();
    }
    out
}

/// Rewrites top-level and nested `return X` into `{var} = X`.
fn returns_to_assignment(body: &str, var: &str) -> String {
    body.lines()
        .map(|l| {
            let indent = &l[..l.len() - l.trim_start().len()];
            match l.trim_start().strip_prefix("return ") {
                Some(expr) => format!("{indent}{var} = {expr}"),
                None => l.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Concatenates the bodies of `first` then `second` into one function.
/// Locals get `_a`/`_b` suffixes; the first body's returns become
/// `result_a` assignments.
pub fn merge_bodies(first: &CodeRule, second: &CodeRule) -> CodeRule {
    let a = returns_to_assignment(&rename_locals(&first.body, "_a"), "result_a");
    let b = rename_locals(&second.body, "_b");
    CodeRule {
        style: CodeStyle::Application,
        function_name: "apply_rules".into(),
        parameters: default_parameters(),
        comment_block: format!("{}\n\n{}", first.comment_block.trim(), second.comment_block.trim()),
        body: format!("{a}\n{b}"),
        helpers: Vec::new(),
    }
}

/// Copy of `rule` renamed to `name`, for use as a helper.
pub fn renamed(rule: &CodeRule, name: &str) -> CodeRule {
    CodeRule { function_name: name.to_string(), ..rule.clone() }
}

/// Orchestrator that pipes the sentence through both helpers in order.
pub fn orchestrator(first: &CodeRule, second: &CodeRule) -> CodeRule {
    CodeRule {
        style: CodeStyle::Application,
        function_name: "apply_rules".into(),
        parameters: default_parameters(),
        comment_block: format!("{}\n\n{}", first.comment_block.trim(), second.comment_block.trim()),
        body: format!(
            "    intermediate = {}(source_sentence, dictionary)\n    return {}(intermediate, dictionary)",
            first.function_name, second.function_name
        ),
        helpers: vec![first.clone(), second.clone()],
    }
}
