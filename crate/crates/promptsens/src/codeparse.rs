//! Code extraction from model responses and parsing into ordered labeled
//! syntax trees.
//!
//! The parser layer is a plugin registry keyed by language hint. The shipped
//! default is a generic structural parser: it tokenizes into identifiers,
//! numbers, strings, and operators, nests by bracket pairs `()` `[]` `{}`,
//! and groups lines by indentation. It is a total function over text, which
//! keeps the whole harness runnable without language grammars; full-grammar
//! plugins can be registered without touching the metric code.

use std::collections::HashMap;

use thiserror::Error;

/// One extracted code sample plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSample {
    pub text: String,
    pub language_hint: Option<String>,
    pub origin: Option<SampleOrigin>,
}

/// Provenance of a sample within a run, carried along for audit records.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOrigin {
    pub task_id: String,
    pub method: String,
    /// Canonical rate key: a numeric rate like "0.3" or a bucket label.
    pub rate: String,
    pub sample_index: u32,
}

impl CodeSample {
    pub fn new(text: impl Into<String>) -> Self {
        CodeSample {
            text: text.into(),
            language_hint: None,
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: SampleOrigin) -> Self {
        self.origin = Some(origin);
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("empty response")]
    EmptyResponse,
}

/// Pull code out of a model response.
///
/// All fenced blocks are concatenated with one newline between them and the
/// first nonempty fence tag becomes the language hint. Responses without
/// fences are used whole, trimmed.
pub fn extract_code(response_text: &str) -> Result<CodeSample, ExtractError> {
    let mut blocks: Vec<String> = Vec::new();
    let mut hint: Option<String> = None;
    let mut current: Option<String> = None;
    for line in response_text.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => {
                    let tag = trimmed.trim_start_matches('`').trim();
                    if hint.is_none() && !tag.is_empty() {
                        hint = Some(tag.to_string());
                    }
                    current = Some(String::new());
                }
            }
            continue;
        }
        if let Some(block) = current.as_mut() {
            if !block.is_empty() {
                block.push('\n');
            }
            block.push_str(line);
        }
    }
    // An unterminated fence still counts as a block.
    if let Some(block) = current {
        blocks.push(block);
    }

    let fenced = blocks.join("\n");
    let text = if fenced.trim().is_empty() {
        response_text.trim().to_string()
    } else {
        fenced
    };
    if text.is_empty() {
        return Err(ExtractError::EmptyResponse);
    }
    Ok(CodeSample {
        text,
        language_hint: hint,
        origin: None,
    })
}

/// Ordered labeled rooted tree. Leaves carry token labels, interior nodes
/// carry structural labels ("root", "block", "paren", "bracket", "brace").
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxTree {
    pub label: String,
    pub children: Vec<SyntaxTree>,
}

impl SyntaxTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        SyntaxTree {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<SyntaxTree>) -> Self {
        SyntaxTree {
            label: label.into(),
            children,
        }
    }

    /// Total node count, computed iteratively.
    pub fn size(&self) -> usize {
        let mut count = 0;
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            count += 1;
            stack.extend(node.children.iter());
        }
        count
    }
}

/// Total node count of a tree.
pub fn tree_size(tree: &SyntaxTree) -> usize {
    tree.size()
}

/// A language-specific parser that can be registered under a hint name.
pub trait GrammarParser: Send + Sync {
    fn name(&self) -> &str;
    fn parse(&self, text: &str) -> SyntaxTree;
}

/// Registry of grammar plugins consulted by `parse_code`. Hints with no
/// registered plugin fall back to the generic structural parser.
#[derive(Default)]
pub struct ParserRegistry {
    plugins: HashMap<String, Box<dyn GrammarParser>>,
}

impl ParserRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, plugin: Box<dyn GrammarParser>) {
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn parse(&self, sample: &CodeSample) -> SyntaxTree {
        if let Some(hint) = &sample.language_hint {
            if let Some(plugin) = self.plugins.get(hint.as_str()) {
                return plugin.parse(&sample.text);
            }
        }
        parse_generic(&sample.text)
    }
}

/// Parse a sample with the generic structural parser (no plugins).
pub fn parse_code(sample: &CodeSample) -> SyntaxTree {
    parse_generic(&sample.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Op,
    Open,
    Close,
}

/// A token with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

/// Tokenize source text. Every non-whitespace byte lands in exactly one
/// token span; whitespace is skipped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if b == b'"' || b == b'\'' {
            // String literal: runs to the matching quote or end of line.
            let quote = b;
            i += 1;
            while i < bytes.len() && bytes[i] != quote && bytes[i] != b'\n' {
                if bytes[i] == b'\\' && i + 1 < bytes.len() && bytes[i + 1] != b'\n' {
                    i += 1;
                }
                i += 1;
            }
            if i < bytes.len() && bytes[i] == quote {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Str,
                start,
                end: i,
            });
        } else if b.is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len()
                && bytes[i] == b'.'
                && i + 1 < bytes.len()
                && bytes[i + 1].is_ascii_digit()
            {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            tokens.push(Token {
                kind: TokenKind::Number,
                start,
                end: i,
            });
        } else if b == b'_' || b.is_ascii_alphabetic() || b >= 0x80 {
            // Identifiers admit non-ASCII bytes so unicode text stays in
            // one token instead of one leaf per byte.
            i += 1;
            while i < bytes.len()
                && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric() || bytes[i] >= 0x80)
            {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident,
                start,
                end: i,
            });
        } else if matches!(b, b'(' | b'[' | b'{') {
            i += 1;
            tokens.push(Token {
                kind: TokenKind::Open,
                start,
                end: i,
            });
        } else if matches!(b, b')' | b']' | b'}') {
            i += 1;
            tokens.push(Token {
                kind: TokenKind::Close,
                start,
                end: i,
            });
        } else {
            // One operator/punctuation character per token.
            i += 1;
            tokens.push(Token {
                kind: TokenKind::Op,
                start,
                end: i,
            });
        }
    }
    tokens
}

fn leaf_label(token: &Token, source: &str) -> String {
    match token.kind {
        TokenKind::Ident => format!("id:{}", token.text(source)),
        TokenKind::Number => format!("num:{}", token.text(source)),
        TokenKind::Str => format!("str:{}", token.text(source)),
        // Punctuation is labeled by category, not text: swapping one
        // operator for another is not a structural edit in this metric.
        TokenKind::Op | TokenKind::Open | TokenKind::Close => "op".to_string(),
    }
}

fn group_label(open: u8) -> &'static str {
    match open {
        b'(' => "paren",
        b'[' => "bracket",
        _ => "brace",
    }
}

fn matches_close(open: u8, close: u8) -> bool {
    matches!((open, close), (b'(', b')') | (b'[', b']') | (b'{', b'}'))
}

// Arena node used while building; converted to SyntaxTree at the end.
struct BuildNode {
    label: String,
    children: Vec<usize>,
}

/// The generic structural parser. Total over text: empty input yields a bare
/// root, any other input yields a root whose descendants cover every token.
pub fn parse_generic(text: &str) -> SyntaxTree {
    let tokens = tokenize(text);
    let mut arena: Vec<BuildNode> = vec![BuildNode {
        label: "root".to_string(),
        children: Vec::new(),
    }];

    // Byte offset of each line start, paired with that line's indent width
    // (spaces count 1, tabs count 4).
    let mut line_indents: Vec<(usize, i64)> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let mut indent = 0i64;
        for c in line.chars() {
            match c {
                ' ' => indent += 1,
                '\t' => indent += 4,
                _ => break,
            }
        }
        line_indents.push((offset, indent));
        offset += line.len();
    }

    // Indentation blocks: stack of (indent, arena index). The root adopts
    // the first line's indent so a uniformly indented snippet gets no
    // spurious block.
    let mut block_stack: Vec<(i64, usize)> = Vec::new();
    // Bracket groups: stack of (expected open byte, arena index).
    let mut group_stack: Vec<(u8, usize)> = Vec::new();
    let mut line_cursor = 0usize;
    let mut current_line: Option<usize> = None;

    for token in &tokens {
        while line_cursor + 1 < line_indents.len() && line_indents[line_cursor + 1].0 <= token.start
        {
            line_cursor += 1;
        }
        if group_stack.is_empty() && current_line != Some(line_cursor) {
            current_line = Some(line_cursor);
            let indent = line_indents[line_cursor].1;
            if block_stack.is_empty() {
                block_stack.push((indent, 0));
            } else {
                while block_stack.len() > 1 && indent < block_stack.last().unwrap().0 {
                    block_stack.pop();
                }
                let (top_indent, top_node) = *block_stack.last().unwrap();
                if indent > top_indent {
                    let idx = arena.len();
                    arena.push(BuildNode {
                        label: "block".to_string(),
                        children: Vec::new(),
                    });
                    arena[top_node].children.push(idx);
                    block_stack.push((indent, idx));
                }
            }
        }
        if block_stack.is_empty() {
            block_stack.push((line_indents[line_cursor].1, 0));
        }

        let container = group_stack
            .last()
            .map(|&(_, idx)| idx)
            .unwrap_or_else(|| block_stack.last().unwrap().1);

        match token.kind {
            TokenKind::Open => {
                let open = text.as_bytes()[token.start];
                let idx = arena.len();
                arena.push(BuildNode {
                    label: group_label(open).to_string(),
                    children: Vec::new(),
                });
                arena[container].children.push(idx);
                group_stack.push((open, idx));
            }
            TokenKind::Close => {
                let close = text.as_bytes()[token.start];
                match group_stack.last() {
                    Some(&(open, _)) if matches_close(open, close) => {
                        group_stack.pop();
                    }
                    _ => {
                        // Unbalanced close: keep it as a plain token so the
                        // parser stays total.
                        let idx = arena.len();
                        arena.push(BuildNode {
                            label: leaf_label(token, text),
                            children: Vec::new(),
                        });
                        arena[container].children.push(idx);
                    }
                }
            }
            _ => {
                let idx = arena.len();
                arena.push(BuildNode {
                    label: leaf_label(token, text),
                    children: Vec::new(),
                });
                arena[container].children.push(idx);
            }
        }
    }

    to_tree(&arena, 0)
}

fn to_tree(arena: &[BuildNode], idx: usize) -> SyntaxTree {
    SyntaxTree {
        label: arena[idx].label.clone(),
        children: arena[idx]
            .children
            .iter()
            .map(|&c| to_tree(arena, c))
            .collect(),
    }
}
