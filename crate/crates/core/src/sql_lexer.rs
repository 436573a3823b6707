//! Minimal SQL lexer shared by the statement classifier, the nesting-depth
//! scanner and the step attribution normalizer.
//!
//! The lexer is deliberately shallow. It only needs to know where quoted
//! regions and comments start and end so that parentheses, semicolons and
//! keywords inside them are ignored. All positions are indices into a
//! `&[char]`, never byte offsets.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Whitespace,
    /// `-- ...` up to (not including) the newline.
    LineComment,
    /// `/* ... */`, non-nesting.
    BlockComment { terminated: bool },
    /// `'...'` with `''` as an escaped quote.
    StringLiteral { terminated: bool },
    /// `"..."` with `""` as an escaped quote.
    QuotedIdent { terminated: bool },
    /// Run of alphanumerics, `_` and `$`. Numbers lex as words too.
    Word,
    /// Any other single character, including `(`, `)` and `;`.
    Symbol(char),
}

impl TokenKind {
    /// Whitespace and comments.
    pub fn is_trivia(self) -> bool {
        matches!(
            self,
            TokenKind::Whitespace | TokenKind::LineComment | TokenKind::BlockComment { .. }
        )
    }

    pub fn is_quoted(self) -> bool {
        matches!(
            self,
            TokenKind::StringLiteral { .. } | TokenKind::QuotedIdent { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn text(&self, chars: &[char]) -> String {
        chars[self.start..self.end].iter().collect()
    }
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Splits `chars` into tokens that exactly tile the input.
pub fn tokenize(chars: &[char]) -> Vec<Token> {
    let mut tokens = Vec::new();
    let n = chars.len();
    let mut i = 0;
    while i < n {
        let start = i;
        let c = chars[i];
        let kind = if c.is_whitespace() {
            while i < n && chars[i].is_whitespace() {
                i += 1;
            }
            TokenKind::Whitespace
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
            TokenKind::LineComment
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            let mut terminated = false;
            while i < n {
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    i += 2;
                    terminated = true;
                    break;
                }
                i += 1;
            }
            TokenKind::BlockComment { terminated }
        } else if c == '\'' || c == '"' {
            let terminated = scan_quoted(chars, &mut i, c);
            if c == '\'' {
                TokenKind::StringLiteral { terminated }
            } else {
                TokenKind::QuotedIdent { terminated }
            }
        } else if is_word_char(c) {
            while i < n && is_word_char(chars[i]) {
                i += 1;
            }
            TokenKind::Word
        } else {
            i += 1;
            TokenKind::Symbol(c)
        };
        tokens.push(Token {
            kind,
            start,
            end: i,
        });
    }
    tokens
}

/// Advances `i` past a quoted region opened by `quote` at `chars[*i]`.
fn scan_quoted(chars: &[char], i: &mut usize, quote: char) -> bool {
    let n = chars.len();
    *i += 1;
    while *i < n {
        if chars[*i] == quote {
            if chars.get(*i + 1) == Some(&quote) {
                *i += 2;
                continue;
            }
            *i += 1;
            return true;
        }
        *i += 1;
    }
    false
}
