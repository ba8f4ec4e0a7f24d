//! Recursive-descent parser for the workflow DSL.
//!
//! Total over arbitrary input: any byte sequence yields either a [`Program`]
//! or a [`ParseError`] carrying byte offset, line/column, and an
//! expected-token description. Nesting depth is bounded so that adversarial
//! input cannot overflow the stack.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{
    ApiName, CallExpr, CmpOp, CondExpr, JsonObject, JsonValue, Literal, Program, Statement,
};

const MAX_DEPTH: usize = 128;

/// Syntax error with source location.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParseError {
    pub offset: usize,
    pub line: u32,
    pub col: u32,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parse error at line {} col {} (offset {}): expected {}, found {}",
            self.line, self.col, self.offset, self.expected, self.found
        )
    }
}

impl core::error::Error for ParseError {}

/// Parses DSL source text into a [`Program`].
pub fn parse(source: &str) -> Result<Program, ParseError> {
    let tokens = lex(source)?;
    let mut parser = Parser {
        source,
        tokens,
        pos: 0,
    };
    let statements = parser.statements_until_eof()?;
    if statements.is_empty() {
        return Err(parser.error_at_eof("at least one statement"));
    }
    Ok(Program { statements })
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Ident(String),
    Number(f64),
    Str(String),
    Assign,
    Dot,
    Semi,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Colon,
    Comma,
    Cmp(CmpOp),
    Eof,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Number(n) => format!("number `{n}`"),
            TokenKind::Str(_) => "string literal".to_owned(),
            TokenKind::Assign => "`=`".to_owned(),
            TokenKind::Dot => "`.`".to_owned(),
            TokenKind::Semi => "`;`".to_owned(),
            TokenKind::LParen => "`(`".to_owned(),
            TokenKind::RParen => "`)`".to_owned(),
            TokenKind::LBrace => "`{`".to_owned(),
            TokenKind::RBrace => "`}`".to_owned(),
            TokenKind::LBracket => "`[`".to_owned(),
            TokenKind::RBracket => "`]`".to_owned(),
            TokenKind::Colon => "`:`".to_owned(),
            TokenKind::Comma => "`,`".to_owned(),
            TokenKind::Cmp(op) => format!("`{}`", op.as_str()),
            TokenKind::Eof => "end of input".to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn line_col(source: &str, offset: usize) -> (u32, u32) {
    let mut line = 1u32;
    let mut col = 1u32;
    for (i, c) in source.char_indices() {
        if i >= offset {
            break;
        }
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

fn err(source: &str, offset: usize, expected: &str, found: &str) -> ParseError {
    let (line, col) = line_col(source, offset);
    ParseError {
        offset,
        line,
        col,
        expected: expected.to_owned(),
        found: found.to_owned(),
    }
}

fn lex(source: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'=' if bytes.get(i + 1) == Some(&b'=') => {
                tokens.push(Token { kind: TokenKind::Cmp(CmpOp::Eq), offset: i });
                i += 2;
            }
            b'=' => {
                tokens.push(Token { kind: TokenKind::Assign, offset: i });
                i += 1;
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                tokens.push(Token { kind: TokenKind::Cmp(CmpOp::Ne), offset: i });
                i += 2;
            }
            b'<' if bytes.get(i + 1) == Some(&b'=') => {
                tokens.push(Token { kind: TokenKind::Cmp(CmpOp::Le), offset: i });
                i += 2;
            }
            b'<' => {
                tokens.push(Token { kind: TokenKind::Cmp(CmpOp::Lt), offset: i });
                i += 1;
            }
            b'>' if bytes.get(i + 1) == Some(&b'=') => {
                tokens.push(Token { kind: TokenKind::Cmp(CmpOp::Ge), offset: i });
                i += 2;
            }
            b'>' => {
                tokens.push(Token { kind: TokenKind::Cmp(CmpOp::Gt), offset: i });
                i += 1;
            }
            b'.' => {
                tokens.push(Token { kind: TokenKind::Dot, offset: i });
                i += 1;
            }
            b';' => {
                tokens.push(Token { kind: TokenKind::Semi, offset: i });
                i += 1;
            }
            b'(' => {
                tokens.push(Token { kind: TokenKind::LParen, offset: i });
                i += 1;
            }
            b')' => {
                tokens.push(Token { kind: TokenKind::RParen, offset: i });
                i += 1;
            }
            b'{' => {
                tokens.push(Token { kind: TokenKind::LBrace, offset: i });
                i += 1;
            }
            b'}' => {
                tokens.push(Token { kind: TokenKind::RBrace, offset: i });
                i += 1;
            }
            b'[' => {
                tokens.push(Token { kind: TokenKind::LBracket, offset: i });
                i += 1;
            }
            b']' => {
                tokens.push(Token { kind: TokenKind::RBracket, offset: i });
                i += 1;
            }
            b':' => {
                tokens.push(Token { kind: TokenKind::Colon, offset: i });
                i += 1;
            }
            b',' => {
                tokens.push(Token { kind: TokenKind::Comma, offset: i });
                i += 1;
            }
            b'"' => {
                let (s, next) = lex_string(source, i)?;
                tokens.push(Token { kind: TokenKind::Str(s), offset: i });
                i = next;
            }
            b'-' | b'0'..=b'9' => {
                let (n, next) = lex_number(source, i)?;
                tokens.push(Token { kind: TokenKind::Number(n), offset: i });
                i = next;
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i], b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(source[start..i].to_owned()),
                    offset: start,
                });
            }
            _ => {
                // Show the whole char, not a stray UTF-8 byte.
                let found = source[i..].chars().next().map_or_else(
                    || format!("byte 0x{b:02x}"),
                    |c| format!("`{}`", c.escape_default()),
                );
                return Err(err(source, i, "a DSL token", &found));
            }
        }
    }
    tokens.push(Token { kind: TokenKind::Eof, offset: bytes.len() });
    Ok(tokens)
}

fn lex_string(source: &str, start: usize) -> Result<(String, usize), ParseError> {
    let bytes = source.as_bytes();
    let mut out = String::new();
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => return Ok((out, i + 1)),
            b'\\' => {
                let esc = bytes.get(i + 1).copied();
                match esc {
                    Some(b'"') => out.push('"'),
                    Some(b'\\') => out.push('\\'),
                    Some(b'/') => out.push('/'),
                    Some(b'n') => out.push('\n'),
                    Some(b'r') => out.push('\r'),
                    Some(b't') => out.push('\t'),
                    Some(b'b') => out.push('\u{0008}'),
                    Some(b'f') => out.push('\u{000c}'),
                    Some(b'u') => {
                        let hex = source.get(i + 2..i + 6).ok_or_else(|| {
                            err(source, i, "four hex digits after \\u", "end of input")
                        })?;
                        let code = u32::from_str_radix(hex, 16).map_err(|_| {
                            err(source, i + 2, "four hex digits after \\u", &format!("`{hex}`"))
                        })?;
                        // Surrogates are not paired; map them to the
                        // replacement char rather than failing.
                        out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                        i += 6;
                        continue;
                    }
                    _ => return Err(err(source, i, "a valid escape sequence", "`\\`")),
                }
                i += 2;
            }
            0x00..=0x1f => {
                return Err(err(source, i, "`\"` closing the string", "control character"))
            }
            _ => {
                let c = source[i..].chars().next().unwrap();
                out.push(c);
                i += c.len_utf8();
            }
        }
    }
    Err(err(source, start, "`\"` closing the string", "end of input"))
}

fn lex_number(source: &str, start: usize) -> Result<(f64, usize), ParseError> {
    let bytes = source.as_bytes();
    let mut i = start;
    if bytes.get(i) == Some(&b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == digits_start {
        return Err(err(source, i, "a digit", "non-digit"));
    }
    if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(bytes.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        if bytes.get(j).is_some_and(u8::is_ascii_digit) {
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let text = &source[start..i];
    let n: f64 = text
        .parse()
        .map_err(|_| err(source, start, "a number", &format!("`{text}`")))?;
    if !n.is_finite() {
        return Err(err(source, start, "a representable number", &format!("`{text}`")));
    }
    Ok((n, i))
}

struct Parser<'a> {
    source: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn peek_offset(&self) -> usize {
        self.tokens[self.pos].offset
    }

    fn advance(&mut self) -> TokenKind {
        let tok = self.tokens[self.pos].kind.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error_here(&self, expected: &str) -> ParseError {
        err(self.source, self.peek_offset(), expected, &self.peek().describe())
    }

    fn error_at_eof(&self, expected: &str) -> ParseError {
        err(self.source, self.source.len(), expected, "end of input")
    }

    fn expect(&mut self, kind: &TokenKind, expected: &str) -> Result<(), ParseError> {
        if self.peek() == kind {
            self.advance();
            Ok(())
        } else {
            Err(self.error_here(expected))
        }
    }

    fn expect_ident(&mut self, expected: &str) -> Result<String, ParseError> {
        match self.peek() {
            TokenKind::Ident(_) => match self.advance() {
                TokenKind::Ident(s) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.error_here(expected)),
        }
    }

    fn statements_until_eof(&mut self) -> Result<Vec<Statement>, ParseError> {
        let mut statements = Vec::new();
        while *self.peek() != TokenKind::Eof {
            statements.push(self.statement(0)?);
        }
        Ok(statements)
    }

    fn statement(&mut self, depth: usize) -> Result<Statement, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error_here("shallower nesting"));
        }
        match self.peek() {
            TokenKind::Ident(name) if name == "if" => self.conditional(depth),
            TokenKind::Ident(_) => self.assignment(depth),
            _ => Err(self.error_here("an assignment or `if` statement")),
        }
    }

    fn assignment(&mut self, depth: usize) -> Result<Statement, ParseError> {
        let target = self.expect_ident("an assignment target identifier")?;
        self.expect(&TokenKind::Assign, "`=`")?;
        let awaited = matches!(self.peek(), TokenKind::Ident(kw) if kw == "await");
        if awaited {
            self.advance();
        }
        let call = self.call_expr(depth)?;
        self.expect(&TokenKind::Semi, "`;` after the call")?;
        Ok(Statement::Assignment {
            target,
            awaited,
            call,
        })
    }

    fn call_expr(&mut self, depth: usize) -> Result<CallExpr, ParseError> {
        let name_offset = self.peek_offset();
        let namespace = self.expect_ident("an API namespace")?;
        self.expect(&TokenKind::Dot, "`.` in the API name")?;
        let function = self.expect_ident("an API function name")?;
        let api_name = ApiName::new(&namespace, &function)
            .map_err(|_| err(self.source, name_offset, "a namespaced API name", "malformed name"))?;
        self.expect(&TokenKind::LParen, "`(`")?;
        let argument = match self.json_value(depth + 1)? {
            JsonValue::Object(obj) => obj,
            _ => return Err(self.error_here("a JSON object argument")),
        };
        self.expect(&TokenKind::RParen, "`)` closing the call")?;
        Ok(CallExpr { api_name, argument })
    }

    fn conditional(&mut self, depth: usize) -> Result<Statement, ParseError> {
        self.advance(); // `if`
        self.expect(&TokenKind::LParen, "`(` after `if`")?;
        let condition = self.cond_expr()?;
        self.expect(&TokenKind::RParen, "`)` closing the condition")?;
        let then_branch = self.block(depth + 1)?;
        let else_branch = if matches!(self.peek(), TokenKind::Ident(kw) if kw == "else") {
            self.advance();
            Some(self.block(depth + 1)?)
        } else {
            None
        };
        // Tolerate a trailing `;` after the block.
        if *self.peek() == TokenKind::Semi {
            self.advance();
        }
        Ok(Statement::Conditional {
            condition,
            then_branch,
            else_branch,
        })
    }

    fn block(&mut self, depth: usize) -> Result<Vec<Statement>, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error_here("shallower nesting"));
        }
        self.expect(&TokenKind::LBrace, "`{` opening a block")?;
        let mut statements = Vec::new();
        while *self.peek() != TokenKind::RBrace {
            if *self.peek() == TokenKind::Eof {
                return Err(self.error_at_eof("`}` closing the block"));
            }
            statements.push(self.statement(depth)?);
        }
        self.advance(); // `}`
        Ok(statements)
    }

    fn cond_expr(&mut self) -> Result<CondExpr, ParseError> {
        let mut path = Vec::new();
        path.push(self.member_segment()?);
        while *self.peek() == TokenKind::Dot {
            self.advance();
            path.push(self.member_segment()?);
        }
        match *self.peek() {
            TokenKind::Cmp(op) => {
                self.advance();
                let right = self.literal()?;
                Ok(CondExpr::Comparison { left: path, op, right })
            }
            _ => Ok(CondExpr::Truthy { path }),
        }
    }

    fn member_segment(&mut self) -> Result<String, ParseError> {
        let seg = self.expect_ident("a member-path identifier")?;
        if seg == "if" || seg == "else" || seg == "await" {
            return Err(self.error_here("a member-path identifier"));
        }
        Ok(seg)
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        match self.peek().clone() {
            TokenKind::Number(n) => {
                self.advance();
                Ok(Literal::Number(n))
            }
            TokenKind::Str(s) => {
                self.advance();
                Ok(Literal::String(s))
            }
            TokenKind::Ident(kw) if kw == "true" => {
                self.advance();
                Ok(Literal::Bool(true))
            }
            TokenKind::Ident(kw) if kw == "false" => {
                self.advance();
                Ok(Literal::Bool(false))
            }
            TokenKind::Ident(kw) if kw == "null" => {
                self.advance();
                Ok(Literal::Null)
            }
            _ => Err(self.error_here("a literal")),
        }
    }

    fn json_value(&mut self, depth: usize) -> Result<JsonValue, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error_here("shallower JSON nesting"));
        }
        match self.peek().clone() {
            TokenKind::LBrace => self.json_object(depth).map(JsonValue::Object),
            TokenKind::LBracket => self.json_array(depth),
            TokenKind::Str(s) => {
                self.advance();
                Ok(JsonValue::String(s))
            }
            TokenKind::Number(n) => {
                self.advance();
                Ok(JsonValue::Number(n))
            }
            TokenKind::Ident(kw) if kw == "true" => {
                self.advance();
                Ok(JsonValue::Bool(true))
            }
            TokenKind::Ident(kw) if kw == "false" => {
                self.advance();
                Ok(JsonValue::Bool(false))
            }
            TokenKind::Ident(kw) if kw == "null" => {
                self.advance();
                Ok(JsonValue::Null)
            }
            _ => Err(self.error_here("a JSON value")),
        }
    }

    fn json_object(&mut self, depth: usize) -> Result<JsonObject, ParseError> {
        self.expect(&TokenKind::LBrace, "`{`")?;
        let mut obj = JsonObject::new();
        if *self.peek() == TokenKind::RBrace {
            self.advance();
            return Ok(obj);
        }
        loop {
            let key_offset = self.peek_offset();
            let key = match self.peek().clone() {
                TokenKind::Str(s) => {
                    self.advance();
                    s
                }
                _ => return Err(self.error_here("a double-quoted object key")),
            };
            self.expect(&TokenKind::Colon, "`:` after the object key")?;
            let value = self.json_value(depth + 1)?;
            if !obj.insert(key.clone(), value) {
                return Err(err(
                    self.source,
                    key_offset,
                    "a unique object key",
                    &format!("duplicate key `{key}`"),
                ));
            }
            match self.peek() {
                TokenKind::Comma => {
                    self.advance();
                }
                TokenKind::RBrace => {
                    self.advance();
                    return Ok(obj);
                }
                _ => return Err(self.error_here("`,` or `}` in the object")),
            }
        }
    }

    fn json_array(&mut self, depth: usize) -> Result<JsonValue, ParseError> {
        self.expect(&TokenKind::LBracket, "`[`")?;
        let mut items = Vec::new();
        if *self.peek() == TokenKind::RBracket {
            self.advance();
            return Ok(JsonValue::Array(items));
        }
        loop {
            items.push(self.json_value(depth + 1)?);
            match self.peek() {
                TokenKind::Comma => {
                    self.advance();
                }
                TokenKind::RBracket => {
                    self.advance();
                    return Ok(JsonValue::Array(items));
                }
                _ => return Err(self.error_here("`,` or `]` in the array")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    const SAMPLE_TRUTH: &str = "triggerOutputs = await shared_microsoftforms.CreateFormWebhook({}); outputs_shared_teams_PostMessageToConversation = shared_teams.PostMessageToConversation({ \"poster\": \"User\" });";

    #[test]
    fn parses_two_statement_flow() {
        let program = parse(SAMPLE_TRUTH).unwrap();
        assert_eq!(program.statements.len(), 2);
        let actions: Vec<_> = program
            .extract_actions()
            .iter()
            .map(|a| a.to_string())
            .collect();
        assert_eq!(
            actions,
            [
                "shared_microsoftforms.CreateFormWebhook",
                "shared_teams.PostMessageToConversation"
            ]
        );
    }

    #[test]
    fn empty_input_is_an_error() {
        let e = parse("").unwrap_err();
        assert_eq!(e.offset, 0);
    }

    #[test]
    fn unbalanced_object_reports_location() {
        let e = parse("x = shared_a.B({)").unwrap_err();
        assert_eq!(e.offset, 16);
        assert!(e.expected.contains("object key"), "{e}");
    }

    #[test]
    fn duplicate_object_keys_rejected() {
        let e = parse("x = a.B({\"k\": 1, \"k\": 2});").unwrap_err();
        assert!(e.found.contains("duplicate key"), "{e}");
    }

    #[test]
    fn missing_semicolon_rejected() {
        assert!(parse("x = a.B({})").is_err());
    }

    #[test]
    fn conditional_with_else_round_trips() {
        let src = "if (out.status == \"ok\") {\n  x = a.B({});\n} else {\n  y = c.D({\"n\": 1.5});\n}";
        let program = parse(src).unwrap();
        assert_eq!(program.serialize(), src);
        match &program.statements[0] {
            Statement::Conditional { condition, .. } => {
                assert_eq!(
                    *condition,
                    CondExpr::Comparison {
                        left: vec!["out".to_string(), "status".to_string()],
                        op: CmpOp::Eq,
                        right: Literal::String("ok".to_string()),
                    }
                );
            }
            other => panic!("expected conditional, got {other:?}"),
        }
    }

    #[test]
    fn truthy_condition_and_empty_branch() {
        let program = parse("if (flag) {}").unwrap();
        assert!(program.extract_actions().is_empty());
    }

    #[test]
    fn serialize_is_a_round_trip_fixpoint() {
        let program = parse(SAMPLE_TRUTH).unwrap();
        let canonical = program.serialize();
        assert_eq!(parse(&canonical).unwrap(), program);
    }

    #[test]
    fn deep_nesting_is_rejected_not_crashed() {
        let mut src = String::from("x = a.B(");
        for _ in 0..5000 {
            src.push_str("{\"k\": ");
        }
        assert!(parse(&src).is_err());
    }

    #[test]
    fn string_escapes_round_trip() {
        let src = "x = a.B({\"k\": \"line\\nbreak \\\"q\\\" \\u0041\"});";
        let program = parse(src).unwrap();
        assert_eq!(parse(&program.serialize()).unwrap(), program);
    }
}
