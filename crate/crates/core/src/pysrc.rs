//! Lightweight, bracket- and string-aware scanning of subject-language source
//! text. Used for corpus test suites, where only assertion structure matters
//! and a full parse would need the subject runtime.

/// Returns the byte offset just past the string literal starting at `i`
/// (which must point at a quote character).
fn skip_string(b: &[u8], i: usize) -> usize {
    let q = b[i];
    let triple = b.len() >= i + 3 && b[i + 1] == q && b[i + 2] == q;
    let mut j = if triple { i + 3 } else { i + 1 };
    while j < b.len() {
        let c = b[j];
        if c == b'\\' {
            j += 2;
            continue;
        }
        if triple {
            if c == q && j + 2 < b.len() && b[j + 1] == q && b[j + 2] == q {
                return j + 3;
            }
        } else if c == q || c == b'\n' {
            return j + 1;
        }
        j += 1;
    }
    b.len()
}

/// Walks `text`, calling `visit(offset, byte, depth)` for every byte outside
/// string literals and comments. `depth` counts open brackets before the byte.
fn scan(text: &str, mut visit: impl FnMut(usize, u8, usize) -> bool) {
    let b = text.as_bytes();
    let mut depth = 0usize;
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        match c {
            b'\'' | b'"' => {
                i = skip_string(b, i);
                continue;
            }
            b'#' => {
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            _ => {}
        }
        if matches!(c, b')' | b']' | b'}') {
            depth = depth.saturating_sub(1);
        }
        if !visit(i, c, depth) {
            return;
        }
        if matches!(c, b'(' | b'[' | b'{') {
            depth += 1;
        }
        i += 1;
    }
}

/// Splits source into logical lines: physical lines joined while brackets are
/// open, a backslash continues the line, or a triple-quoted string spans
/// lines. Returns `(first physical line number, text)` pairs, skipping blank
/// and comment-only lines.
pub fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut line_no = 1usize;
    let mut start_line = 1usize;
    let mut i = 0usize;
    let push = |from: usize, to: usize, at: usize, out: &mut Vec<(usize, String)>| {
        let chunk = text[from..to].trim_end();
        let trimmed = chunk.trim_start();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            out.push((at, chunk.to_string()));
        }
    };
    while i < b.len() {
        let c = b[i];
        match c {
            b'\'' | b'"' => {
                let end = skip_string(b, i);
                line_no += text[i..end].matches('\n').count();
                i = end;
                continue;
            }
            b'#' => {
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth = depth.saturating_sub(1),
            b'\\' if b.get(i + 1) == Some(&b'\n') => {
                line_no += 1;
                i += 2;
                continue;
            }
            b'\n' => {
                line_no += 1;
                if depth == 0 {
                    push(start, i, start_line, &mut out);
                    start = i + 1;
                    start_line = line_no;
                }
            }
            _ => {}
        }
        i += 1;
    }
    if start < b.len() {
        push(start, b.len(), start_line, &mut out);
    }
    out
}

/// Byte offsets of top-level occurrences of `sep` (outside brackets, strings).
pub fn top_level_positions(text: &str, sep: &str) -> Vec<usize> {
    let sb = sep.as_bytes();
    let tb = text.as_bytes();
    let mut hits = Vec::new();
    scan(text, |i, _, depth| {
        if depth == 0 && tb[i..].starts_with(sb) {
            hits.push(i);
        }
        true
    });
    hits
}

/// Splits on top-level commas, trimming each piece; an empty text yields no
/// pieces.
pub fn split_top_level_commas(text: &str) -> Vec<String> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    let mut pieces = Vec::new();
    let mut last = 0;
    for pos in top_level_positions(text, ",") {
        pieces.push(text[last..pos].trim().to_string());
        last = pos + 1;
    }
    let tail = text[last..].trim();
    if !tail.is_empty() {
        pieces.push(tail.to_string());
    }
    pieces
}

/// Structure of an `assert <lhs> == <rhs>[, msg]` statement. `rhs_span` is the
/// byte range of the right operand within the original assertion text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EqualityAssertion {
    pub lhs: String,
    pub rhs: String,
    pub rhs_span: (usize, usize),
}

/// Text following the `assert` keyword, or `None` for non-assertions.
pub fn assertion_body(text: &str) -> Option<&str> {
    let t = text.trim_start();
    let rest = t.strip_prefix("assert")?;
    if rest.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
        return None;
    }
    Some(rest)
}

/// Splits an assertion at its single top-level `==`.
pub fn split_equality(assertion: &str) -> Option<EqualityAssertion> {
    let body = assertion_body(assertion)?;
    let body_off = assertion.len() - body.len();
    // drop an assertion message
    let expr_end = top_level_positions(body, ",").first().copied().unwrap_or(body.len());
    let (inner_off, expr) = strip_parens(&body[..expr_end]);
    let eqs: Vec<usize> = top_level_positions(expr, "==")
        .into_iter()
        .filter(|&p| {
            let before = p.checked_sub(1).map(|q| expr.as_bytes()[q]);
            !matches!(before, Some(b'=' | b'!' | b'<' | b'>')) && expr.as_bytes().get(p + 2) != Some(&b'=')
        })
        .collect();
    if eqs.len() != 1 {
        return None;
    }
    let p = eqs[0];
    let lhs = expr[..p].trim();
    let rhs_raw = &expr[p + 2..];
    let rhs = rhs_raw.trim();
    if lhs.is_empty() || rhs.is_empty() {
        return None;
    }
    let lead = rhs_raw.len() - rhs_raw.trim_start().len();
    let start = body_off + inner_off + p + 2 + lead;
    Some(EqualityAssertion {
        lhs: strip_parens(lhs).1.to_string(),
        rhs: rhs.to_string(),
        rhs_span: (start, start + rhs.len()),
    })
}

/// Removes one pair of parentheses enclosing the whole (trimmed) text.
/// Returns the byte offset of the result within `s`.
fn strip_parens(s: &str) -> (usize, &str) {
    let lead = s.len() - s.trim_start().len();
    let t = s.trim();
    if t.starts_with('(') && t.ends_with(')') {
        let inner = &t[1..t.len() - 1];
        let mut ok = true;
        let mut depth = 0i32;
        scan(inner, |_, c, _| {
            match c {
                b'(' => depth += 1,
                b')' => {
                    depth -= 1;
                    if depth < 0 {
                        ok = false;
                        return false;
                    }
                }
                _ => {}
            }
            true
        });
        if ok {
            let inner_lead = inner.len() - inner.trim_start().len();
            return (lead + 1 + inner_lead, inner.trim());
        }
    }
    (lead, t)
}

/// Finds the first call `name(...)` in `text` (word-bounded, outside strings)
/// and returns its byte span including the closing parenthesis.
pub fn find_call(text: &str, name: &str) -> Option<(usize, usize)> {
    let b = text.as_bytes();
    let nb = name.as_bytes();
    let mut found = None;
    scan(text, |i, _, _| {
        if !b[i..].starts_with(nb) {
            return true;
        }
        let prev_ok = i == 0 || !(b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_' || b[i - 1] == b'.');
        let mut j = i + nb.len();
        while j < b.len() && b[j] == b' ' {
            j += 1;
        }
        if prev_ok && b.get(j) == Some(&b'(') {
            found = Some((i, j));
            return false;
        }
        true
    });
    let (start, open) = found?;
    let mut close = None;
    scan(&text[open..], |k, c, depth| {
        if c == b')' && depth == 0 {
            close = Some(open + k + 1);
            return false;
        }
        true
    });
    close.map(|end| (start, end))
}

/// Arguments of a call expression `callee(a, b, ...)`.
pub fn call_arguments(call: &str) -> Vec<String> {
    match (call.find('('), call.rfind(')')) {
        (Some(open), Some(close)) if close > open => split_top_level_commas(&call[open + 1..close]),
        _ => Vec::new(),
    }
}

/// Replaces every word-bounded occurrence of identifier `from` (outside
/// strings) with `to`.
pub fn rename_identifier(text: &str, from: &str, to: &str) -> String {
    let b = text.as_bytes();
    let fb = from.as_bytes();
    let mut hits = Vec::new();
    scan(text, |i, _, _| {
        if b[i..].starts_with(fb) {
            let prev_ok = i == 0 || !(b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_' || b[i - 1] == b'.');
            let next_ok = b
                .get(i + fb.len())
                .is_none_or(|c| !(c.is_ascii_alphanumeric() || *c == b'_'));
            if prev_ok && next_ok {
                hits.push(i);
            }
        }
        true
    });
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for h in hits {
        out.push_str(&text[last..h]);
        out.push_str(to);
        last = h + from.len();
    }
    out.push_str(&text[last..]);
    out
}
