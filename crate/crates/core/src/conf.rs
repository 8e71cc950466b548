//! Line-oriented `KEY=value` / `KEY="value"` syntax shared by recipes,
//! make.conf, and the env/ files. `#` starts a comment outside quoted
//! values; `${VAR}` expansion is applied where the caller asks for it.

/// Removes a trailing `#` comment, honoring double quotes, and trims.
pub fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return line[..i].trim(),
            _ => {}
        }
    }
    line.trim()
}

/// Splits `KEY=value` or `KEY="value"`. Returns `Ok(None)` for blank
/// lines; `Err` carries a reason for the caller to wrap with file/line.
pub fn parse_kv(line: &str) -> Result<Option<(String, String)>, String> {
    let line = strip_comment(line);
    if line.is_empty() {
        return Ok(None);
    }
    let eq = line
        .find('=')
        .ok_or_else(|| format!("expected KEY=value, got `{line}`"))?;
    let key = line[..eq].trim();
    if key.is_empty()
        || !key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
    {
        return Err(format!("illegal key `{key}`"));
    }
    let raw = line[eq + 1..].trim();
    let value = if let Some(stripped) = raw.strip_prefix('"') {
        match stripped.strip_suffix('"') {
            Some(inner) if !inner.contains('"') => inner.to_string(),
            _ => return Err(format!("unterminated or nested quotes in value of {key}")),
        }
    } else if raw.contains('"') {
        return Err(format!("stray quote in value of {key}"));
    } else {
        raw.to_string()
    };
    Ok(Some((key.to_string(), value)))
}

/// Expands `${VAR}` references via `lookup`; undefined variables expand
/// to the empty string. Anything else passes through untouched.
pub fn expand(value: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        match rest[start + 2..].find('}') {
            Some(end) => {
                let name = &rest[start + 2..start + 2 + end];
                if let Some(v) = lookup(name) {
                    out.push_str(&v);
                }
                rest = &rest[start + 2 + end + 1..];
            }
            None => {
                // No closing brace: keep the text literally.
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
