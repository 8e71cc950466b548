//! Line-based unified diff generation (LCS core). Serves as the
//! independent oracle for patch round-trip tests: it shares no code with
//! the patch applier under test.
//!
//! Inputs must be empty or newline-terminated; newline-at-EOF edge cases
//! are covered by handwritten fixtures instead.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Keep,
    Del,
    Add,
}

fn split_lines(text: &str) -> Vec<&str> {
    assert!(
        text.is_empty() || text.ends_with('\n'),
        "diffgen requires newline-terminated input"
    );
    if text.is_empty() {
        Vec::new()
    } else {
        text[..text.len() - 1].split('\n').collect()
    }
}

/// Classic LCS edit script over lines.
fn edit_script<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<(Op, &'a str)> {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut ops = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            ops.push((Op::Keep, a[i]));
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            ops.push((Op::Del, a[i]));
            i += 1;
        } else {
            ops.push((Op::Add, b[j]));
            j += 1;
        }
    }
    while i < n {
        ops.push((Op::Del, a[i]));
        i += 1;
    }
    while j < m {
        ops.push((Op::Add, b[j]));
        j += 1;
    }
    ops
}

/// Renders a unified diff of `old` -> `new`, or None when they are equal.
pub fn unified_diff(
    old: &str,
    new: &str,
    old_path: &str,
    new_path: &str,
    context: usize,
) -> Option<String> {
    let a = split_lines(old);
    let b = split_lines(new);
    if a == b {
        return None;
    }
    let ops = edit_script(&a, &b);

    // Hunk boundaries as op-index ranges: change clusters padded with up
    // to `context` Keep lines, clusters separated by <= 2*context Keeps
    // merged.
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < ops.len() {
        if ops[i].0 == Op::Keep {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        let mut j = i + 1;
        let mut keeps = 0;
        while j < ops.len() {
            if ops[j].0 == Op::Keep {
                keeps += 1;
                if keeps > 2 * context {
                    break;
                }
            } else {
                end = j;
                keeps = 0;
            }
            j += 1;
        }
        let mut hs = start;
        let mut c = 0;
        while hs > 0 && c < context && ops[hs - 1].0 == Op::Keep {
            hs -= 1;
            c += 1;
        }
        let mut he = end;
        c = 0;
        while he + 1 < ops.len() && c < context && ops[he + 1].0 == Op::Keep {
            he += 1;
            c += 1;
        }
        ranges.push((hs, he));
        i = end + 1;
    }

    // Old/new line numbers consumed before each op index.
    let mut old_before = vec![0usize; ops.len() + 1];
    let mut new_before = vec![0usize; ops.len() + 1];
    for (idx, (op, _)) in ops.iter().enumerate() {
        old_before[idx + 1] = old_before[idx] + usize::from(*op != Op::Add);
        new_before[idx + 1] = new_before[idx] + usize::from(*op != Op::Del);
    }

    let mut out = format!("--- {old_path}\n+++ {new_path}\n");
    for (hs, he) in ranges {
        let old_count = old_before[he + 1] - old_before[hs];
        let new_count = new_before[he + 1] - new_before[hs];
        let old_start = if old_count == 0 {
            old_before[hs]
        } else {
            old_before[hs] + 1
        };
        let new_start = if new_count == 0 {
            new_before[hs]
        } else {
            new_before[hs] + 1
        };
        out.push_str(&format!(
            "@@ -{old_start},{old_count} +{new_start},{new_count} @@\n"
        ));
        for (op, text) in &ops[hs..=he] {
            let prefix = match op {
                Op::Keep => ' ',
                Op::Del => '-',
                Op::Add => '+',
            };
            out.push(prefix);
            out.push_str(text);
            out.push('\n');
        }
    }
    Some(out)
}
