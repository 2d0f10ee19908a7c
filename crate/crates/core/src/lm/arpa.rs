use std::io::{BufRead, Write};

use rustc_hash::FxHashMap;

use super::{pack, validate_order, Entry, LmError, NGramModel, Vocab, MAX_ORDER};

/// log10 values at or below this are read as impossible events.
const LOG_ZERO: f64 = -99.0;

fn format_log(v: f64) -> String {
    if v == f64::NEG_INFINITY || v <= LOG_ZERO {
        "-99".to_string()
    } else {
        // f32 display is the shortest representation that round-trips at
        // single precision, about 7 significant digits.
        format!("{}", v as f32)
    }
}

fn parse_log(field: &str, line: usize) -> Result<f64, LmError> {
    let v: f64 = field.parse().map_err(|_| LmError::MalformedArpa {
        line,
        reason: format!("`{field}` is not a number"),
    })?;
    Ok(if v <= LOG_ZERO { f64::NEG_INFINITY } else { v })
}

/// Writes the model as ARPA text.
pub fn write_arpa<W: Write>(model: &NGramModel, mut out: W) -> Result<(), LmError> {
    writeln!(out, "\\data\\")?;
    for k in 1..=model.order {
        writeln!(out, "ngram {}={}", k, model.ngram_count(k))?;
    }
    for k in 1..=model.order {
        writeln!(out)?;
        writeln!(out, "\\{k}-grams:")?;
        for (ids, e) in model.entries(k) {
            let tokens: Vec<&str> = ids.iter().map(|&i| model.vocab.token(i)).collect();
            write!(out, "{}\t{}", format_log(e.log10_prob), tokens.join(" "))?;
            if k < model.order && e.log10_backoff != 0.0 {
                write!(out, "\t{}", format_log(e.log10_backoff))?;
            }
            writeln!(out)?;
        }
    }
    writeln!(out)?;
    writeln!(out, "\\end\\")?;
    Ok(())
}

/// Reads an ARPA model. Text before `\data\` is ignored.
pub fn read_arpa<R: BufRead>(source: R) -> Result<NGramModel, LmError> {
    let mut lines = source.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = || -> Result<Option<(usize, String)>, LmError> {
        match lines.next() {
            None => Ok(None),
            Some((n, Ok(l))) => Ok(Some((n, l.trim_end_matches('\r').to_string()))),
            Some((_, Err(e))) => Err(e.into()),
        }
    };
    let malformed = |line: usize, reason: &str| LmError::MalformedArpa {
        line,
        reason: reason.to_string(),
    };

    let mut last_line = 0;
    loop {
        match next_line()? {
            None => return Err(malformed(last_line, "missing \\data\\ header")),
            Some((n, l)) => {
                last_line = n;
                if l.trim() == "\\data\\" {
                    break;
                }
            }
        }
    }

    let mut declared: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    loop {
        let Some((n, l)) = next_line()? else {
            return Err(malformed(last_line, "unexpected end of file in header"));
        };
        last_line = n;
        let t = l.trim();
        if t.is_empty() {
            if declared.is_empty() {
                continue;
            }
            break;
        }
        if t.starts_with('\\') {
            pending = Some((n, l));
            break;
        }
        let spec = t
            .strip_prefix("ngram ")
            .ok_or_else(|| malformed(n, "expected `ngram k=count`"))?;
        let (k, count) = spec
            .split_once('=')
            .ok_or_else(|| malformed(n, "expected `ngram k=count`"))?;
        let k: usize = k.trim().parse().map_err(|_| malformed(n, "bad order"))?;
        let count: usize = count.trim().parse().map_err(|_| malformed(n, "bad count"))?;
        if k != declared.len() + 1 {
            return Err(malformed(n, "n-gram orders must be declared in sequence"));
        }
        if k > MAX_ORDER {
            return Err(LmError::OrderOutOfRange(k));
        }
        declared.push(count);
    }
    let order = declared.len();
    validate_order(order).map_err(|_| malformed(last_line, "no n-gram counts declared"))?;

    let mut vocab = Vocab::new();
    let mut tables: Vec<FxHashMap<u128, Entry>> = vec![FxHashMap::default(); order];
    let mut current: Option<usize> = None;
    let mut seen_sections: Vec<usize> = Vec::new();
    let mut ended = false;

    let check_section = |k: usize, line: usize, tables: &[FxHashMap<u128, Entry>]| {
        if tables[k - 1].len() != declared[k - 1] {
            Err(LmError::MalformedArpa {
                line,
                reason: format!(
                    "header declares {} {k}-grams but section has {}",
                    declared[k - 1],
                    tables[k - 1].len()
                ),
            })
        } else {
            Ok(())
        }
    };

    while let Some((n, l)) = match pending.take() {
        Some(p) => Some(p),
        None => next_line()?,
    } {
        last_line = n;
        let t = l.trim();
        if t.is_empty() {
            continue;
        }
        if t == "\\end\\" {
            if let Some(k) = current {
                check_section(k, n, &tables)?;
            }
            ended = true;
            break;
        }
        if let Some(rest) = t.strip_prefix('\\') {
            let k: usize = rest
                .strip_suffix("-grams:")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(n, "expected `\\k-grams:` section header"))?;
            if let Some(prev) = current {
                check_section(prev, n, &tables)?;
            }
            if k == 0 || k > order {
                return Err(LmError::OrderMismatch { declared: order, found: k });
            }
            if seen_sections.contains(&k) {
                return Err(malformed(n, "duplicate section"));
            }
            seen_sections.push(k);
            current = Some(k);
            continue;
        }
        let k = current.ok_or_else(|| malformed(n, "n-gram entry outside a section"))?;
        let fields: Vec<&str> = t.split_whitespace().collect();
        let with_backoff = match fields.len() {
            x if x == k + 1 => false,
            x if x == k + 2 => true,
            _ => return Err(malformed(n, &format!("expected {k} tokens"))),
        };
        let log10_prob = parse_log(fields[0], n)?;
        let log10_backoff = if with_backoff {
            parse_log(fields[k + 1], n)?
        } else {
            0.0
        };
        let mut ids = Vec::with_capacity(k);
        for token in &fields[1..=k] {
            ids.push(vocab.intern(token)?);
        }
        if tables[k - 1]
            .insert(pack(&ids), Entry { log10_prob, log10_backoff })
            .is_some()
        {
            return Err(malformed(n, "duplicate n-gram"));
        }
        if tables[k - 1].len() > declared[k - 1] {
            return Err(malformed(n, &format!("more {k}-grams than the header declares")));
        }
    }
    if !ended {
        return Err(malformed(last_line, "missing \\end\\"));
    }
    if seen_sections.len() != order {
        let found = (1..=order).find(|k| !seen_sections.contains(k)).unwrap_or(order);
        return Err(LmError::OrderMismatch {
            declared: order,
            found: found - 1,
        });
    }

    Ok(NGramModel {
        order,
        smoothing: None,
        vocab,
        tables,
    })
}
