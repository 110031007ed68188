//! Line-oriented restriction files. Indices in files are 1-based.
//!
//! ```text
//! zero A0inv i j        zero A0 i j        zero A_l lag i j
//! zero CIRinf i j       zero IR h i j
//! sign IR h i j +|-     sign IR h1..h2 i j +|-     sign A0 i j +|-
//! normalize i j +|-     interest j         pool i..k
//! order p1 .. pn        (eigenvalue position of each shock)
//! ```

use std::collections::HashSet;
use std::path::Path;

use hsvar_core::restrictions::{
    RestrictionSpec, SignNormalization, SignRestriction, SignTarget, ZeroRestriction, ZeroTarget,
};

use crate::error::{CliError, CliResult};

pub const OIL_MARKET: &str = "oil-market";

fn syntax(line: usize, message: impl Into<String>) -> CliError {
    CliError::Syntax { line, message: message.into() }
}

fn index(tok: &str, n: usize, line: usize) -> CliResult<usize> {
    match tok.parse::<usize>() {
        Ok(v) if (1..=n).contains(&v) => Ok(v - 1),
        _ => Err(syntax(line, format!("index {tok:?} must be in 1..={n}"))),
    }
}

fn count(tok: &str, line: usize) -> CliResult<usize> {
    tok.parse::<usize>().map_err(|_| syntax(line, format!("expected a non-negative integer, got {tok:?}")))
}

fn range(tok: &str, line: usize) -> CliResult<(usize, usize)> {
    let (a, b) = tok.split_once("..").ok_or_else(|| syntax(line, format!("expected a range a..b, got {tok:?}")))?;
    let (a, b) = (count(a, line)?, count(b, line)?);
    if a > b {
        return Err(syntax(line, format!("empty range {tok}")));
    }
    Ok((a, b))
}

fn sign(tok: &str, line: usize) -> CliResult<bool> {
    match tok {
        "+" => Ok(true),
        "-" => Ok(false),
        _ => Err(syntax(line, format!("expected + or -, got {tok:?}"))),
    }
}

fn arity(toks: &[&str], want: usize, line: usize) -> CliResult<()> {
    if toks.len() != want {
        return Err(syntax(line, format!("expected {} fields, got {}", want, toks.len())));
    }
    Ok(())
}

/// Keys identifying a restriction regardless of its sign, used to detect
/// duplicates.
#[derive(Hash, PartialEq, Eq)]
enum Key {
    Zero(ZeroTarget, usize, usize),
    Sign(SignTarget, usize, usize),
    Norm(usize),
    Interest,
    Order,
}

/// Parses restriction text for an `n`-variable model.
pub fn parse_restrictions(text: &str, n: usize) -> CliResult<RestrictionSpec> {
    let mut spec = RestrictionSpec::empty(n);
    let mut seen: HashSet<Key> = HashSet::new();
    let mut claim = |key: Key, line: usize| {
        if seen.insert(key) {
            Ok(())
        } else {
            Err(CliError::DuplicateRestriction { line })
        }
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        match toks[0] {
            "zero" => {
                if toks.len() < 2 {
                    return Err(syntax(line, "zero needs a target"));
                }
                let (target, rest) = match toks[1] {
                    "A0inv" => (ZeroTarget::A0Inv, &toks[2..]),
                    "A0" => (ZeroTarget::A0, &toks[2..]),
                    "CIRinf" => (ZeroTarget::CirInf, &toks[2..]),
                    "A_l" | "IR" => {
                        let v = toks.get(2).ok_or_else(|| syntax(line, "missing lag or horizon"))?;
                        let v = count(v, line)?;
                        if toks[1] == "A_l" {
                            if v == 0 {
                                return Err(syntax(line, "lag must be at least 1"));
                            }
                            (ZeroTarget::ALag(v), &toks[3..])
                        } else {
                            (ZeroTarget::Ir(v), &toks[3..])
                        }
                    }
                    other => return Err(syntax(line, format!("unknown zero target {other:?}"))),
                };
                arity(rest, 2, line)?;
                let (i, j) = (index(rest[0], n, line)?, index(rest[1], n, line)?);
                claim(Key::Zero(target, i, j), line)?;
                spec.zeros.push(ZeroRestriction { target, i, j });
            }
            "sign" => {
                if toks.len() < 2 {
                    return Err(syntax(line, "sign needs a target"));
                }
                let (horizons, rest) = match toks[1] {
                    "A0" => (None, &toks[2..]),
                    "IR" => {
                        let h = toks.get(2).ok_or_else(|| syntax(line, "missing horizon"))?;
                        let hs = if h.contains("..") { range(h, line)? } else { (count(h, line)?, count(h, line)?) };
                        (Some(hs), &toks[3..])
                    }
                    other => return Err(syntax(line, format!("unknown sign target {other:?}"))),
                };
                arity(rest, 3, line)?;
                let (i, j, positive) = (index(rest[0], n, line)?, index(rest[1], n, line)?, sign(rest[2], line)?);
                match horizons {
                    None => {
                        claim(Key::Sign(SignTarget::A0, i, j), line)?;
                        spec.signs.push(SignRestriction { target: SignTarget::A0, i, j, positive });
                    }
                    Some((h1, h2)) => {
                        for h in h1..=h2 {
                            claim(Key::Sign(SignTarget::Ir(h), i, j), line)?;
                            spec.signs.push(SignRestriction { target: SignTarget::Ir(h), i, j, positive });
                        }
                    }
                }
            }
            "normalize" => {
                arity(&toks[1..], 3, line)?;
                let (i, j, positive) = (index(toks[1], n, line)?, index(toks[2], n, line)?, sign(toks[3], line)?);
                claim(Key::Norm(j), line)?;
                spec.normalizations.push(SignNormalization { i, j, positive });
            }
            "interest" => {
                arity(&toks[1..], 1, line)?;
                claim(Key::Interest, line)?;
                spec.shock_of_interest = Some(index(toks[1], n, line)?);
            }
            "pool" => {
                arity(&toks[1..], 1, line)?;
                let (a, b) = range(toks[1], line)?;
                if a == 0 || b > n || a == b {
                    return Err(syntax(line, format!("pool must span at least two positions in 1..={n}")));
                }
                spec.pools.push((a - 1, b - 1));
            }
            "order" => {
                arity(&toks[1..], n, line)?;
                claim(Key::Order, line)?;
                let p = toks[1..].iter().map(|t| index(t, n, line)).collect::<CliResult<Vec<_>>>()?;
                spec.shock_order = Some(p);
            }
            other => return Err(syntax(line, format!("unknown directive {other:?}"))),
        }
    }
    if let Err(e) = spec.positions().and_then(|_| spec.partition()) {
        return Err(syntax(0, e.to_string()));
    }
    Ok(spec)
}

/// Oil-market sign pattern: supply disruption, aggregate demand and
/// oil-specific demand shocks for (production growth, real activity, real oil
/// price). Diagonal signs are normalizations. The oil-specific demand shock
/// carries the distinct eigenvalue; the other two share a pooled block.
pub const OIL_MARKET_TEXT: &str = "\
# impact normalizations on the diagonal
normalize 1 1 -
normalize 2 2 +
normalize 3 3 +
# supply disruption: activity falls, price rises for twelve months
sign IR 0 2 1 -
sign IR 0..11 3 1 +
# aggregate demand: production and price rise
sign IR 0 1 2 +
sign IR 0 3 2 +
pool 2..3
order 2 3 1
";

pub fn preset(name: &str) -> Option<RestrictionSpec> {
    (name == OIL_MARKET).then(|| parse_restrictions(OIL_MARKET_TEXT, 3).expect("valid preset"))
}

/// Loads a file, or a preset when `source` names one.
pub fn load_restrictions(source: &str, n: usize) -> CliResult<RestrictionSpec> {
    if let Some(spec) = preset(source) {
        if n != 3 {
            return Err(CliError::Config(format!("preset {source} needs 3 variables, data has {n}")));
        }
        return Ok(spec);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_restrictions(&text, n)
}

/// Renders a spec back into the file syntax.
pub fn render(spec: &RestrictionSpec) -> String {
    let pm = |p: bool| if p { "+" } else { "-" };
    let mut out = String::new();
    for z in &spec.zeros {
        let head = match z.target {
            ZeroTarget::A0Inv => "A0inv".to_string(),
            ZeroTarget::A0 => "A0".to_string(),
            ZeroTarget::ALag(l) => format!("A_l {l}"),
            ZeroTarget::CirInf => "CIRinf".to_string(),
            ZeroTarget::Ir(h) => format!("IR {h}"),
        };
        out += &format!("zero {head} {} {}\n", z.i + 1, z.j + 1);
    }
    for s in &spec.signs {
        let head = match s.target {
            SignTarget::A0 => "A0".to_string(),
            SignTarget::Ir(h) => format!("IR {h}"),
        };
        out += &format!("sign {head} {} {} {}\n", s.i + 1, s.j + 1, pm(s.positive));
    }
    for s in &spec.normalizations {
        out += &format!("normalize {} {} {}\n", s.i + 1, s.j + 1, pm(s.positive));
    }
    if let Some(j) = spec.shock_of_interest {
        out += &format!("interest {}\n", j + 1);
    }
    for (a, b) in &spec.pools {
        out += &format!("pool {}..{}\n", a + 1, b + 1);
    }
    if let Some(p) = &spec.shock_order {
        let p: Vec<String> = p.iter().map(|k| (k + 1).to_string()).collect();
        out += &format!("order {}\n", p.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impact_exclusion() {
        let spec = parse_restrictions("zero A0inv 2 1\npool 2..3\n", 3).unwrap();
        assert_eq!(spec.zeros, vec![ZeroRestriction { target: ZeroTarget::A0Inv, i: 1, j: 0 }]);
        assert_eq!(spec.pools, vec![(1, 2)]);
    }

    #[test]
    fn empty_file_is_empty_spec() {
        assert_eq!(parse_restrictions("", 3).unwrap(), RestrictionSpec::empty(3));
        assert_eq!(parse_restrictions("# nothing\n\n", 3).unwrap(), RestrictionSpec::empty(3));
    }

    #[test]
    fn oil_market_preset_pattern() {
        let spec = preset(OIL_MARKET).unwrap();
        let impact: Vec<(usize, usize, bool)> =
            spec.signs.iter().filter(|s| s.target == SignTarget::Ir(0)).map(|s| (s.i, s.j, s.positive)).collect();
        // off-diagonal entries of the (-)/+/* table; column 3 is unrestricted
        let mut want = vec![(1, 0, false), (2, 0, true), (0, 1, true), (2, 1, true)];
        want.sort();
        let mut got = impact.clone();
        got.sort();
        assert_eq!(got, want);
        assert!(spec.signs.iter().all(|s| s.i != s.j && s.j != 2));
        let price: Vec<usize> = spec
            .signs
            .iter()
            .filter(|s| s.i == 2 && s.j == 0)
            .map(|s| match s.target {
                SignTarget::Ir(h) => h,
                SignTarget::A0 => usize::MAX,
            })
            .collect();
        assert_eq!(price, (0..12).collect::<Vec<_>>());
        let norms: Vec<(usize, usize, bool)> = spec.normalizations.iter().map(|s| (s.i, s.j, s.positive)).collect();
        assert_eq!(norms, vec![(0, 0, false), (1, 1, true), (2, 2, true)]);
        assert_eq!(spec.pools, vec![(1, 2)]);
        assert_eq!(spec.positions().unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_restrictions("zero A0inv 1 2\nsign IR 0 1 2 *\n", 3).unwrap_err();
        assert!(matches!(e, CliError::Syntax { line: 2, .. }), "{e}");
        let e = parse_restrictions("zero A0inv 1 4\n", 3).unwrap_err();
        assert!(matches!(e, CliError::Syntax { line: 1, .. }));
        let e = parse_restrictions("bogus 1\n", 3).unwrap_err();
        assert!(matches!(e, CliError::Syntax { line: 1, .. }));
        let e = parse_restrictions("zero A_l 0 1 2\n", 3).unwrap_err();
        assert!(matches!(e, CliError::Syntax { line: 1, .. }));
    }

    #[test]
    fn duplicates_are_rejected() {
        let e = parse_restrictions("zero A0inv 2 1\n\nzero A0inv 2 1\n", 3).unwrap_err();
        assert!(matches!(e, CliError::DuplicateRestriction { line: 3 }));
        let e = parse_restrictions("sign IR 0..3 1 2 +\nsign IR 2 1 2 -\n", 3).unwrap_err();
        assert!(matches!(e, CliError::DuplicateRestriction { line: 2 }));
    }

    #[test]
    fn render_round_trips() {
        let text = "zero A0inv 2 1\nzero A_l 2 1 3\nzero CIRinf 3 2\nzero IR 4 1 1\nzero A0 1 3\n\
                    sign IR 0..2 1 2 +\nsign A0 2 3 -\nnormalize 3 3 -\ninterest 2\npool 2..3\norder 1 3 2\n";
        let spec = parse_restrictions(text, 3).unwrap();
        assert_eq!(parse_restrictions(&render(&spec), 3).unwrap(), spec);
        let preset = preset(OIL_MARKET).unwrap();
        assert_eq!(parse_restrictions(&render(&preset), 3).unwrap(), preset);
    }

    #[test]
    fn bad_order_or_pool() {
        assert!(parse_restrictions("order 1 1 2\n", 3).is_err());
        assert!(parse_restrictions("pool 1..4\n", 3).is_err());
        assert!(parse_restrictions("pool 1..2\npool 2..3\n", 3).is_err());
    }
}
