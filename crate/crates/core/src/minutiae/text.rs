//! `.min` text templates:
//!
//! ```text
//! MIN1 2
//! 10 20 0.5 T
//! 30.25 40 3.1 B
//! ```

use alloc::fmt::Write as _;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use super::{Minutia, MinutiaKind, Template};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MinParseError {
    #[error("missing `MIN1 <count>` header")]
    MissingHeader,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: &'static str },
    #[error("header declares {declared} minutiae but {found} follow")]
    CountMismatch { declared: usize, found: usize },
}

pub fn parse_min(text: &str) -> Result<Template, MinParseError> {
    let mut lines = text.split('\n');
    let header = lines.next().ok_or(MinParseError::MissingHeader)?;
    let declared = match header.split(' ').collect::<Vec<_>>()[..] {
        ["MIN1", count] => count
            .parse::<usize>()
            .map_err(|_| MinParseError::Line { line: 1, reason: "bad minutia count" })?,
        _ => return Err(MinParseError::MissingHeader),
    };

    let mut minutiae = Vec::with_capacity(declared.min(4096));
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        let [x, y, theta, kind] = fields[..] else {
            return Err(MinParseError::Line { line: line_no, reason: "expected `x y theta kind`" });
        };
        let num = |s: &str| -> Result<f64, MinParseError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or(MinParseError::Line { line: line_no, reason: "not a finite decimal number" })
        };
        let kind = MinutiaKind::from_code(kind)
            .ok_or(MinParseError::Line { line: line_no, reason: "kind must be T or B" })?;
        minutiae.push(Minutia::new(num(x)?, num(y)?, num(theta)?, kind));
    }
    if minutiae.len() != declared {
        return Err(MinParseError::CountMismatch { declared, found: minutiae.len() });
    }
    Ok(Template { minutiae, source_id: String::new() })
}

pub fn format_min(template: &Template) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "MIN1 {}", template.len());
    for m in &template.minutiae {
        let _ = writeln!(out, "{} {} {} {}", m.x, m.y, m.theta, m.kind.code());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_example() {
        let t = parse_min("MIN1 2\n10 20 0.5 T\n30.25 40 3.1 B\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.minutiae[1], Minutia::new(30.25, 40.0, 3.1, MinutiaKind::Bifurcation));
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(parse_min(""), Err(MinParseError::MissingHeader));
        assert_eq!(parse_min("MIN2 1\n"), Err(MinParseError::MissingHeader));
        assert_eq!(
            parse_min("MIN1 1\n1 2 3 X\n"),
            Err(MinParseError::Line { line: 2, reason: "kind must be T or B" })
        );
        assert_eq!(
            parse_min("MIN1 1\n1 2 inf T\n"),
            Err(MinParseError::Line { line: 2, reason: "not a finite decimal number" })
        );
        assert_eq!(
            parse_min("MIN1 2\n1 2 3 T\n"),
            Err(MinParseError::CountMismatch { declared: 2, found: 1 })
        );
    }

    #[test]
    fn angle_is_normalized_on_read() {
        let t = parse_min("MIN1 1\n0 0 -1.5707963267948966 T\n").unwrap();
        assert!((t.minutiae[0].theta - 3.0 * core::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(
            pts in proptest::collection::vec((-1e4f64..1e4, -1e4f64..1e4, 0.0f64..6.28, any::<bool>()), 0..30)
        ) {
            let minutiae = pts
                .into_iter()
                .map(|(x, y, t, b)| Minutia::new(x, y, t, if b { MinutiaKind::Bifurcation } else { MinutiaKind::Termination }))
                .collect::<Vec<_>>();
            let t = Template { minutiae, source_id: String::new() };
            prop_assert_eq!(parse_min(&format_min(&t)).unwrap(), t);
        }
    }

    #[test]
    fn empty_template_round_trips() {
        let t = Template { minutiae: vec![], source_id: String::new() };
        assert_eq!(format_min(&t), "MIN1 0\n");
        assert_eq!(parse_min("MIN1 0\n").unwrap(), t);
    }
}
