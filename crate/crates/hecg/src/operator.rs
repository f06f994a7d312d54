//! Terminal operator for L4 escalations.
//!
//! The dossier is printed, then one line `abort|retry|skip` is read. End of
//! input aborts.

use std::io::{BufRead, Write};

use hecg_core::correction::{FailureRecord, Operator, OperatorDecision};

pub struct LineOperator<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> LineOperator<R, W> {
    pub fn new(input: R, output: W) -> Self {
        LineOperator { input, output }
    }

    pub fn into_output(self) -> W {
        self.output
    }
}

/// Operator on the process's stdin and stderr.
pub fn terminal() -> LineOperator<std::io::StdinLock<'static>, std::io::Stderr> {
    LineOperator::new(std::io::stdin().lock(), std::io::stderr())
}

pub fn parse_decision(line: &str) -> Option<OperatorDecision> {
    match line.trim().to_ascii_lowercase().as_str() {
        "abort" => Some(OperatorDecision::Abort),
        "retry" => Some(OperatorDecision::Retry),
        "skip" => Some(OperatorDecision::Skip),
        _ => None,
    }
}

impl<R: BufRead, W: Write> Operator for LineOperator<R, W> {
    fn decide(&mut self, dossier: &[FailureRecord]) -> OperatorDecision {
        // Write failures on the prompt side are ignored; the read decides.
        let _ = writeln!(self.output, "escalation after {} failure(s):", dossier.len());
        for f in dossier {
            let levels: Vec<&str> = f.levels.iter().map(|l| l.as_str()).collect();
            let _ = writeln!(
                self.output,
                "  step {} {} in {}: {} [{}]",
                f.step,
                f.action,
                f.room,
                f.kind.name(),
                levels.join(" ")
            );
        }
        loop {
            let _ = write!(self.output, "abort|retry|skip> ");
            let _ = self.output.flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) | Err(_) => return OperatorDecision::Abort,
                Ok(_) => {
                    if let Some(d) = parse_decision(&line) {
                        return d;
                    }
                    let _ = writeln!(self.output, "unrecognized answer {:?}", line.trim());
                }
            }
        }
    }
}
