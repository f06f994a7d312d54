//! Softmax and threshold-routing oracles.

use hecg_core::EdgeKind;

/// Unshifted softmax straight from the definition.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let w: Vec<f64> = logits.iter().map(|l| (l / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// `alpha*q - beta*c - gamma*r + lambda*phi` with the zeroed terms dropped.
pub fn logit_without(q: f64, c: f64, r: f64, phi: f64, coeffs: [f64; 4], drop: Option<usize>) -> f64 {
    let terms = [coeffs[0] * q, -coeffs[1] * c, -coeffs[2] * r, coeffs[3] * phi];
    terms.iter().enumerate().filter(|(i, _)| Some(*i) != drop).map(|(_, t)| t).sum()
}

/// Three-branch threshold rule: main up to the local threshold (inclusive),
/// corr up to the maximum (inclusive), fb above.
pub fn route(error: f64, local: f64, max: f64) -> EdgeKind {
    if error <= local {
        EdgeKind::Main
    } else if error <= max {
        EdgeKind::Corr
    } else {
        EdgeKind::Fb
    }
}

/// Randomized softmax properties; returns the number of cases checked.
pub fn softmax_cases(cases: u64) -> Result<u64, String> {
    use hecg_core::policy::{softmax as lib_softmax, TransitionScore};
    use hecg_core::{NodeId, PolicyCoefficients, TaskEdge};
    let mut g = super::Gen::new(0x50f7);
    for i in 0..cases {
        let n = 1 + g.below(8);
        let t = g.range(0.05, 5.0);
        let logits: Vec<f64> = (0..n).map(|_| g.range(-10.0, 10.0)).collect();
        let p = lib_softmax(&logits, t);
        let want = softmax(&logits, t);
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("case {i}: sum {}", p.iter().sum::<f64>()));
        }
        if p.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(format!("case {i}: {p:?} vs {want:?}"));
        }
        let shift = g.range(-50.0, 50.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        if lib_softmax(&shifted, t).iter().zip(&p).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(format!("case {i}: not shift invariant"));
        }
        let flat = vec![logits[0]; n];
        if lib_softmax(&flat, t).iter().any(|x| (x - 1.0 / n as f64).abs() > 1e-9) {
            return Err(format!("case {i}: equal logits not uniform"));
        }
        // Zeroing one coefficient equals dropping its term.
        let coeffs = [g.range(0.1, 3.0), g.range(0.1, 3.0), g.range(0.1, 3.0), g.range(0.1, 3.0)];
        let term = g.below(4);
        let mut zeroed = coeffs;
        zeroed[term] = 0.0;
        let c = PolicyCoefficients {
            alpha: zeroed[0],
            beta: zeroed[1],
            gamma: zeroed[2],
            lambda: zeroed[3],
            temperature: t,
        };
        let (q, cost, r, phi) = (g.unit(), g.unit(), g.unit(), g.unit());
        let edge = TaskEdge::new(NodeId::new(0, 0), EdgeKind::Main, NodeId::new(0, 1));
        let s = TransitionScore::new(edge, q, cost, r, phi, &c);
        let want = logit_without(q, cost, r, phi, coeffs, Some(term));
        if (s.logit - want).abs() > 1e-9 {
            return Err(format!("case {i}: zeroing term {term} gives {}, removal gives {want}", s.logit));
        }
    }
    Ok(cases)
}

/// Exhaustive router check over a grid of error and threshold triples.
/// Returns the number of triples checked.
pub fn router_grid() -> Result<usize, String> {
    use hecg_core::env::parse_script;
    use hecg_core::graph::{TaskContext, TaskNode};
    use hecg_core::policy::route_by_threshold;
    use hecg_core::{ErrorValue, NodeId};
    let a = parse_script("[grab] <mug>").unwrap();
    let mut checked = 0;
    // 22 x 22 local/max pairs over [0, 1] on a 1/21 lattice; ordered pairs only.
    let lattice: Vec<f64> = (0..=21).map(|i| i as f64 / 21.0).collect();
    let mut triples = Vec::new();
    for &l in &lattice {
        for &m in &lattice {
            if l <= m {
                for &e in &lattice {
                    triples.push((e, l, m));
                }
            }
        }
    }
    // Top up with off-lattice errors until 10^4 triples.
    let mut g = super::Gen::new(0x9071);
    while triples.len() < 10_000 {
        let l = g.unit();
        let m = l + (1.0 - l) * g.unit();
        triples.push((g.unit(), l, m));
    }
    triples.truncate(10_000);
    for (e, l, m) in triples {
        let node = TaskNode::action(NodeId::new(0, 0), TaskContext::for_action(&a), a.clone(), l, m);
        let got = route_by_threshold(ErrorValue::new(e), &node);
        let want = route(e, l, m);
        if got != want {
            return Err(format!("e={e} local={l} max={m}: {got:?} vs {want:?}"));
        }
        checked += 1;
    }
    Ok(checked)
}
