use std::collections::BTreeMap;

use super::{LSystemError, LSystemGrammar, ProductionRule, Symbol, SymbolString};
use crate::{par, rng};

pub const DEFAULT_EXPANSION_LIMIT: usize = 10_000_000;

/// Parallel rewriting with the default symbol cap.
pub fn expand(
    grammar: &LSystemGrammar,
    iterations: usize,
    seed: u64,
) -> Result<SymbolString, LSystemError> {
    expand_with_limit(grammar, iterations, seed, DEFAULT_EXPANSION_LIMIT)
}

/// Applies all rules simultaneously `iterations` times. The stochastic
/// choice for the symbol at `position` in iteration `k` is keyed by
/// `(seed, k, position)`, so the result does not depend on evaluation order.
pub fn expand_with_limit(
    grammar: &LSystemGrammar,
    iterations: usize,
    seed: u64,
    limit: usize,
) -> Result<SymbolString, LSystemError> {
    let groups = grammar.groups();
    let lookup: BTreeMap<char, Vec<&ProductionRule>> = groups;
    let mut current = grammar.axiom.0.clone();
    if current.len() > limit {
        return Err(LSystemError::ExpansionLimit {
            count: current.len(),
            limit,
        });
    }

    for k in 0..iterations {
        let choice: Vec<Option<&ProductionRule>> = par::map_range(current.len(), |i| {
            let sym = &current[i];
            let group = lookup.get(&sym.ch)?;
            if group[0].param_names.len() != sym.params.len() {
                return None;
            }
            if group.len() == 1 {
                return Some(group[0]);
            }
            let u = rng::uniform3(seed, k as u64, i as u64);
            let mut acc = 0.0;
            for r in group {
                acc += r.probability;
                if u < acc {
                    return Some(*r);
                }
            }
            group.last().copied()
        });

        let count: usize = choice
            .iter()
            .map(|c| c.map_or(1, |r| r.successor.len()))
            .sum();
        if count > limit {
            return Err(LSystemError::ExpansionLimit { count, limit });
        }

        let pieces: Vec<Vec<Symbol>> = par::map_range(current.len(), |i| match choice[i] {
            None => vec![current[i].clone()],
            Some(rule) => rule
                .successor
                .iter()
                .map(|t| Symbol::with(t.ch, t.params.iter().map(|e| e.eval(&current[i].params)).collect()))
                .collect(),
        });
        let mut next = Vec::with_capacity(count);
        for p in pieces {
            next.extend(p);
        }
        current = next;
    }
    Ok(SymbolString(current))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsystem::parse_grammar;

    /// Sequential by-hand rewriter over plain strings, independent of the
    /// parallel implementation.
    fn brute_force(axiom: &str, rules: &[(char, &str)], n: usize) -> String {
        let mut s = axiom.to_string();
        for _ in 0..n {
            let mut next = String::new();
            for c in s.chars() {
                match rules.iter().find(|r| r.0 == c) {
                    Some((_, succ)) => next.push_str(succ),
                    None => next.push(c),
                }
            }
            s = next;
        }
        s
    }

    #[test]
    fn algae() {
        let g = parse_grammar("axiom: A\nA -> A B\nB -> A").unwrap();
        let s = expand(&g, 4, 0).unwrap();
        assert_eq!(s.to_string(), "ABAABABA");
        let lens: Vec<usize> = (0..=5).map(|n| expand(&g, n, 0).unwrap().len()).collect();
        assert_eq!(lens, vec![1, 2, 3, 5, 8, 13]);
        for n in 0..10 {
            assert_eq!(
                expand(&g, n, 0).unwrap().to_string(),
                brute_force("A", &[('A', "AB"), ('B', "A")], n)
            );
        }
    }

    #[test]
    fn koch_matches_brute_force() {
        let g = parse_grammar("axiom: F\nF -> F + F - F - F + F").unwrap();
        for n in 0..4 {
            let s = expand(&g, n, 9).unwrap();
            assert_eq!(s.to_string(), brute_force("F", &[('F', "F+F-F-F+F")], n));
            let fs = s.iter().filter(|c| c.ch == 'F').count();
            assert_eq!(fs, 5usize.pow(n as u32));
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let g = parse_grammar("axiom: F(2)[+A]\nA -> F A").unwrap();
        assert_eq!(expand(&g, 0, 1).unwrap(), g.axiom);
    }

    #[test]
    fn parametric_rewrite() {
        let g = parse_grammar("axiom: A(1)\nA(x) -> F(x) A(x * 2)").unwrap();
        assert_eq!(expand(&g, 3, 0).unwrap().to_string(), "F(1)F(2)F(4)A(8)");
    }

    #[test]
    fn arity_mismatch_copies_symbol() {
        let g = parse_grammar("axiom: A A(3)\nA(x) -> B").unwrap();
        assert_eq!(expand(&g, 1, 0).unwrap().to_string(), "AB");
    }

    #[test]
    fn stochastic_seeded() {
        let g = parse_grammar("axiom: A\nA -> 0.5 : A B\nA -> 0.5 : B A\nB -> 0.5 : B\nB -> 0.5 : A").unwrap();
        let a = expand(&g, 8, 11).unwrap();
        assert_eq!(a, expand(&g, 8, 11).unwrap());
        let distinct = (0..20u64)
            .map(|s| expand(&g, 8, s).unwrap().to_string())
            .collect::<std::collections::BTreeSet<_>>();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn stochastic_frequencies() {
        let g = parse_grammar("axiom: A\nA -> 0.3 : B\nA -> 0.7 : C").unwrap();
        let n = 20_000;
        let b = (0..n)
            .filter(|&s| expand(&g, 1, s).unwrap().to_string() == "B")
            .count();
        let p = b as f64 / n as f64;
        let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((p - 0.3).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn limit_enforced() {
        let g = parse_grammar("axiom: A\nA -> A A").unwrap();
        let e = expand_with_limit(&g, 11, 0, 1000).unwrap_err();
        assert_eq!(e, LSystemError::ExpansionLimit { count: 1024, limit: 1000 });
        assert_eq!(expand_with_limit(&g, 10, 0, 1024).unwrap().len(), 1024);
    }

    #[test]
    fn brackets_stay_balanced() {
        let g = parse_grammar("axiom: X\nX -> F [ + X ] [ - X ] F X\nF -> F F").unwrap();
        for n in 0..6 {
            assert!(expand(&g, n, 0).unwrap().brackets_balanced());
        }
    }
}
