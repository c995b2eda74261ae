//! Random expression trees rendered with minimal parentheses, checked against
//! a tree-walking reference evaluator.

use leap_core::tools::calculator::{evaluate, CalcError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
enum Expr {
    Lit(f64, String),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
}

/// Binding level: 0 sum, 1 product, 2 unary, 3 power, 4 atom.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Lit(..) => 4,
        Expr::Neg(_) => 2,
        Expr::Bin('^', ..) => 3,
        Expr::Bin('*' | '/' | '%', ..) => 1,
        Expr::Bin(..) => 0,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    let s = render(e);
    if level(e) >= min {
        s
    } else {
        format!("({s})")
    }
}

fn render(e: &Expr) -> String {
    match e {
        Expr::Lit(_, text) => text.clone(),
        Expr::Neg(x) => format!("-{}", wrap(x, 2)),
        Expr::Bin('^', l, r) => format!("{}^{}", wrap(l, 4), wrap(r, 2)),
        Expr::Bin(op @ ('*' | '/' | '%'), l, r) => format!("{} {op} {}", wrap(l, 1), wrap(r, 2)),
        Expr::Bin(op, l, r) => format!("{} {op} {}", wrap(l, 0), wrap(r, 1)),
    }
}

/// `None` for division or remainder by zero and any non-finite value.
fn reference(e: &Expr) -> Option<f64> {
    let v = match e {
        Expr::Lit(v, _) => *v,
        Expr::Neg(x) => -reference(x)?,
        Expr::Bin(op, l, r) => {
            let a = reference(l)?;
            let b = reference(r)?;
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' if b == 0.0 => return None,
                '/' => a / b,
                '%' if b == 0.0 => return None,
                '%' => a % b,
                '^' => a.powf(b),
                _ => unreachable!(),
            }
        }
    };
    v.is_finite().then_some(v)
}

fn gen(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        let whole = rng.random_range(0..20u32);
        return if rng.random_bool(0.3) {
            let tenth = rng.random_range(0..10u32);
            Expr::Lit(format!("{whole}.{tenth}").parse().unwrap(), format!("{whole}.{tenth}"))
        } else {
            Expr::Lit(whole as f64, whole.to_string())
        };
    }
    if rng.random_bool(0.12) {
        return Expr::Neg(Box::new(gen(rng, depth - 1)));
    }
    let op = ['+', '-', '*', '/', '%', '^', '+', '-', '*', '/'][rng.random_range(0..10)];
    if op == '^' {
        let exp = rng.random_range(0..4u32);
        return Expr::Bin(
            '^',
            Box::new(gen(rng, depth.min(2) - 1)),
            Box::new(Expr::Lit(exp as f64, exp.to_string())),
        );
    }
    Expr::Bin(op, Box::new(gen(rng, depth - 1)), Box::new(gen(rng, depth - 1)))
}

fn depth(e: &Expr) -> u32 {
    match e {
        Expr::Lit(..) => 0,
        Expr::Neg(x) => 1 + depth(x),
        Expr::Bin(_, l, r) => 1 + depth(l).max(depth(r)),
    }
}

#[test]
fn random_trees_agree_with_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut finite = 0;
    for i in 0..500 {
        let tree = gen(&mut rng, 6);
        assert!(depth(&tree) <= 6);
        let text = render(&tree);
        match (reference(&tree), evaluate(&text)) {
            (Some(want), Ok(got)) => {
                finite += 1;
                let scale = want.abs().max(1.0);
                assert!(
                    (got - want).abs() <= 1e-9 * scale,
                    "tree {i}: {text} gave {got}, reference {want}"
                );
            }
            (None, Err(CalcError::Math(_))) => {}
            (want, got) => panic!("tree {i}: {text}: reference {want:?}, evaluator {got:?}"),
        }
    }
    assert!(finite >= 350, "only {finite} finite cases");
}

#[test]
fn precedence_and_associativity() {
    let cases = [
        ("2 + 3 * 4", 14.0),
        ("(2 + 3) * 4", 20.0),
        ("10 - 4 - 3", 3.0),
        ("10 - (4 - 3)", 9.0),
        ("100 / 10 / 5", 2.0),
        ("2^3^2", 512.0),
        ("(2^3)^2", 64.0),
        ("-2^2", -4.0),
        ("(-2)^2", 4.0),
        ("2^-1", 0.5),
        ("-7 % 3", -1.0),
        ("7 % -3", 1.0),
        ("2 * -3", -6.0),
        ("3 - -2", 5.0),
        ("1 + 2 * 3 ^ 2 - 4 / 2", 17.0),
        ("  4.5*2 ", 9.0),
    ];
    for (text, want) in cases {
        assert_eq!(evaluate(text), Ok(want), "{text}");
    }
}

#[test]
fn rejects_bad_input() {
    for text in ["", "2 +", "(1", "1)", "2 ** 3", "1.", "abc", "4 / 0", "4 % (2 - 2)", "10^400"] {
        assert!(evaluate(text).is_err(), "{text}");
    }
}
