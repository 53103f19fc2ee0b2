use tmprompt::eval::{corpus_bleu_with, whitespace_tokens, BleuOptions};

const REF: &str = include_str!("fixtures/bleu/golden50.ref");
const HYP: &str = include_str!("fixtures/bleu/golden50.hyp");

fn lines(text: &str) -> Vec<Vec<String>> {
    text.split_terminator('\n').map(whitespace_tokens).collect()
}

fn reference_bleu(line: &str) -> f64 {
    line.strip_prefix("BLEU = ").unwrap().split(',').next().unwrap().parse().unwrap()
}

fn check(options: BleuOptions, expected: &str) {
    let (hyps, refs) = (lines(HYP), lines(REF));
    assert_eq!(hyps.len(), 50);
    assert_eq!(refs.len(), 50);
    let report = corpus_bleu_with(&hyps, &refs, options).unwrap();
    let expected = expected.trim_end();
    assert!((report.bleu - reference_bleu(expected)).abs() <= 0.01, "{report} vs {expected}");
    assert_eq!(report.multi_bleu_line(), expected);
}

#[test]
fn case_sensitive_matches_script() {
    check(BleuOptions::default(), include_str!("fixtures/bleu/golden50.multi-bleu.txt"));
}

#[test]
fn lowercased_matches_script() {
    check(BleuOptions { lowercase: true }, include_str!("fixtures/bleu/golden50.multi-bleu-lc.txt"));
}
