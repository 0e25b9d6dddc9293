mod common;

use grammt::ruleengine::oracle_translate;
use grammt::Direction;

#[test]
fn programs_reproduce_every_programmed_target() {
    let book = common::sample_book();
    let mut checked = 0;
    for ex in book.examples().iter().filter(|e| book.is_programmed(e)) {
        let out = oracle_translate(&book, ex, &ex.rule_ids).unwrap();
        assert_eq!(out, ex.reference(Direction::HiToLo), "{}", ex.id);
        checked += 1;
    }
    assert_eq!(checked, 26);
}

#[test]
fn headline_cases() {
    let book = common::sample_book();
    let e1 = book.example("e1").unwrap();
    assert_eq!(oracle_translate(&book, e1, &e1.rule_ids).unwrap(), "byoem henj");
    let m1 = book.example("m1").unwrap();
    assert_eq!(oracle_translate(&book, m1, &m1.rule_ids).unwrap(), "Gou yawj bonj saw neix yaep ndeu.");
}

#[test]
fn planted_book_is_programmed() {
    let book = common::planted_book(12, 7);
    for ex in book.examples() {
        assert_eq!(oracle_translate(&book, ex, &ex.rule_ids).unwrap(), ex.source_text, "{}", ex.id);
    }
}
