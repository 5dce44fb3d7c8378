use attrec::selfcheck::run_all;

#[test]
fn builtin_checks_pass() {
    for r in run_all(3) {
        println!("{} {} ({:.2}s) {}", r.name, r.passed, r.seconds, r.detail);
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}
