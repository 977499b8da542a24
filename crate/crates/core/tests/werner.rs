use qkd_core::protocol::secure_fraction;
use qkd_core::TwoQubitState;

#[test]
fn werner_state_at_field_fidelity() {
    let w = TwoQubitState::werner_from_fidelity(0.942).unwrap();
    assert!((w.chsh_expected() - 2.610).abs() < 0.005, "S = {}", w.chsh_expected());
    assert!((w.concurrence() - 0.884).abs() < 0.005, "C = {}", w.concurrence());
    assert!((w.fidelity_to_bell() - 0.942).abs() < 1e-12);
}

#[test]
fn field_key_fraction() {
    let r = secure_fraction(0.0716, 2.409, 1.2).unwrap().unwrap();
    assert!((r - 0.165).abs() < 0.002, "r = {r}");
}
