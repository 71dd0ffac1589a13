//! The shipped `defaults.json` must stay in sync with `RunConfig::default()`.
//! Run with `CRVB_BLESS=1` to regenerate it.

use crkam::problem::RunConfig;
use std::path::PathBuf;

fn defaults_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../defaults.json")
}

#[test]
fn shipped_defaults_match_the_code() {
    let expected = RunConfig::default().to_json().unwrap() + "\n";
    let path = defaults_path();
    if std::env::var_os("CRVB_BLESS").is_some() {
        std::fs::write(&path, &expected).unwrap();
    }
    let shipped = std::fs::read_to_string(&path).expect("defaults.json is missing");
    assert_eq!(shipped, expected);
    let parsed = RunConfig::from_json(&shipped).unwrap();
    assert_eq!(parsed.to_json().unwrap() + "\n", expected);
}
