//! Fuzzes the scenario-config parser and the follow-up resolution step:
//! arbitrary input must produce a line-numbered error or a scenario list,
//! never a panic, and resolution of parsed scenarios must be total too.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scenarios) = zombie_cli::parse_config(text) else { return };
    for scenario in &scenarios {
        let _ = scenario.resolve(false, None);
        let _ = scenario.resolve(true, Some(1));
    }
});
