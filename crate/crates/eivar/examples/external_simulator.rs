//! Drives an external simulator process through the newline-delimited JSON
//! protocol. Spawns a small Python echo simulator, sends it a parameter
//! vector, and prints the response.
//!
//! Protocol, one JSON object per line over stdin/stdout:
//!   request  {"id": 0, "theta": [1.0, 2.0]}
//!   response {"id": 0, "eta": [1.0, 2.0]}   or   {"id": 0, "error": "..."}

use std::time::Duration;

use eivar::problems::ExternalSimulator;

const ECHO_SIM: &str = r#"import json, sys
req = json.loads(sys.stdin.readline())
print(json.dumps({"id": req["id"], "eta": req["theta"]}))
"#;

fn main() {
    let dir = std::env::temp_dir();
    let script = dir.join("eivar_echo_sim.py");
    std::fs::write(&script, ECHO_SIM).expect("write script");

    let sim = ExternalSimulator::new(
        vec!["python3".into(), script.to_string_lossy().into_owned()],
        Duration::from_secs(10),
    );
    match sim.evaluate(0, &[1.5, -2.0, 0.25]) {
        Ok(eta) => println!("simulator returned eta = {eta:?}"),
        Err(err) => println!("simulator failed: {err}"),
    }
    let _ = std::fs::remove_file(&script);
}
