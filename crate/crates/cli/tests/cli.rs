use std::path::Path;
use std::process::{Command, Output};

use drccmdp_core::conic::ConeProgram;
use drccmdp_core::solution::DrccmdpSolution;
use tempfile::TempDir;

fn drccmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drccmdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

/// Two states with two actions each.
const MDP: &str = r#"{
  "n_states": 2,
  "actions": [["stay", "move"], ["stay", "move"]],
  "transition": [[0,0,0,1.0],[0,1,1,1.0],[1,0,1,1.0],[1,1,0,0.5],[1,1,1,0.5]],
  "alpha": 0.9,
  "gamma": [0.5, 0.5]
}"#;

const SIGMA: &str = "[[1.0,0.2,0.0,0.0],[0.2,2.0,0.0,0.0],[0.0,0.0,1.5,0.1],[0.0,0.0,0.1,0.5]]";

fn d1_spec() -> String {
    format!(r#"{{"kind":"D1","mu":[4,6,5,3],"sigma":{SIGMA},"epsilon":0.1}}"#)
}

#[test]
fn solve_then_validate() {
    let dir = TempDir::new().unwrap();
    let mdp = write(dir.path(), "m.json", MDP);
    let amb = write(dir.path(), "a.json", &d1_spec());
    let sol = dir.path().join("sol.json");
    let o = drccmdp(&[
        "solve",
        "--mdp",
        &mdp,
        "--ambiguity",
        &amb,
        "--out",
        sol.to_str().unwrap(),
        "--dump-ir",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = DrccmdpSolution::from_json(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    assert_eq!(s.model, "d1");
    assert_eq!(s.rho.len(), 4);
    assert!(s.policy.is_valid());

    let ir = std::fs::read_to_string(dir.path().join("sol.ir.json")).unwrap();
    let p = ConeProgram::from_json(&ir).unwrap();
    assert_eq!(p.to_json().unwrap(), ir);

    let o = drccmdp(&[
        "validate",
        "--solution",
        sol.to_str().unwrap(),
        "--ambiguity",
        &amb,
        "--samples",
        "2000",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["oracle"], "cantelli");
}

#[test]
fn raised_level_fails_validation() {
    let dir = TempDir::new().unwrap();
    let mdp = write(dir.path(), "m.json", MDP);
    let amb = write(dir.path(), "a.json", &d1_spec());
    let o = drccmdp(&["solve", "--mdp", &mdp, "--ambiguity", &amb]);
    assert_eq!(code(&o), 0);
    let mut s = DrccmdpSolution::from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    s.y += 0.5;
    let sol = write(dir.path(), "sol.json", &s.to_json().unwrap());
    let o = drccmdp(&[
        "validate",
        "--solution",
        &sol,
        "--ambiguity",
        &amb,
        "--samples",
        "0",
    ]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["verdict"], "fail");
}

#[test]
fn wasserstein_scenarios_resolve_next_to_the_ambiguity_file() {
    let dir = TempDir::new().unwrap();
    let mdp = write(dir.path(), "m.json", MDP);
    write(
        dir.path(),
        "xi.csv",
        "k0,k1,k2,k3\n4,6,5,3\n3,7,4,2\n5,5,6,4\n4.5,6.5,5.5,2.5\n",
    );
    let amb = write(
        dir.path(),
        "a.json",
        r#"{"kind":"wasserstein","theta":0.05,"epsilon":0.3,"support":"full","scenarios_csv":"xi.csv"}"#,
    );
    let sol = dir.path().join("sol.json");
    let o = drccmdp(&[
        "solve",
        "--mdp",
        &mdp,
        "--ambiguity",
        &amb,
        "--out",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = drccmdp(&[
        "validate",
        "--solution",
        sol.to_str().unwrap(),
        "--ambiguity",
        &amb,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["oracle"], "wasserstein-breakpoint");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let mdp = write(dir.path(), "m.json", MDP);
    let missing = dir.path().join("nope.json");
    let amb = write(dir.path(), "a.json", &d1_spec());
    assert_eq!(
        code(&drccmdp(&[
            "solve",
            "--mdp",
            missing.to_str().unwrap(),
            "--ambiguity",
            &amb
        ])),
        4
    );
    let broken = write(dir.path(), "b.json", "{\"kind\": \"D1\", \"mu\": [1]");
    assert_eq!(
        code(&drccmdp(&["solve", "--mdp", &mdp, "--ambiguity", &broken])),
        4
    );
    let short = write(dir.path(), "s.json", r#"{"kind":"nominal","mu":[1,2]}"#);
    assert_eq!(
        code(&drccmdp(&["solve", "--mdp", &mdp, "--ambiguity", &short])),
        4
    );
    assert_eq!(code(&drccmdp(&["solve", "--bogus"])), 4);
    // the variation transform 1 - eps + theta / 2 reaches 1
    let too_wide = write(
        dir.path(),
        "v.json",
        &format!(
            r#"{{"kind":"phi","divergence":"variation","theta":0.5,"epsilon":0.1,"mu_nu":[4,6,5,3],"sigma_nu":{SIGMA}}}"#
        ),
    );
    assert_eq!(
        code(&drccmdp(&[
            "solve",
            "--mdp",
            &mdp,
            "--ambiguity",
            &too_wide
        ])),
        2
    );
    let out = dir.path().join("bench");
    let o = drccmdp(&[
        "bench",
        "machine-replacement",
        "--states",
        "3",
        "--models",
        "d1,bogus",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4);
    assert_eq!(code(&drccmdp(&["--help"])), 0);
}

/// Drops the timing column, the only field that may differ between runs.
fn mask_wall_ms(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            let n = f.len();
            f[n - 2] = "*";
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn bench_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = drccmdp(&[
            "bench",
            "machine-replacement",
            "--states",
            "4",
            "--seed",
            "11",
            "--models",
            "nominal,gaussian,d1,kl,var,w-full",
            "--scenarios",
            "30",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let csv = |d: &Path| std::fs::read_to_string(d.join("results.csv")).unwrap();
    assert_eq!(mask_wall_ms(&csv(&a)), mask_wall_ms(&csv(&b)));
    for f in ["scenarios.csv", "mdp.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let text = csv(&a);
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("model,y,s0:repair,s0:no-repair"));
    assert!(header.ends_with("wall_ms,status"));
    assert_eq!(text.lines().count(), 7);
}
