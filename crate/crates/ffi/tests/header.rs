use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include "simrecon.h"
#include <stdio.h>

int main(void) {
    SimreconBasis *basis = NULL;
    SimreconEmbedder *emb = NULL;
    SimreconOracle *oracle = NULL;
    SimreconOptimizerConfig cfg = simrecon_optimizer_config_default();
    SimreconStatus st = simrecon_basis_load("basis.bin", &basis);
    if (st != SIMRECON_STATUS_OK) {
        fprintf(stderr, "%s\n", simrecon_last_error());
    }
    st = simrecon_embedder_new(1, 32, 16, 16, 3, false, &emb);
    float px[768] = {0};
    double coords[8];
    uint64_t used = 0;
    st = simrecon_oracle_new_cosine(emb, "t", px, 768, SIMRECON_UNLIMITED, &oracle);
    st = simrecon_reconstruct(basis, oracle, &cfg, coords, 8, px, 768, &used);
    simrecon_oracle_free(oracle);
    simrecon_embedder_free(emb);
    simrecon_basis_free(basis);
    return st == SIMRECON_STATUS_BUDGET_EXHAUSTED ? 3 : 0;
}
"#;

#[test]
fn header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("simrecon.h")).unwrap();
    for f in [
        "simrecon_reconstruct",
        "simrecon_kfold_accuracy",
        "simrecon_philox_normal",
        "simrecon_last_error",
        "simrecon_cosine",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping compile check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}
