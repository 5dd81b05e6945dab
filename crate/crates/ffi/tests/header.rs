use std::path::Path;
use std::process::Command;

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/priu.h");

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(HEADER).unwrap();
    for sym in [
        "priu_last_error",
        "priu_version",
        "priu_dataset_from_dense",
        "priu_dataset_load",
        "priu_dataset_free",
        "priu_dataset_rows",
        "priu_dataset_cols",
        "priu_engine_train",
        "priu_engine_load",
        "priu_engine_save",
        "priu_engine_free",
        "priu_engine_param_dim",
        "priu_engine_trained",
        "priu_engine_update",
        "typedef struct PriuEngine PriuEngine;",
        "typedef struct PriuDataset PriuDataset;",
        "PRIU_STATUS_OK = 0",
        "PRIU_STATUS_INTERNAL = 8",
    ] {
        assert!(text.contains(sym), "missing {sym}");
    }
}

#[test]
fn header_compiles_as_c99() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"priu.h\"\nint main(void) {\n  PriuEngine *e = NULL;\n  double w[1];\n  \
         return priu_engine_trained(e, w, 1) == PRIU_STATUS_NULL_ARGUMENT ? 0 : 1;\n}\n",
    )
    .unwrap();
    let include = Path::new(HEADER).parent().unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = match Command::new(&cc)
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-I"])
        .arg(include)
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping: no C compiler ({cc}: {e})");
            return;
        }
    };
    assert!(status.success());
}
