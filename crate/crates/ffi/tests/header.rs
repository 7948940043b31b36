//! The generated header must compile as both C and C++.

use std::path::Path;
use std::process::Command;

fn check_with(compiler: &str, lang: &str) {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dcen.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join(format!("use.{}", if lang == "c" { "c" } else { "cpp" }));
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ DcenReport r; DcenStatus s = DCEN_STATUS_OK; (void)r; (void)s; \
             return (int)dcen_harmonic_mean(0.0, 0.0); }}\n",
            header.display()
        ),
    )
    .unwrap();
    let status = match Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror"]).arg(&src).status() {
        Ok(s) => s,
        Err(_) => {
            eprintln!("{compiler} not found; skipping");
            return;
        }
    };
    assert!(status.success(), "{compiler} rejected the header");
}

#[test]
fn header_compiles_as_c() {
    check_with("cc", "c");
}

#[test]
fn header_compiles_as_cpp() {
    check_with("c++", "cpp");
}
