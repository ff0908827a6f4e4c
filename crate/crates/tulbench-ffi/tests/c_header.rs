//! Compiles the checked-in C example against the generated header and the
//! static library, then runs it. Skipped when no C compiler is on PATH.

use std::env;
use std::path::PathBuf;
use std::process::Command;

fn find_cc() -> Option<String> {
    for cc in ["cc", "gcc", "clang"] {
        let ok = Command::new(cc)
            .arg("--version")
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false);
        if ok {
            return Some(cc.to_owned());
        }
    }
    None
}

// `cargo test` leaves the library in debug/deps; `cargo build` also
// hard-links it into debug. Honor CARGO_TARGET_DIR; the crate sits two
// levels below the workspace root.
fn find_staticlib(manifest: &PathBuf) -> Option<PathBuf> {
    let root = env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("../../target"));
    ["debug/deps", "debug"]
        .iter()
        .map(|dir| root.join(dir).join("libtulbench_ffi.a"))
        .find(|p| p.is_file())
}

#[test]
fn c_example_compiles_and_links_a_user() {
    let Some(cc) = find_cc() else {
        println!("SKIP: no C compiler on PATH");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let staticlib = find_staticlib(&manifest).expect("static library not built");

    let scratch = tempfile::tempdir().unwrap();
    let binary = scratch.path().join("linking");
    let compile = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(manifest.join("examples/linking.c"))
        .arg(&staticlib)
        .arg("-I")
        .arg(manifest.join("include"))
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&binary)
        .output()
        .unwrap();
    assert!(
        compile.status.success(),
        "{cc} failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&binary).current_dir(scratch.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "example failed:\n{stdout}");
    assert!(stdout.contains("linked to user 101"), "unexpected output:\n{stdout}");
    assert!(stdout.trim_end().ends_with("ok"), "unexpected output:\n{stdout}");
}
