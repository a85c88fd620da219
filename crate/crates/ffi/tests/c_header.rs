//! Builds a small C program against include/qac.h and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn staticlib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.to_path_buf(), deps.parent()?.to_path_buf()]
        .into_iter()
        .map(|d| d.join("libqac_ffi.a"))
        .find(|p| p.exists())
}

fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = manifest_dir().join("include");
    let out = tempfile::tempdir().unwrap();
    for (lang, std) in [("c", "-std=c11"), ("c++", "-std=c++17")] {
        let o = Command::new(cc())
            .args(["-x", lang, std, "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
            .arg(&include)
            .arg(manifest_dir().join("tests/c/smoke.c"))
            .current_dir(out.path())
            .output()
            .expect("C compiler");
        assert!(o.status.success(), "{lang}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = staticlib() else {
        panic!("libqac_ffi.a not found next to {:?}", std::env::current_exe());
    };
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let o = Command::new(cc())
        .args(["-std=c11", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(o.status.success(), "link: {}", String::from_utf8_lossy(&o.stderr));
    let r = Command::new(Path::new(&exe)).output().unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let s = String::from_utf8_lossy(&r.stdout);
    assert!(s.starts_with("size=5 depth=2 targets=2 p0=0.500000"), "{s}");
}
