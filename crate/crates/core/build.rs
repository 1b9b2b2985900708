use std::process::Command;

fn main() {
    let pkg = format!("v{}", std::env::var("CARGO_PKG_VERSION").unwrap());
    let describe = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty());
    // a bare hash means no tag is reachable; prefix the crate version
    let version = match describe {
        Some(d) if d.starts_with('v') => d,
        Some(d) => format!("{pkg}-g{d}"),
        None => pkg,
    };
    println!("cargo:rustc-env=PAIRRE_BUILD_VERSION={version}");
    println!("cargo:rerun-if-changed=build.rs");
    for p in ["../../.git/HEAD", "../../.git/index"] {
        if std::path::Path::new(p).exists() {
            println!("cargo:rerun-if-changed={p}");
        }
    }
}
