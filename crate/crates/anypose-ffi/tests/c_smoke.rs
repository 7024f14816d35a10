//! Compile and run a real C program against the generated header and the
//! built static library. Skips (with a notice) when the staticlib has not
//! been produced yet (`cargo build` creates it) or no C compiler is present.

use std::path::PathBuf;
use std::process::Command;

const C_PROGRAM: &str = r#"
#include <anypose.h>
#include <stdio.h>
#include <string.h>

int main(void) {
    const char *json =
        "{\"order\":2,\"m_joints\":1,\"widths\":[6,3],"
        "\"weights\":[[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]],"
        "\"biases\":[[0,0,0]],\"seed\":0,\"frame_interval_sec\":0.04}";
    ApModel *model = NULL;
    if (ap_model_from_json(json, &model) != ApOk) {
        fprintf(stderr, "load failed: %s\n", ap_last_error_message());
        return 1;
    }
    if (ap_model_order(model) != 2 || ap_model_m_joints(model) != 1) {
        return 2;
    }
    /* Two poses moving +25 mm/s along x. */
    double observed[6] = {0.0, 0.0, 0.0, 1.0, 0.0, 0.0};
    double times[2] = {0.08, 0.4};
    double out[6];
    if (ap_forecast(model, observed, 2, 0.04, times, 2, out) != ApOk) {
        fprintf(stderr, "forecast failed: %s\n", ap_last_error_message());
        return 3;
    }
    if (out[0] < 2.9 || out[0] > 3.1) return 4;   /* 1 + 25*0.08 */
    if (out[3] < 10.9 || out[3] > 11.1) return 5; /* 1 + 25*0.4  */
    if (ap_forecast(NULL, observed, 2, 0.04, times, 2, out) != ApNullArgument) {
        return 6;
    }
    ap_model_free(model);
    if (strlen(ap_version()) == 0) return 7;
    return 0;
}
"#;

fn find_staticlib() -> Option<PathBuf> {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.parent()?.parent()?.join("target");
    for profile in ["debug", "release"] {
        let lib = target.join(profile).join("libanypose_ffi.a");
        if lib.exists() {
            return Some(lib);
        }
    }
    None
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = find_staticlib() else {
        eprintln!("skipping: libanypose_ffi.a not built yet (run `cargo build -p anypose-ffi`)");
        return;
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler available");
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, C_PROGRAM).unwrap();

    let compile = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .arg("-lpthread")
        .arg("-ldl")
        .arg("-lm")
        .arg("-o")
        .arg(&bin)
        .output()
        .expect("compiler runs");
    assert!(
        compile.status.success(),
        "compilation failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&bin).output().expect("program runs");
    assert!(
        run.status.success(),
        "smoke program exited {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
}
