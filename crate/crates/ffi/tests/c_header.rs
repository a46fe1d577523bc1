use std::path::{Path, PathBuf};
use std::process::Command;

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpixmae_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <stdlib.h>
#include "pixmae.h"

int main(void) {
    PixmaeDataset *ds = NULL;
    PixmaeCheckpoint *ck = NULL;
    if (pixmae_dataset_synthetic(3, 4, 0.1f, 0.0f, 9, &ds) != PIXMAE_OK) return 10;
    if (pixmae_checkpoint_init(ds, 1, 32, 0, &ck) != PIXMAE_OK) return 11;
    size_t need = 0;
    if (pixmae_embed(ck, ds, NULL, 0, &need) != PIXMAE_ERR_BUFFER) return 12;
    float *buf = malloc(need * sizeof(float));
    if (pixmae_embed(ck, ds, buf, need, NULL) != PIXMAE_OK) return 13;
    uint64_t macs = 0;
    if (pixmae_count_flops(0, 0, PIXMAE_FLOP_INPUT_MS_PIXEL, false, &macs) != PIXMAE_OK) return 14;
    if (pixmae_dataset_read("/nonexistent.pts", &ds) == PIXMAE_OK) return 15;
    printf("%zu %llu %s\n", need, (unsigned long long)macs, pixmae_last_error_message() ? "err" : "none");
    free(buf);
    pixmae_checkpoint_free(ck);
    pixmae_dataset_free(ds);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "96 2379392 err");
}
