use std::ffi::{CStr, CString};
use std::ptr;

use pixmae_ffi::*;

fn last_message() -> String {
    let p = pixmae_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synthetic(n: usize, seed: u64) -> *mut PixmaeDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pixmae_dataset_synthetic(n, 4, 0.1, 0.0, seed, &mut ds) }, PIXMAE_OK);
    ds
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pixmae_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dataset_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic(12, 1);
    assert_eq!(unsafe { pixmae_dataset_len(ds) }, 12);
    for name in ["d.pts", "d.csv"] {
        let path = CString::new(dir.path().join(name).to_str().unwrap()).unwrap();
        assert_eq!(unsafe { pixmae_dataset_write(ds, path.as_ptr()) }, PIXMAE_OK);
        let mut back = ptr::null_mut();
        assert_eq!(unsafe { pixmae_dataset_read(path.as_ptr(), &mut back) }, PIXMAE_OK);
        assert_eq!(unsafe { pixmae_dataset_len(back) }, 12);
        let (mut a, mut b) = (0i64, 0i64);
        for i in 0..12 {
            unsafe {
                assert_eq!(pixmae_dataset_label(ds, i, &mut a), PIXMAE_OK);
                assert_eq!(pixmae_dataset_label(back, i, &mut b), PIXMAE_OK);
            }
            assert_eq!(a, b);
            assert!((0..4).contains(&a));
        }
        unsafe { pixmae_dataset_free(back) };
    }
    let mut l = 0i64;
    assert_eq!(unsafe { pixmae_dataset_label(ds, 12, &mut l) }, PIXMAE_ERR_ARGUMENT);
    assert!(last_message().contains("out of range"));
    unsafe { pixmae_dataset_free(ds) };
}

#[test]
fn errors_carry_codes_and_messages() {
    pixmae_clear_error();
    assert_eq!(pixmae_last_error_code(), PIXMAE_OK);
    assert!(pixmae_last_error_message().is_null());

    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pixmae_dataset_read(ptr::null(), &mut ds) }, PIXMAE_ERR_NULL);
    assert_eq!(pixmae_last_error_code(), PIXMAE_ERR_NULL);

    let missing = CString::new("/nonexistent/x.pts").unwrap();
    let code = unsafe { pixmae_dataset_read(missing.as_ptr(), &mut ds) };
    assert!(code > 0);
    assert!(ds.is_null());
    assert!(last_message().contains("pixmae synth --out"));

    assert!(unsafe { pixmae_dataset_synthetic(10, 0, 0.1, 0.0, 0, &mut ds) } > 0);
    assert!(unsafe { pixmae_dataset_synthetic(10, 4, 0.1, 0.0, 0, ptr::null_mut()) } == PIXMAE_ERR_NULL);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    let mut ck = ptr::null_mut();
    assert_eq!(unsafe { pixmae_checkpoint_load(junk.as_ptr(), &mut ck) }, pixmae::FormatError::BadMagic { expected: [0; 8], found: vec![] }.code());
    assert!(last_message().contains("magic"));

    let bad = [b'a', 0xff, 0];
    assert_eq!(unsafe { pixmae_checkpoint_load(bad.as_ptr().cast(), &mut ck) }, PIXMAE_ERR_UTF8);
}

#[test]
fn checkpoint_embed_and_counts() {
    let ds = synthetic(5, 2);
    let mut ck = ptr::null_mut();
    assert_eq!(unsafe { pixmae_checkpoint_init(ds, 0, 0, 7, &mut ck) }, PIXMAE_OK);
    assert_eq!(unsafe { pixmae_checkpoint_embedding_dim(ck) }, 128);
    assert_eq!(unsafe { pixmae_checkpoint_param_count(ck, false) }, 819_354);
    assert_eq!(unsafe { pixmae_checkpoint_param_count(ck, true) }, 402_240);

    let mut needed = 0usize;
    assert_eq!(unsafe { pixmae_embed(ck, ds, ptr::null_mut(), 0, &mut needed) }, PIXMAE_ERR_BUFFER);
    assert_eq!(needed, 5 * 128);
    let mut buf = vec![f32::NAN; needed];
    assert_eq!(unsafe { pixmae_embed(ck, ds, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, PIXMAE_OK);
    assert!(buf.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pixmae_checkpoint_save(ck, path.as_ptr()) }, PIXMAE_OK);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { pixmae_checkpoint_load(path.as_ptr(), &mut back) }, PIXMAE_OK);
    let mut again = vec![0f32; needed];
    assert_eq!(unsafe { pixmae_embed(back, ds, again.as_mut_ptr(), again.len(), ptr::null_mut()) }, PIXMAE_OK);
    assert_eq!(buf, again);
    unsafe {
        pixmae_checkpoint_free(back);
        pixmae_checkpoint_free(ck);
        pixmae_dataset_free(ds);
        pixmae_checkpoint_free(ptr::null_mut());
        pixmae_dataset_free(ptr::null_mut());
    }
}

#[test]
fn flop_counts() {
    let mut full = 0u64;
    let mut ms = 0u64;
    let mut rgb = 0u64;
    unsafe {
        assert_eq!(pixmae_count_flops(0, 0, PixmaeFlopInput::Full, true, &mut full), PIXMAE_OK);
        assert_eq!(pixmae_count_flops(0, 0, PixmaeFlopInput::MsPixel, false, &mut ms), PIXMAE_OK);
        assert_eq!(pixmae_count_flops(0, 0, PixmaeFlopInput::RgbPixel, false, &mut rgb), PIXMAE_OK);
        assert!(pixmae_count_flops(2, 130, PixmaeFlopInput::Full, true, &mut full) > 0);
    }
    assert_eq!(ms, 2_379_392);
    assert!(rgb < ms);
}
