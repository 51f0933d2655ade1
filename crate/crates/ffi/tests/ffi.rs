use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gsvideo_ffi::*;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden_16x16x4.gsv")
}

fn golden_bytes() -> Vec<u8> {
    std::fs::read(golden_path()).unwrap()
}

fn last_error() -> Option<String> {
    let p = gsv_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

struct Handle(*mut GsvModel);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { gsv_model_free(self.0) };
    }
}

fn open_golden() -> Handle {
    let path = CString::new(golden_path().to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { gsv_model_open(path.as_ptr(), &mut out) },
        GsvStatus::Ok
    );
    assert!(!out.is_null());
    assert_eq!(last_error(), None);
    Handle(out)
}

#[test]
fn info_matches_core() {
    let h = open_golden();
    let mut info = GsvModelInfo::default();
    assert_eq!(unsafe { gsv_model_info(h.0, &mut info) }, GsvStatus::Ok);
    let model = gsvideo::codec::read_bitstream(&golden_bytes()).unwrap();
    assert_eq!((info.width, info.height, info.num_frames), (16, 16, 4));
    assert_eq!(info.num_gaussians as usize, model.config.num_gaussians);
    assert_eq!(
        info.num_params as usize,
        gsvideo::count_params(&model.config)
    );
    assert_eq!(info.stream_bytes as usize, golden_bytes().len());
    assert_eq!(info.bpp, gsv_compute_bpp(info.stream_bytes, 4, 16, 16));
}

#[test]
fn renders_match_core() {
    let h = open_golden();
    let model = gsvideo::codec::read_bitstream(&golden_bytes()).unwrap();
    let raster = model.raster_config(true);
    let n = 16 * 16 * 3;
    for f in 0..4u32 {
        let expected = model.render_frame(f as usize, &raster).unwrap();
        let mut rgb = vec![0u8; n];
        let mut fl = vec![0f32; n + 5];
        assert_eq!(
            unsafe { gsv_model_render_frame(h.0, f, rgb.as_mut_ptr(), n) },
            GsvStatus::Ok
        );
        assert_eq!(
            unsafe { gsv_model_render_frame_f32(h.0, f, fl.as_mut_ptr(), fl.len()) },
            GsvStatus::Ok
        );
        assert_eq!(rgb, expected.to_rgb8());
        assert_eq!(&fl[..n], &expected.data[..]);
        assert!(
            fl[n..].iter().all(|&v| v == 0.0),
            "writes stay within width * height * 3"
        );
    }
}

#[test]
fn from_bytes_equals_open() {
    let bytes = golden_bytes();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { gsv_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut out) },
        GsvStatus::Ok
    );
    let a = Handle(out);
    let b = open_golden();
    let n = 16 * 16 * 3;
    let (mut x, mut y) = (vec![0u8; n], vec![0u8; n]);
    unsafe {
        gsv_model_render_frame(a.0, 2, x.as_mut_ptr(), n);
        gsv_model_render_frame(b.0, 2, y.as_mut_ptr(), n);
    }
    assert_eq!(x, y);
}

#[test]
fn failures_carry_codes_and_messages() {
    let mut out = ptr::null_mut();
    let mut bytes = golden_bytes();

    bytes[0] = b'X';
    assert_eq!(
        unsafe { gsv_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut out) },
        GsvStatus::BadMagic
    );
    assert!(out.is_null());
    assert!(last_error().unwrap().contains("magic"));

    let mut bytes = golden_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert_eq!(
        unsafe { gsv_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut out) },
        GsvStatus::ChecksumMismatch
    );
    assert_eq!(
        unsafe { gsv_model_from_bytes(bytes.as_ptr(), 7, &mut out) },
        GsvStatus::Truncated
    );

    let mut bytes = golden_bytes();
    bytes[4] = 9;
    assert_eq!(
        unsafe { gsv_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut out) },
        GsvStatus::VersionMismatch
    );

    let missing = CString::new("/nonexistent/clip.gsv").unwrap();
    assert_eq!(
        unsafe { gsv_model_open(missing.as_ptr(), &mut out) },
        GsvStatus::Io
    );
    assert!(last_error().unwrap().contains("/nonexistent/clip.gsv"));

    assert_eq!(
        unsafe { gsv_model_open(ptr::null(), &mut out) },
        GsvStatus::NullPointer
    );
    assert_eq!(
        unsafe { gsv_model_open(missing.as_ptr(), ptr::null_mut()) },
        GsvStatus::NullPointer
    );
    assert_eq!(
        unsafe { gsv_model_info(ptr::null(), &mut GsvModelInfo::default()) },
        GsvStatus::NullPointer
    );

    let h = open_golden();
    let mut buf = vec![0u8; 16 * 16 * 3];
    assert_eq!(
        unsafe { gsv_model_render_frame(h.0, 4, buf.as_mut_ptr(), buf.len()) },
        GsvStatus::FrameOutOfRange
    );
    assert_eq!(
        unsafe { gsv_model_render_frame(h.0, 0, buf.as_mut_ptr(), buf.len() - 1) },
        GsvStatus::BufferTooSmall
    );
    assert!(
        buf.iter().all(|&b| b == 0),
        "failed calls leave the buffer untouched"
    );
    assert_eq!(
        unsafe { gsv_model_render_frame(h.0, 0, ptr::null_mut(), 0) },
        GsvStatus::NullPointer
    );
    assert_eq!(
        unsafe { gsv_model_render_frame(h.0, 0, buf.as_mut_ptr(), buf.len()) },
        GsvStatus::Ok
    );
    assert_eq!(last_error(), None, "success clears the message");
    unsafe { gsv_model_free(ptr::null_mut()) };
}

#[test]
fn errors_are_per_thread() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { gsv_model_from_bytes(b"nope".as_ptr(), 4, &mut out) },
        GsvStatus::BadMagic
    );
    std::thread::spawn(|| assert_eq!(last_error(), None))
        .join()
        .unwrap();
    assert!(last_error().is_some());
}

#[test]
fn handle_renders_concurrently() {
    let h = open_golden();
    let addr = h.0 as usize;
    let n = 16 * 16 * 3;
    let outputs: Vec<Vec<u8>> = std::thread::scope(|s| {
        let jobs: Vec<_> = (0..4u32)
            .map(|f| {
                s.spawn(move || {
                    let mut buf = vec![0u8; n];
                    let st = unsafe {
                        gsv_model_render_frame(addr as *const GsvModel, f, buf.as_mut_ptr(), n)
                    };
                    assert_eq!(st, GsvStatus::Ok);
                    buf
                })
            })
            .collect();
        jobs.into_iter().map(|j| j.join().unwrap()).collect()
    });
    for (f, got) in outputs.iter().enumerate() {
        let mut want = vec![0u8; n];
        unsafe { gsv_model_render_frame(h.0, f as u32, want.as_mut_ptr(), n) };
        assert_eq!(got, &want);
    }
}

#[test]
fn bpp_and_version() {
    assert_eq!(gsv_compute_bpp(1000, 10, 20, 40), 1.0);
    assert_eq!(gsv_compute_bpp(1000, 0, 20, 40), 0.0);
    let v = unsafe { CStr::from_ptr(gsv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/gsvideo.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "gsv_model_open",
        "gsv_model_from_bytes",
        "gsv_model_free",
        "gsv_model_info",
        "gsv_model_render_frame",
        "gsv_model_render_frame_f32",
        "gsv_last_error_message",
        "gsv_compute_bpp",
        "gsv_version",
        "GSV_STATUS_OK = 0",
        "typedef struct GsvModel GsvModel",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"gsvideo.h\"\nint main(void) { GsvModel *m = 0; GsvStatus s = gsv_model_open(\"x\", &m);\n\
         gsv_model_free(m); return s == GSV_STATUS_OK; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(e) => eprintln!("skipping C compile check, no `{cc}`: {e}"),
    }
}
