use std::ffi::{CStr, CString};
use std::ptr;

use maskspot::maps::{save_map_stack, MaskStack, BACKGROUND_CHANNEL, NUM_CHANNELS};
use maskspot_ffi::*;

/// One "ab" word: column 0-1 votes 'a', columns 3-4 vote 'b'.
fn ab_stack_bytes() -> Vec<u8> {
    let (h, w) = (2, 6);
    let n = h * w;
    let mut data = vec![0.0f32; NUM_CHANNELS * n];
    for r in 0..h {
        for c in 0..w {
            let cell = r * w + c;
            data[cell] = 1.0;
            let ch = match c {
                0 | 1 => 11,
                3 | 4 => 12,
                _ => BACKGROUND_CHANNEL,
            };
            data[ch * n + cell] = 1.0;
        }
    }
    let stack = MaskStack::from_data(h, w, data).unwrap();
    let mut bytes = Vec::new();
    save_map_stack(&stack, &mut bytes).unwrap();
    bytes
}

fn last_error() -> String {
    let p = ms_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(bytes: &[u8]) -> *mut MsStack {
    let mut stack = ptr::null_mut();
    assert_eq!(unsafe { ms_stack_load_bytes(bytes.as_ptr(), bytes.len(), &mut stack) }, MsStatus::Ok);
    stack
}

fn vote(stack: *const MsStack) -> *mut MsDecoded {
    let mut decoded = ptr::null_mut();
    let status = unsafe { ms_pixel_voting(stack, -1.0, 1, false, &mut decoded) };
    assert_eq!(status, MsStatus::Ok);
    decoded
}

#[test]
fn load_vote_and_inspect() {
    let stack = load(&ab_stack_bytes());
    unsafe {
        assert_eq!((ms_stack_height(stack), ms_stack_width(stack)), (2, 6));
        let decoded = vote(stack);
        assert_eq!(CStr::from_ptr(ms_decoded_text(decoded)).to_str().unwrap(), "ab");
        assert_eq!(ms_decoded_len(decoded), 2);
        let mut probs = [0.0; MS_NUM_CHARS];
        assert_eq!(ms_decoded_probs(decoded, 1, probs.as_mut_ptr()), MsStatus::Ok);
        assert_eq!(probs[11], 1.0);
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
        assert_eq!(ms_decoded_probs(decoded, 2, probs.as_mut_ptr()), MsStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        ms_decoded_free(decoded);
        ms_stack_free(stack);
    }
}

#[test]
fn load_from_path() {
    let dir = std::env::temp_dir().join(format!("maskspot-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("ab.mtsr");
    std::fs::write(&file, ab_stack_bytes()).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut stack = ptr::null_mut();
    unsafe {
        assert_eq!(ms_stack_load_path(path.as_ptr(), &mut stack), MsStatus::Ok);
        assert_eq!(ms_stack_width(stack), 6);
        ms_stack_free(stack);
        let missing = CString::new(dir.join("none.mtsr").to_str().unwrap()).unwrap();
        assert_eq!(ms_stack_load_path(missing.as_ptr(), &mut stack), MsStatus::Io);
        assert!(stack.is_null());
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn format_errors_carry_offsets() {
    let mut bytes = ab_stack_bytes();
    bytes[0] = b'X';
    let mut stack = ptr::null_mut();
    let status = unsafe { ms_stack_load_bytes(bytes.as_ptr(), bytes.len(), &mut stack) };
    assert_eq!(status, MsStatus::Format);
    assert!(stack.is_null());
    assert!(last_error().contains("magic"), "{}", last_error());

    let bytes = ab_stack_bytes();
    let status = unsafe { ms_stack_load_bytes(bytes.as_ptr(), bytes.len() - 3, &mut stack) };
    assert_eq!(status, MsStatus::Format);
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(ms_stack_load_bytes(ptr::null(), 4, ptr::null_mut()), MsStatus::NullPointer);
        let mut out = 0usize;
        let a = CString::new("abc").unwrap();
        assert_eq!(ms_edit_distance(a.as_ptr(), ptr::null(), &mut out), MsStatus::NullPointer);
        assert!(last_error().contains('b'));
        assert_eq!(ms_stack_height(ptr::null()), 0);
        ms_stack_free(ptr::null_mut());
        ms_string_free(ptr::null_mut());
    }
}

#[test]
fn edit_distances() {
    let k = CString::new("kitten").unwrap();
    let s = CString::new("sitting").unwrap();
    let mut d = 0usize;
    assert_eq!(unsafe { ms_edit_distance(k.as_ptr(), s.as_ptr(), &mut d) }, MsStatus::Ok);
    assert_eq!(d, 3);

    // 'a' certain, second row split between b (0.6) and c (0.4)
    let mut probs = vec![0.0; 2 * MS_NUM_CHARS];
    probs[10] = 0.9;
    probs[MS_NUM_CHARS + 11] = 0.6;
    probs[MS_NUM_CHARS + 12] = 0.4;
    let mut decoded = ptr::null_mut();
    unsafe {
        assert_eq!(ms_decoded_from_probs(probs.as_ptr(), 2, &mut decoded), MsStatus::Ok);
        assert_eq!(CStr::from_ptr(ms_decoded_text(decoded)).to_str().unwrap(), "ab");
        let ac = CString::new("ac").unwrap();
        let mut w = 0.0;
        assert_eq!(ms_weighted_edit_distance(decoded, ac.as_ptr(), false, &mut w), MsStatus::Ok);
        assert!((w - 0.6).abs() < 1e-12);
        assert_eq!(ms_weighted_edit_distance(decoded, ac.as_ptr(), true, &mut w), MsStatus::Ok);
        assert_eq!(w, 1.0);
        ms_decoded_free(decoded);
    }
}

#[test]
fn lexicon_best_match() {
    let words: Vec<CString> = ["Hello", "ab", "world"].iter().map(|w| CString::new(*w).unwrap()).collect();
    let ptrs: Vec<*const std::ffi::c_char> = words.iter().map(|w| w.as_ptr()).collect();
    let mut lex = ptr::null_mut();
    let stack = load(&ab_stack_bytes());
    unsafe {
        assert_eq!(ms_lexicon_new(ptrs.as_ptr(), ptrs.len(), &mut lex), MsStatus::Ok);
        assert_eq!(ms_lexicon_len(lex), 3);
        let decoded = vote(stack);
        let mut word = ptr::null_mut();
        let mut dist = -1.0;
        assert_eq!(ms_best_match(decoded, lex, false, -1.0, &mut word, &mut dist), MsStatus::Ok);
        assert_eq!(CStr::from_ptr(word).to_str().unwrap(), "ab");
        assert_eq!(dist, 0.0);
        ms_string_free(word);
        ms_decoded_free(decoded);
        ms_lexicon_free(lex);

        // no word within distance 0.5 of "ab"
        let far = [CString::new("zzzz").unwrap()];
        let far_ptrs = [far[0].as_ptr()];
        assert_eq!(ms_lexicon_new(far_ptrs.as_ptr(), 1, &mut lex), MsStatus::Ok);
        let decoded = vote(stack);
        assert_eq!(ms_best_match(decoded, lex, true, 0.5, &mut word, &mut dist), MsStatus::Ok);
        assert!(word.is_null());
        ms_decoded_free(decoded);
        ms_lexicon_free(lex);

        assert_eq!(ms_lexicon_new(ptr::null(), 0, &mut lex), MsStatus::Ok);
        let decoded = vote(stack);
        assert_eq!(ms_best_match(decoded, lex, false, -1.0, &mut word, &mut dist), MsStatus::Contract);
        assert!(last_error().contains("empty"));
        ms_decoded_free(decoded);
        ms_lexicon_free(lex);
        ms_stack_free(stack);
    }
}

#[test]
fn losses_match_closed_forms() {
    let (mut value, mut grad) = (0.0, [0.0; 2]);
    let logits = [0.0, 0.0];
    let targets = [1.0, 0.0];
    unsafe {
        assert_eq!(
            ms_global_loss(logits.as_ptr(), targets.as_ptr(), 2, &mut value, grad.as_mut_ptr()),
            MsStatus::Ok
        );
    }
    assert!((value - 2f64.ln()).abs() < 1e-12);
    assert_eq!(grad, [-0.25, 0.25]);

    let logits = vec![0.0; MS_CHAR_CLASSES];
    let mut grad = vec![0.0; MS_CHAR_CLASSES];
    unsafe {
        assert_eq!(
            ms_char_loss(logits.as_ptr(), [0].as_ptr(), 1, &mut value, grad.as_mut_ptr()),
            MsStatus::Ok
        );
    }
    assert!((value - 37f64.ln()).abs() < 1e-12);
    assert!((grad[0] - (1.0 / 37.0 - 1.0)).abs() < 1e-12);
    assert!((grad[5] - 1.0 / 37.0).abs() < 1e-12);

    let bad_targets = [2.0];
    let status = unsafe { ms_global_loss([0.0].as_ptr(), bad_targets.as_ptr(), 1, &mut value, grad.as_mut_ptr()) };
    assert_ne!(status, MsStatus::Ok);
}

#[test]
fn header_is_generated_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/maskspot.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["ms_stack_load_bytes", "ms_pixel_voting", "ms_best_match", "ms_char_loss", "MS_STATUS_OK"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let probe = std::env::temp_dir().join(format!("maskspot-header-{}.c", std::process::id()));
    std::fs::write(&probe, "#include \"maskspot.h\"\nint main(void) { return MS_STATUS_OK; }\n").unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&probe)
        .status();
    std::fs::remove_file(&probe).unwrap();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("no C compiler available, syntax check not run: {e}"),
    }
}
