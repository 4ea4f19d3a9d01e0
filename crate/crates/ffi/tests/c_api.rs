use std::ffi::{c_char, c_int, CString};
use std::ptr;

use papc_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { papc_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn prox_soft_threshold() {
    let tag = CString::new("l1(weight=1)").unwrap();
    let mut p: *mut PapcProx = ptr::null_mut();
    unsafe {
        assert_eq!(papc_prox_new(tag.as_ptr(), 3, &mut p), PapcStatus::Ok);
        let x = [3.0, -0.5, -2.0];
        let mut y = [0.0; 3];
        assert_eq!(papc_prox_apply(p, 1.0, x.as_ptr(), y.as_mut_ptr(), 3), PapcStatus::Ok);
        assert_eq!(y, [2.0, 0.0, -1.0]);
        let mut v = 0.0;
        assert_eq!(papc_prox_value(p, x.as_ptr(), 3, &mut v), PapcStatus::Ok);
        assert_eq!(v, 5.5);
        assert_eq!(
            papc_prox_apply(p, 1.0, x.as_ptr(), y.as_mut_ptr(), 2),
            PapcStatus::DimensionMismatch
        );
        assert_eq!(papc_prox_apply(p, -1.0, x.as_ptr(), y.as_mut_ptr(), 3), PapcStatus::InvalidArgument);
        papc_prox_free(p);
    }
}

#[test]
fn errors_are_reported() {
    let tag = CString::new("elastic(weight=1)").unwrap();
    let mut p: *mut PapcProx = ptr::null_mut();
    unsafe {
        assert_eq!(papc_prox_new(tag.as_ptr(), 2, &mut p), PapcStatus::UnknownName);
        assert!(p.is_null());
        assert!(last_error().contains("l1"), "{}", last_error());
        assert_eq!(papc_prox_new(ptr::null(), 2, &mut p), PapcStatus::NullPointer);
        assert_eq!(papc_prox_apply(ptr::null(), 1.0, ptr::null(), ptr::null_mut(), 0), PapcStatus::NullPointer);
        papc_prox_free(ptr::null_mut());
    }
    let mut buf = [0 as c_char; 4];
    let n = unsafe { papc_last_error(buf.as_mut_ptr(), 4) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn spectral_norm_of_a_diagonal() {
    let a = [3.0, 0.0, 0.0, 0.0, -5.0, 0.0];
    let (mut norm, mut conv) = (0.0, 0 as c_int);
    unsafe {
        assert_eq!(
            papc_spectral_norm(a.as_ptr(), 2, 3, 1e-12, 10_000, 7, &mut norm, &mut conv),
            PapcStatus::Ok
        );
    }
    assert!((norm - 5.0).abs() < 1e-9);
    assert_eq!(conv, 1);
}

#[test]
fn tau_check_against_closed_form() {
    // U = diag(1, 2), L = diag(1, 1): largest eigenvalue of U^{1/2} L L' U^{1/2} is 2
    let u = [1.0, 0.0, 0.0, 2.0];
    let l = [1.0, 0.0, 0.0, 1.0];
    let mut verdict = PapcTauVerdict::Indeterminate;
    let mut lam = 0.0;
    unsafe {
        assert_eq!(
            papc_validate_tau(u.as_ptr(), l.as_ptr(), 2, 2, 0.4, 1e-6, &mut verdict, &mut lam),
            PapcStatus::Ok
        );
        assert_eq!(verdict, PapcTauVerdict::Accepted);
        assert!((lam - 2.0).abs() < 1e-8);
        assert_eq!(
            papc_validate_tau(u.as_ptr(), l.as_ptr(), 2, 2, 0.6, 1e-6, &mut verdict, &mut lam),
            PapcStatus::Ok
        );
        assert_eq!(verdict, PapcTauVerdict::Rejected);
        let bad = [1.0, 0.0, 0.0, -1.0];
        assert_eq!(
            papc_validate_tau(bad.as_ptr(), l.as_ptr(), 2, 2, 0.1, 1e-6, &mut verdict, &mut lam),
            PapcStatus::NotPositiveDefinite
        );
    }
}

#[test]
fn solver_converges_on_lasso() {
    let name = CString::new("lasso").unwrap();
    let mut prob: *mut PapcProblem = ptr::null_mut();
    let mut solver: *mut PapcSolver = ptr::null_mut();
    unsafe {
        assert_eq!(papc_problem_build(name.as_ptr(), 0, 1, &mut prob), PapcStatus::Ok);
        let (mut d, mut k) = (0usize, 0usize);
        assert_eq!(papc_problem_dims(prob, &mut d, &mut k), PapcStatus::Ok);
        let (mut xb, mut vb) = (vec![0.0; d], vec![0.0; k]);
        assert_eq!(
            papc_problem_solution(prob, xb.as_mut_ptr(), d, vb.as_mut_ptr(), k),
            PapcStatus::Ok
        );
        assert_eq!(papc_solver_new(prob, 0.0, 1.0, 3, &mut solver), PapcStatus::Ok);
        papc_problem_free(prob);
        assert_eq!(papc_solver_step(solver, 2000), PapcStatus::Ok);
        let (mut n, mut x, mut v) = (0usize, vec![0.0; d], vec![0.0; k]);
        assert_eq!(
            papc_solver_state(solver, &mut n, x.as_mut_ptr(), d, v.as_mut_ptr(), k),
            PapcStatus::Ok
        );
        assert_eq!(n, 2000);
        let err = x.iter().zip(&xb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let (mut pr, mut du) = (1.0, 1.0);
        assert_eq!(papc_solver_kkt(solver, &mut pr, &mut du), PapcStatus::Ok);
        assert!(pr.max(du) < 1e-10);
        papc_solver_free(solver);
        let bogus = CString::new("ridge").unwrap();
        assert_eq!(papc_problem_build(bogus.as_ptr(), 0, 1, &mut prob), PapcStatus::UnknownName);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/papc.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["papc_prox_new", "papc_validate_tau", "papc_solver_step", "papc_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ PapcProx *p = 0; PapcStatus s = papc_prox_new(\"zero\", 2, &p); return s == PAPC_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
}
