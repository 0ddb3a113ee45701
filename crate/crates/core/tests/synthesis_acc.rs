use nalgebra::{DMatrix, DVector};
use nnmon_core::scenario::acc::{build_acc_model, discretize, AccParams, Discretization};
use nnmon_core::synthesis::decrement_form;
use nnmon_core::{lyapunov_decrement, synthesize, verify_certificate, ObserverCertificate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn acc() -> nnmon_core::SystemModel {
    let acc = build_acc_model(&AccParams::default());
    discretize(&acc.continuous, 0.1, Discretization::Euler).unwrap().model
}

#[test]
fn acc_certificate_is_valid_and_near_reference() {
    let model = acc();
    let t = std::time::Instant::now();
    let cert = synthesize(&model, 1e-6).unwrap();
    eprintln!("synthesis took {:?}, rho = {}", t.elapsed(), cert.rho);
    // Reference value from an independent conic solver.
    assert!(((cert.rho - 26.28212) / 26.28212).abs() < 1e-3, "rho = {}", cert.rho);
    let report = verify_certificate(&model, &cert).unwrap();
    assert!(report.is_valid(1e-6), "{:?}", report.violations(1e-6));
    assert!(report.lmi_min_eigenvalue >= 1e-6 - 1e-8);
    assert!(report.a_o_min >= -1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    assert_eq!(lyapunov_decrement(&cert, &model, &DVector::zeros(6), &DVector::zeros(model.q())).unwrap(), 0.0);
    for _ in 0..1000 {
        let dx = DVector::from_fn(6, |_, _| rng.random_range(-10.0..10.0));
        let xi = DVector::from_fn(model.q(), |_, _| rng.random_range(-10.0..10.0));
        assert!(lyapunov_decrement(&cert, &model, &dx, &xi).unwrap() <= 1e-9);
    }

    // Halving ρ below its minimum makes the form indefinite.
    let mut halved = cert.clone();
    halved.rho /= 2.0;
    let form = decrement_form(&halved, &model).unwrap();
    let eig = form.symmetric_eigen();
    let (k, top) = eig.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    assert!(top > 0.0);
    let zeta = eig.eigenvectors.column(k).into_owned();
    let dx = zeta.rows(0, 6).into_owned();
    let xi = zeta.rows(6, model.q()).into_owned();
    assert!(lyapunov_decrement(&halved, &model, &dx, &xi).unwrap() > 0.0);
}

#[test]
fn constructed_violations_are_flagged() {
    let model = acc();
    let cert = synthesize(&model, 1e-6).unwrap();
    let swapped = ObserverCertificate::from_variables(cert.p.clone(), cert.h2.clone(), cert.h1.clone(), cert.rho, cert.eps).unwrap();
    assert!(verify_certificate(&model, &swapped).unwrap().nonnegativity < 0.0);

    let base = verify_certificate(&model, &cert).unwrap();
    let scaled_p: Vec<f64> = cert.p.iter().map(|v| 2.0 * v).collect();
    let scaled = ObserverCertificate::from_variables(scaled_p, cert.h1.clone(), cert.h2.clone(), cert.rho, cert.eps).unwrap();
    let report = verify_certificate(&model, &scaled).unwrap();
    assert!((report.lmi_min_eigenvalue - base.lmi_min_eigenvalue).abs() > 1e-6);
    assert!(!report.is_valid(1e-6));
}

#[test]
fn synthesis_is_deterministic() {
    let model = acc();
    let a = synthesize(&model, 1e-6).unwrap();
    let b = synthesize(&model, 1e-6).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn zoh_model_is_also_synthesizable() {
    let acc = build_acc_model(&AccParams::default());
    let model = discretize(&acc.continuous, 0.1, Discretization::Zoh).unwrap().model;
    let cert = synthesize(&model, 1e-6).unwrap();
    assert!(verify_certificate(&model, &cert).unwrap().is_valid(1e-6));
    let _ = DMatrix::<f64>::zeros(1, 1);
}
