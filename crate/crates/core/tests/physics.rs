use fiberm2::beam_quality::{caustic_planes, m2_vcm};
use fiberm2::field::{sample_modal_vector, superpose};
use fiberm2::seed::sample_rng;
use fiberm2::{m2_direct, m2_vcm_auto, FiberSpec, Grid, ModalVector, ModeBasis, ModeCase};

fn basis(case: ModeCase) -> ModeBasis {
    let spec = FiberSpec::reference();
    ModeBasis::new(&spec, Grid::physics(&spec).unwrap(), case.count()).unwrap()
}

#[test]
fn direct_and_caustic_routes_agree_on_random_beams() {
    let wavelength = FiberSpec::reference().wavelength_um;
    for case in ModeCase::ALL {
        let b = basis(case);
        for i in 0..4 {
            let mv = sample_modal_vector(case, &mut sample_rng(11, 0, i));
            let field = superpose(&b.fields, &mv).unwrap();
            let d = m2_direct(&field).unwrap();
            let v = m2_vcm_auto(&field, wavelength).unwrap().m2;
            for (a, b) in [(d.m2_x, v.m2_x), (d.m2_y, v.m2_y)] {
                assert!((a - b).abs() / b < 0.01, "{case:?} sample {i}: direct {a}, caustic {b}");
            }
            assert!(d.m2_eff >= 1.0 - 1e-3, "{case:?} sample {i}: {}", d.m2_eff);
        }
    }
}

#[test]
fn pure_fundamental_mode_is_nearly_gaussian() {
    let b = basis(ModeCase::Three);
    let mv = ModalVector::new(vec![1.0, 0.0, 0.0], vec![0.0; 3]).unwrap();
    let m = m2_direct(&superpose(&b.fields, &mv).unwrap()).unwrap();
    assert!(m.m2_x > 1.0 && m.m2_x < 1.2, "{}", m.m2_x);
    assert_eq!(m.m2_x.to_bits(), m.m2_y.to_bits());
}

#[test]
fn more_planes_do_not_change_the_caustic_result_much() {
    let wavelength = FiberSpec::reference().wavelength_um;
    let b = basis(ModeCase::Six);
    let field = superpose(&b.fields, &sample_modal_vector(ModeCase::Six, &mut sample_rng(3, 0, 0))).unwrap();
    let coarse = m2_vcm(&field, wavelength, &caustic_planes(&field, wavelength, 11).unwrap()).unwrap();
    let fine = m2_vcm(&field, wavelength, &caustic_planes(&field, wavelength, 41).unwrap()).unwrap();
    assert!((coarse.m2.m2_eff - fine.m2.m2_eff).abs() / fine.m2.m2_eff < 1e-3);
}
