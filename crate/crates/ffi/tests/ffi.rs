use std::ffi::{CStr, CString};
use std::ptr;

use pedqtl_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pq_last_error_message()) }.to_string_lossy().into_owned()
}

fn write_trio_plink(dir: &std::path::Path) -> CString {
    use pedqtl::genio::{FamEntry, GenotypeMatrix, SnpInfo};
    let samples = ["fa", "mo", "kid"]
        .iter()
        .map(|id| FamEntry {
            family_id: "F".into(),
            individual_id: id.to_string(),
        })
        .collect();
    let snps = (0..4).map(|s| SnpInfo::new(&format!("rs{s}"), "1", s + 1)).collect();
    let rows = vec![vec![0, 1, 2], vec![2, 1, 1], vec![1, 3, 0], vec![0, 0, 1]];
    let g = GenotypeMatrix::from_codes(snps, samples, &rows).unwrap();
    let prefix = dir.join("trio");
    g.write_plink(&prefix).unwrap();
    CString::new(prefix.to_str().unwrap()).unwrap()
}

#[test]
fn genotype_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = write_trio_plink(dir.path());
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(pq_genotypes_read_bed(prefix.as_ptr(), &mut g), PQ_OK);
        assert_eq!(pq_genotypes_n_snps(g), 4);
        assert_eq!(pq_genotypes_n_individuals(g), 3);
        let mut v = 0u8;
        assert_eq!(pq_genotypes_get(g, 0, 2, &mut v), PQ_OK);
        assert_eq!(v, 2);
        assert_eq!(pq_genotypes_get(g, 2, 1, &mut v), PQ_OK);
        assert_eq!(v, PQ_GENOTYPE_MISSING);
        assert_eq!(pq_genotypes_get(g, 4, 0, &mut v), PQ_ERR_OUT_OF_RANGE);
        assert!(last_error().contains("outside"));

        let mut k = ptr::null_mut();
        assert_eq!(pq_kernel_grm(g, &mut k), PQ_OK);
        assert_eq!(pq_kernel_dim(k), 3);
        let (mut a, mut b) = (0.0, 0.0);
        pq_kernel_get(k, 0, 1, &mut a);
        pq_kernel_get(k, 1, 0, &mut b);
        assert_eq!(a, b);
        pq_kernel_free(k);
        let mut k = ptr::null_mut();
        assert_eq!(pq_kernel_mom(g, &mut k), PQ_OK);
        pq_kernel_free(k);
        pq_genotypes_free(g);
    }
}

#[test]
fn null_and_bad_inputs_map_to_codes() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(pq_genotypes_read_bed(ptr::null(), &mut g), PQ_ERR_NULL_POINTER);
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(pq_genotypes_read_bed(bad.as_ptr().cast(), &mut g), PQ_ERR_INVALID_UTF8);
        let missing = CString::new("/nonexistent/prefix").unwrap();
        assert_eq!(pq_genotypes_read_bed(missing.as_ptr(), &mut g), PQ_ERR_DATA);
        assert!(!last_error().is_empty());
        assert_eq!(pq_genotypes_n_snps(ptr::null()), 0);
        pq_genotypes_free(ptr::null_mut());
        pq_kernel_free(ptr::null_mut());
        let mut v = 0.0;
        assert_eq!(pq_kernel_get(ptr::null(), 0, 0, &mut v), PQ_ERR_NULL_POINTER);
        assert_eq!(pq_chi2_sf(1.0, 0, &mut v), PQ_ERR_DATA);
        assert_eq!(pq_hwe_exact(0, 0, 0, &mut v), PQ_ERR_DATA);
    }
}

#[test]
fn statistics_entry_points() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(pq_chi2_sf(3.841458820694124, 1, &mut v), PQ_OK);
        assert!((v - 0.05).abs() < 1e-12);
        assert_eq!(pq_hwe_exact(0, 2, 0, &mut v), PQ_OK);
        assert!((0.0..=1.0).contains(&v));
        let ps: Vec<f64> = (0..999).map(|i| (i as f64 + 0.5) / 999.0).collect();
        assert_eq!(pq_genomic_inflation(ps.as_ptr(), ps.len(), &mut v), PQ_OK);
        assert!((v - 1.0).abs() < 0.01);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn pedigree_kernel_and_control_runs() {
    let dir = tempfile::tempdir().unwrap();
    let ped = dir.path().join("ped.csv");
    std::fs::write(&ped, "PedigreeID,PersonID,Father,Mother,Sex,Household\nF,fa,,,1,\nF,mo,,,2,\nF,kid,fa,mo,1,\n").unwrap();
    let cped = CString::new(ped.to_str().unwrap()).unwrap();
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(pq_kernel_theoretical_from_pedigree(cped.as_ptr(), &mut k), PQ_OK);
        assert_eq!(pq_kernel_dim(k), 3);
        let mut v = 0.0;
        pq_kernel_get(k, 0, 2, &mut v);
        assert_eq!(v, 0.25);
        pq_kernel_free(k);
    }
    let ctl = dir.path().join("k.ctl");
    std::fs::write(&ctl, "pedigree_file = ped.csv\noutput_dir = out\n").unwrap();
    let cctl = CString::new(ctl.to_str().unwrap()).unwrap();
    let sub = CString::new("kinship").unwrap();
    unsafe {
        assert_eq!(pq_run_control(sub.as_ptr(), cctl.as_ptr()), PQ_OK);
    }
    assert!(dir.path().join("out/kinship_theoretical.tsv").exists());
    std::fs::write(&ctl, "no_such_key = 1\n").unwrap();
    unsafe {
        assert_eq!(pq_run_control(sub.as_ptr(), cctl.as_ptr()), PQ_ERR_CONFIG);
    }
    assert!(last_error().contains("no_such_key"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/pedqtl.h");
    for f in [
        "pq_genotypes_read_bed",
        "pq_genotypes_n_snps",
        "pq_genotypes_n_individuals",
        "pq_genotypes_get",
        "pq_genotypes_free",
        "pq_kernel_grm",
        "pq_kernel_mom",
        "pq_kernel_theoretical_from_pedigree",
        "pq_kernel_dim",
        "pq_kernel_get",
        "pq_kernel_free",
        "pq_hwe_exact",
        "pq_genomic_inflation",
        "pq_chi2_sf",
        "pq_run_control",
        "pq_last_error_message",
        "PQ_ERR_PANIC",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    if !cc.status.success() {
        return;
    }
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"pedqtl.h\"\nint main(void) { return pq_last_error_message() == 0; }\n").unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
