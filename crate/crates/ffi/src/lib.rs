//! C interface to pedqtl.
//!
//! Every fallible function returns one of the `PQ_*` status codes and writes
//! its result through an out pointer. On failure the message is available
//! from [`pq_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pedqtl::genio::{read_pedigree_csv, read_plink_prefix, GenotypeMatrix};
use pedqtl::kinship::{assemble_global_kernel, grm_kinship, mom_kinship, theoretical_kinship, KernelMatrix};
use pedqtl::Error;

pub const PQ_OK: i32 = 0;
pub const PQ_ERR_NULL_POINTER: i32 = 1;
pub const PQ_ERR_CONFIG: i32 = 2;
pub const PQ_ERR_DATA: i32 = 3;
pub const PQ_ERR_NUMERIC: i32 = 4;
pub const PQ_ERR_INVALID_UTF8: i32 = 5;
pub const PQ_ERR_PANIC: i32 = 6;
pub const PQ_ERR_OUT_OF_RANGE: i32 = 7;

/// Genotype code for a missing call, as returned by [`pq_genotypes_get`].
pub const PQ_GENOTYPE_MISSING: u8 = 3;

/// Opaque genotype matrix.
pub struct PqGenotypes {
    inner: GenotypeMatrix,
}

/// Opaque square kernel matrix.
pub struct PqKernel {
    inner: KernelMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn code_of(e: &Error) -> i32 {
    match e.exit_code() {
        2 => PQ_ERR_CONFIG,
        4 => PQ_ERR_NUMERIC,
        _ => PQ_ERR_DATA,
    }
}

/// Runs `body`, turning panics and errors into status codes.
fn guard<F: FnOnce() -> Result<(), (i32, String)>>(body: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            PQ_OK
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            PQ_ERR_PANIC
        }
    }
}

fn lib_err(e: Error) -> (i32, String) {
    (code_of(&e), e.to_string())
}

fn null(what: &str) -> (i32, String) {
    (PQ_ERR_NULL_POINTER, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (i32, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PQ_ERR_INVALID_UTF8, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads `<prefix>.bed/.bim/.fam`.
///
/// # Safety
/// `prefix` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_genotypes_read_bed(prefix: *const c_char, out: *mut *mut PqGenotypes) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let prefix = c_str(prefix, "prefix")?;
        let g = read_plink_prefix(Path::new(prefix)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PqGenotypes { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from [`pq_genotypes_read_bed`].
#[no_mangle]
pub unsafe extern "C" fn pq_genotypes_n_snps(g: *const PqGenotypes) -> usize {
    g.as_ref().map_or(0, |g| g.inner.n_snps())
}

/// # Safety
/// `g` must be null or a handle from [`pq_genotypes_read_bed`].
#[no_mangle]
pub unsafe extern "C" fn pq_genotypes_n_individuals(g: *const PqGenotypes) -> usize {
    g.as_ref().map_or(0, |g| g.inner.n_individuals())
}

/// Minor-allele count (0, 1, 2) or [`PQ_GENOTYPE_MISSING`].
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_genotypes_get(g: *const PqGenotypes, snp: usize, individual: usize, out: *mut u8) -> i32 {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("genotypes"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if snp >= g.inner.n_snps() || individual >= g.inner.n_individuals() {
            return Err((PQ_ERR_OUT_OF_RANGE, format!("({snp}, {individual}) outside the genotype matrix")));
        }
        *out = g.inner.get(snp, individual);
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pq_genotypes_free(g: *mut PqGenotypes) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

unsafe fn kernel_from(
    g: *const PqGenotypes,
    out: *mut *mut PqKernel,
    f: fn(&GenotypeMatrix) -> pedqtl::Result<KernelMatrix>,
) -> i32 {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("genotypes"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let k = f(&g.inner).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PqKernel { inner: k }));
        Ok(())
    })
}

/// Genomic relationship matrix on the kinship scale over all SNPs.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_kernel_grm(g: *const PqGenotypes, out: *mut *mut PqKernel) -> i32 {
    kernel_from(g, out, |g| grm_kinship(g, None))
}

/// Method-of-moments kinship.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_kernel_mom(g: *const PqGenotypes, out: *mut *mut PqKernel) -> i32 {
    kernel_from(g, out, mom_kinship)
}

/// Block-diagonal theoretical kinship of every pedigree in a pedigree CSV,
/// members in file order within topologically sorted pedigrees.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_kernel_theoretical_from_pedigree(path: *const c_char, out: *mut *mut PqKernel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let peds = read_pedigree_csv(Path::new(path)).map_err(lib_err)?;
        let k = assemble_global_kernel(&peds.iter().map(theoretical_kinship).collect::<Vec<_>>());
        *out = Box::into_raw(Box::new(PqKernel { inner: k }));
        Ok(())
    })
}

/// # Safety
/// `k` must be null or a live kernel handle.
#[no_mangle]
pub unsafe extern "C" fn pq_kernel_dim(k: *const PqKernel) -> usize {
    k.as_ref().map_or(0, |k| k.inner.dim())
}

/// # Safety
/// `k` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_kernel_get(k: *const PqKernel, i: usize, j: usize, out: *mut f64) -> i32 {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = k.inner.dim();
        if i >= n || j >= n {
            return Err((PQ_ERR_OUT_OF_RANGE, format!("({i}, {j}) outside a {n}x{n} kernel")));
        }
        *out = k.inner.values[(i, j)];
        Ok(())
    })
}

/// # Safety
/// `k` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pq_kernel_free(k: *mut PqKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Exact Hardy-Weinberg p-value from genotype counts.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_hwe_exact(hom1: u64, het: u64, hom2: u64, out: *mut f64) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if hom1 + het + hom2 == 0 {
            return Err((PQ_ERR_DATA, "no genotype counts".into()));
        }
        *out = pedqtl::qc::hwe_exact(hom1 as usize, het as usize, hom2 as usize);
        Ok(())
    })
}

/// Genomic inflation factor of `n` p-values.
///
/// # Safety
/// `p` must point to `n` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_genomic_inflation(p: *const f64, n: usize, out: *mut f64) -> i32 {
    guard(|| {
        if p.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let ps = std::slice::from_raw_parts(p, n);
        let lambda = pedqtl::qc::genomic_inflation(ps).ok_or_else(|| (PQ_ERR_DATA, "no valid p-values".to_string()))?;
        *out = lambda;
        Ok(())
    })
}

/// Upper tail of the chi-square distribution.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_chi2_sf(x: f64, df: u32, out: *mut f64) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if df == 0 || x.is_nan() {
            return Err((PQ_ERR_DATA, "chi-square needs df >= 1 and a number".into()));
        }
        *out = pedqtl::stats::chi2_sf(x, df as usize);
        Ok(())
    })
}

/// Runs a subcommand (`scan`, `batch`, `power` or `kinship`) on a control
/// file, exactly as the command-line tool does.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pq_run_control(subcommand: *const c_char, control_path: *const c_char) -> i32 {
    guard(|| {
        let sub = c_str(subcommand, "subcommand")?;
        let path = c_str(control_path, "control_path")?;
        pedqtl::cli::run_control(sub, Path::new(path), None, None)
            .map(|_| ())
            .map_err(|e| (code_of(&e.error), e.to_string()))
    })
}
