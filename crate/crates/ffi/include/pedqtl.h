#ifndef PEDQTL_H
#define PEDQTL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PQ_OK 0

#define PQ_ERR_NULL_POINTER 1

#define PQ_ERR_CONFIG 2

#define PQ_ERR_DATA 3

#define PQ_ERR_NUMERIC 4

#define PQ_ERR_INVALID_UTF8 5

#define PQ_ERR_PANIC 6

#define PQ_ERR_OUT_OF_RANGE 7

/**
 * Genotype code for a missing call, as returned by [`pq_genotypes_get`].
 */
#define PQ_GENOTYPE_MISSING 3

/**
 * Opaque genotype matrix.
 */
typedef struct PqGenotypes PqGenotypes;

/**
 * Opaque square kernel matrix.
 */
typedef struct PqKernel PqKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pq_last_error_message(void);

/**
 * Reads `<prefix>.bed/.bim/.fam`.
 *
 * # Safety
 * `prefix` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t pq_genotypes_read_bed(const char *prefix, struct PqGenotypes **out);

/**
 * # Safety
 * `g` must be null or a handle from [`pq_genotypes_read_bed`].
 */
size_t pq_genotypes_n_snps(const struct PqGenotypes *g);

/**
 * # Safety
 * `g` must be null or a handle from [`pq_genotypes_read_bed`].
 */
size_t pq_genotypes_n_individuals(const struct PqGenotypes *g);

/**
 * Minor-allele count (0, 1, 2) or [`PQ_GENOTYPE_MISSING`].
 *
 * # Safety
 * `g` must be a live handle and `out` a valid pointer.
 */
int32_t pq_genotypes_get(const struct PqGenotypes *g, size_t snp, size_t individual, uint8_t *out);

/**
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void pq_genotypes_free(struct PqGenotypes *g);

/**
 * Genomic relationship matrix on the kinship scale over all SNPs.
 *
 * # Safety
 * `g` must be a live handle and `out` a valid pointer.
 */
int32_t pq_kernel_grm(const struct PqGenotypes *g, struct PqKernel **out);

/**
 * Method-of-moments kinship.
 *
 * # Safety
 * `g` must be a live handle and `out` a valid pointer.
 */
int32_t pq_kernel_mom(const struct PqGenotypes *g, struct PqKernel **out);

/**
 * Block-diagonal theoretical kinship of every pedigree in a pedigree CSV,
 * members in file order within topologically sorted pedigrees.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t pq_kernel_theoretical_from_pedigree(const char *path, struct PqKernel **out);

/**
 * # Safety
 * `k` must be null or a live kernel handle.
 */
size_t pq_kernel_dim(const struct PqKernel *k);

/**
 * # Safety
 * `k` must be a live handle and `out` a valid pointer.
 */
int32_t pq_kernel_get(const struct PqKernel *k, size_t i, size_t j, double *out);

/**
 * # Safety
 * `k` must be null or a handle not yet freed.
 */
void pq_kernel_free(struct PqKernel *k);

/**
 * Exact Hardy-Weinberg p-value from genotype counts.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t pq_hwe_exact(uint64_t hom1, uint64_t het, uint64_t hom2, double *out);

/**
 * Genomic inflation factor of `n` p-values.
 *
 * # Safety
 * `p` must point to `n` doubles and `out` must be a valid pointer.
 */
int32_t pq_genomic_inflation(const double *p, size_t n, double *out);

/**
 * Upper tail of the chi-square distribution.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t pq_chi2_sf(double x, uint32_t df, double *out);

/**
 * Runs a subcommand (`scan`, `batch`, `power` or `kinship`) on a control
 * file, exactly as the command-line tool does.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
int32_t pq_run_control(const char *subcommand, const char *control_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEDQTL_H */
