//! Input parsing: pedigrees, PLINK genotypes and phenotype tables.

mod bed;
mod pedigree;
mod traits;

pub use bed::{
    is_x_chromosome, plink_path, read_bim, read_fam, read_genotypes_bed, read_plink_prefix, FamEntry,
    GenotypeMatrix, SnpInfo, MAGIC_BYTES, MISSING,
};
pub use pedigree::{read_pedigree_csv, write_pedigree_csv, Pedigree, PersonRecord, RawPerson, Sex};
pub use traits::{read_traits_csv, TraitTable};
