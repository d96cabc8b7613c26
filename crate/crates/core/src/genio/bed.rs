use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC_BYTES: [u8; 3] = [0x6c, 0x1b, 0x01];

/// Decoded genotype code for a missing call.
pub const MISSING: u8 = 3;

/// Raw 2-bit bed value to allele1-copy count.
const DECODE: [u8; 4] = [2, MISSING, 1, 0];
/// Allele1-copy count (or MISSING) to raw 2-bit bed value.
const ENCODE: [u8; 4] = [0b11, 0b10, 0b00, 0b01];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnpInfo {
    pub name: String,
    pub chromosome: String,
    pub base_pair: u64,
    pub allele1: String,
    pub allele2: String,
    pub is_x_linked: bool,
}

impl SnpInfo {
    pub fn new(name: &str, chromosome: &str, base_pair: u64) -> Self {
        SnpInfo {
            name: name.to_string(),
            chromosome: chromosome.to_string(),
            base_pair,
            allele1: "A".into(),
            allele2: "G".into(),
            is_x_linked: is_x_chromosome(chromosome),
        }
    }
}

pub fn is_x_chromosome(chr: &str) -> bool {
    let c = chr.trim_start_matches("chr");
    c.eq_ignore_ascii_case("x") || c == "23"
}

/// One line of a fam file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamEntry {
    pub family_id: String,
    pub individual_id: String,
}

/// SNP-major genotypes stored as raw bed bytes: one row of `ceil(n/4)` bytes
/// per SNP, four individuals per byte, lowest bits first.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    snps: Vec<SnpInfo>,
    samples: Vec<FamEntry>,
    stride: usize,
    packed: Vec<u8>,
}

impl GenotypeMatrix {
    /// Builds a matrix from decoded rows (values 0, 1, 2 or [`MISSING`]).
    pub fn from_codes(snps: Vec<SnpInfo>, samples: Vec<FamEntry>, rows: &[Vec<u8>]) -> Result<Self> {
        if rows.len() != snps.len() {
            return Err(Error::Length(format!(
                "{} genotype rows for {} SNPs",
                rows.len(),
                snps.len()
            )));
        }
        let n = samples.len();
        let stride = n.div_ceil(4);
        let mut packed = Vec::with_capacity(stride * snps.len());
        for row in rows {
            if row.len() != n {
                return Err(Error::Length(format!("genotype row of {} for {n} samples", row.len())));
            }
            packed.extend(pack_row(row)?);
        }
        validate_snps(&snps)?;
        Ok(GenotypeMatrix {
            snps,
            samples,
            stride,
            packed,
        })
    }

    pub fn n_snps(&self) -> usize {
        self.snps.len()
    }

    pub fn n_individuals(&self) -> usize {
        self.samples.len()
    }

    pub fn snps(&self) -> &[SnpInfo] {
        &self.snps
    }

    pub fn samples(&self) -> &[FamEntry] {
        &self.samples
    }

    pub fn raw_row(&self, snp: usize) -> &[u8] {
        &self.packed[snp * self.stride..(snp + 1) * self.stride]
    }

    /// Decoded code of one cell.
    pub fn get(&self, snp: usize, individual: usize) -> u8 {
        let byte = self.packed[snp * self.stride + individual / 4];
        DECODE[((byte >> (2 * (individual % 4))) & 0b11) as usize]
    }

    /// Decodes a full SNP row into `out` (length n).
    pub fn decode_row(&self, snp: usize, out: &mut [u8]) {
        let n = self.samples.len();
        debug_assert_eq!(out.len(), n);
        for (b, &byte) in self.raw_row(snp).iter().enumerate() {
            let base = 4 * b;
            for k in 0..4.min(n - base) {
                out[base + k] = DECODE[((byte >> (2 * k)) & 0b11) as usize];
            }
        }
    }

    pub fn row(&self, snp: usize) -> Vec<u8> {
        let mut out = vec![0; self.samples.len()];
        self.decode_row(snp, &mut out);
        out
    }

    /// Keeps the listed SNPs and individuals, in the given order.
    pub fn select(&self, snps: &[usize], individuals: &[usize]) -> GenotypeMatrix {
        let samples: Vec<FamEntry> = individuals.iter().map(|&i| self.samples[i].clone()).collect();
        let stride = samples.len().div_ceil(4);
        let mut packed = vec![0u8; stride * snps.len()];
        let mut row = vec![0u8; self.samples.len()];
        for (new_s, &s) in snps.iter().enumerate() {
            self.decode_row(s, &mut row);
            let dst = &mut packed[new_s * stride..(new_s + 1) * stride];
            for (k, &i) in individuals.iter().enumerate() {
                dst[k / 4] |= ENCODE[row[i] as usize] << (2 * (k % 4));
            }
            // unused high pairs stay zero, matching what plink writes
        }
        GenotypeMatrix {
            snps: snps.iter().map(|&s| self.snps[s].clone()).collect(),
            samples,
            stride,
            packed,
        }
    }

    /// Concatenates SNP sets that share an identical sample list.
    pub fn concat(parts: Vec<GenotypeMatrix>) -> Result<GenotypeMatrix> {
        let mut iter = parts.into_iter();
        let mut first = iter
            .next()
            .ok_or_else(|| Error::Empty("no genotype files".into()))?;
        for part in iter {
            if part.samples != first.samples {
                return Err(Error::Join("genotype files list different individuals".into()));
            }
            first.snps.extend(part.snps);
            first.packed.extend(part.packed);
        }
        validate_snps(&first.snps)?;
        Ok(first)
    }

    pub fn write_plink(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref();
        let bed = plink_path(prefix, "bed");
        let mut w = BufWriter::new(File::create(&bed).map_err(|e| Error::io(&bed, e))?);
        w.write_all(&MAGIC_BYTES).map_err(|e| Error::io(&bed, e))?;
        w.write_all(&self.packed).map_err(|e| Error::io(&bed, e))?;
        w.flush().map_err(|e| Error::io(&bed, e))?;

        let bim = plink_path(prefix, "bim");
        let mut text = String::new();
        for s in &self.snps {
            text.push_str(&format!(
                "{}\t{}\t0\t{}\t{}\t{}\n",
                s.chromosome, s.name, s.base_pair, s.allele1, s.allele2
            ));
        }
        std::fs::write(&bim, text).map_err(|e| Error::io(&bim, e))?;

        let fam = plink_path(prefix, "fam");
        let mut text = String::new();
        for s in &self.samples {
            text.push_str(&format!("{} {} 0 0 0 -9\n", s.family_id, s.individual_id));
        }
        std::fs::write(&fam, text).map_err(|e| Error::io(&fam, e))
    }
}

fn pack_row(codes: &[u8]) -> Result<Vec<u8>> {
    let mut out = vec![0u8; codes.len().div_ceil(4)];
    for (k, &c) in codes.iter().enumerate() {
        if c > MISSING {
            return Err(Error::Format(format!("genotype code {c} outside 0..=3")));
        }
        out[k / 4] |= ENCODE[c as usize] << (2 * (k % 4));
    }
    Ok(out)
}

fn validate_snps(snps: &[SnpInfo]) -> Result<()> {
    let mut names = HashSet::with_capacity(snps.len());
    for s in snps {
        if s.base_pair == 0 {
            return Err(Error::Format(format!("SNP {} has base pair 0", s.name)));
        }
        if !names.insert(s.name.as_str()) {
            return Err(Error::Format(format!("duplicate SNP name {}", s.name)));
        }
    }
    Ok(())
}

pub fn read_bim(path: impl AsRef<Path>) -> Result<Vec<SnpInfo>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut snps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 6 {
            return Err(Error::Parse {
                row: i + 1,
                column: "bim".into(),
                message: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let base_pair: u64 = f[3].parse().map_err(|_| Error::Parse {
            row: i + 1,
            column: "base_pair".into(),
            message: format!("not an integer: {}", f[3]),
        })?;
        snps.push(SnpInfo {
            name: f[1].to_string(),
            chromosome: f[0].to_string(),
            base_pair,
            allele1: f[4].to_string(),
            allele2: f[5].to_string(),
            is_x_linked: is_x_chromosome(f[0]),
        });
    }
    validate_snps(&snps)?;
    Ok(snps)
}

pub fn read_fam(path: impl AsRef<Path>) -> Result<Vec<FamEntry>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 2 {
            return Err(Error::Parse {
                row: i + 1,
                column: "fam".into(),
                message: "expected family and individual ids".into(),
            });
        }
        out.push(FamEntry {
            family_id: f[0].to_string(),
            individual_id: f[1].to_string(),
        });
    }
    Ok(out)
}

/// Reads a SNP-major bed file together with its bim and fam companions.
pub fn read_genotypes_bed(
    bed: impl AsRef<Path>,
    bim: impl AsRef<Path>,
    fam: impl AsRef<Path>,
) -> Result<GenotypeMatrix> {
    let snps = read_bim(bim)?;
    let samples = read_fam(fam)?;
    let bed = bed.as_ref();
    let mut bytes = Vec::new();
    File::open(bed)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(bed, e))?;
    if bytes.len() < 3 || bytes[0..2] != MAGIC_BYTES[0..2] {
        return Err(Error::Format(format!("{}: not a bed file (bad magic bytes)", bed.display())));
    }
    if bytes[2] != MAGIC_BYTES[2] {
        return Err(Error::Format(format!(
            "{}: unsupported orientation byte {:#04x}; only SNP-major is supported",
            bed.display(),
            bytes[2]
        )));
    }
    let stride = samples.len().div_ceil(4);
    let expected = stride * snps.len();
    let payload = bytes.len() - 3;
    if payload != expected {
        return Err(Error::Length(format!(
            "{}: payload is {payload} bytes, expected {expected} ({} SNPs x {stride})",
            bed.display(),
            snps.len()
        )));
    }
    bytes.drain(0..3);
    Ok(GenotypeMatrix {
        snps,
        samples,
        stride,
        packed: bytes,
    })
}

/// Reads `<prefix>.bed`, `<prefix>.bim` and `<prefix>.fam`.
pub fn read_plink_prefix(prefix: impl AsRef<Path>) -> Result<GenotypeMatrix> {
    let p = prefix.as_ref();
    read_genotypes_bed(plink_path(p, "bed"), plink_path(p, "bim"), plink_path(p, "fam"))
}

/// `<prefix>.<ext>` without touching dots already inside the prefix.
pub fn plink_path(prefix: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(n: usize) -> Vec<FamEntry> {
        (0..n)
            .map(|i| FamEntry {
                family_id: "F".into(),
                individual_id: format!("i{i}"),
            })
            .collect()
    }

    fn write_raw(dir: &Path, n: usize, n_snps: usize, magic: [u8; 3], payload: &[u8]) -> std::path::PathBuf {
        let prefix = dir.join("g");
        let mut bim = String::new();
        for s in 0..n_snps {
            bim.push_str(&format!("1\trs{s}\t0\t{}\tA\tG\n", 100 + s));
        }
        std::fs::write(prefix.with_extension("bim"), bim).unwrap();
        let fam: String = (0..n).map(|i| format!("F i{i} 0 0 1 -9\n")).collect();
        std::fs::write(prefix.with_extension("fam"), fam).unwrap();
        let mut bed = magic.to_vec();
        bed.extend_from_slice(payload);
        std::fs::write(prefix.with_extension("bed"), bed).unwrap();
        prefix
    }

    #[test]
    fn decodes_documented_bit_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = write_raw(dir.path(), 4, 1, MAGIC_BYTES, &[0b11_10_01_00]);
        let g = read_plink_prefix(&prefix).unwrap();
        assert_eq!(g.row(0), vec![2, MISSING, 1, 0]);
    }

    #[test]
    fn individual_major_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = write_raw(dir.path(), 4, 1, [0x6c, 0x1b, 0x00], &[0]);
        assert!(matches!(read_plink_prefix(&prefix), Err(Error::Format(_))));
    }

    #[test]
    fn padding_bits_of_last_byte_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        // five individuals: second byte carries one code in its low bits
        let prefix = write_raw(dir.path(), 5, 1, MAGIC_BYTES, &[0b00_00_00_00, 0b10_10_10_11]);
        let g = read_plink_prefix(&prefix).unwrap();
        assert_eq!(g.row(0), vec![2, 2, 2, 2, 0]);
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = write_raw(dir.path(), 5, 2, MAGIC_BYTES, &[0, 0, 0]);
        assert!(matches!(read_plink_prefix(&prefix), Err(Error::Length(_))));
    }

    #[test]
    fn duplicate_snp_names_rejected() {
        let snps = vec![SnpInfo::new("a", "1", 5), SnpInfo::new("a", "1", 6)];
        assert!(GenotypeMatrix::from_codes(snps, samples(1), &[vec![0], vec![1]]).is_err());
    }

    #[test]
    fn select_reorders_individuals() {
        let snps = vec![SnpInfo::new("a", "1", 5)];
        let g = GenotypeMatrix::from_codes(snps, samples(5), &[vec![0, 1, 2, MISSING, 2]]).unwrap();
        let s = g.select(&[0], &[4, 3, 0]);
        assert_eq!(s.row(0), vec![2, MISSING, 0]);
        assert_eq!(s.samples()[0].individual_id, "i4");
    }

    proptest! {
        #[test]
        fn plink_round_trip(n in 1usize..23, rows in proptest::collection::vec(proptest::collection::vec(0u8..4, 23), 1..6)) {
            let rows: Vec<Vec<u8>> = rows.into_iter().map(|r| r[..n].to_vec()).collect();
            let snps: Vec<SnpInfo> = (0..rows.len()).map(|s| SnpInfo::new(&format!("s{s}"), "2", 10 + s as u64)).collect();
            let g = GenotypeMatrix::from_codes(snps, samples(n), &rows).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let prefix = dir.path().join("rt");
            g.write_plink(&prefix).unwrap();
            let back = read_plink_prefix(&prefix).unwrap();
            for (s, row) in rows.iter().enumerate() {
                prop_assert_eq!(&back.row(s), row);
            }
            prop_assert_eq!(back, g);
        }
    }
}
