use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{KernelKind, KernelMatrix};
use crate::error::{Error, Result};
use crate::genio::{Pedigree, Sex};

/// Autosomal kinship coefficients by the classical recursion over a
/// topologically ordered pedigree.
pub fn theoretical_kinship(ped: &Pedigree) -> KernelMatrix {
    let members = ped.individuals();
    let n = members.len();
    let mut phi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        match members[i].parents() {
            Some((f, m)) => {
                for j in 0..i {
                    let v = 0.5 * (phi[(f, j)] + phi[(m, j)]);
                    phi[(i, j)] = v;
                    phi[(j, i)] = v;
                }
                phi[(i, i)] = 0.5 * (1.0 + phi[(f, m)]);
            }
            None => phi[(i, i)] = 0.5,
        }
    }
    KernelMatrix {
        values: phi,
        kind: KernelKind::TheoreticalKinship,
        block_structure: Some(vec![(0..n).collect()]),
    }
}

/// X-chromosome kinship. A male carries one X, so his self-kinship is 1 and
/// his kinship with anyone equals that of his mother.
pub fn x_linked_kinship(ped: &Pedigree) -> KernelMatrix {
    let members = ped.individuals();
    let n = members.len();
    let mut phi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let male = members[i].sex == Sex::Male;
        match members[i].parents() {
            Some((f, m)) => {
                for j in 0..i {
                    let v = if male {
                        phi[(m, j)]
                    } else {
                        0.5 * (phi[(m, j)] + phi[(f, j)])
                    };
                    phi[(i, j)] = v;
                    phi[(j, i)] = v;
                }
                phi[(i, i)] = if male { 1.0 } else { 0.5 * (1.0 + phi[(m, f)]) };
            }
            None => phi[(i, i)] = if male { 1.0 } else { 0.5 },
        }
    }
    KernelMatrix {
        values: phi,
        kind: KernelKind::XKinship,
        block_structure: Some(vec![(0..n).collect()]),
    }
}

/// Condensed identity coefficient for dominance sharing in a non-inbred
/// pedigree: `phi(m_i,m_j) phi(f_i,f_j) + phi(m_i,f_j) phi(f_i,m_j)` off the
/// diagonal and 1 on it.
pub fn delta7(ped: &Pedigree) -> Result<KernelMatrix> {
    let phi = theoretical_kinship(ped).values;
    let members = ped.individuals();
    let n = members.len();
    if let Some(i) = (0..n).find(|&i| (phi[(i, i)] - 0.5).abs() > 1e-12) {
        return Err(Error::Unsupported(format!(
            "pedigree {} is inbred (person {} has self-kinship {}); dominance kernel needs an outbred pedigree",
            ped.pedigree_id, members[i].person_id, phi[(i, i)]
        )));
    }
    let kin = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(a), Some(b)) => phi[(a, b)],
        _ => 0.0,
    };
    let mut d = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let (fi, mi) = (members[i].father, members[i].mother);
            let (fj, mj) = (members[j].father, members[j].mother);
            let v = kin(mi, mj) * kin(fi, fj) + kin(mi, fj) * kin(fi, mj);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(KernelMatrix {
        values: d,
        kind: KernelKind::Delta7,
        block_structure: Some(vec![(0..n).collect()]),
    })
}

/// Household indicator over all pedigrees concatenated in order. Household
/// labels are scoped to their pedigree; a person without a label shares a
/// household with nobody else.
pub fn household_matrix(peds: &[Pedigree]) -> KernelMatrix {
    let n: usize = peds.iter().map(Pedigree::len).sum();
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut blocks = Vec::with_capacity(peds.len());
    let mut offset = 0;
    for ped in peds {
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for (k, p) in ped.individuals().iter().enumerate() {
            if let Some(hh) = p.household_id.as_deref() {
                groups.entry(hh).or_default().push(offset + k);
            }
        }
        for members in groups.values() {
            for &a in members {
                for &b in members {
                    h[(a, b)] = 1.0;
                }
            }
        }
        blocks.push((offset..offset + ped.len()).collect());
        offset += ped.len();
    }
    KernelMatrix {
        values: h,
        kind: KernelKind::Household,
        block_structure: Some(blocks),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genio::RawPerson;

    fn ped(rows: &[(&str, Option<&str>, Option<&str>, Sex)]) -> Pedigree {
        let raw = rows.iter().map(|&(id, f, m, s)| RawPerson::new(id, f, m, s)).collect();
        Pedigree::new("P", raw).unwrap()
    }

    fn nuclear() -> Pedigree {
        ped(&[
            ("F", None, None, Sex::Male),
            ("M", None, None, Sex::Female),
            ("S1", Some("F"), Some("M"), Sex::Male),
            ("S2", Some("F"), Some("M"), Sex::Female),
        ])
    }

    #[test]
    fn classical_values() {
        let k = theoretical_kinship(&nuclear()).values;
        assert_eq!(k[(0, 0)], 0.5);
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(0, 2)], 0.25);
        assert_eq!(k[(2, 3)], 0.25);
    }

    #[test]
    fn full_sib_mating_child_is_inbred() {
        let mut rows = vec![
            ("F", None, None, Sex::Male),
            ("M", None, None, Sex::Female),
            ("B", Some("F"), Some("M"), Sex::Male),
            ("S", Some("F"), Some("M"), Sex::Female),
        ];
        rows.push(("C", Some("B"), Some("S"), Sex::Female));
        let p = ped(&rows);
        let k = theoretical_kinship(&p).values;
        assert_eq!(k[(4, 4)], 0.625);
        assert!(matches!(delta7(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn x_linked_conventions() {
        let k = x_linked_kinship(&nuclear()).values;
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 0.5);
        assert_eq!(k[(1, 2)], 0.5); // mother-son
        assert_eq!(k[(0, 3)], 0.5); // father-daughter
        assert_eq!(k[(0, 2)], 0.0); // father-son
    }

    #[test]
    fn dominance_values() {
        let d = delta7(&nuclear()).unwrap().values;
        assert_eq!(d[(2, 3)], 0.25);
        assert_eq!(d[(0, 2)], 0.0);
        assert_eq!(d[(2, 2)], 1.0);
    }

    #[test]
    fn double_first_cousins() {
        // two brothers marry two sisters
        let p = ped(&[
            ("GF1", None, None, Sex::Male),
            ("GM1", None, None, Sex::Female),
            ("GF2", None, None, Sex::Male),
            ("GM2", None, None, Sex::Female),
            ("B1", Some("GF1"), Some("GM1"), Sex::Male),
            ("B2", Some("GF1"), Some("GM1"), Sex::Male),
            ("S1", Some("GF2"), Some("GM2"), Sex::Female),
            ("S2", Some("GF2"), Some("GM2"), Sex::Female),
            ("C1", Some("B1"), Some("S1"), Sex::Male),
            ("C2", Some("B2"), Some("S2"), Sex::Female),
        ]);
        let d = delta7(&p).unwrap().values;
        assert!((d[(8, 9)] - 1.0 / 16.0).abs() < 1e-15);
        let k = theoretical_kinship(&p).values;
        assert!((k[(8, 9)] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn household_entries() {
        let raw = vec![
            RawPerson::new("a", None, None, Sex::Male).with_household("h"),
            RawPerson::new("b", None, None, Sex::Female).with_household("h"),
            RawPerson::new("c", Some("a"), Some("b"), Sex::Female).with_household("g"),
            RawPerson::new("d", Some("a"), Some("b"), Sex::Female),
        ];
        let h = household_matrix(&[Pedigree::new("P", raw).unwrap()]).values;
        assert_eq!(h[(0, 1)], 1.0);
        assert_eq!(h[(0, 2)], 0.0);
        assert_eq!(h.row(3).sum(), 1.0);
        assert_eq!(h[(3, 3)], 1.0);
    }
}
