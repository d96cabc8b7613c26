use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn parse(raw: &str) -> Option<Sex> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "1" => Some(Sex::Male),
            "f" | "female" | "2" => Some(Sex::Female),
            _ => None,
        }
    }

    pub fn is_male(self) -> bool {
        self == Sex::Male
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sex::Male => write!(f, "M"),
            Sex::Female => write!(f, "F"),
        }
    }
}

/// One pedigree member. Parent fields index into the owning pedigree.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub person_id: String,
    pub father: Option<usize>,
    pub mother: Option<usize>,
    pub sex: Sex,
    pub household_id: Option<String>,
}

impl PersonRecord {
    pub fn is_founder(&self) -> bool {
        self.father.is_none()
    }

    pub fn parents(&self) -> Option<(usize, usize)> {
        match (self.father, self.mother) {
            (Some(f), Some(m)) => Some((f, m)),
            _ => None,
        }
    }
}

/// Unvalidated pedigree line, with parents still referenced by id.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPerson {
    pub person_id: String,
    pub father: Option<String>,
    pub mother: Option<String>,
    pub sex: Sex,
    pub household_id: Option<String>,
}

impl RawPerson {
    pub fn new(id: &str, father: Option<&str>, mother: Option<&str>, sex: Sex) -> Self {
        RawPerson {
            person_id: id.to_string(),
            father: father.map(str::to_string),
            mother: mother.map(str::to_string),
            sex,
            household_id: None,
        }
    }

    pub fn with_household(mut self, household: &str) -> Self {
        self.household_id = Some(household.to_string());
        self
    }
}

/// A validated pedigree whose members are stored in topological order:
/// every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct Pedigree {
    pub pedigree_id: String,
    individuals: Vec<PersonRecord>,
    founders: Vec<usize>,
}

impl Pedigree {
    /// Validates raw records and reorders them topologically. Among members
    /// whose parents are already placed, file order wins.
    pub fn new(pedigree_id: &str, raw: Vec<RawPerson>) -> Result<Pedigree> {
        let mut position = HashMap::with_capacity(raw.len());
        for (i, p) in raw.iter().enumerate() {
            if position.insert(p.person_id.clone(), i).is_some() {
                return Err(Error::Structure(format!(
                    "person {} appears twice in pedigree {pedigree_id}",
                    p.person_id
                )));
            }
        }

        let mut parents: Vec<Option<(usize, usize)>> = Vec::with_capacity(raw.len());
        for p in &raw {
            let pair = match (&p.father, &p.mother) {
                (None, None) => None,
                (Some(f), Some(m)) => {
                    let fi = *position.get(f).ok_or_else(|| {
                        Error::Structure(format!(
                            "person {} in pedigree {pedigree_id}: father {f} not found",
                            p.person_id
                        ))
                    })?;
                    let mi = *position.get(m).ok_or_else(|| {
                        Error::Structure(format!(
                            "person {} in pedigree {pedigree_id}: mother {m} not found",
                            p.person_id
                        ))
                    })?;
                    if raw[fi].sex != Sex::Male {
                        return Err(Error::Structure(format!(
                            "person {} is named as father of {} but recorded female",
                            f, p.person_id
                        )));
                    }
                    if raw[mi].sex != Sex::Female {
                        return Err(Error::Structure(format!(
                            "person {} is named as mother of {} but recorded male",
                            m, p.person_id
                        )));
                    }
                    Some((fi, mi))
                }
                _ => {
                    return Err(Error::Structure(format!(
                        "person {} in pedigree {pedigree_id} has only one parent recorded",
                        p.person_id
                    )))
                }
            };
            parents.push(pair);
        }

        let n = raw.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut pending = vec![0usize; n];
        for (i, pair) in parents.iter().enumerate() {
            if let Some((f, m)) = *pair {
                children[f].push(i);
                children[m].push(i);
                pending[i] = if f == m { 1 } else { 2 };
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < n {
            let cycle = find_cycle(&parents, &pending);
            let names: Vec<&str> = cycle.iter().map(|&i| raw[i].person_id.as_str()).collect();
            return Err(Error::Structure(format!(
                "cycle in pedigree {pedigree_id}: {}",
                names.join(" -> ")
            )));
        }

        let mut new_index = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let mut raw: Vec<Option<RawPerson>> = raw.into_iter().map(Some).collect();
        let individuals: Vec<PersonRecord> = order
            .iter()
            .map(|&old| {
                let p = raw[old].take().expect("each index visited once");
                let (father, mother) = match parents[old] {
                    Some((f, m)) => (Some(new_index[f]), Some(new_index[m])),
                    None => (None, None),
                };
                PersonRecord {
                    person_id: p.person_id,
                    father,
                    mother,
                    sex: p.sex,
                    household_id: p.household_id,
                }
            })
            .collect();
        let founders = individuals
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_founder())
            .map(|(i, _)| i)
            .collect();
        Ok(Pedigree {
            pedigree_id: pedigree_id.to_string(),
            individuals,
            founders,
        })
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn individuals(&self) -> &[PersonRecord] {
        &self.individuals
    }

    pub fn founder_set(&self) -> &[usize] {
        &self.founders
    }

    pub fn index_of(&self, person_id: &str) -> Option<usize> {
        self.individuals.iter().position(|p| p.person_id == person_id)
    }

    /// True when no member has recorded parents or children.
    fn is_unlinked(&self) -> bool {
        self.founders.len() == self.individuals.len()
    }
}

/// Walks parent links among unresolved members until a node repeats.
fn find_cycle(parents: &[Option<(usize, usize)>], pending: &[usize]) -> Vec<usize> {
    let start = match (0..pending.len()).find(|&i| pending[i] > 0) {
        Some(s) => s,
        None => return Vec::new(),
    };
    let mut path = vec![start];
    let mut seen = HashMap::new();
    seen.insert(start, 0usize);
    let mut cur = start;
    loop {
        let (f, m) = parents[cur].expect("unresolved members have parents");
        let next = if pending[f] > 0 { f } else { m };
        if let Some(&at) = seen.get(&next) {
            let mut cycle: Vec<usize> = path[at..].to_vec();
            cycle.push(next);
            // report in child -> parent direction reversed to parent -> child
            cycle.reverse();
            return cycle;
        }
        seen.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

fn parent_field(raw: &str) -> Option<&str> {
    let t = raw.trim();
    if t.is_empty() || t == "0" || t.eq_ignore_ascii_case("NA") {
        None
    } else {
        Some(t)
    }
}

/// Reads a comma-separated pedigree file with header
/// `PedigreeID,PersonID,Father,Mother,Sex,Household`.
///
/// Pedigrees come back in order of first appearance. A pedigree in which no
/// member has recorded parents is split into singleton pedigrees, one per
/// person, so unrelated samples never share a covariance block.
pub fn read_pedigree_csv(path: impl AsRef<Path>) -> Result<Vec<Pedigree>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name}", path.display())))
    };
    let (c_ped, c_id, c_fa, c_mo, c_sex) =
        (col("PedigreeID")?, col("PersonID")?, col("Father")?, col("Mother")?, col("Sex")?);
    let c_house = headers.iter().position(|h| h.eq_ignore_ascii_case("Household"));

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawPerson>> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ped = field(c_ped).to_string();
        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row: row + 2,
                column: "PersonID".into(),
                message: "empty person id".into(),
            });
        }
        let sex = Sex::parse(field(c_sex)).ok_or_else(|| Error::Parse {
            row: row + 2,
            column: "Sex".into(),
            message: format!("person {id}: sex {:?} is not male or female", field(c_sex)),
        })?;
        let household = c_house
            .map(field)
            .map(str::trim)
            .filter(|h| !h.is_empty() && !h.eq_ignore_ascii_case("NA"))
            .map(str::to_string);
        let person = RawPerson {
            person_id: id,
            father: parent_field(field(c_fa)).map(str::to_string),
            mother: parent_field(field(c_mo)).map(str::to_string),
            sex,
            household_id: household,
        };
        if !groups.contains_key(&ped) {
            order.push(ped.clone());
        }
        groups.entry(ped).or_default().push(person);
    }
    if order.is_empty() {
        return Err(Error::Schema(format!("{}: no pedigree records", path.display())));
    }
    let mut out = Vec::with_capacity(order.len());
    for ped_id in order {
        let members = groups.remove(&ped_id).expect("group recorded");
        let ped = Pedigree::new(&ped_id, members)?;
        if ped.is_unlinked() && ped.len() > 1 {
            for p in ped.individuals {
                let raw = RawPerson {
                    person_id: p.person_id,
                    father: None,
                    mother: None,
                    sex: p.sex,
                    household_id: p.household_id,
                };
                out.push(Pedigree::new(&ped_id, vec![raw])?);
            }
        } else {
            out.push(ped);
        }
    }
    let mut ids = HashMap::new();
    for ped in &out {
        for p in ped.individuals() {
            if let Some(prev) = ids.insert(p.person_id.clone(), ped.pedigree_id.clone()) {
                return Err(Error::Structure(format!(
                    "person id {} used in pedigrees {prev} and {}",
                    p.person_id, ped.pedigree_id
                )));
            }
        }
    }
    Ok(out)
}

/// Writes pedigrees back in the format accepted by [`read_pedigree_csv`].
pub fn write_pedigree_csv(path: impl AsRef<Path>, peds: &[Pedigree]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut body = String::from("PedigreeID,PersonID,Father,Mother,Sex,Household\n");
    for ped in peds {
        for p in ped.individuals() {
            let (fa, mo) = match p.parents() {
                Some((f, m)) => (
                    ped.individuals[f].person_id.as_str(),
                    ped.individuals[m].person_id.as_str(),
                ),
                None => ("", ""),
            };
            body.push_str(&format!(
                "{},{},{},{},{},{}\n",
                ped.pedigree_id,
                p.person_id,
                fa,
                mo,
                p.sex,
                p.household_id.as_deref().unwrap_or("")
            ));
        }
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Format(format!("{}: {e}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trio() -> Vec<RawPerson> {
        vec![
            RawPerson::new("C", Some("F"), Some("M"), Sex::Female),
            RawPerson::new("F", None, None, Sex::Male),
            RawPerson::new("M", None, None, Sex::Female),
        ]
    }

    #[test]
    fn trio_is_reordered_with_two_founders() {
        let ped = Pedigree::new("P", trio()).unwrap();
        let ids: Vec<&str> = ped.individuals().iter().map(|p| p.person_id.as_str()).collect();
        assert_eq!(ids, ["F", "M", "C"]);
        assert_eq!(ped.founder_set(), &[0, 1]);
        assert_eq!(ped.individuals()[2].parents(), Some((0, 1)));
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let raw = vec![
            RawPerson::new("C", Some("C"), Some("M"), Sex::Male),
            RawPerson::new("M", None, None, Sex::Female),
        ];
        let err = Pedigree::new("P", raw).unwrap_err();
        assert!(matches!(err, Error::Structure(ref m) if m.contains("cycle") && m.contains('C')), "{err}");
    }

    #[test]
    fn two_person_cycle_lists_both() {
        let raw = vec![
            RawPerson::new("A", Some("B"), Some("M"), Sex::Male),
            RawPerson::new("B", Some("A"), Some("M"), Sex::Male),
            RawPerson::new("M", None, None, Sex::Female),
        ];
        let err = Pedigree::new("P", raw).unwrap_err().to_string();
        assert!(err.contains("cycle") && err.contains('A') && err.contains('B'), "{err}");
    }

    #[test]
    fn missing_parent_names_the_person() {
        let raw = vec![
            RawPerson::new("C", Some("F"), Some("X"), Sex::Male),
            RawPerson::new("F", None, None, Sex::Male),
        ];
        let err = Pedigree::new("P", raw).unwrap_err().to_string();
        assert!(err.contains("person C") && err.contains('X'), "{err}");
    }

    #[test]
    fn female_father_is_rejected() {
        let raw = vec![
            RawPerson::new("C", Some("F"), Some("M"), Sex::Male),
            RawPerson::new("F", None, None, Sex::Female),
            RawPerson::new("M", None, None, Sex::Female),
        ];
        let err = Pedigree::new("P", raw).unwrap_err().to_string();
        assert!(err.contains("recorded female"), "{err}");
    }

    #[test]
    fn single_parent_is_rejected() {
        let raw = vec![
            RawPerson::new("C", Some("F"), None, Sex::Male),
            RawPerson::new("F", None, None, Sex::Male),
        ];
        assert!(Pedigree::new("P", raw).is_err());
    }

    #[test]
    fn csv_reader_splits_unlinked_groups_and_rejects_unknown_sex() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ped.csv");
        std::fs::write(
            &path,
            "PedigreeID,PersonID,Father,Mother,Sex,Household\n\
             F1,F,,,M,h1\nF1,M,,,F,h1\nF1,C,F,M,F,h1\nU,u1,,,M,\nU,u2,,,F,\n",
        )
        .unwrap();
        let peds = read_pedigree_csv(&path).unwrap();
        assert_eq!(peds.len(), 3);
        assert_eq!(peds[0].len(), 3);
        assert_eq!(peds[0].founder_set().len(), 2);
        assert_eq!(peds[0].individuals()[0].household_id.as_deref(), Some("h1"));
        assert!(peds[1..].iter().all(|p| p.len() == 1));

        std::fs::write(&path, "PedigreeID,PersonID,Father,Mother,Sex,Household\nA,a,,,0,\n").unwrap();
        assert!(matches!(read_pedigree_csv(&path), Err(Error::Parse { .. })));
    }
}
