use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Catalog, Interaction, ItemEntry, UserEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RawFormat {
    /// `user::item::rating::timestamp`; titles come from a sibling
    /// `movies.dat` (`item::title::genres`) when present.
    MovielensDat,
    /// One review object per line with reviewer id, item id, timestamp and
    /// optionally the item title.
    AmazonJsonl,
    /// `user<TAB>item<TAB>timestamp[<TAB>title]`, optional header row.
    Tsv,
}

impl FromStr for RawFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" => Ok(Self::MovielensDat),
            "amazon-jsonl" => Ok(Self::AmazonJsonl),
            "tsv" => Ok(Self::Tsv),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

struct RawRecord {
    user: String,
    item: String,
    timestamp: i64,
}

/// Parses a raw interaction file and re-indexes users and items densely.
/// Original identifiers are kept in the catalog entries.
pub fn load_raw(path: &Path, format: RawFormat) -> Result<(Catalog, Vec<Interaction>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut titles: HashMap<String, String> = HashMap::new();
    let records = match format {
        RawFormat::MovielensDat => {
            if let Some(dir) = path.parent() {
                let movies = dir.join("movies.dat");
                if movies.exists() {
                    titles = parse_movie_titles(&movies)?;
                }
            }
            parse_movielens(path, &text)?
        }
        RawFormat::AmazonJsonl => parse_amazon(path, &text, &mut titles)?,
        RawFormat::Tsv => parse_tsv(path, &text, &mut titles)?,
    };
    if records.is_empty() {
        return Err(Error::NoInteractions);
    }

    let user_ids = dense_ids(records.iter().map(|r| r.user.as_str()));
    let item_ids = dense_ids(records.iter().map(|r| r.item.as_str()));
    let user_index: HashMap<&str, usize> = user_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let item_index: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();

    let catalog = Catalog {
        users: user_ids
            .iter()
            .enumerate()
            .map(|(k, id)| UserEntry {
                index: k,
                original_id: id.clone(),
                profile: None,
            })
            .collect(),
        items: item_ids
            .iter()
            .enumerate()
            .map(|(k, id)| ItemEntry {
                index: k,
                original_id: id.clone(),
                title: titles
                    .get(id)
                    .filter(|t| !t.trim().is_empty())
                    .cloned()
                    .unwrap_or_else(|| format!("item {id}")),
                description: None,
            })
            .collect(),
    };
    let interactions = records
        .iter()
        .map(|r| {
            Interaction::positive(
                user_index[r.user.as_str()],
                item_index[r.item.as_str()],
                r.timestamp,
            )
        })
        .collect();
    Ok((catalog, interactions))
}

/// Distinct ids in numeric order when every id is an integer, otherwise
/// lexicographic.
fn dense_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut distinct: Vec<String> = ids
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    if distinct.iter().all(|s| s.parse::<u64>().is_ok()) {
        distinct.sort_by_key(|s| s.parse::<u64>().expect("checked numeric"));
    }
    distinct
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_movielens(path: &Path, text: &str) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 '::' fields, got {}", fields.len()),
            ));
        }
        let timestamp = fields[3]
            .trim()
            .parse::<i64>()
            .map_err(|e| parse_err(path, line_no, format!("timestamp: {e}")))?;
        fields[2]
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(path, line_no, format!("rating: {e}")))?;
        out.push(RawRecord {
            user: fields[0].trim().to_owned(),
            item: fields[1].trim().to_owned(),
            timestamp,
        });
    }
    Ok(out)
}

fn parse_movie_titles(path: &Path) -> Result<HashMap<String, String>> {
    // movies.dat ships as latin-1; decode bytewise so it never fails.
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    let mut titles = HashMap::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() < 2 {
            return Err(parse_err(path, k + 1, "expected item::title::genres"));
        }
        titles.insert(fields[0].trim().to_owned(), fields[1].trim().to_owned());
    }
    Ok(titles)
}

#[derive(Deserialize)]
struct AmazonReview {
    #[serde(alias = "reviewerID", alias = "user_id")]
    reviewer_id: String,
    #[serde(alias = "asin", alias = "item_id", alias = "parent_asin")]
    item: String,
    #[serde(alias = "unixReviewTime", alias = "timestamp")]
    time: Option<i64>,
    title: Option<String>,
}

fn parse_amazon(
    path: &Path,
    text: &str,
    titles: &mut HashMap<String, String>,
) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let review: AmazonReview =
            serde_json::from_str(line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if let Some(t) = review.title {
            titles.entry(review.item.clone()).or_insert(t);
        }
        out.push(RawRecord {
            user: review.reviewer_id,
            item: review.item,
            timestamp: review.time.unwrap_or(line_no as i64),
        });
    }
    Ok(out)
}

fn parse_tsv(
    path: &Path,
    text: &str,
    titles: &mut HashMap<String, String>,
) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    let mut first_content_line = true;
    // BTreeMap keeps the first title seen per item deterministic.
    let mut seen_titles: BTreeMap<String, String> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let is_first = std::mem::replace(&mut first_content_line, false);
        if fields.len() < 2 {
            return Err(parse_err(
                path,
                line_no,
                "expected user<TAB>item[<TAB>timestamp]",
            ));
        }
        let timestamp = match fields.get(2).map(|s| s.trim()) {
            None | Some("") => line_no as i64,
            Some(s) => match s.parse::<i64>() {
                Ok(t) => t,
                Err(_) if is_first => continue,
                Err(e) => return Err(parse_err(path, line_no, format!("timestamp: {e}"))),
            },
        };
        let item = fields[1].trim().to_owned();
        if let Some(t) = fields.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            seen_titles
                .entry(item.clone())
                .or_insert_with(|| t.to_owned());
        }
        out.push(RawRecord {
            user: fields[0].trim().to_owned(),
            item,
            timestamp,
        });
    }
    titles.extend(seen_titles);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_line_tsv_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.tsv", "u1\ta\t10\nu2\tb\t11\nu1\tb\t12\n");
        let (cat, xs) = load_raw(&p, RawFormat::Tsv).unwrap();
        assert_eq!(cat.n_users(), 2);
        assert_eq!(cat.n_items(), 2);
        assert_eq!(xs.len(), 3);
        assert_eq!(cat.users[0].original_id, "u1");
        assert_eq!(cat.items[1].original_id, "b");
    }

    #[test]
    fn header_only_file_has_no_interactions() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.tsv", "user\titem\ttimestamp\n");
        assert!(matches!(
            load_raw(&p, RawFormat::Tsv),
            Err(Error::NoInteractions)
        ));
        let p = write(dir.path(), "empty.dat", "");
        assert!(matches!(
            load_raw(&p, RawFormat::MovielensDat),
            Err(Error::NoInteractions)
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "ratings.dat", "1::2::5::100\n1::3::x\n");
        match load_raw(&p, RawFormat::MovielensDat) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(
            dir.path(),
            "r.jsonl",
            "{\"reviewerID\":\"a\",\"asin\":\"b\"}\nnot json\n",
        );
        match load_raw(&p, RawFormat::AmazonJsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn movielens_titles_from_sibling_file() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "movies.dat",
            "48::Pocahontas (1995)::Animation\n588::Aladdin (1992)::Animation\n",
        );
        let p = write(
            dir.path(),
            "ratings.dat",
            "1::48::5::978300760\n1::588::3::978300761\n2::48::4::978300762\n",
        );
        let (cat, xs) = load_raw(&p, RawFormat::MovielensDat).unwrap();
        assert_eq!(xs.len(), 3);
        assert_eq!(cat.items[0].original_id, "48");
        assert_eq!(cat.items[0].title, "Pocahontas (1995)");
        assert_eq!(cat.items[1].title, "Aladdin (1992)");
    }

    #[test]
    fn amazon_reviews_with_titles() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.jsonl",
            "{\"reviewerID\":\"A1\",\"asin\":\"B9\",\"unixReviewTime\":5,\"title\":\"Green Tea\"}\n\
             {\"reviewerID\":\"A2\",\"asin\":\"B1\",\"unixReviewTime\":7}\n",
        );
        let (cat, xs) = load_raw(&p, RawFormat::AmazonJsonl).unwrap();
        assert_eq!(xs.len(), 2);
        assert_eq!(cat.items[1].title, "Green Tea");
        assert_eq!(cat.items[0].title, "item B1");
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        assert_eq!(
            dense_ids(["10", "9", "100"].into_iter()),
            vec!["9", "10", "100"]
        );
        assert_eq!(
            dense_ids(["b", "a", "10"].into_iter()),
            vec!["10", "a", "b"]
        );
    }
}
