//! Streaming parser for Stack Exchange `Posts.xml` dumps: one `row` element
//! per post entry, attributes only. Question entries (type 1) become posts;
//! answer entries (type 2) attach to their parent question.

use std::collections::BTreeMap;
use std::io::BufRead;

use chrono::NaiveDateTime;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{IngestError, Post, PostSource};

/// Parse result: linked posts plus bookkeeping about rows that could not be
/// attached.
#[derive(Debug)]
pub struct DumpParse {
    pub posts: Vec<Post>,
    /// Answer rows whose ParentId matched no question in the stream.
    pub orphan_answers: u64,
    /// Rows skipped because they are neither questions nor answers
    /// (wiki entries, moderator rows, ...).
    pub other_rows: u64,
}

#[derive(Debug, Default)]
struct RawQuestion {
    title: String,
    body: String,
    tags: Vec<String>,
    accepted_answer_id: Option<u64>,
    created: Option<NaiveDateTime>,
}

#[derive(Debug)]
struct RawAnswer {
    id: Option<u64>,
    parent_id: u64,
    body: String,
    created: Option<NaiveDateTime>,
}

/// Dump timestamps look like `2021-01-11T12:34:56.790`; seconds-only is
/// accepted too.
fn parse_dump_date(raw: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S"))
        .ok()
}

/// The dump encodes tags either as `<a><b>` or as `|a|b|`.
fn parse_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return vec![];
    }
    if raw.starts_with('<') {
        raw.trim_start_matches('<')
            .trim_end_matches('>')
            .split("><")
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    } else if raw.starts_with('|') {
        raw.split('|').filter(|t| !t.is_empty()).map(str::to_string).collect()
    } else {
        vec![raw.to_string()]
    }
}

fn attr_map(start: &BytesStart<'_>, offset: u64) -> Result<BTreeMap<String, String>, IngestError> {
    let mut map = BTreeMap::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| IngestError::MalformedXml {
            offset,
            message: e.to_string(),
        })?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).to_string();
        let value = attr
            .normalized_value(quick_xml::XmlVersion::Implicit1_0)
            .map_err(|e| IngestError::MalformedXml {
                offset,
                message: e.to_string(),
            })?
            .to_string();
        map.insert(key, value);
    }
    Ok(map)
}

/// Parse a `Posts.xml`-shaped stream into linked posts. Answers may appear
/// in any order relative to their question; linkage happens after the single
/// pass. The post-type field is accepted under both the `PostTypeId` and
/// `PostIdType` spellings.
pub fn parse_stackexchange_dump<R: BufRead>(stream: R) -> Result<DumpParse, IngestError> {
    let mut reader = Reader::from_reader(stream);
    reader.config_mut().trim_text(true);

    let mut questions: BTreeMap<u64, RawQuestion> = BTreeMap::new();
    let mut answers: Vec<RawAnswer> = Vec::new();
    let mut other_rows = 0u64;
    let mut buf = Vec::new();

    loop {
        let offset = reader.buffer_position();
        match reader.read_event_into(&mut buf) {
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) if e.name().as_ref() == b"row" => {
                let attrs = attr_map(&e, offset)?;
                let id_text = attrs.get("Id").cloned().unwrap_or_default();
                let post_type = attrs
                    .get("PostTypeId")
                    .or_else(|| attrs.get("PostIdType"))
                    .ok_or_else(|| IngestError::BadRow {
                        row_id: id_text.clone(),
                        message: "missing PostTypeId".into(),
                    })?;
                match post_type.as_str() {
                    "1" => {
                        let id = id_text.parse::<u64>().map_err(|_| IngestError::BadRow {
                            row_id: id_text.clone(),
                            message: "question Id is not an integer".into(),
                        })?;
                        questions.insert(
                            id,
                            RawQuestion {
                                title: attrs.get("Title").cloned().unwrap_or_default(),
                                body: attrs.get("Body").cloned().unwrap_or_default(),
                                tags: attrs.get("Tags").map(|t| parse_tags(t)).unwrap_or_default(),
                                accepted_answer_id: attrs
                                    .get("AcceptedAnswerId")
                                    .and_then(|v| v.parse().ok()),
                                created: attrs
                                    .get("CreationDate")
                                    .and_then(|v| parse_dump_date(v)),
                            },
                        );
                    }
                    "2" => {
                        let parent_id = attrs
                            .get("ParentId")
                            .and_then(|v| v.parse::<u64>().ok())
                            .ok_or_else(|| IngestError::BadRow {
                                row_id: id_text.clone(),
                                message: "answer row lacks a ParentId".into(),
                            })?;
                        answers.push(RawAnswer {
                            id: attrs.get("Id").and_then(|v| v.parse().ok()),
                            parent_id,
                            body: attrs.get("Body").cloned().unwrap_or_default(),
                            created: attrs.get("CreationDate").and_then(|v| parse_dump_date(v)),
                        });
                    }
                    _ => other_rows += 1,
                }
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => {
                return Err(IngestError::MalformedXml {
                    offset,
                    message: e.to_string(),
                })
            }
        }
        buf.clear();
    }

    // Link answers to questions.
    let mut linked: BTreeMap<u64, Vec<RawAnswer>> = BTreeMap::new();
    let mut orphan_answers = 0u64;
    for answer in answers {
        if questions.contains_key(&answer.parent_id) {
            linked.entry(answer.parent_id).or_default().push(answer);
        } else {
            orphan_answers += 1;
        }
    }

    let mut posts = Vec::with_capacity(questions.len());
    for (id, q) in questions {
        let empty = Vec::new();
        let own_answers = linked.get(&id).unwrap_or(&empty);
        let accepted = q
            .accepted_answer_id
            .and_then(|acc| own_answers.iter().find(|a| a.id == Some(acc)));
        posts.push(Post {
            id: id.to_string(),
            source: PostSource::StackExchange,
            title: q.title,
            question_body: q.body,
            answer_bodies: own_answers.iter().map(|a| a.body.clone()).collect(),
            n_answers: own_answers.len() as u32,
            has_accepted: accepted.is_some(),
            accepted_date: accepted.and_then(|a| a.created),
            tags: q.tags,
            created: q.created,
        });
    }

    Ok(DumpParse {
        posts,
        orphan_answers,
        other_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(xml: &str) -> DumpParse {
        parse_stackexchange_dump(Cursor::new(xml.as_bytes())).unwrap()
    }

    #[test]
    fn question_with_two_answers_links_by_parent_id() {
        let xml = r#"<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="1" PostTypeId="1" Title="Q" Body="&lt;p&gt;body&lt;/p&gt;" Tags="&lt;rust&gt;&lt;serde&gt;" CreationDate="2021-01-02T03:04:05.000" />
  <row Id="2" PostTypeId="2" ParentId="1" Body="a one" CreationDate="2021-01-02T04:00:00.000" />
  <row Id="3" PostTypeId="2" ParentId="1" Body="a two" CreationDate="2021-01-02T05:00:00.000" />
</posts>"#;
        let result = parse(xml);
        assert_eq!(result.posts.len(), 1);
        let post = &result.posts[0];
        assert_eq!(post.n_answers, 2);
        assert_eq!(post.answer_bodies.len(), 2);
        assert_eq!(post.tags, vec!["rust", "serde"]);
        assert_eq!(post.question_body, "<p>body</p>");
        assert!(!post.has_accepted);
        assert_eq!(result.orphan_answers, 0);
    }

    #[test]
    fn accepted_answer_date_comes_from_matching_answer() {
        let xml = r#"<posts>
  <row Id="1" PostTypeId="1" AcceptedAnswerId="3" Title="Q" Body="b" />
  <row Id="2" PostTypeId="2" ParentId="1" Body="first" CreationDate="2021-02-01T00:00:00" />
  <row Id="3" PostTypeId="2" ParentId="1" Body="accepted" CreationDate="2021-03-04T05:06:07" />
</posts>"#;
        let result = parse(xml);
        let post = &result.posts[0];
        assert!(post.has_accepted);
        assert_eq!(
            post.accepted_date,
            parse_dump_date("2021-03-04T05:06:07")
        );
    }

    #[test]
    fn accepted_id_without_matching_answer_is_not_accepted() {
        let xml = r#"<posts>
  <row Id="1" PostTypeId="1" AcceptedAnswerId="99" Title="Q" Body="b" />
  <row Id="2" PostTypeId="2" ParentId="1" Body="a" />
</posts>"#;
        let result = parse(xml);
        assert!(!result.posts[0].has_accepted);
        assert_eq!(result.posts[0].n_answers, 1);
    }

    #[test]
    fn orphan_answers_are_counted_not_fatal() {
        let xml = r#"<posts>
  <row Id="1" PostTypeId="1" Title="Q" Body="b" />
  <row Id="5" PostTypeId="2" ParentId="42" Body="lost" />
</posts>"#;
        let result = parse(xml);
        assert_eq!(result.posts.len(), 1);
        assert_eq!(result.orphan_answers, 1);
    }

    #[test]
    fn paper_spelling_of_post_type_field_is_accepted() {
        let xml = r#"<posts>
  <row Id="1" PostIdType="1" Title="Q" Body="b" />
  <row Id="2" PostIdType="2" ParentId="1" Body="a" />
</posts>"#;
        let result = parse(xml);
        assert_eq!(result.posts.len(), 1);
        assert_eq!(result.posts[0].n_answers, 1);
    }

    #[test]
    fn answer_rows_before_their_question_still_link() {
        let xml = r#"<posts>
  <row Id="2" PostTypeId="2" ParentId="1" Body="early" />
  <row Id="1" PostTypeId="1" Title="Q" Body="b" />
</posts>"#;
        let result = parse(xml);
        assert_eq!(result.posts[0].n_answers, 1);
    }

    #[test]
    fn pipe_delimited_tags_parse() {
        assert_eq!(parse_tags("|rust|cargo|"), vec!["rust", "cargo"]);
        assert_eq!(parse_tags("<rust><cargo>"), vec!["rust", "cargo"]);
        assert!(parse_tags("").is_empty());
    }

    #[test]
    fn malformed_xml_reports_offset() {
        let xml = "<posts><row Id=\"1\" PostTypeId=\"1\" Body=\"b\" </posts>";
        let err = parse_stackexchange_dump(Cursor::new(xml.as_bytes())).unwrap_err();
        assert!(matches!(err, IngestError::MalformedXml { .. }));
    }

    #[test]
    fn non_post_rows_are_skipped() {
        let xml = r#"<posts>
  <row Id="1" PostTypeId="1" Title="Q" Body="b" />
  <row Id="2" PostTypeId="4" Body="tag wiki" />
</posts>"#;
        let result = parse(xml);
        assert_eq!(result.posts.len(), 1);
        assert_eq!(result.other_rows, 1);
    }

    #[test]
    fn answer_sum_matches_resolved_answer_rows() {
        // lossless awareness metadata: sum of n_answers equals resolvable
        // answer rows
        let xml = r#"<posts>
  <row Id="1" PostTypeId="1" Title="A" Body="b" />
  <row Id="2" PostTypeId="1" Title="B" Body="b" />
  <row Id="3" PostTypeId="2" ParentId="1" Body="x" />
  <row Id="4" PostTypeId="2" ParentId="2" Body="y" />
  <row Id="5" PostTypeId="2" ParentId="2" Body="z" />
  <row Id="6" PostTypeId="2" ParentId="9" Body="orphan" />
</posts>"#;
        let result = parse(xml);
        let total: u32 = result.posts.iter().map(|p| p.n_answers).sum();
        assert_eq!(total, 3);
        assert_eq!(result.orphan_answers, 1);
    }
}
