//! Discourse forum client: paginates a category's topic listing, fetches
//! each topic's posts, and links them into [`Post`] records. Requests are
//! politeness-delayed and retried with backoff; interrupted crawls resume
//! from a cursor file without refetching completed topics.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{IngestError, Post, PostSource};

/// Environment variable overriding the politeness delay (milliseconds).
pub const FORUM_DELAY_ENV: &str = "DOCALIGN_FORUM_DELAY_MS";

#[derive(Debug, Clone)]
pub struct FetchOptions {
    /// Pause between consecutive HTTP requests.
    pub politeness_delay: Duration,
    /// Retry attempts per request before giving up.
    pub max_retries: u32,
    /// Concurrent topic fetches; results are merged in topic-id order
    /// regardless of completion order.
    pub concurrency: usize,
    /// Cursor file for resumable crawls. `None` disables resumption.
    pub cursor_path: Option<PathBuf>,
}

impl Default for FetchOptions {
    fn default() -> Self {
        let delay_ms = std::env::var(FORUM_DELAY_ENV)
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or(250);
        Self {
            politeness_delay: Duration::from_millis(delay_ms),
            max_retries: 3,
            concurrency: 1,
            cursor_path: None,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Cursor {
    list_done: bool,
    next_list_page: u64,
    pending_topics: Vec<u64>,
    completed_topics: Vec<u64>,
}

/// Listing endpoint shapes. Only the fields we read are declared; anything
/// required but missing surfaces as a schema-drift error naming the field.
#[derive(Debug, Deserialize)]
struct ListingResponse {
    topic_list: Option<TopicList>,
}

#[derive(Debug, Deserialize)]
struct TopicList {
    topics: Option<Vec<TopicSummary>>,
}

#[derive(Debug, Deserialize)]
struct TopicSummary {
    id: Option<u64>,
    title: Option<String>,
    created_at: Option<String>,
}

#[derive(Debug, Deserialize)]
struct TopicResponse {
    post_stream: Option<PostStream>,
}

#[derive(Debug, Deserialize)]
struct PostStream {
    posts: Option<Vec<ForumPost>>,
}

#[derive(Debug, Deserialize)]
struct ForumPost {
    id: Option<u64>,
    post_number: Option<u64>,
    cooked: Option<String>,
    created_at: Option<String>,
    #[serde(default)]
    accepted_answer: bool,
}

fn parse_forum_date(raw: &str) -> Option<NaiveDateTime> {
    chrono::DateTime::parse_from_rfc3339(raw)
        .map(|dt| dt.naive_utc())
        .ok()
}

/// Shared rate limiter: callers block until the politeness window has
/// passed since the previous request, across threads.
struct Throttle {
    next_allowed: Mutex<Instant>,
    delay: Duration,
}

impl Throttle {
    fn new(delay: Duration) -> Self {
        Self {
            next_allowed: Mutex::new(Instant::now()),
            delay,
        }
    }

    fn wait(&self) {
        let wake = {
            let mut slot = self.next_allowed.lock().unwrap();
            let now = Instant::now();
            let wake = (*slot).max(now);
            *slot = wake + self.delay;
            wake
        };
        let now = Instant::now();
        if wake > now {
            std::thread::sleep(wake - now);
        }
    }
}

pub struct DiscourseClient {
    base_url: String,
    http: reqwest::blocking::Client,
    throttle: Throttle,
    max_retries: u32,
}

impl DiscourseClient {
    pub fn new(base_url: &str, options: &FetchOptions) -> Result<Self, IngestError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| IngestError::Http {
                url: base_url.to_string(),
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            http,
            throttle: Throttle::new(options.politeness_delay),
            max_retries: options.max_retries,
        })
    }

    /// GET with politeness delay and exponential backoff. Returns the body
    /// and status for the caller to interpret; retries transient failures
    /// (connection errors, 429, 5xx).
    fn get(&self, path: &str) -> Result<(reqwest::StatusCode, String), IngestError> {
        let url = format!("{}{}", self.base_url, path);
        let mut last_message = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.throttle.delay * 2u32.pow(attempt - 1));
            }
            self.throttle.wait();
            match self.http.get(&url).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_message = format!("status {status}");
                        continue;
                    }
                    let body = resp.text().map_err(|e| IngestError::Http {
                        url: url.clone(),
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })?;
                    return Ok((status, body));
                }
                Err(e) => last_message = e.to_string(),
            }
        }
        Err(IngestError::Http {
            url,
            attempts: self.max_retries + 1,
            message: last_message,
        })
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T, IngestError> {
        let (status, body) = self.get(path)?;
        if !status.is_success() {
            return Err(IngestError::Http {
                url: format!("{}{}", self.base_url, path),
                attempts: 1,
                message: format!("status {status}"),
            });
        }
        serde_json::from_str(&body).map_err(|e| IngestError::Http {
            url: format!("{}{}", self.base_url, path),
            attempts: 1,
            message: format!("invalid JSON: {e}"),
        })
    }

    /// All topic summaries in a category, paginating until an empty page.
    fn list_topics(
        &self,
        category: &str,
        start_page: u64,
        mut on_page: impl FnMut(u64, &[u64]),
    ) -> Result<Vec<(u64, String, Option<NaiveDateTime>)>, IngestError> {
        let mut topics = Vec::new();
        let mut page = start_page;
        loop {
            let path = format!("/c/{category}.json?page={page}");
            let listing: ListingResponse = self.get_json(&path)?;
            let url = format!("{}{}", self.base_url, path);
            let list = listing.topic_list.ok_or(IngestError::SchemaDrift {
                url: url.clone(),
                field: "topic_list",
            })?;
            let page_topics = list.topics.ok_or(IngestError::SchemaDrift {
                url: url.clone(),
                field: "topic_list.topics",
            })?;
            if page_topics.is_empty() {
                break;
            }
            let mut ids = Vec::with_capacity(page_topics.len());
            for t in page_topics {
                let id = t.id.ok_or(IngestError::SchemaDrift {
                    url: url.clone(),
                    field: "topics[].id",
                })?;
                ids.push(id);
                topics.push((
                    id,
                    t.title.unwrap_or_default(),
                    t.created_at.as_deref().and_then(parse_forum_date),
                ));
            }
            on_page(page, &ids);
            page += 1;
        }
        Ok(topics)
    }

    /// All posts of one topic, paginating until a page adds nothing new.
    /// A 404 past the first page means we ran off the end.
    fn topic_posts(&self, topic_id: u64) -> Result<Vec<ForumPost>, IngestError> {
        let mut posts: Vec<ForumPost> = Vec::new();
        let mut page = 1u64;
        loop {
            let path = format!("/t/-/{topic_id}.json?page={page}");
            let (status, body) = self.get(&path)?;
            if status.as_u16() == 404 && page > 1 {
                break;
            }
            let url = format!("{}{}", self.base_url, path);
            if !status.is_success() {
                return Err(IngestError::Http {
                    url,
                    attempts: 1,
                    message: format!("status {status}"),
                });
            }
            let topic: TopicResponse =
                serde_json::from_str(&body).map_err(|e| IngestError::Http {
                    url: url.clone(),
                    attempts: 1,
                    message: format!("invalid JSON: {e}"),
                })?;
            let stream = topic.post_stream.ok_or(IngestError::SchemaDrift {
                url: url.clone(),
                field: "post_stream",
            })?;
            let page_posts = stream.posts.ok_or(IngestError::SchemaDrift {
                url: url.clone(),
                field: "post_stream.posts",
            })?;
            let before = posts.len();
            for p in page_posts {
                if !posts.iter().any(|q| q.id == p.id) {
                    posts.push(p);
                }
            }
            if posts.len() == before {
                break;
            }
            page += 1;
        }
        Ok(posts)
    }

    fn topic_to_post(&self, topic_id: u64, title: &str, created: Option<NaiveDateTime>, posts: Vec<ForumPost>) -> Result<Post, IngestError> {
        let url = format!("{}/t/-/{topic_id}.json", self.base_url);
        let mut posts = posts;
        posts.sort_by_key(|p| p.post_number.unwrap_or(u64::MAX));
        let mut question_body = String::new();
        let mut answer_bodies = Vec::new();
        let mut has_accepted = false;
        let mut accepted_date = None;
        for (idx, p) in posts.into_iter().enumerate() {
            let cooked = p.cooked.ok_or(IngestError::SchemaDrift {
                url: url.clone(),
                field: "posts[].cooked",
            })?;
            let is_question = p.post_number.map(|n| n == 1).unwrap_or(idx == 0);
            if is_question {
                question_body = cooked;
            } else {
                if p.accepted_answer && !has_accepted {
                    has_accepted = true;
                    accepted_date = p.created_at.as_deref().and_then(parse_forum_date);
                }
                answer_bodies.push(cooked);
            }
        }
        Ok(Post {
            id: topic_id.to_string(),
            source: PostSource::Discourse,
            title: title.to_string(),
            question_body,
            n_answers: answer_bodies.len() as u32,
            answer_bodies,
            has_accepted,
            accepted_date,
            tags: vec![],
            created,
        })
    }
}

fn load_cursor(path: &Path) -> Result<Option<Cursor>, IngestError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| IngestError::BadCursor {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn store_cursor(path: &Path, cursor: &Cursor) {
    // Cursor persistence is best-effort; a failed write only costs resume.
    if let Ok(text) = serde_json::to_string_pretty(cursor) {
        let _ = fs::write(path, text);
    }
}

fn partial_posts_path(cursor_path: &Path) -> PathBuf {
    let mut os = cursor_path.as_os_str().to_owned();
    os.push(".posts.jsonl");
    PathBuf::from(os)
}

/// Crawl one category of a Discourse forum into posts. Topics are fetched
/// (optionally concurrently) after the listing completes; output order is
/// ascending topic id.
pub fn fetch_discourse(
    base_url: &str,
    category: &str,
    options: &FetchOptions,
) -> Result<Vec<Post>, IngestError> {
    let client = DiscourseClient::new(base_url, options)?;

    let mut cursor = match &options.cursor_path {
        Some(path) => load_cursor(path)?.unwrap_or_default(),
        None => Cursor::default(),
    };
    let mut recovered: BTreeMap<u64, Post> = BTreeMap::new();
    if let Some(cursor_path) = &options.cursor_path {
        let partial = partial_posts_path(cursor_path);
        if partial.exists() {
            let text = fs::read_to_string(&partial).map_err(|source| IngestError::Io {
                path: partial.clone(),
                source,
            })?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let post: Post = serde_json::from_str(line).map_err(|e| IngestError::BadCursor {
                    path: partial.clone(),
                    message: format!("partial post record: {e}"),
                })?;
                if let Ok(id) = post.id.parse::<u64>() {
                    recovered.insert(id, post);
                }
            }
        }
    }

    // Phase 1: topic listing (skipped entirely when resuming past it).
    let mut topic_meta: BTreeMap<u64, (String, Option<NaiveDateTime>)> = BTreeMap::new();
    if !cursor.list_done {
        let start = cursor.next_list_page;
        let topics = client.list_topics(category, start, |page, _ids| {
            cursor.next_list_page = page + 1;
        })?;
        for (id, title, created) in topics {
            if !cursor.completed_topics.contains(&id) && !cursor.pending_topics.contains(&id) {
                cursor.pending_topics.push(id);
            }
            topic_meta.insert(id, (title, created));
        }
        cursor.list_done = true;
        if let Some(path) = &options.cursor_path {
            store_cursor(path, &cursor);
        }
    }

    // Phase 2: per-topic fetches, concurrent up to the configured limit,
    // merged deterministically by topic id.
    let pending: Vec<u64> = cursor.pending_topics.clone();
    let results: Mutex<BTreeMap<u64, Post>> = Mutex::new(recovered);
    let progress: Mutex<(Cursor, Option<&Path>)> = Mutex::new((
        cursor,
        options.cursor_path.as_deref(),
    ));
    let next: AtomicUsize = AtomicUsize::new(0);
    let failure: Mutex<Option<IngestError>> = Mutex::new(None);
    let workers = options.concurrency.max(1).min(pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failure.lock().unwrap().is_some() {
                    return;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(&topic_id) = pending.get(idx) else {
                    return;
                };
                let meta = topic_meta.get(&topic_id);
                let title = meta.map(|(t, _)| t.as_str()).unwrap_or("");
                let created = meta.and_then(|(_, c)| *c);
                match client
                    .topic_posts(topic_id)
                    .and_then(|posts| client.topic_to_post(topic_id, title, created, posts))
                {
                    Ok(post) => {
                        let mut guard = progress.lock().unwrap();
                        results.lock().unwrap().insert(topic_id, post.clone());
                        guard.0.pending_topics.retain(|&t| t != topic_id);
                        guard.0.completed_topics.push(topic_id);
                        if let Some(path) = guard.1 {
                            store_cursor(path, &guard.0);
                            let partial = partial_posts_path(path);
                            if let Ok(mut f) = fs::OpenOptions::new()
                                .create(true)
                                .append(true)
                                .open(&partial)
                            {
                                let _ = writeln!(
                                    f,
                                    "{}",
                                    serde_json::to_string(&post).expect("post serializes")
                                );
                            }
                        }
                    }
                    Err(e) => {
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        return;
                    }
                }
            });
        }
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }

    // Completed crawl: the cursor has served its purpose.
    if let Some(path) = &options.cursor_path {
        let _ = fs::remove_file(path);
        let _ = fs::remove_file(partial_posts_path(path));
    }

    Ok(results.into_inner().unwrap().into_values().collect())
}
