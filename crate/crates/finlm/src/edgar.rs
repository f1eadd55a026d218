//! Small-scale EDGAR client: submissions index lookup, full-submission text
//! download, rate limiting and retry.

use std::collections::VecDeque;
use std::io::Read;
use std::time::{Duration, Instant};

use finlm_core::corpus::{FormType, RawFiling};
use serde::Deserialize;

use crate::store::{StoreError, StoreWriter};

pub const SUBMISSIONS_BASE: &str = "https://data.sec.gov/submissions";
pub const ARCHIVE_BASE: &str = "https://www.sec.gov/Archives/edgar/data";
pub const DEFAULT_RPS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("network error: {0}")]
    Network(String),
}

impl TransportError {
    /// Network failures, throttling and server errors are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status(code) => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
        }
    }
}

pub trait Transport {
    fn get(&self, url: &str, user_agent: &str) -> Result<String, TransportError>;
}

pub trait Clock {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, user_agent: &str) -> Result<String, TransportError> {
        match self.agent.get(url).set("User-Agent", user_agent).call() {
            Ok(resp) => {
                let mut body = String::new();
                resp.into_reader()
                    .read_to_string(&mut body)
                    .map_err(|e| TransportError::Network(e.to_string()))?;
                Ok(body)
            }
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Status(code)),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

/// Admits at most `limit` requests in any one-second sliding window.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    limit: usize,
    recent: VecDeque<Duration>,
}

impl RateLimiter {
    pub fn new(requests_per_second: u32) -> Self {
        RateLimiter {
            limit: requests_per_second.max(1) as usize,
            recent: VecDeque::new(),
        }
    }

    /// Blocks on `clock` until another request fits, then records it.
    pub fn acquire(&mut self, clock: &dyn Clock) -> Duration {
        let window = Duration::from_secs(1);
        loop {
            let now = clock.now();
            while self.recent.front().is_some_and(|&t| now.saturating_sub(t) >= window) {
                self.recent.pop_front();
            }
            if self.recent.len() < self.limit {
                self.recent.push_back(now);
                return now;
            }
            let wait = (self.recent[0] + window).saturating_sub(now);
            clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (zero-based): base·2^retry, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EdgarError {
    #[error("no user-agent configured; EDGAR requires a caller-identifying agent string")]
    MissingAgent,
    #[error("invalid date `{0}` (expected YYYY-MM-DD)")]
    InvalidDate(String),
    #[error("date range starts after it ends: {start} > {end}")]
    InvalidRange { start: String, end: String },
    #[error("fetching index for CIK {cik} failed after {attempts} attempts ({url}): {source}")]
    Index {
        cik: String,
        url: String,
        attempts: u32,
        source: TransportError,
    },
    #[error("fetching filing {accession} failed after {attempts} attempts ({url}): {source}")]
    Fetch {
        accession: String,
        url: String,
        attempts: u32,
        source: TransportError,
    },
    #[error("malformed index page {url}: {message}")]
    Parse { url: String, message: String },
    #[error("filing {accession} has an empty body")]
    EmptyBody { accession: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DateRange {
    pub start: String,
    pub end: String,
}

fn valid_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap();
    let day: u32 = s[8..10].parse().unwrap();
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

impl DateRange {
    pub fn new(start: &str, end: &str) -> Result<Self, EdgarError> {
        for d in [start, end] {
            if !valid_date(d) {
                return Err(EdgarError::InvalidDate(d.into()));
            }
        }
        if start > end {
            return Err(EdgarError::InvalidRange {
                start: start.into(),
                end: end.into(),
            });
        }
        Ok(DateRange {
            start: start.into(),
            end: end.into(),
        })
    }

    pub fn contains(&self, date: &str) -> bool {
        self.start.as_str() <= date && date <= self.end.as_str()
    }
}

/// Ten-digit zero-padded CIK as used by the submissions API.
pub fn normalize_cik(cik: &str) -> Option<String> {
    let digits = cik.trim().trim_start_matches("CIK");
    if digits.is_empty() || digits.len() > 10 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(format!("{:0>10}", digits))
}

pub fn submissions_url(cik10: &str) -> String {
    format!("{SUBMISSIONS_BASE}/CIK{cik10}.json")
}

pub fn filing_text_url(cik10: &str, accession: &str) -> String {
    let cik = cik10.trim_start_matches('0');
    let nodash: String = accession.chars().filter(|c| *c != '-').collect();
    format!("{ARCHIVE_BASE}/{cik}/{nodash}/{accession}.txt")
}

#[derive(Deserialize)]
struct Submissions {
    filings: SubmissionFilings,
}

#[derive(Deserialize)]
struct SubmissionFilings {
    recent: RecentFilings,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RecentFilings {
    accession_number: Vec<String>,
    filing_date: Vec<String>,
    #[serde(default)]
    report_date: Vec<String>,
    form: Vec<String>,
}

/// One index row that passed the form and date filters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilingRef {
    pub cik: String,
    pub accession_id: String,
    pub form_type: FormType,
    pub filing_date: String,
    pub period_end: String,
}

/// Parses a submissions document and keeps rows whose form is in `forms`
/// and whose filing date lies in `range`. Amendments (`10-K/A`) are skipped.
pub fn parse_submissions(
    json: &str,
    url: &str,
    cik10: &str,
    forms: &[FormType],
    range: &DateRange,
) -> Result<Vec<FilingRef>, EdgarError> {
    let parse_err = |message: String| EdgarError::Parse {
        url: url.into(),
        message,
    };
    let sub: Submissions = serde_json::from_str(json).map_err(|e| parse_err(e.to_string()))?;
    let r = sub.filings.recent;
    let n = r.accession_number.len();
    if r.filing_date.len() != n || r.form.len() != n || (!r.report_date.is_empty() && r.report_date.len() != n) {
        return Err(parse_err("column lengths differ in filings.recent".into()));
    }
    let mut out = Vec::new();
    for i in 0..n {
        let Some(form_type) = forms.iter().copied().find(|f| f.edgar_name() == r.form[i]) else {
            continue;
        };
        if !range.contains(&r.filing_date[i]) {
            continue;
        }
        let report = r.report_date.get(i).filter(|d| !d.is_empty());
        out.push(FilingRef {
            cik: cik10.into(),
            accession_id: r.accession_number[i].clone(),
            form_type,
            filing_date: r.filing_date[i].clone(),
            period_end: report.unwrap_or(&r.filing_date[i]).clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EdgarConfig {
    pub user_agent: String,
    pub requests_per_second: u32,
    pub retry: RetryPolicy,
}

impl EdgarConfig {
    pub fn new(user_agent: impl Into<String>) -> Self {
        EdgarConfig {
            user_agent: user_agent.into(),
            requests_per_second: DEFAULT_RPS,
            retry: RetryPolicy::default(),
        }
    }
}

/// Serializes every request through one rate-limited queue.
pub struct EdgarClient<T, C> {
    transport: T,
    clock: C,
    config: EdgarConfig,
    limiter: RateLimiter,
    requests: u64,
}

impl EdgarClient<UreqTransport, SystemClock> {
    pub fn live(config: EdgarConfig) -> Result<Self, EdgarError> {
        Self::new(UreqTransport::new(Duration::from_secs(60)), SystemClock::default(), config)
    }
}

impl<T: Transport, C: Clock> EdgarClient<T, C> {
    pub fn new(transport: T, clock: C, config: EdgarConfig) -> Result<Self, EdgarError> {
        if config.user_agent.trim().is_empty() {
            return Err(EdgarError::MissingAgent);
        }
        let limiter = RateLimiter::new(config.requests_per_second);
        Ok(EdgarClient {
            transport,
            clock,
            config,
            limiter,
            requests: 0,
        })
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    /// Requests issued so far, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests
    }

    /// GET with rate limiting and backoff. On failure returns the last error
    /// and the number of attempts made.
    fn get(&mut self, url: &str) -> Result<String, (TransportError, u32)> {
        let mut attempt = 0;
        loop {
            self.limiter.acquire(&self.clock);
            self.requests += 1;
            attempt += 1;
            match self.transport.get(url, &self.config.user_agent) {
                Ok(body) => return Ok(body),
                Err(e) if e.is_transient() && attempt <= self.config.retry.max_retries => {
                    let delay = self.config.retry.delay(attempt - 1);
                    log::warn!("{url}: {e}; retrying in {delay:?}");
                    self.clock.sleep(delay);
                }
                Err(e) => return Err((e, attempt)),
            }
        }
    }

    pub fn list_filings(&mut self, cik: &str, forms: &[FormType], range: &DateRange) -> Result<Vec<FilingRef>, EdgarError> {
        let cik10 = normalize_cik(cik).ok_or_else(|| EdgarError::Parse {
            url: String::new(),
            message: format!("invalid CIK `{cik}`"),
        })?;
        let url = submissions_url(&cik10);
        let json = self.get(&url).map_err(|(source, attempts)| EdgarError::Index {
            cik: cik10.clone(),
            url: url.clone(),
            attempts,
            source,
        })?;
        parse_submissions(&json, &url, &cik10, forms, range)
    }

    pub fn fetch_filing(&mut self, r: &FilingRef) -> Result<RawFiling, EdgarError> {
        let url = filing_text_url(&r.cik, &r.accession_id);
        let body = self.get(&url).map_err(|(source, attempts)| EdgarError::Fetch {
            accession: r.accession_id.clone(),
            url: url.clone(),
            attempts,
            source,
        })?;
        if body.trim().is_empty() {
            return Err(EdgarError::EmptyBody {
                accession: r.accession_id.clone(),
            });
        }
        Ok(RawFiling {
            accession_id: r.accession_id.clone(),
            cik: r.cik.clone(),
            form_type: r.form_type,
            period_end: r.period_end.clone(),
            body,
        })
    }

    /// Lazily walks `ciks`, yielding matching filings. Each filing is written
    /// to the store's raw area before it is yielded; filings already present
    /// there are loaded instead of fetched. Errors are yielded in place and
    /// the walk continues with the next filing or CIK.
    pub fn fetch_edgar<'a>(
        &'a mut self,
        ciks: &[String],
        forms: &[FormType],
        range: DateRange,
        store: &'a StoreWriter,
    ) -> FilingStream<'a, T, C> {
        FilingStream {
            client: self,
            ciks: ciks.iter().cloned().collect(),
            forms: forms.to_vec(),
            range,
            pending: VecDeque::new(),
            store,
        }
    }
}

pub struct FilingStream<'a, T, C> {
    client: &'a mut EdgarClient<T, C>,
    ciks: VecDeque<String>,
    forms: Vec<FormType>,
    range: DateRange,
    pending: VecDeque<FilingRef>,
    store: &'a StoreWriter,
}

impl<T: Transport, C: Clock> Iterator for FilingStream<'_, T, C> {
    type Item = Result<RawFiling, EdgarError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.pending.pop_front() {
                let store = self.store.store();
                if store.has_raw(&r.accession_id) {
                    return Some(store.load_raw(&r.accession_id).map_err(EdgarError::from));
                }
                let filing = match self.client.fetch_filing(&r) {
                    Ok(f) => f,
                    Err(e) => return Some(Err(e)),
                };
                return Some(self.store.save_raw(&filing).map(|()| filing).map_err(EdgarError::from));
            }
            let cik = self.ciks.pop_front()?;
            match self.client.list_filings(&cik, &self.forms, &self.range) {
                Ok(refs) => self.pending.extend(refs),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cik_and_urls() {
        assert_eq!(normalize_cik("320193").unwrap(), "0000320193");
        assert_eq!(normalize_cik("CIK0000320193").unwrap(), "0000320193");
        assert!(normalize_cik("12a").is_none());
        assert!(normalize_cik("").is_none());
        assert_eq!(submissions_url("0000320193"), "https://data.sec.gov/submissions/CIK0000320193.json");
        assert_eq!(
            filing_text_url("0000320193", "0000320193-23-000106"),
            "https://www.sec.gov/Archives/edgar/data/320193/000032019323000106/0000320193-23-000106.txt"
        );
    }

    #[test]
    fn date_range_validation() {
        assert!(DateRange::new("2020-01-01", "2020-12-31").is_ok());
        assert!(matches!(DateRange::new("2020-13-01", "2020-12-31"), Err(EdgarError::InvalidDate(_))));
        assert!(matches!(DateRange::new("2021-01-01", "2020-12-31"), Err(EdgarError::InvalidRange { .. })));
        let r = DateRange::new("2020-01-01", "2020-12-31").unwrap();
        assert!(r.contains("2020-01-01") && r.contains("2020-12-31"));
        assert!(!r.contains("2021-01-01"));
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1000),
        };
        let d: Vec<u128> = (0..6).map(|i| p.delay(i).as_millis()).collect();
        assert_eq!(d, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.delay(40), Duration::from_millis(1000));
    }

    #[test]
    fn submissions_filtering() {
        let json = r#"{"cik":"320193","filings":{"recent":{
            "accessionNumber":["a-1","a-2","a-3","a-4"],
            "filingDate":["2020-10-30","2020-07-31","2019-10-31","2020-11-02"],
            "reportDate":["2020-09-26","2020-06-27","2019-09-28",""],
            "form":["10-K","10-Q","10-K","10-K/A"]}}}"#;
        let range = DateRange::new("2020-01-01", "2020-12-31").unwrap();
        let rows = parse_submissions(json, "u", "0000320193", &[FormType::TenK], &range).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].accession_id, "a-1");
        assert_eq!(rows[0].period_end, "2020-09-26");
        let both = parse_submissions(json, "u", "0000320193", &[FormType::TenK, FormType::TenQ], &range).unwrap();
        assert_eq!(both.len(), 2);
    }

    #[test]
    fn malformed_index_names_url() {
        let range = DateRange::new("2020-01-01", "2020-12-31").unwrap();
        let err = parse_submissions("{\"filings\":{}}", "https://x/y.json", "1", &[FormType::TenK], &range).unwrap_err();
        assert!(err.to_string().contains("https://x/y.json"), "{err}");
        let ragged = r#"{"filings":{"recent":{"accessionNumber":["a"],"filingDate":[],"form":["10-K"]}}}"#;
        assert!(matches!(
            parse_submissions(ragged, "u", "1", &[FormType::TenK], &range),
            Err(EdgarError::Parse { .. })
        ));
    }
}
