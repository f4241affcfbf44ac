//! Survey state and its persistence.
//!
//! Every change is an [`Event`] appended to `events.log` (one JSON line,
//! fsynced before the call returns) and then applied to the in-memory
//! [`State`]. `snapshot.json` holds the state as of some sequence number so
//! that startup only replays the log's tail.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use opingraph_core::graph::{text_key, EdgeLabel, EdgeRecord, GraphFile, VertexRecord};
use opingraph_core::OpinionGraph;
use parking_lot::Mutex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::*;
use crate::ServiceError;

const LOG_FILE: &str = "events.log";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Event {
    SurveyCreated {
        survey: Survey,
        seeds: Vec<ResponseRecord>,
    },
    ResponseSubmitted {
        survey: String,
        question: String,
        respondent: String,
        response: Option<ResponseRecord>,
    },
    TicketIssued {
        ticket: Ticket,
    },
    JudgmentSubmitted {
        survey: String,
        ticket: String,
        judgment: JudgmentRecord,
        materialized: Option<ResponseRecord>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    event: Event,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct RespondentState {
    /// Own response id once materialized.
    response: Option<String>,
    ticket: Option<String>,
    judged: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct QuestionState {
    responses: Vec<ResponseRecord>,
    respondents: BTreeMap<String, RespondentState>,
    judgments: Vec<JudgmentRecord>,
}

impl QuestionState {
    fn response(&self, id: &str) -> Option<&ResponseRecord> {
        self.responses.iter().find(|r| r.id == id)
    }

    /// One representative response id per distinct text key, earliest first.
    fn pool(&self) -> Vec<&ResponseRecord> {
        let mut seen = HashSet::new();
        self.responses.iter().filter(|r| seen.insert(r.text_key.as_str())).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SurveyState {
    survey: Survey,
    questions: BTreeMap<String, QuestionState>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct State {
    /// Sequence number of the last applied event.
    seq: u64,
    tickets_issued: u64,
    surveys: BTreeMap<String, SurveyState>,
    tickets: BTreeMap<String, Ticket>,
}

impl State {
    fn question(&self, survey: &str, question: &str) -> Result<&QuestionState, ServiceError> {
        self.surveys
            .get(survey)
            .ok_or_else(|| ServiceError::NotFound(format!("survey {survey:?}")))?
            .questions
            .get(question)
            .ok_or_else(|| ServiceError::NotFound(format!("question {question:?} in survey {survey:?}")))
    }

    fn question_mut(&mut self, survey: &str, question: &str) -> Result<&mut QuestionState, ServiceError> {
        self.surveys
            .get_mut(survey)
            .and_then(|s| s.questions.get_mut(question))
            .ok_or_else(|| ServiceError::Corrupt(format!("event for unknown question {survey}/{question}")))
    }

    fn apply(&mut self, entry: LogEntry) -> Result<(), ServiceError> {
        if entry.seq != self.seq + 1 {
            return Err(ServiceError::Corrupt(format!(
                "event {} follows {}",
                entry.seq, self.seq
            )));
        }
        match entry.event {
            Event::SurveyCreated { survey, seeds } => {
                let mut questions: BTreeMap<String, QuestionState> =
                    survey.questions.iter().map(|q| (q.id.clone(), QuestionState::default())).collect();
                for seed in seeds {
                    questions
                        .get_mut(&seed.question)
                        .ok_or_else(|| ServiceError::Corrupt(format!("seed for unknown question {}", seed.question)))?
                        .responses
                        .push(seed);
                }
                self.surveys.insert(survey.id.clone(), SurveyState { survey, questions });
            }
            Event::ResponseSubmitted {
                survey,
                question,
                respondent,
                response,
            } => {
                let q = self.question_mut(&survey, &question)?;
                let state = q.respondents.entry(respondent).or_default();
                state.response = response.as_ref().map(|r| r.id.clone());
                q.responses.extend(response);
            }
            Event::TicketIssued { ticket } => {
                let q = self.question_mut(&ticket.survey, &ticket.question)?;
                q.respondents.entry(ticket.respondent.clone()).or_default().ticket = Some(ticket.id.clone());
                self.tickets_issued += 1;
                self.tickets.insert(ticket.id.clone(), ticket);
            }
            Event::JudgmentSubmitted {
                survey,
                ticket,
                judgment,
                materialized,
            } => {
                self.tickets
                    .get_mut(&ticket)
                    .ok_or_else(|| ServiceError::Corrupt(format!("judgment on unknown ticket {ticket}")))?
                    .used = true;
                let q = self.question_mut(&survey, &judgment.question)?;
                let state = q.respondents.entry(judgment.respondent.clone()).or_default();
                state.judged = true;
                if let Some(record) = materialized {
                    state.response = Some(record.id.clone());
                    q.responses.push(record);
                }
                q.judgments.push(judgment);
            }
        }
        self.seq = entry.seq;
        Ok(())
    }
}

struct EventLog {
    dir: PathBuf,
    file: File,
}

impl EventLog {
    /// Loads the snapshot (if any) and replays the log after it. A final
    /// line without its newline is a write that never completed; it is cut
    /// off. Any other unreadable line is an error.
    fn open(dir: &Path) -> Result<(Self, State), ServiceError> {
        fs::create_dir_all(dir)?;
        let mut state = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| ServiceError::Corrupt(format!("snapshot: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(e.into()),
        };
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut reader = BufReader::new(&file);
        let mut good = 0u64;
        let mut line = String::new();
        loop {
            line.clear();
            let read = reader.read_line(&mut line)?;
            if read == 0 {
                break;
            }
            if !line.ends_with('\n') {
                log::warn!("dropping incomplete trailing record in {}", path.display());
                break;
            }
            let entry: LogEntry = serde_json::from_str(&line)
                .map_err(|e| ServiceError::Corrupt(format!("{} at byte {good}: {e}", path.display())))?;
            if entry.seq > state.seq {
                state.apply(entry)?;
            }
            good += read as u64;
        }
        drop(reader);
        if file.metadata()?.len() != good {
            file.set_len(good)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((EventLog { dir: dir.to_path_buf(), file }, state))
    }

    fn append(&mut self, entry: &LogEntry) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(entry).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    fn snapshot(&self, state: &State) -> Result<(), ServiceError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut file = File::create(&tmp)?;
        serde_json::to_writer(&mut file, state).expect("state serializes");
        file.sync_all()?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        File::open(&self.dir)?.sync_all()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StoreConfig {
    /// Base seed of the per-request sampling generators.
    pub rng_seed: u64,
    /// Events between snapshots.
    pub snapshot_every: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            rng_seed: 0,
            snapshot_every: 1000,
        }
    }
}

struct Inner {
    state: State,
    log: Option<EventLog>,
    snapshot_seq: u64,
}

impl Inner {
    fn commit(&mut self, event: Event, snapshot_every: u64) -> Result<(), ServiceError> {
        let entry = LogEntry {
            seq: self.state.seq + 1,
            event,
        };
        if let Some(log) = &mut self.log {
            log.append(&entry)?;
        }
        self.state.apply(entry)?;
        if self.state.seq - self.snapshot_seq >= snapshot_every {
            if let Some(log) = &self.log {
                // The log already holds the event, so a failed snapshot
                // loses nothing.
                match log.snapshot(&self.state) {
                    Ok(()) => self.snapshot_seq = self.state.seq,
                    Err(e) => log::error!("snapshot failed: {e}"),
                }
            }
        }
        Ok(())
    }
}

/// Surveys, responses and judgments behind one lock. Writes are serialized
/// and durable on return; reads see the state after the last completed
/// write.
pub struct SurveyStore {
    inner: Mutex<Inner>,
    config: StoreConfig,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn non_empty(text: &str, what: &str) -> Result<(), ServiceError> {
    if text.trim().is_empty() {
        Err(ServiceError::Validation(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

impl SurveyStore {
    /// Opens (or creates) a store persisted under `dir`.
    pub fn open(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self, ServiceError> {
        let (log, state) = EventLog::open(dir.as_ref())?;
        log::info!("recovered {} events from {}", state.seq, dir.as_ref().display());
        let snapshot_seq = state.seq;
        Ok(SurveyStore {
            inner: Mutex::new(Inner {
                state,
                log: Some(log),
                snapshot_seq,
            }),
            config,
        })
    }

    /// A store that keeps nothing on disk.
    pub fn in_memory(config: StoreConfig) -> Self {
        SurveyStore {
            inner: Mutex::new(Inner {
                state: State::default(),
                log: None,
                snapshot_seq: 0,
            }),
            config,
        }
    }

    /// Writes a snapshot of the current state.
    pub fn snapshot(&self) -> Result<(), ServiceError> {
        let mut inner = self.inner.lock();
        if let Some(log) = &inner.log {
            log.snapshot(&inner.state)?;
        }
        inner.snapshot_seq = inner.state.seq;
        Ok(())
    }

    /// Number of events written so far.
    pub fn sequence(&self) -> u64 {
        self.inner.lock().state.seq
    }

    pub fn create_survey(&self, definition: SurveyDefinition) -> Result<Survey, ServiceError> {
        self.create_survey_at(definition, now())
    }

    pub fn create_survey_at(&self, definition: SurveyDefinition, at: u64) -> Result<Survey, ServiceError> {
        non_empty(&definition.id, "survey id")?;
        if definition.questions.is_empty() {
            return Err(ServiceError::Validation("a survey needs at least one question".into()));
        }
        let mut ids = BTreeSet::new();
        let mut questions = Vec::new();
        let mut seeds = Vec::new();
        for q in &definition.questions {
            non_empty(&q.id, "question id")?;
            non_empty(&q.prompt, &format!("prompt of question {:?}", q.id))?;
            if !ids.insert(q.id.as_str()) {
                return Err(ServiceError::Validation(format!("duplicate question id {:?}", q.id)));
            }
            if q.sample_size == 0 {
                return Err(ServiceError::Validation(format!("question {:?} has sample size 0", q.id)));
            }
            let mut seed_ids = Vec::new();
            for (k, text) in q.seeds.iter().enumerate() {
                non_empty(text, &format!("seed {k} of question {:?}", q.id))?;
                let id = format!("{}-s{k}", q.id);
                seed_ids.push(id.clone());
                seeds.push(ResponseRecord {
                    id,
                    question: q.id.clone(),
                    respondent: None,
                    text: text.clone(),
                    is_seed: true,
                    created_at: at,
                    text_key: text_key(text),
                });
            }
            questions.push(Question {
                id: q.id.clone(),
                prompt: q.prompt.clone(),
                sample_size: q.sample_size,
                seed_ids,
            });
        }
        let survey = Survey {
            id: definition.id,
            title: definition.title,
            questions,
        };
        let mut inner = self.inner.lock();
        if inner.state.surveys.contains_key(&survey.id) {
            return Err(ServiceError::Conflict(format!("survey {:?} already exists", survey.id)));
        }
        inner.commit(
            Event::SurveyCreated {
                survey: survey.clone(),
                seeds,
            },
            self.config.snapshot_every,
        )?;
        Ok(survey)
    }

    pub fn survey(&self, id: &str) -> Result<Survey, ServiceError> {
        let inner = self.inner.lock();
        inner
            .state
            .surveys
            .get(id)
            .map(|s| s.survey.clone())
            .ok_or_else(|| ServiceError::NotFound(format!("survey {id:?}")))
    }

    /// Step 1. `None` skips it.
    pub fn submit_response(
        &self,
        survey: &str,
        question: &str,
        respondent: &str,
        text: Option<String>,
    ) -> Result<SubmitOutcome, ServiceError> {
        self.submit_response_at(survey, question, respondent, text, now())
    }

    pub fn submit_response_at(
        &self,
        survey: &str,
        question: &str,
        respondent: &str,
        text: Option<String>,
        at: u64,
    ) -> Result<SubmitOutcome, ServiceError> {
        non_empty(respondent, "respondent")?;
        if let Some(t) = &text {
            if t.trim().is_empty() {
                return Err(ServiceError::Validation("empty response text; skip the step instead".into()));
            }
        }
        let mut inner = self.inner.lock();
        let q = inner.state.question(survey, question)?;
        if q.respondents.contains_key(respondent) {
            return Err(ServiceError::Conflict(format!(
                "respondent {respondent:?} already answered question {question:?}"
            )));
        }
        let response = text.map(|text| ResponseRecord {
            id: format!("{question}-r{}", q.responses.len()),
            question: question.to_owned(),
            respondent: Some(respondent.to_owned()),
            text_key: text_key(&text),
            text,
            is_seed: false,
            created_at: at,
        });
        inner.commit(
            Event::ResponseSubmitted {
                survey: survey.to_owned(),
                question: question.to_owned(),
                respondent: respondent.to_owned(),
                response: response.clone(),
            },
            self.config.snapshot_every,
        )?;
        Ok(match response {
            Some(response) => SubmitOutcome::Recorded { response },
            None => SubmitOutcome::Deferred {
                respondent: respondent.to_owned(),
            },
        })
    }

    /// Step 2 sampling: up to `k` distinct texts, uniformly without
    /// replacement, never the respondent's own. Asking again while the
    /// previous ticket is open returns that ticket.
    pub fn sample_references(
        &self,
        survey: &str,
        question: &str,
        respondent: &str,
        k: Option<usize>,
    ) -> Result<SampleResponse, ServiceError> {
        self.sample_references_at(survey, question, respondent, k, now())
    }

    pub fn sample_references_at(
        &self,
        survey: &str,
        question: &str,
        respondent: &str,
        k: Option<usize>,
        at: u64,
    ) -> Result<SampleResponse, ServiceError> {
        let mut inner = self.inner.lock();
        let state = &inner.state;
        let q = state.question(survey, question)?;
        let sample_size = state.surveys[survey]
            .survey
            .questions
            .iter()
            .find(|q| q.id == question)
            .map(|q| q.sample_size);
        let k = k.or(sample_size).unwrap_or(DEFAULT_SAMPLE_SIZE);
        if k == 0 {
            return Err(ServiceError::Validation("k must be at least 1".into()));
        }
        let r = q.respondents.get(respondent).ok_or_else(|| {
            ServiceError::NotFound(format!("respondent {respondent:?} has not started question {question:?}"))
        })?;
        if r.judged {
            return Err(ServiceError::Conflict(format!(
                "respondent {respondent:?} already judged question {question:?}"
            )));
        }
        let items = |ticket: &Ticket| -> Vec<ShownItem> {
            ticket
                .served
                .iter()
                .map(|id| ShownItem {
                    id: id.clone(),
                    text: q.response(id).map(|r| r.text.clone()).unwrap_or_default(),
                })
                .collect()
        };
        if let Some(open) = r.ticket.as_ref().and_then(|t| state.tickets.get(t)) {
            if !open.used && at < open.issued_at + TICKET_LIFETIME {
                return Ok(SampleResponse {
                    ticket: open.id.clone(),
                    items: items(open),
                });
            }
        }
        let own_key = r.response.as_ref().and_then(|id| q.response(id)).map(|r| r.text_key.as_str());
        let pool: Vec<&ResponseRecord> = q.pool().into_iter().filter(|r| Some(r.text_key.as_str()) != own_key).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(state.tickets_issued);
        let served: Vec<String> = sample(&mut rng, pool.len(), k.min(pool.len()))
            .into_iter()
            .map(|i| pool[i].id.clone())
            .collect();
        let ticket = Ticket {
            id: format!("{:x}-{:016x}", state.tickets_issued, rng.random::<u64>()),
            survey: survey.to_owned(),
            question: question.to_owned(),
            respondent: respondent.to_owned(),
            served,
            issued_at: at,
            used: false,
        };
        let response = SampleResponse {
            ticket: ticket.id.clone(),
            items: items(&ticket),
        };
        inner.commit(Event::TicketIssued { ticket }, self.config.snapshot_every)?;
        Ok(response)
    }

    /// Step 2 answers. Served responses missing from `selections` count as
    /// not similar.
    pub fn submit_judgments(
        &self,
        survey: &str,
        question: &str,
        ticket: &str,
        selections: &[Selection],
    ) -> Result<JudgmentOutcome, ServiceError> {
        self.submit_judgments_at(survey, question, ticket, selections, now())
    }

    pub fn submit_judgments_at(
        &self,
        survey: &str,
        question: &str,
        ticket_id: &str,
        selections: &[Selection],
        at: u64,
    ) -> Result<JudgmentOutcome, ServiceError> {
        let mut inner = self.inner.lock();
        let state = &inner.state;
        let q = state.question(survey, question)?;
        let ticket = state
            .tickets
            .get(ticket_id)
            .filter(|t| t.survey == survey && t.question == question)
            .ok_or_else(|| ServiceError::NotFound(format!("ticket {ticket_id:?} for question {question:?}")))?;
        if ticket.used {
            return Err(ServiceError::Conflict(format!("ticket {ticket_id:?} was already used")));
        }
        if at >= ticket.issued_at + TICKET_LIFETIME {
            return Err(ServiceError::Expired(format!("ticket {ticket_id:?}")));
        }
        let mut chosen: BTreeMap<&str, bool> = BTreeMap::new();
        for s in selections {
            if !ticket.served.contains(&s.id) {
                return Err(ServiceError::Validation(format!("{:?} was not served on this ticket", s.id)));
            }
            if chosen.insert(s.id.as_str(), s.similar).is_some() {
                return Err(ServiceError::Validation(format!("{:?} selected twice", s.id)));
            }
        }
        let shown: Vec<Selection> = ticket
            .served
            .iter()
            .map(|id| Selection {
                id: id.clone(),
                similar: chosen.get(id.as_str()).copied().unwrap_or(false),
            })
            .collect();
        let positive = shown.iter().filter(|s| s.similar).count();
        let own = q.respondents.get(&ticket.respondent).and_then(|r| r.response.clone());
        let materialized = match (&own, shown.iter().find(|s| s.similar)) {
            (None, Some(first)) => {
                let source = q
                    .response(&first.id)
                    .ok_or_else(|| ServiceError::Corrupt(format!("served response {:?} missing", first.id)))?;
                Some(ResponseRecord {
                    id: format!("{question}-r{}", q.responses.len()),
                    question: question.to_owned(),
                    respondent: Some(ticket.respondent.clone()),
                    text: source.text.clone(),
                    is_seed: false,
                    created_at: at,
                    text_key: source.text_key.clone(),
                })
            }
            _ => None,
        };
        let judgment = JudgmentRecord {
            id: format!("{question}-j{}", q.judgments.len()),
            question: question.to_owned(),
            respondent: ticket.respondent.clone(),
            own_response: own.or_else(|| materialized.as_ref().map(|r| r.id.clone())),
            shown,
            created_at: at,
        };
        let outcome = JudgmentOutcome {
            negative: judgment.shown.len() - positive,
            positive,
            judgment: judgment.clone(),
            materialized: materialized.clone(),
        };
        inner.commit(
            Event::JudgmentSubmitted {
                survey: survey.to_owned(),
                ticket: ticket_id.to_owned(),
                judgment,
                materialized,
            },
            self.config.snapshot_every,
        )?;
        Ok(outcome)
    }

    /// The question's opinion graph: every materialized response is a
    /// vertex and every judgment an edge from the judge's own response to
    /// each shown one. Judgments by respondents who skipped Step 1 and
    /// selected nothing have no vertex to attach to; they are counted in
    /// the `dropped_judgments` metadata entry.
    pub fn export_graph(
        &self,
        survey: &str,
        question: &str,
        neutralize: bool,
        rng_seed: u64,
    ) -> Result<OpinionGraph, ServiceError> {
        let inner = self.inner.lock();
        let q = inner.state.question(survey, question)?;
        let vertices = q
            .responses
            .iter()
            .map(|r| VertexRecord {
                id: r.id.clone(),
                text: r.text.clone(),
                respondent: r.respondent.clone(),
                seed: r.is_seed,
            })
            .collect();
        let mut edges = Vec::new();
        let mut dropped = 0usize;
        for j in &q.judgments {
            let Some(own) = &j.own_response else {
                dropped += 1;
                continue;
            };
            edges.extend(j.shown.iter().map(|s| EdgeRecord {
                src: own.clone(),
                dst: s.id.clone(),
                label: if s.similar { EdgeLabel::Positive } else { EdgeLabel::Negative },
            }));
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("survey".to_owned(), survey.into());
        metadata.insert("dropped_judgments".to_owned(), dropped.into());
        let file = GraphFile {
            question: question.to_owned(),
            vertices,
            edges,
            metadata,
        };
        let graph = OpinionGraph::from_file(file).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        Ok(if neutralize { graph.neutralize_excess(rng_seed) } else { graph })
    }
}
