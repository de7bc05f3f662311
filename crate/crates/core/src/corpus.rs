//! Topic corpus and word-cloud run schedules.
//!
//! A run is three topic blocks. Each block highlights three keywords for
//! 7 s apiece; one 20 s rest is placed at the beginning, in one of the two
//! gaps between topics, or at the end; every other gap between topics is a
//! 10 s break. Onsets are seconds from the start of the whole schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, streams};

pub const IMAGINE_S: f64 = 7.0;
pub const REST_S: f64 = 20.0;
pub const BREAK_S: f64 = 10.0;
pub const TOPICS_PER_RUN: usize = 3;
pub const KEYWORDS_PER_TOPIC: usize = 3;

const SHIPPED_TOPICS: &str = include_str!("../data/topics.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic: String,
    pub keywords: Vec<String>,
    pub templates: Vec<String>,
}

impl Topic {
    /// Fills template `index` with this topic word and `keyword`.
    pub fn render(&self, index: usize, keyword: &str) -> Result<String> {
        let template = self
            .templates
            .get(index)
            .ok_or_else(|| Error::data(format!("topic '{}' has no template {index}", self.topic)))?;
        if !template.contains("{topic}") || !template.contains("{keyword}") {
            return Err(Error::data(format!(
                "template '{template}' of topic '{}' lacks a {{topic}} or {{keyword}} slot",
                self.topic
            )));
        }
        Ok(template.replace("{topic}", &self.topic).replace("{keyword}", keyword))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicSet {
    pub topics: Vec<Topic>,
}

impl TopicSet {
    /// The 272-topic corpus bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_TOPICS).expect("bundled topic corpus is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::data("topic corpus is empty"));
        }
        let topics: Vec<Topic> =
            serde_json::from_str(text).map_err(|e| Error::data(format!("topic corpus does not parse: {e}")))?;
        let set = TopicSet { topics };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics.is_empty() {
            return Err(Error::data("topic corpus contains no topics"));
        }
        let mut seen = BTreeSet::new();
        for t in &self.topics {
            if !seen.insert(t.topic.as_str()) {
                return Err(Error::data(format!("duplicate topic word '{}'", t.topic)));
            }
            if t.topic.contains([',', ' ', '\t']) {
                return Err(Error::data(format!("topic word '{}' must be a single word", t.topic)));
            }
            if t.keywords.len() < KEYWORDS_PER_TOPIC {
                return Err(Error::data(format!(
                    "topic '{}' has {} keywords, needs at least {KEYWORDS_PER_TOPIC}",
                    t.topic,
                    t.keywords.len()
                )));
            }
            let unique: BTreeSet<_> = t.keywords.iter().collect();
            if unique.len() != t.keywords.len() {
                return Err(Error::data(format!("topic '{}' repeats a keyword", t.topic)));
            }
            if let Some(k) = t.keywords.iter().find(|k| k.contains([',', ' ', '\t'])) {
                return Err(Error::data(format!("keyword '{k}' of topic '{}' must be a single word", t.topic)));
            }
            if t.templates.is_empty() {
                return Err(Error::data(format!("topic '{}' has no templates", t.topic)));
            }
            for i in 0..t.templates.len() {
                let s = t.render(i, &t.keywords[0])?;
                if s.split_whitespace().count() < 4 {
                    return Err(Error::data(format!(
                        "template {i} of topic '{}' renders to fewer than 4 words",
                        t.topic
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn index_of(&self, topic: &str) -> Option<usize> {
        self.topics.iter().position(|t| t.topic == topic)
    }

    /// Every sentence the templates can produce, in corpus order.
    pub fn all_sentences(&self) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.topics {
            for i in 0..t.templates.len() {
                for k in &t.keywords {
                    out.push(t.render(i, k).expect("validated template"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Imagine,
    Rest,
    Break,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Imagine => "imagine",
            EventKind::Rest => "rest",
            EventKind::Break => "break",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "imagine" => Ok(EventKind::Imagine),
            "rest" => Ok(EventKind::Rest),
            "break" => Ok(EventKind::Break),
            other => Err(Error::data(format!("unknown event kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub onset: f64,
    pub duration: f64,
    pub run: usize,
    pub topic: Option<String>,
    pub keyword: Option<String>,
}

impl Event {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Where the rest trial sits within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RestPosition {
    Beginning,
    Middle,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub events: Vec<Event>,
    /// (start, end) seconds of each run.
    pub runs: Vec<(f64, f64)>,
    pub rest_positions: Vec<RestPosition>,
}

impl Schedule {
    pub fn total_duration(&self) -> f64 {
        self.runs.last().map_or(0.0, |r| r.1)
    }

    pub fn imagine_events(&self) -> impl Iterator<Item = (usize, &Event)> {
        self.events.iter().enumerate().filter(|(_, e)| e.kind == EventKind::Imagine)
    }

    /// One run as a standalone schedule with onsets relative to its start.
    pub fn run(&self, index: usize) -> Result<Schedule> {
        let &(start, end) = self
            .runs
            .get(index)
            .ok_or_else(|| Error::data(format!("schedule has no run {index}")))?;
        let events = self
            .events
            .iter()
            .filter(|e| e.run == index)
            .map(|e| Event { onset: e.onset - start, run: 0, ..e.clone() })
            .collect();
        Ok(Schedule {
            events,
            runs: vec![(0.0, end - start)],
            rest_positions: vec![self.rest_positions[index]],
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,onset_s,duration_s,topic,keyword\n");
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.kind.as_str(),
                e.onset,
                e.duration,
                e.topic.as_deref().unwrap_or(""),
                e.keyword.as_deref().unwrap_or("")
            );
        }
        out
    }

    /// Parses a single-run events table written by [`Schedule::to_csv`].
    pub fn from_csv(text: &str) -> Result<Schedule> {
        let mut lines = text.lines();
        match lines.next() {
            Some("kind,onset_s,duration_s,topic,keyword") => {}
            other => return Err(Error::data(format!("unexpected events header {other:?}"))),
        }
        let mut events = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::data(format!("events line {} has {} fields", n + 2, f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(format!("events line {}: bad number '{s}'", n + 2)))
            };
            let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
            events.push(Event {
                kind: EventKind::parse(f[0])?,
                onset: num(f[1])?,
                duration: num(f[2])?,
                run: 0,
                topic: opt(f[3]),
                keyword: opt(f[4]),
            });
        }
        let end = events.last().map_or(0.0, Event::end);
        let rest_positions = vec![infer_rest_position(&events)];
        Ok(Schedule { events, runs: vec![(0.0, end)], rest_positions })
    }
}

fn infer_rest_position(events: &[Event]) -> RestPosition {
    match events.iter().position(|e| e.kind == EventKind::Rest) {
        Some(0) => RestPosition::Beginning,
        Some(i) if i + 1 == events.len() => RestPosition::End,
        _ => RestPosition::Middle,
    }
}

/// Draws `n_runs` runs of three topics each, topics without replacement in
/// a seeded random order.
pub fn build_schedule(topics: &TopicSet, n_runs: usize, seed: u64) -> Result<Schedule> {
    let needed = n_runs * TOPICS_PER_RUN;
    if needed > topics.len() {
        return Err(Error::data(format!(
            "{n_runs} runs need {needed} topics but the corpus has {}",
            topics.len()
        )));
    }
    let mut rng = derived_rng(seed, &[streams::SCHEDULE]);
    let mut order: Vec<usize> = (0..topics.len()).collect();
    order.shuffle(&mut rng);

    let mut events = Vec::new();
    let mut runs = Vec::with_capacity(n_runs);
    let mut rest_positions = Vec::with_capacity(n_runs);
    let mut t = 0.0;
    for run in 0..n_runs {
        let start = t;
        let position = match rng.gen_range(0..3) {
            0 => RestPosition::Beginning,
            1 => RestPosition::Middle,
            _ => RestPosition::End,
        };
        // Gap index where the rest goes: 0 = before topic 0, 3 = after topic 2.
        let rest_gap = match position {
            RestPosition::Beginning => 0,
            RestPosition::Middle => rng.gen_range(1..TOPICS_PER_RUN),
            RestPosition::End => TOPICS_PER_RUN,
        };
        let mut push = |kind, duration, topic: Option<&str>, keyword: Option<&str>, t: &mut f64| {
            events.push(Event {
                kind,
                onset: *t,
                duration,
                run,
                topic: topic.map(String::from),
                keyword: keyword.map(String::from),
            });
            *t += duration;
        };
        for slot in 0..TOPICS_PER_RUN {
            if slot == rest_gap {
                push(EventKind::Rest, REST_S, None, None, &mut t);
            } else if slot > 0 {
                push(EventKind::Break, BREAK_S, None, None, &mut t);
            }
            let topic = &topics.topics[order[run * TOPICS_PER_RUN + slot]];
            let mut kws: Vec<&String> = topic.keywords.iter().collect();
            kws.shuffle(&mut rng);
            for kw in kws.into_iter().take(KEYWORDS_PER_TOPIC) {
                push(EventKind::Imagine, IMAGINE_S, Some(&topic.topic), Some(kw), &mut t);
            }
        }
        if rest_gap == TOPICS_PER_RUN {
            push(EventKind::Rest, REST_S, None, None, &mut t);
        }
        runs.push((start, t));
        rest_positions.push(position);
    }
    Ok(Schedule { events, runs, rest_positions })
}

/// Ground-truth sentence for every imagine event, keyed by event index.
///
/// `length_bias` tilts template choice toward longer (positive) or shorter
/// (negative) renderings; 0 picks uniformly among the topic's templates.
pub fn realize_sentences(
    schedule: &Schedule,
    topics: &TopicSet,
    seed: u64,
    length_bias: f64,
) -> Result<BTreeMap<usize, String>> {
    let mut rng = derived_rng(seed, &[streams::SENTENCES]);
    let mut out = BTreeMap::new();
    for (idx, ev) in schedule.imagine_events() {
        let (Some(topic_word), Some(keyword)) = (&ev.topic, &ev.keyword) else {
            return Err(Error::data(format!("imagine event {idx} lacks a topic or keyword")));
        };
        let topic = topics
            .index_of(topic_word)
            .map(|i| &topics.topics[i])
            .ok_or_else(|| Error::data(format!("imagine event {idx} references unknown topic '{topic_word}'")))?;
        if !topic.keywords.contains(keyword) {
            return Err(Error::data(format!(
                "imagine event {idx}: '{keyword}' is not a keyword of '{topic_word}'"
            )));
        }
        let rendered: Vec<String> = (0..topic.templates.len())
            .map(|i| topic.render(i, keyword))
            .collect::<Result<_>>()?;
        let weights: Vec<f64> = rendered
            .iter()
            .map(|s| (length_bias * s.split_whitespace().count() as f64).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = rendered.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.insert(idx, rendered[pick].clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_corpus_has_272_topics() {
        assert_eq!(TopicSet::shipped().len(), 272);
    }

    #[test]
    fn empty_and_short_topics_rejected() {
        assert!(TopicSet::from_json("").is_err());
        let bad = r#"[{"topic":"cat","keywords":["a","b"],"templates":["the {topic} and the {keyword} here"]}]"#;
        let err = TopicSet::from_json(bad).unwrap_err().to_string();
        assert!(err.contains("cat"), "{err}");
        let dup = r#"[{"topic":"cat","keywords":["a","b","c"],"templates":["the {topic} and the {keyword} here"]},
                      {"topic":"cat","keywords":["a","b","c"],"templates":["the {topic} and the {keyword} here"]}]"#;
        assert!(TopicSet::from_json(dup).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn load_reports_missing_file() {
        assert!(TopicSet::load(Path::new("/definitely/not/here.json")).is_err());
    }

    #[test]
    fn one_run_structure() {
        let s = build_schedule(&TopicSet::shipped(), 1, 0).unwrap();
        let imagine = s.events.iter().filter(|e| e.kind == EventKind::Imagine).count();
        let rest = s.events.iter().filter(|e| e.kind == EventKind::Rest).count();
        assert_eq!((imagine, rest), (9, 1));
        let breaks = s.events.iter().filter(|e| e.kind == EventKind::Break).count();
        let expected_breaks = if s.rest_positions[0] == RestPosition::Middle { 1 } else { 2 };
        assert_eq!(breaks, expected_breaks);
    }

    #[test]
    fn schedule_is_deterministic_and_durations_add_up() {
        let topics = TopicSet::shipped();
        let a = build_schedule(&topics, 5, 7).unwrap();
        let b = build_schedule(&topics, 5, 7).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let summed: f64 = a.events.iter().map(|e| e.duration).sum();
        assert!((summed - a.total_duration()).abs() < 1e-9);
    }

    #[test]
    fn insufficient_topics() {
        assert!(build_schedule(&TopicSet::shipped(), 91, 0).is_err());
        assert!(build_schedule(&TopicSet::shipped(), 90, 0).is_ok());
    }

    #[test]
    fn csv_round_trip_of_a_run() {
        let s = build_schedule(&TopicSet::shipped(), 3, 1).unwrap();
        let run = s.run(1).unwrap();
        let back = Schedule::from_csv(&run.to_csv()).unwrap();
        assert_eq!(back.events, run.events);
        assert_eq!(back.rest_positions, run.rest_positions);
    }

    #[test]
    fn library_example_sentence() {
        let topics = TopicSet::shipped();
        let lib = &topics.topics[topics.index_of("library").unwrap()];
        assert_eq!(lib.render(0, "borrow").unwrap(), "I used to frequently borrow books from the library.");
    }

    #[test]
    fn sentences_contain_topic_and_keyword() {
        let topics = TopicSet::shipped();
        let s = build_schedule(&topics, 4, 3).unwrap();
        let sents = realize_sentences(&s, &topics, 3, 0.0).unwrap();
        assert_eq!(sents.len(), 36);
        for (idx, sent) in &sents {
            let ev = &s.events[*idx];
            assert!(sent.contains(ev.topic.as_deref().unwrap()));
            assert!(sent.contains(ev.keyword.as_deref().unwrap()));
        }
        assert_eq!(sents, realize_sentences(&s, &topics, 3, 0.0).unwrap());
    }

    #[test]
    fn length_bias_shifts_mean() {
        let topics = TopicSet::shipped();
        let s = build_schedule(&topics, 90, 0).unwrap();
        let mean = |bias| {
            let m = realize_sentences(&s, &topics, 0, bias).unwrap();
            m.values().map(|x| x.split_whitespace().count()).sum::<usize>() as f64 / m.len() as f64
        };
        assert!(mean(1.0) > mean(0.0));
        assert!(mean(-1.0) < mean(0.0));
    }
}
