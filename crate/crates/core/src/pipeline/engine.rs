use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::Arc;
use std::thread;

use chrono::{DateTime, Utc};

use super::clock::{format_time, Clock, FixedClock, SystemClock};
use super::config::{PipelineConfig, RunSettings};
use super::state::JobState;
use super::trace::{PipelineTrace, TraceEvent};
use super::{PipelineError, ENGINE_VERSION};
use crate::agent::{Agent, ChatMessage, Role};
use crate::domain::{
    subgroup_key, AgeBands, ArrhythmiaTable, FindingItem, InterpretationItem, Modality,
    PatientBundle, SubgroupKey,
};
use crate::factcheck::{load_guidelines, FactChecker, GuidelineSet, Violation, ViolationKind};
use crate::prompt::{
    render_findings, render_interpretation, select_demos, DemoLibrary, ImageLocator, ItemParser,
    PromptBuilder, PromptError, PromptTemplates,
};
use crate::report::{assemble, Report, ReportMeta};

const REPROMPT: &str = "Respond only in the itemized format shown above: one item per line, each line starting with \"- \".";
const REGENERATE_FINDINGS: &str =
    "Respond only with the corrected finding items, in the itemized format.";
const REGENERATE_INTERPRETATION: &str =
    "Respond only with the corrected or additional interpretation items, in the itemized format, each ending with its supporting finding ids in square brackets.";

/// Findings from both modalities after union and deduplication.
#[derive(Debug, Clone, PartialEq)]
pub struct FindingsOutcome {
    pub items: Vec<FindingItem>,
    /// One findings agent failed; the items come from the other.
    pub degraded: bool,
}

/// The result of one pipeline run. `report` is absent only when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub state: JobState,
    pub report: Option<Report>,
    pub trace: PipelineTrace,
}

/// A configured three-agent pipeline. Immutable and shareable across jobs.
pub struct Pipeline {
    agents: BTreeMap<Role, Agent>,
    templates: PromptTemplates,
    parser: ItemParser,
    checker: FactChecker,
    demos: DemoLibrary,
    images: ImageLocator,
    table: ArrhythmiaTable,
    bands: AgeBands,
    settings: RunSettings,
    clock: Arc<dyn Clock>,
}

/// Merges metrics and tracing findings. A tracing item whose (non-empty)
/// parameter set equals that of a metrics item is a duplicate and is dropped:
/// metrics summarize the whole recording, tracings are excerpts. Ids are
/// renumbered F1..Fn, metrics items first.
pub fn union_findings(metrics: Vec<FindingItem>, tracing: Vec<FindingItem>) -> Vec<FindingItem> {
    let mut out = metrics;
    let n_metrics = out.len();
    for item in tracing {
        let dup = !item.parameters.is_empty()
            && out[..n_metrics]
                .iter()
                .any(|m| m.parameters == item.parameters);
        if !dup {
            out.push(item);
        }
    }
    for (i, f) in out.iter_mut().enumerate() {
        f.id = format!("F{}", i + 1);
    }
    out
}

fn next_id(ids: impl Iterator<Item = String>) -> usize {
    ids.filter_map(|id| id[1..].parse::<usize>().ok()).max().unwrap_or(0) + 1
}

fn role_modality(role: Role) -> Modality {
    if role == Role::T2F {
        Modality::Tracing
    } else {
        Modality::Metrics
    }
}

struct CallResult<T> {
    value: Result<T, String>,
    events: Vec<TraceEvent>,
}

struct Run<'a> {
    p: &'a Pipeline,
    bundle: &'a PatientBundle,
    observer: &'a dyn Fn(&JobState),
    trace: PipelineTrace,
    state: JobState,
    demo_ids: BTreeMap<Role, Vec<String>>,
    prompts: BTreeMap<Role, Vec<ChatMessage>>,
}

impl Pipeline {
    pub fn new(agents: Vec<Agent>, guidelines: GuidelineSet, demos: DemoLibrary, settings: RunSettings) -> Result<Self, PipelineError> {
        let mut by_role = BTreeMap::new();
        for a in agents {
            let role = a.role();
            if by_role.insert(role, a).is_some() {
                return Err(PipelineError::Config(format!("{role} is configured twice")));
            }
        }
        for role in [Role::M2F, Role::F2I] {
            if !by_role.contains_key(&role) {
                return Err(PipelineError::Config(format!("no {role} agent configured")));
            }
        }
        let parser = ItemParser::builtin();
        Ok(Self {
            agents: by_role,
            templates: PromptTemplates::builtin(),
            checker: FactChecker::with_parser(guidelines, &parser),
            parser,
            demos,
            images: ImageLocator::default(),
            table: ArrhythmiaTable::builtin(),
            bands: AgeBands::default(),
            settings,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let agents = config
            .agents
            .iter()
            .map(|c| {
                Agent::from_config(c.clone()).map_err(|e| PipelineError::Config(format!("{} agent: {e}", c.role)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let parser = ItemParser::builtin();
        let guidelines = match &config.guidelines {
            Some(path) => {
                let raw = fs::read_to_string(path)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
                load_guidelines(&raw, parser.vocabulary())?
            }
            None => GuidelineSet::builtin(),
        };
        let demos = match &config.demo_bank {
            Some(path) => {
                let raw = fs::read_to_string(path)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
                DemoLibrary::from_json(&raw, &parser)?
            }
            None => DemoLibrary::default(),
        };
        let mut pipeline = Self::new(agents, guidelines, demos, config.settings())?
            .with_images(ImageLocator::new(config.image_dirs.clone()))
            .with_age_bands(config.age_bands);
        if let Some(t) = &config.fixed_time {
            let t: DateTime<Utc> = DateTime::parse_from_rfc3339(t)
                .map_err(|e| PipelineError::Config(format!("fixed_time: {e}")))?
                .with_timezone(&Utc);
            pipeline = pipeline.with_clock(Arc::new(FixedClock(t)));
        }
        Ok(pipeline)
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_images(mut self, images: ImageLocator) -> Self {
        self.images = images;
        self
    }

    pub fn with_age_bands(mut self, bands: AgeBands) -> Self {
        self.bands = bands;
        self
    }

    pub fn age_bands(&self) -> AgeBands {
        self.bands
    }

    pub fn parser(&self) -> &ItemParser {
        &self.parser
    }

    pub fn guidelines(&self) -> &GuidelineSet {
        self.checker.guidelines()
    }

    pub fn checker(&self) -> &FactChecker {
        &self.checker
    }

    pub fn now(&self) -> String {
        format_time(self.clock.now())
    }

    fn builder(&self) -> PromptBuilder<'_> {
        PromptBuilder {
            templates: &self.templates,
            guidelines: self.checker.guidelines(),
            images: &self.images,
        }
    }

    /// Sends `messages` to the role's agent and parses the reply. On a
    /// format error the request is repeated once with the bad reply and a
    /// reminder appended.
    fn call<T>(
        &self,
        role: Role,
        iteration: u32,
        demo_ids: &[String],
        mut messages: Vec<ChatMessage>,
        parse: impl Fn(&str) -> Result<T, PromptError>,
    ) -> CallResult<T> {
        let mut events = Vec::new();
        let Some(agent) = self.agents.get(&role) else {
            return CallResult {
                value: Err(format!("no {role} agent configured")),
                events,
            };
        };
        for attempt in 0..2 {
            let reply = agent.generate(&messages);
            events.push(TraceEvent::AgentCall {
                at: self.now(),
                role,
                iteration,
                demo_ids: demo_ids.to_vec(),
                messages: messages.clone(),
                completion: reply.as_ref().ok().cloned(),
                error: reply.as_ref().err().map(|e| e.to_string()),
            });
            let text = match reply {
                Ok(t) => t,
                Err(e) => {
                    return CallResult {
                        value: Err(e.to_string()),
                        events,
                    }
                }
            };
            match parse(&text) {
                Ok(v) => return CallResult { value: Ok(v), events },
                Err(e) if attempt == 0 => {
                    events.push(TraceEvent::Warning {
                        at: self.now(),
                        message: format!("{role}: {e}; re-prompting once"),
                    });
                    messages.push(ChatMessage::assistant(text));
                    messages.push(ChatMessage::user(REPROMPT));
                }
                Err(e) => {
                    return CallResult {
                        value: Err(e.to_string()),
                        events,
                    }
                }
            }
        }
        unreachable!("the loop returns on its second attempt")
    }

    /// Runs the whole pipeline. `observer` sees every state change as it
    /// happens, including the final one.
    pub fn run(&self, bundle: &PatientBundle, observer: &dyn Fn(&JobState)) -> PipelineOutcome {
        let mut run = Run {
            p: self,
            bundle,
            observer,
            trace: PipelineTrace::default(),
            state: JobState::Queued,
            demo_ids: BTreeMap::new(),
            prompts: BTreeMap::new(),
        };
        match run.execute() {
            Ok(report) => PipelineOutcome {
                state: run.state,
                report: Some(report),
                trace: run.trace,
            },
            Err(reason) => {
                run.transition(JobState::Failed { reason });
                PipelineOutcome {
                    state: run.state,
                    report: None,
                    trace: run.trace,
                }
            }
        }
    }

    /// Findings only, without the rest of the run.
    pub fn run_findings(&self, bundle: &PatientBundle) -> Result<FindingsOutcome, PipelineError> {
        let observer = |_: &JobState| {};
        let mut run = Run {
            p: self,
            bundle,
            observer: &observer,
            trace: PipelineTrace::default(),
            state: JobState::Queued,
            demo_ids: BTreeMap::new(),
            prompts: BTreeMap::new(),
        };
        let key = subgroup_key(bundle, &self.table, &self.bands)?;
        run.findings(&key).map_err(PipelineError::Precondition)
    }
}

impl Run<'_> {
    fn transition(&mut self, next: JobState) {
        debug_assert!(
            self.state.can_transition_to(&next),
            "illegal transition {} -> {}",
            self.state,
            next
        );
        self.trace.push(TraceEvent::State {
            at: self.p.now(),
            state: next.clone(),
        });
        (self.observer)(&next);
        self.state = next;
    }

    fn warn(&mut self, message: String) {
        self.trace.push(TraceEvent::Warning {
            at: self.p.now(),
            message,
        });
    }

    fn prompt(&mut self, role: Role, key: &SubgroupKey, upstream: Option<&[FindingItem]>) -> Result<(Vec<ChatMessage>, Vec<String>), String> {
        let s = &self.p.settings;
        let selection = select_demos(self.p.demos.bank(role), key, s.demos_per_prompt, s.demo_seed)
            .map_err(|e| e.to_string())?;
        if selection.zero_shot {
            self.warn(format!("{role}: demo bank has no demos; prompting zero-shot"));
        }
        let ids = selection.ids();
        let messages = self
            .p
            .builder()
            .build_prompt(role, self.bundle, &selection.into_demos(), upstream)
            .map_err(|e| e.to_string())?;
        self.demo_ids.insert(role, ids.clone());
        self.prompts.insert(role, messages.clone());
        Ok((messages, ids))
    }

    fn findings(&mut self, key: &SubgroupKey) -> Result<FindingsOutcome, String> {
        let (m_msgs, m_ids) = self.prompt(Role::M2F, key, None)?;
        let tracing = if self.bundle.tracings.is_empty() {
            None
        } else {
            Some(self.prompt(Role::T2F, key, None)?)
        };
        let p = self.p;
        let parse = |modality| move |text: &str| p.parser.parse_findings(text, modality, 0, 1);
        let (m, t) = thread::scope(|s| {
            let t = tracing.map(|(msgs, ids)| {
                s.spawn(move || p.call(Role::T2F, 0, &ids, msgs, parse(Modality::Tracing)))
            });
            let m = p.call(Role::M2F, 0, &m_ids, m_msgs, parse(Modality::Metrics));
            (m, t.map(|h| h.join().expect("tracing agent thread panicked")))
        });
        for e in m.events.into_iter().chain(t.iter().flat_map(|t| t.events.clone())) {
            self.trace.push(e);
        }
        let t_value = t.map(|t| t.value);
        let degraded = match (&m.value, &t_value) {
            (Err(a), Some(Err(b))) => return Err(format!("findings: M2F: {a}; T2F: {b}")),
            (Err(a), None) => return Err(format!("findings: M2F: {a}")),
            (Err(a), Some(Ok(_))) => {
                self.warn(format!("M2F failed, continuing with tracing findings only: {a}"));
                true
            }
            (Ok(_), Some(Err(b))) => {
                self.warn(format!("T2F failed, continuing with metrics findings only: {b}"));
                true
            }
            (Ok(_), _) => false,
        };
        let metrics = m.value.map(|p| p.items).unwrap_or_default();
        let tracing = match t_value {
            Some(Ok(p)) => p.items,
            _ => Vec::new(),
        };
        Ok(FindingsOutcome {
            items: union_findings(metrics, tracing),
            degraded,
        })
    }

    /// Drops support references that name no finding.
    fn resolve_supports(&mut self, items: &mut [InterpretationItem], findings: &[FindingItem]) {
        let known: BTreeSet<&str> = findings.iter().map(|f| f.id.as_str()).collect();
        for item in items {
            let (keep, drop): (Vec<String>, Vec<String>) =
                item.supports.drain(..).partition(|s| known.contains(s.as_str()));
            if !drop.is_empty() {
                self.trace.push(TraceEvent::Warning {
                    at: self.p.now(),
                    message: format!("{}: dropped unknown support reference(s) {}", item.id, drop.join(", ")),
                });
            }
            item.supports = keep;
        }
    }

    fn interpretation(&mut self, key: &SubgroupKey, findings: &[FindingItem]) -> Result<Vec<InterpretationItem>, String> {
        let (msgs, ids) = self.prompt(Role::F2I, key, Some(findings))?;
        let p = self.p;
        let r = p.call(Role::F2I, 0, &ids, msgs, |text| p.parser.parse_interpretation(text, 0, 1));
        for e in r.events {
            self.trace.push(e);
        }
        let mut items = r.value.map_err(|e| format!("interpretation: {e}"))?.items;
        if items.is_empty() {
            return Err("interpretation: the F2I agent returned no items".into());
        }
        self.resolve_supports(&mut items, findings);
        Ok(items)
    }

    fn regenerate_findings(&mut self, role: Role, iteration: u32, violations: &[&Violation], findings: &mut Vec<FindingItem>) {
        let modality = role_modality(role);
        let Some(mut messages) = self.prompts.get(&role).cloned() else {
            self.warn(format!("regeneration for {role} skipped: the agent was not prompted"));
            return;
        };
        let current: Vec<FindingItem> = findings.iter().filter(|f| f.source_modality == modality).cloned().collect();
        messages.push(ChatMessage::assistant(render_findings(&current)));
        let instructions: Vec<&str> = violations.iter().map(|v| v.regeneration_instruction.as_str()).collect();
        messages.push(ChatMessage::user(format!("{}\n\n{REGENERATE_FINDINGS}", instructions.join("\n\n"))));
        let first = next_id(findings.iter().map(|f| f.id.clone()));
        let p = self.p;
        let ids = self.demo_ids.get(&role).cloned().unwrap_or_default();
        let r = p.call(role, iteration, &ids, messages, |text| p.parser.parse_findings(text, modality, iteration, first));
        for e in r.events {
            self.trace.push(e);
        }
        match r.value {
            Ok(parsed) => {
                let replaced: BTreeSet<&str> = violations.iter().flat_map(|v| v.finding_refs.iter().map(String::as_str)).collect();
                findings.retain(|f| !replaced.contains(f.id.as_str()));
                findings.extend(parsed.items);
            }
            Err(e) => self.warn(format!("{role} regeneration failed: {e}")),
        }
    }

    fn regenerate_interpretation(
        &mut self,
        key: &SubgroupKey,
        iteration: u32,
        violations: &[&Violation],
        findings: &[FindingItem],
        interpretation: &mut Vec<InterpretationItem>,
    ) {
        let (mut messages, ids) = match self.prompt(Role::F2I, key, Some(findings)) {
            Ok(x) => x,
            Err(e) => {
                self.warn(format!("F2I regeneration prompt failed: {e}"));
                return;
            }
        };
        messages.push(ChatMessage::assistant(render_interpretation(interpretation)));
        let instructions: Vec<&str> = violations.iter().map(|v| v.regeneration_instruction.as_str()).collect();
        messages.push(ChatMessage::user(format!("{}\n\n{REGENERATE_INTERPRETATION}", instructions.join("\n\n"))));
        let first = next_id(interpretation.iter().map(|i| i.id.clone()));
        let p = self.p;
        let r = p.call(Role::F2I, iteration, &ids, messages, |text| p.parser.parse_interpretation(text, iteration, first));
        for e in r.events {
            self.trace.push(e);
        }
        match r.value {
            Ok(parsed) => {
                let mut items = parsed.items;
                self.resolve_supports(&mut items, findings);
                let replaced: BTreeSet<&str> = violations
                    .iter()
                    .filter(|v| v.kind != ViolationKind::MissingInterpretation)
                    .flat_map(|v| v.interpretation_refs.iter().map(String::as_str))
                    .collect();
                interpretation.retain(|i| !replaced.contains(i.id.as_str()));
                interpretation.extend(items);
            }
            Err(e) => self.warn(format!("F2I regeneration failed: {e}")),
        }
    }

    fn execute(&mut self) -> Result<Report, String> {
        let p = self.p;
        self.transition(JobState::RunningFindings);
        let key = subgroup_key(self.bundle, &p.table, &p.bands).map_err(|e| format!("findings: {e}"))?;
        let FindingsOutcome { items: mut findings, degraded } = self.findings(&key)?;
        if findings.is_empty() {
            return Err("findings: no finding items were produced".into());
        }

        self.transition(JobState::RunningInterpretation);
        let mut interpretation = self.interpretation(&key, &findings)?;

        let mut iteration = 0;
        let violations = loop {
            self.transition(JobState::FactChecking);
            let violations = p.checker.check(&findings, &interpretation);
            self.trace.push(TraceEvent::FactCheck {
                at: p.now(),
                iteration,
                violations: violations.clone(),
            });
            let blocking: Vec<&Violation> = violations.iter().filter(|v| v.is_blocking()).collect();
            if blocking.is_empty() {
                self.transition(JobState::Complete);
                break violations;
            }
            if iteration >= p.settings.max_factcheck_retries {
                self.transition(JobState::NeedsManualReview);
                break violations;
            }
            iteration += 1;
            self.transition(JobState::Regenerating { iteration });
            let findings_targets: BTreeSet<Role> = blocking
                .iter()
                .map(|v| v.target_agent)
                .filter(|r| *r != Role::F2I)
                .collect();
            if !findings_targets.is_empty() {
                self.transition(JobState::RunningFindings);
                for role in findings_targets {
                    let own: Vec<&Violation> = blocking.iter().copied().filter(|v| v.target_agent == role).collect();
                    self.regenerate_findings(role, iteration, &own, &mut findings);
                }
            }
            self.transition(JobState::RunningInterpretation);
            self.regenerate_interpretation(&key, iteration, &blocking, &findings, &mut interpretation);
        };

        let meta = ReportMeta {
            engine_version: ENGINE_VERSION.to_string(),
            model_names: p
                .agents
                .iter()
                .map(|(r, a)| (*r, a.config().model_name.clone()))
                .collect(),
            guideline_set_version: p.checker.guidelines().version().to_string(),
            demo_ids: self.demo_ids.clone(),
            factcheck_iterations: iteration,
            state: self.state.clone(),
            degraded,
            created_at: p.now(),
        };
        assemble(self.bundle, findings, interpretation, violations, meta).map_err(|e| format!("report: {e}"))
    }
}
