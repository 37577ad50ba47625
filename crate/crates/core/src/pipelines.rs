//! Top-down and bottom-up construction runs.
//!
//! Both runs write into a [`GraphStore`] so every committed slide is visible
//! to readers immediately, and both expand the graph once, after the last
//! slide.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::expansion::{expand_graph, ExpansionServices, LinkedData};
use crate::graph::EduKG;
use crate::keyphrase::{KeyphraseError, KeyphraseRanker};
use crate::linker::Linker;
use crate::model::{Concept, KeyphraseOrigin, LearningMaterial, MaterialId, ModelError, PipelineConfig, PipelineMode};
use crate::store::{GraphStore, Revision, StoreError};
use crate::weighting::{cosine, embed_texts, AbstractSource, EmbedError, Embedder, EmbeddingVector};

/// Borrowed collaborators for one run.
#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub ranker: &'a dyn KeyphraseRanker,
    pub linker: &'a Linker,
    pub abstracts: &'a dyn AbstractSource,
    pub linked_data: &'a dyn LinkedData,
    pub embedder: &'a dyn Embedder,
}

impl<'a> Services<'a> {
    pub fn expansion(&self) -> ExpansionServices<'a> {
        ExpansionServices {
            linked_data: self.linked_data,
            abstracts: self.abstracts,
            embedder: self.embedder,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Keyphrase(#[from] KeyphraseError),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineEvent {
    MaterialCommitted {
        revision: Revision,
        concepts: usize,
    },
    SlideStarted {
        index: usize,
    },
    SlideCommitted {
        index: usize,
        revision: Revision,
        concepts: usize,
    },
    SlideSkipped {
        index: usize,
    },
    ExpansionStarted,
    ExpansionFinished {
        related: usize,
        categories: usize,
    },
}

/// One call into the keyphrase ranker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyphraseCall {
    pub origin: KeyphraseOrigin,
    pub budget: usize,
    pub returned: usize,
}

/// What a commit hook sees: the slide just committed and the snapshot that
/// revision produced.
#[derive(Debug, Clone)]
pub struct SlideCommit {
    pub index: usize,
    pub revision: Revision,
    pub graph: Arc<EduKG>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: PipelineMode,
    pub graph: EduKG,
    pub events: Vec<PipelineEvent>,
    pub keyphrase_calls: Vec<KeyphraseCall>,
    /// (slide index, uri) pairs dropped by the top-down discard rule.
    pub discarded: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

struct SlideResult {
    index: usize,
    concepts: Vec<Concept>,
    discarded: Vec<String>,
    call: KeyphraseCall,
    warnings: Vec<String>,
}

struct RunContext<'m> {
    material: &'m LearningMaterial,
    material_vec: EmbeddingVector,
    // uri -> (abstract, its embedding)
    abstracts: Mutex<HashMap<String, (String, EmbeddingVector)>>,
    warnings: Mutex<Vec<String>>,
}

impl RunContext<'_> {
    fn warn(&self, msg: String) {
        tracing::warn!("{msg}");
        self.warnings.lock().expect("warnings").push(msg);
    }
}

pub struct Pipeline<'a> {
    services: Services<'a>,
    config: PipelineConfig,
    expand: bool,
    slide_workers: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(services: Services<'a>, config: PipelineConfig) -> Self {
        Self {
            services,
            config,
            expand: true,
            slide_workers: 1,
        }
    }

    /// Draft runs stop before expansion.
    pub fn with_expansion(mut self, expand: bool) -> Self {
        self.expand = expand;
        self
    }

    /// Processes up to `workers` slides at once. Commits (and hook calls)
    /// still happen in page order, but a slide may start before the previous
    /// one is committed.
    pub fn with_slide_workers(mut self, workers: usize) -> Self {
        self.slide_workers = workers.max(1);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs against a private store.
    pub fn run(&self, material: &LearningMaterial, mode: PipelineMode) -> Result<RunReport, PipelineError> {
        self.run_with_hook(material, mode, &mut |_| {})
    }

    pub fn run_with_hook(
        &self,
        material: &LearningMaterial,
        mode: PipelineMode,
        hook: &mut dyn FnMut(&SlideCommit),
    ) -> Result<RunReport, PipelineError> {
        let store = GraphStore::new();
        store.register(material.clone())?;
        self.run_in(&store, material.id(), mode, hook)
    }

    /// Runs for a material already registered in `store`.
    pub fn run_in(
        &self,
        store: &GraphStore,
        id: &MaterialId,
        mode: PipelineMode,
        hook: &mut dyn FnMut(&SlideCommit),
    ) -> Result<RunReport, PipelineError> {
        self.config.validate()?;
        let material = store.material(id)?;
        // a deck without any extractable text has nothing to build from
        if material.num_slides() == 0 || material.full_text().trim().is_empty() {
            return Err(ModelError::EmptyMaterial.into());
        }
        let material_vec = embed_texts(self.services.embedder, &[material.full_text()])?.remove(0);
        let ctx = RunContext {
            material: &material,
            material_vec,
            abstracts: Mutex::new(HashMap::new()),
            warnings: Mutex::new(Vec::new()),
        };
        let mut report = RunReport {
            mode,
            graph: EduKG::new(),
            events: Vec::new(),
            keyphrase_calls: Vec::new(),
            discarded: Vec::new(),
            warnings: Vec::new(),
        };

        match mode {
            PipelineMode::TopDown => {
                let main = self.material_pass(&ctx, &mut report)?;
                let revision = store.upsert_material_concepts(id, &main.values().cloned().collect::<Vec<_>>())?;
                report.events.push(PipelineEvent::MaterialCommitted {
                    revision,
                    concepts: main.len(),
                });
                self.slide_passes(&ctx, store, &mut report, hook, |index| {
                    self.top_down_slide(&ctx, &main, index)
                })?;
            }
            PipelineMode::BottomUp => {
                self.slide_passes(&ctx, store, &mut report, hook, |index| {
                    self.bottom_up_slide(&ctx, index)
                })?;
            }
        }

        if self.expand {
            report.events.push(PipelineEvent::ExpansionStarted);
            let graph = store.graph(id)?;
            match expand_graph(&graph, &material, &self.config, self.services.expansion()) {
                Ok(outcome) => {
                    for w in outcome.warnings {
                        ctx.warn(w);
                    }
                    store.replace_graph(id, outcome.graph)?;
                    report.events.push(PipelineEvent::ExpansionFinished {
                        related: outcome.added_related,
                        categories: outcome.added_categories,
                    });
                }
                Err(e) => {
                    ctx.warn(format!("expansion skipped: {e}"));
                    report.events.push(PipelineEvent::ExpansionFinished {
                        related: 0,
                        categories: 0,
                    });
                }
            }
        }

        report.graph = (*store.graph(id)?).clone();
        report.warnings.extend(ctx.warnings.into_inner().expect("warnings"));
        Ok(report)
    }

    /// Material keyphrases, linked and weighted against the whole material.
    fn material_pass(
        &self,
        ctx: &RunContext<'_>,
        report: &mut RunReport,
    ) -> Result<BTreeMap<String, Concept>, PipelineError> {
        let budget = self.config.material_budget_factor * ctx.material.num_slides();
        let keyphrases = self
            .services
            .ranker
            .rank(ctx.material.full_text(), budget, KeyphraseOrigin::Material)?;
        report.keyphrase_calls.push(KeyphraseCall {
            origin: KeyphraseOrigin::Material,
            budget,
            returned: keyphrases.len(),
        });
        let linked = self.services.linker.link_keyphrases(&keyphrases, &self.config);
        for w in linked.warnings {
            ctx.warn(w);
        }
        let mut main = BTreeMap::new();
        for shell in linked.concepts {
            let concept = self.weigh_lm(ctx, shell)?;
            main.insert(concept.uri.clone(), concept);
        }
        Ok(main)
    }

    fn top_down_slide(
        &self,
        ctx: &RunContext<'_>,
        main: &BTreeMap<String, Concept>,
        index: usize,
    ) -> Result<SlideResult, PipelineError> {
        let (call, linked, mut warnings) = self.link_slide(ctx, index)?;
        let slide_vec = self.slide_vec(ctx, index)?;
        let mut concepts = Vec::new();
        let mut discarded = Vec::new();
        for shell in linked {
            match main.get(&shell.uri) {
                Some(known) => {
                    let mut concept = known.clone();
                    let (_, abstract_vec) = self.resolve(ctx, &concept.uri)?;
                    concept.set_slide_weight(index, cosine(&abstract_vec, &slide_vec)?);
                    concepts.push(concept);
                }
                None => discarded.push(shell.uri),
            }
        }
        warnings.extend(
            discarded
                .iter()
                .map(|uri| format!("slide {index}: {uri} not in material concepts, discarded")),
        );
        Ok(SlideResult {
            index,
            concepts,
            discarded,
            call,
            warnings,
        })
    }

    fn bottom_up_slide(&self, ctx: &RunContext<'_>, index: usize) -> Result<SlideResult, PipelineError> {
        let (call, linked, warnings) = self.link_slide(ctx, index)?;
        let slide_vec = self.slide_vec(ctx, index)?;
        let mut concepts = Vec::new();
        for shell in linked {
            let mut concept = self.weigh_lm(ctx, shell)?;
            let (_, abstract_vec) = self.resolve(ctx, &concept.uri)?;
            concept.set_slide_weight(index, cosine(&abstract_vec, &slide_vec)?);
            concepts.push(concept);
        }
        Ok(SlideResult {
            index,
            concepts,
            discarded: Vec::new(),
            call,
            warnings,
        })
    }

    fn link_slide(
        &self,
        ctx: &RunContext<'_>,
        index: usize,
    ) -> Result<(KeyphraseCall, Vec<Concept>, Vec<String>), PipelineError> {
        let slide = &ctx.material.slides()[index];
        let budget = self.config.per_slide_budget;
        let origin = KeyphraseOrigin::Slide(index);
        let keyphrases = self.services.ranker.rank(&slide.text, budget, origin)?;
        let call = KeyphraseCall {
            origin,
            budget,
            returned: keyphrases.len(),
        };
        let linked = self.services.linker.link_keyphrases(&keyphrases, &self.config);
        let warnings = linked
            .warnings
            .into_iter()
            .map(|w| format!("slide {index}: {w}"))
            .collect();
        Ok((call, linked.concepts, warnings))
    }

    fn slide_vec(&self, ctx: &RunContext<'_>, index: usize) -> Result<EmbeddingVector, PipelineError> {
        Ok(embed_texts(self.services.embedder, &[ctx.material.slides()[index].text.as_str()])?.remove(0))
    }

    /// Abstract and abstract embedding of `uri`, fetched once per run. An
    /// unavailable abstract weighs as empty text.
    fn resolve(&self, ctx: &RunContext<'_>, uri: &str) -> Result<(String, EmbeddingVector), PipelineError> {
        if let Some(hit) = ctx.abstracts.lock().expect("abstracts").get(uri) {
            return Ok(hit.clone());
        }
        let text = self.services.abstracts.fetch_abstract(uri).unwrap_or_else(|e| {
            ctx.warn(format!("abstract of {uri} unavailable, weighted as empty: {e}"));
            String::new()
        });
        let vec = embed_texts(self.services.embedder, &[text.as_str()])?.remove(0);
        let entry = (text, vec);
        ctx.abstracts
            .lock()
            .expect("abstracts")
            .insert(uri.to_string(), entry.clone());
        Ok(entry)
    }

    fn weigh_lm(&self, ctx: &RunContext<'_>, mut concept: Concept) -> Result<Concept, PipelineError> {
        let (text, vec) = self.resolve(ctx, &concept.uri)?;
        concept.abstract_text = text;
        concept.set_w_lm(cosine(&vec, &ctx.material_vec)?);
        Ok(concept)
    }

    /// Processes every slide in page order (optionally several at once),
    /// retrying a failed slide once, and commits each result in page order.
    fn slide_passes(
        &self,
        ctx: &RunContext<'_>,
        store: &GraphStore,
        report: &mut RunReport,
        hook: &mut dyn FnMut(&SlideCommit),
        process: impl Fn(usize) -> Result<SlideResult, PipelineError> + Sync,
    ) -> Result<(), PipelineError> {
        let attempt = |index: usize| {
            process(index).or_else(|first| {
                ctx.warn(format!("slide {index} failed, retrying: {first}"));
                process(index)
            })
        };
        let id = ctx.material.id();
        let indices: Vec<usize> = (0..ctx.material.num_slides()).collect();
        for window in indices.chunks(self.slide_workers) {
            let results: Vec<(usize, Result<SlideResult, PipelineError>)> = if window.len() == 1 {
                report.events.push(PipelineEvent::SlideStarted { index: window[0] });
                vec![(window[0], attempt(window[0]))]
            } else {
                for &index in window {
                    report.events.push(PipelineEvent::SlideStarted { index });
                }
                std::thread::scope(|scope| {
                    let handles: Vec<_> = window
                        .iter()
                        .map(|&index| {
                            let attempt = &attempt;
                            (index, scope.spawn(move || attempt(index)))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|(index, h)| (index, h.join().expect("slide worker panicked")))
                        .collect()
                })
            };
            for (index, result) in results {
                match result {
                    Ok(slide) => {
                        let revision = store.upsert_slide_subgraph(id, slide.index, &slide.concepts)?;
                        report.keyphrase_calls.push(slide.call);
                        report
                            .discarded
                            .extend(slide.discarded.into_iter().map(|uri| (slide.index, uri)));
                        for w in slide.warnings {
                            ctx.warn(w);
                        }
                        report.events.push(PipelineEvent::SlideCommitted {
                            index,
                            revision,
                            concepts: slide.concepts.len(),
                        });
                        hook(&SlideCommit {
                            index,
                            revision,
                            graph: store.graph(id)?,
                        });
                    }
                    Err(e) => {
                        ctx.warn(format!("slide {index} skipped: {e}"));
                        report.events.push(PipelineEvent::SlideSkipped { index });
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn run_top_down(
    material: &LearningMaterial,
    services: Services<'_>,
    config: &PipelineConfig,
) -> Result<RunReport, PipelineError> {
    Pipeline::new(services, config.clone()).run(material, PipelineMode::TopDown)
}

pub fn run_bottom_up(
    material: &LearningMaterial,
    services: Services<'_>,
    config: &PipelineConfig,
    on_slide_committed: &mut dyn FnMut(&SlideCommit),
) -> Result<RunReport, PipelineError> {
    Pipeline::new(services, config.clone()).run_with_hook(material, PipelineMode::BottomUp, on_slide_committed)
}
