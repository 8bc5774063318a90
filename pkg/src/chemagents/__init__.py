"""Multi-agent chemical process development: knowledge, concept and parameter cohorts."""

from __future__ import annotations

from .concept_cohort import (
    Critique,
    CompletionResult,
    DesignResult,
    DesignState,
    PfdInput,
    complete_graph,
    correct,
    design_loop,
    parse_equipment,
    parse_links,
    parse_topology,
)
from .graph import (
    AbstractGraph,
    Connection,
    EquipmentNode,
    EquipmentOntology,
    MaskedGraph,
    ValidationReport,
    build_graph,
    connected_components,
    mask_node,
    parse_graph,
    serialize_graph,
    validate_topology,
)
from .knowledge_cohort import (
    Ablation,
    KnowledgeStores,
    Report,
    RetrievalBundle,
    extract_triples,
    knowledge_augment,
    knowledge_update,
    review_merge,
)
from .knowledge_store import (
    Chunk,
    EmbeddingVector,
    KnowledgeGraph,
    MergeDecision,
    StubEmbedder,
    Triple,
    VectorStore,
    add_subgraph,
    apply_merges,
    chunk_document,
    cosine_similarity,
    graph_query,
    resolve_entities,
)
from .llm import Message, RemoteClient, ScriptedClient, llm_complete
from .metrics import (
    design_rates,
    entity_prf,
    graph_metrics,
    judge_answer,
    match_entities,
    parsing_scores,
    report_bundle,
    score_ratios,
    string_similarity,
    topk_accuracy,
)
from .orchestration import (
    AgentSpec,
    ChatGroupSpec,
    CohortSpec,
    Stage,
    Transcript,
    WorkflowSpec,
    run_agent,
    run_chat_group,
    run_cohort,
    run_workflow,
)
from .parameter_cohort import (
    OptimizationHistory,
    ParameterSpace,
    ParameterVector,
    ScenarioConfig,
    SimulationResult,
    analyze,
    optimize_step,
    run_optimization,
    simulate,
    strategy_init,
    surrogate_flowsheet,
)
