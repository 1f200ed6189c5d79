"""Monthly-snapshot QA benchmark pipeline.

Stages: acquire journal abstracts, extract one QA pair per abstract, filter
with three judge dimensions and a strict retention gate, validate the judge
against human annotators, run solver architectures against the retained
benchmark, judge their answers, and report aggregates.
"""

__version__ = "0.1.0"

from .alt_test import (  # noqa: F401
    AltTestResult,
    AnnotationMatrix,
    Annotator,
    compute_alt_test,
    passes_replacement_criterion,
)
from .corpus import (  # noqa: F401
    AbstractRecord,
    SourceSpec,
    TemporalWindow,
    dedupe,
    enforce_temporal_separation,
    fetch_abstracts,
)
from .errors import DbenchError  # noqa: F401
from .evaluation import EvaluationRecord, JudgeVerdict, aggregate  # noqa: F401
from .extraction import QAPair, extract_qa, parse_extraction_output  # noqa: F401
from .filtering import (  # noqa: F401
    FilterScores,
    FilterVerdict,
    apply_gate,
    filter_snapshot,
    parse_score_table,
)
from .gateway import (  # noqa: F401
    ChatMessage,
    ModelGateway,
    ModelRegistry,
    ModelRequest,
    ModelResponse,
    cache_key,
)
from .search import LocalSearchIndex, SearchDocument, literature_search  # noqa: F401
from .solvers import AgentTrace, CandidateAnswer, SolverConfig, run_solver  # noqa: F401
