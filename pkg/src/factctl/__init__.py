"""factctl: factuality-controlled generation tooling.

Builds synthetic (question, factuality level, response) training triples by
segmenting responses into atomic facts, scoring per-fact model confidence,
and removing the minimal low-confidence prefix needed to meet a numeric
factuality target; evaluates any response set on factuality adherence and
informativeness, emitting trade-off curves.
"""

from .backend import (
    Backend,
    CachedBackend,
    GenerationParams,
    HTTPBackend,
    TokenProbPair,
    cache_gc,
)
from .core import (
    AtomicFact,
    EvaluationRecord,
    FactLabel,
    FactualityLevel,
    Provenance,
    Question,
    ResponseInput,
    ResponseOrigin,
    ResponseRecord,
    TrainingTriple,
    parse_records,
    render_control_prompt,
    write_records,
)
from .confidence import score_all, score_fact
from .decompose import merge, segment
from .filtering import (
    RemovalResult,
    build_dataset,
    build_triple,
    minimal_removal,
    rank_ascending,
)
from .metrics import (
    TradeoffPoint,
    adherence,
    adherence_rate,
    evaluate_response,
    informativeness,
    relative_gain,
    tradeoff_curve,
)
from .simworld import SimBackend, SimWorld, generate_world, sim_complete, sim_probe
from .verify import (
    ExactMatchVerifier,
    FactualityScore,
    JudgeVerifier,
    OracleVerifier,
    ReferenceCorpus,
    factuality,
    retrieve,
    verify_fact,
)

__version__ = "0.1.0"
