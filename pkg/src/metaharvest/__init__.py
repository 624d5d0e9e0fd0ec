"""Schema-driven dataset metadata harvesting with LLMs.

Scrape a dataset landing page, extract the fields of a user-defined metadata
schema with an LLM, score the result against annotations, and link datasets
by description similarity and temporal overlap.
"""

__version__ = "0.1.0"

from .evaluation import (
    Availability,
    GroundTruthAnnotation,
    Outcome,
    aggregate,
    classify_retrieval,
    evaluate_corpus,
    faithfulness,
    format_summary,
    mean_sem,
    response_relevancy,
    rouge_l_f1,
)
from .extraction import (
    build_extraction_prompt,
    harvest,
    harvest_corpus,
    parse_entity_response,
    post_process,
)
from .gateway import ChatRequest, EmbeddingVector, Gateway, live_gateway, mock_gateway
from .ingest import DatasetSource, SourceDocument, extract_text, fetch_page, ingest, parse_structured_metadata
from .linking import (
    CanonicalDateRange,
    LinkMatrix,
    cosine_similarity,
    normalize_temporal_coverage,
    overlap_matrix,
    parse_canonical_range,
    similarity_matrix,
    temporal_overlap_fraction,
)
from .records import NOT_AVAILABLE, ExtractedEntity, MetadataRecord
from .schema import FieldDefinition, MetadataSchema, builtin_schema, load_schema
from .store import Store
