from .assembly import (
    BASE_MODELS,
    CTR_MODELS,
    END_TO_END_KINDS,
    MATCHING_MODELS,
    OLEO_KINDS,
    VARIANT_KINDS,
    AssemblyError,
    Batch,
    LookupMissError,
    RecModel,
    VariantSpec,
    assemble_variant,
    build_content_encoder,
    enumerate_grid,
    model_config,
    score_batch,
)
from .plm import PLMAdapter, PLMConfig, PLMConfigError, plm_encode
from .table import EmbeddingTable, TableError
