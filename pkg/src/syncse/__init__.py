"""Synthesize contrastive sentence triplets with a chat LLM and train/evaluate
desk-scale sentence embeddings."""

from syncse.gateway import (
    ChatGateway,
    CostLedger,
    GenerationConfig,
    PriceTable,
    Usage,
    canonical_request_key,
    estimate_cost,
    make_gateway,
    stage_config,
    throttled_map,
)
from syncse.metrics import EvalReport, average_precision, eval_rerank, eval_sts, spearman
from syncse.mockllm import ScriptedLLM
from syncse.pools import (
    ChatTranscript,
    Exemplar,
    Genre,
    PoolSet,
    PromptTemplate,
    build_annotation_chat,
    build_unlabeled_prompt,
    load_default_pools,
    load_pools,
    sample_exemplars,
    sample_genre_and_topics,
    sample_prompt,
)
from syncse.seeding import derive_rng
from syncse.synthesis import (
    DatasetManifest,
    Triplet,
    UnlabeledSentence,
    annotate_hard_negative,
    annotate_positive,
    assemble_dataset,
    generate_unlabeled,
)
from syncse.textops import (
    dedup,
    distinct_ngram_ratio,
    filter_max_words,
    parse_sentence_list,
)
from syncse.trainer import (
    ProjectionParams,
    TrainConfig,
    cosine_sim,
    encode,
    featurize,
    info_nce_sup,
    info_nce_unsup,
    loss_and_grad,
    train,
)

__version__ = "0.1.0"
