"""Edge-ranking metrics, the held-out evaluation protocol and ablation sweeps."""

from .ablations import (
    DECODER_VARIANTS, KINDS, AblationResult, RunResult, ablate_decoder_variants, ablate_encoder_variants,
    ablate_layers, config_diff, run_ablation, train_data_hash,
)
from .metrics import average_precision, off_diagonal, roc_auc
from .protocol import (
    CSV_COLUMNS, REPORT_SCHEMA, EvalReport, aggregate_records, build_report, dataset_hash, eval_datasets,
    eval_seed, evaluate, predict,
)
