from fedfusion.protocols.baselines import BASELINES, run_baseline, run_fedavg_finetune
from fedfusion.protocols.common import (
    DivEnConfig,
    FusionConfig,
    Hooks,
    MessageLog,
    RunResult,
    TraceRecord,
    rng_for,
)
from fedfusion.protocols.diven import (
    GuardState,
    diven_local_step,
    negative_transfer_guard,
    run_diven,
    run_diven_c,
)
from fedfusion.protocols.fusion import (
    consistency_loss,
    fixmatch_losses,
    fusion_step1_round,
    fusion_step2_round,
    run_fusion,
)

__all__ = [
    "BASELINES",
    "DivEnConfig",
    "FusionConfig",
    "GuardState",
    "Hooks",
    "MessageLog",
    "RunResult",
    "TraceRecord",
    "consistency_loss",
    "diven_local_step",
    "fixmatch_losses",
    "fusion_step1_round",
    "fusion_step2_round",
    "negative_transfer_guard",
    "rng_for",
    "run_baseline",
    "run_diven",
    "run_diven_c",
    "run_fedavg_finetune",
    "run_fusion",
]
