"""optisteer: a desk-scale industrial AI steering stack.

Synthetic plant -> pub-sub bus -> data checks -> windowed regression ->
set-point optimizer, with rule-based safeguard/survival logic, one-step
direction validation, and a supervised steering service.
"""

from .ace import (
    AceConfig,
    RelationSign,
    TagKind,
    TagRelation,
    TagSpec,
    dynamic_bounds,
    parse_ace,
    relation_sign,
    serialize_ace,
)
from .bus import Bus, BusMessage, LatencyReport, TopicPolicy
from .checks import (
    DriftReport,
    Frame,
    OutlierModel,
    Provenance,
    RoutingDecision,
    Sample,
    StreamChecker,
    Window,
    check_window_stability,
    drift_check,
    fit_outlier_model,
    interpolate,
    outlier_alert,
    remove_outliers,
    route,
)
from .harness import OneStepRecord, ValidationReport, one_step_validate, run_offline, run_online
from .optimizer import ControlMode, Objective, Prescription, candidates, prescribe, score
from .plant import FaultEvent, FaultKind, FaultScript, Plant, PlantDynamics, PlantState, emit, step
from .predictor import (
    Dataset,
    PredictorModel,
    TagMetrics,
    build_dataset,
    evaluate_offline,
    load_model,
    predict,
    save_model,
    train,
)
from .safeguard import ModeDecision, arbitrate, decide, safeguard_prescription

__version__ = "0.1.0"
