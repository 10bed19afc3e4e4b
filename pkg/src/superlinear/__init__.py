"""Two-step superlinear span attention: reference layer, coverage audits, gradients and scheduling simulation."""

from .anchors import AnchorSet, anchor_count_exponent_fit, anchors, max_gap
from .attention import RoutingDecision, combine, dense_attention, search_scores, span_attention, top_k_select
from .config import EXTENDED, TIGHT, AttnConfig, OpCounters, SequenceTensors, rng_stream, validate_config
from .kernels import BACKEND
from .layer import LayerOutput, forward_decode_step, forward_prefill, geometry_counts, measure_scaling
from .spans import Span, audit_coverage, audit_coverage_range, base_span_length, build_span, dedup_concat

__version__ = "0.1.0"
