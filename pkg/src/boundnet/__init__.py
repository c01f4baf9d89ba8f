"""Compile ReLU networks with arbitrary weights into bounded-weight networks
through threshold-circuit arithmetic."""

from .circuit import (
    CircuitMetrics,
    ThresholdCircuit,
    ThresholdGate,
    circuit_metrics,
    circuits_equivalent,
    concat_circuits,
    eval_circuit,
    eval_circuit_batch,
    truth_table_circuit,
)
from .gadgets import (
    FixedPointFormat,
    clip_flag_stage,
    const_block,
    decode_word,
    encode_word,
    iterated_addition_gadget,
    multiplication_gadget,
    relu_gadget,
    signed_sum_gadget,
)
from .harness import DistributionSpec, ErrorReport, estimate_l2_diff, exhaustive_grid_l2, sample
from .lowering import (
    GridSpec,
    RationalizedNet,
    add_clip_layer,
    expand_fanout_one,
    push_weights_first_layer,
    rationalize,
)
from .netir import (
    NetLayer,
    NetMetrics,
    ReluNet,
    concat_nets,
    dense_net,
    eval_net_exact,
    eval_net_float,
    merge_linear_layers,
    net_metrics,
    validate_net,
)
from .pipeline import (
    CompiledNet,
    CompileOptions,
    QuantizerSpec,
    build_decoder,
    build_quantizer,
    build_quantizer_discrete,
    compile_bounded_weights,
    compile_net_to_circuit,
    substitute_circuit_block,
    tc_to_relu,
)
from .univariate import PiecewiseLinear, collapse_to_depth2, eval_pwl, extract_pwl, restrict_to_coordinate

__version__ = "0.1.0"
