"""Feedback capacity of stationary Gaussian channels with colored noise.

Computes upper bounds from a discretized Lagrangian dual, synthesizes the
strictly causal Youla filter, builds the linear feedback encoder/decoder and
checks everything by closed-loop Monte Carlo.
"""

from fbcap.lti import (
    Polynomial,
    RationalFilter,
    SplitRealization,
    StateSpace,
    evaluate,
    feedback_transform,
    hankel_reduce,
    is_stable,
    modal_split,
    poles_zeros,
    to_state_space,
)
from fbcap.noise import (
    NoiseModel,
    PowerBudget,
    ma1_closed_form,
    nonfeedback_capacity,
    paley_wiener_check,
    psd,
)
from fbcap.dual import (
    ConstraintBasis,
    DualPoint,
    DualSolution,
    FrequencyGrid,
    dual_function,
    kkt_residuals,
    solve_dual,
    upper_bound_continuous,
)
from fbcap.primal import PrimalPoint, recover_ab_primal, solve_primal
from fbcap.synthesis import (
    FirFilter,
    SynthesisResult,
    achievable_rate,
    fir_power,
    power_scale,
    fir_power_quadrature,
    rate_from_zeros,
    recover_ab,
    synthesize,
    synthesize_fir,
)
from fbcap.coding import (
    CodingScheme,
    DecoderState,
    EncoderState,
    build_scheme,
    decoder_init,
    decoder_output,
    decoder_step,
    encoder_init,
    encoder_step,
    sk_instantiate,
)
from fbcap.simulate import (
    MessageCodebook,
    SimulationReport,
    build_codebook,
    decision_frame,
    error_probability,
    gen_noise,
    gen_noise_batch,
    run_trial,
    write_transcript,
)

__version__ = "0.1.0"
