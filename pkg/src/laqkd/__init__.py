"""Simulator and analysis toolkit for three lightweight authenticated QKD
protocols built around an untrusted measurement relay."""

from .errors import (
    ConfigError,
    KeyDepletedError,
    LaqkdError,
    MalformedPayloadError,
    NonUnitaryError,
    NormalizationError,
    ProbeConditionError,
    ScheduleCycleError,
)
from .qstate import (
    BELL_MATRIX,
    BELL_STATES,
    CYCLE,
    HADAMARD,
    IDENTITY,
    INV_SQRT2,
    BellOutcome,
    PairState,
    PhotonState,
    Unitary2,
    apply_unitary,
    bell_measure,
    bell_probabilities,
    bell_state,
    cycle_power,
    states_equal_up_to_phase,
    tensor,
    z_photon,
)
from .encoding import (
    DECODE_BITS,
    allowed_outcomes,
    decode_outcome,
    encoded_photon,
    forbidden_outcomes,
    return_photon,
)
from .keymat import (
    BitString,
    HashSpec,
    MasterKeyStore,
    SessionKey,
    generate_store,
    hash_tagged,
    identity_pa_seed,
    length_tagged,
    load_store,
    pa_seed_length,
    privacy_amplify,
    save_store,
    universal_hash,
)
from .metrics import (
    LEAKAGE,
    REFERENCE_PROTOCOLS,
    Event,
    MetricsReport,
    TransmissionSchedule,
    breidbart_bound_oracle,
    build_report,
    discard_counts,
    format_comparison,
    guess_probability_curve,
    protocol_schedule,
    psk_bits,
    qubit_efficiency,
    recycling_rate_p1,
    recycling_rate_p2,
    recycling_rate_p3,
    value_guess_accuracy,
)
from .adversary import (
    PROBE_TOL,
    AttackStrategy,
    ConditionReport,
    EntanglingProbe,
    InterceptResend,
    LeakageReport,
    MaliciousTP,
    Passive,
    ProbeInstance,
    check_probe_conditions,
    construct_constrained_probe,
    decode_error_experiment,
    guess_accuracy_experiment,
    intercept_decode_error_exact,
    intercept_resend,
    malicious_tp_announce,
    parse_strategy,
    probe_attack_report,
    probe_leakage_experiment,
    probe_outcome_table,
)
from .protocols import (
    Message,
    MessageKind,
    ProtocolConfig,
    RunResult,
    Transcript,
    aggregate_results,
    build_frame,
    decode_announcement,
    frame_check,
    recover_peer,
    run,
    simulate_runs,
    split_by_key,
    verify_tables,
)

__version__ = "0.1.0"
