"""itpsim: a deterministic model of Safari-style Intelligent Tracking Prevention.

The package simulates the ITP state machine (strike accumulation at
registrable-domain granularity, prevalent classification, cookie and
Referer restrictions), a small deterministic web of documents, cookie
jars and configurable servers, side-channel probes that infer ITP-list
membership from load outcomes alone, end-to-end attack drivers, and a
scenario-driven command-line harness.
"""

from itpsim.attacks import (
    AlreadyPrevalent,
    AttackError,
    FingerprintId,
    FingerprintReadout,
    ListDisclosure,
    PreconditionViolated,
    SaturatedPin,
    StrikeEstimate,
    Undetermined,
    attack1_reveal_list,
    attack2_count_strikes,
    attack3_read_fingerprint,
    attack3_write_fingerprint,
    attack4_force_onto_list,
    attack5_xs_search,
    calibrate_channels,
    pin_pool,
    probe_domain,
    run_channel,
)
from itpsim.harness_cli import (
    MatrixReport,
    bundled_scenario_names,
    load_bundled_scenario,
    main,
    resolve_scenario,
    run_mitigation_matrix,
)
from itpsim.itp_core import ItpConfig, ItpState, StrikeLedger
from itpsim.probes import (
    ALL_CHANNELS,
    AttackerView,
    ProbeVerdict,
    Verdict,
    probe_auth_resource,
    probe_overlong_referer,
    probe_plaintext_observer,
    probe_redirect_cookie,
    probe_uploaded_referrer,
)
from itpsim.psl import (
    NoRegistrableDomain,
    PslParseError,
    PublicSuffixRuleSet,
    RuleSection,
    embedded_rules,
    load_rules,
    parse_rules,
    registrable_domain,
)
from itpsim.scenario import (
    Report,
    Scenario,
    ScenarioParseError,
    ScenarioRunError,
    load_scenario,
    parse_scenario,
    report_itp_state,
    run_scenario,
)
from itpsim.web_sim import (
    LoadOutcome,
    OutcomeKind,
    Resource,
    ResourceKind,
    SearchApp,
    ServerBehavior,
    SimConfigError,
    SimUrl,
    UsageError,
    World,
    observe_wire,
    padded_path,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_CHANNELS",
    "AlreadyPrevalent",
    "AttackError",
    "AttackerView",
    "FingerprintId",
    "FingerprintReadout",
    "ItpConfig",
    "ItpState",
    "ListDisclosure",
    "LoadOutcome",
    "MatrixReport",
    "NoRegistrableDomain",
    "OutcomeKind",
    "PreconditionViolated",
    "ProbeVerdict",
    "PslParseError",
    "PublicSuffixRuleSet",
    "Report",
    "Resource",
    "ResourceKind",
    "RuleSection",
    "SaturatedPin",
    "Scenario",
    "ScenarioParseError",
    "ScenarioRunError",
    "SearchApp",
    "ServerBehavior",
    "SimConfigError",
    "SimUrl",
    "StrikeEstimate",
    "StrikeLedger",
    "Undetermined",
    "UsageError",
    "Verdict",
    "World",
    "attack1_reveal_list",
    "attack2_count_strikes",
    "attack3_read_fingerprint",
    "attack3_write_fingerprint",
    "attack4_force_onto_list",
    "attack5_xs_search",
    "bundled_scenario_names",
    "calibrate_channels",
    "embedded_rules",
    "load_bundled_scenario",
    "load_rules",
    "load_scenario",
    "main",
    "observe_wire",
    "padded_path",
    "parse_rules",
    "parse_scenario",
    "pin_pool",
    "probe_auth_resource",
    "probe_domain",
    "probe_overlong_referer",
    "probe_plaintext_observer",
    "probe_redirect_cookie",
    "probe_uploaded_referrer",
    "registrable_domain",
    "report_itp_state",
    "resolve_scenario",
    "run_channel",
    "run_mitigation_matrix",
    "run_scenario",
    "__version__",
]
