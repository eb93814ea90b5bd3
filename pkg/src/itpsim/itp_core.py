"""The tracking-prevention state machine.

Cross-site subresource loads accrue "strikes" against the loaded
third-party registrable domain: one strike per distinct first-party
registrable domain. A domain whose strike count reaches the prevalence
threshold is classified prevalent, and cross-site requests to prevalent
domains lose their cookies and have their Referer reduced to the
initiating document's origin. Classification is evaluated eagerly at
record time and the prevalent set is append-only until the user clears
history.

States are immutable values; every operation returns a new state.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

from itpsim.psl import RegistrableDomain

if TYPE_CHECKING:
    from itpsim.web_sim import SimRequest

DEFAULT_PREVALENCE_THRESHOLD = 3
DEFAULT_SHORT_LIVED_WINDOW = 5.0


class SessionKind(enum.Enum):
    MAIN = "main"
    PRIVATE = "private"


@dataclass(frozen=True)
class ItpConfig:
    """Tunable parameters, including the mitigation toggles.

    referer_length_cap, manual_redirect_enabled and threshold_jitter are
    the three short-term mitigations; defaults model stock behavior.
    """

    prevalence_threshold: int = DEFAULT_PREVALENCE_THRESHOLD
    short_lived_window: float = DEFAULT_SHORT_LIVED_WINDOW
    referer_length_cap: int | None = None
    manual_redirect_enabled: bool = True
    threshold_jitter: int | None = None

    def __post_init__(self):
        if self.prevalence_threshold < 1:
            raise ValueError("prevalence_threshold must be >= 1")
        if self.short_lived_window < 0:
            raise ValueError("short_lived_window must be >= 0")
        if self.referer_length_cap is not None and self.referer_length_cap < 1:
            raise ValueError("referer_length_cap must be >= 1 when set")
        if self.threshold_jitter is not None and self.threshold_jitter < 0:
            raise ValueError("threshold_jitter must be >= 0 when set")


@dataclass(frozen=True)
class StrikeLedger:
    """Per-third-party sets of distinct first parties that loaded it cross-site.

    Set semantics are load-bearing: repeated loads from the same first
    party must not look like additional strikes.
    """

    strikes: dict[RegistrableDomain, frozenset[RegistrableDomain]] = field(default_factory=dict)

    def with_strike(
        self, third_party: RegistrableDomain, first_party: RegistrableDomain
    ) -> StrikeLedger:
        if third_party == first_party:
            raise ValueError(f"same-site load recorded as a strike: {third_party!r}")
        updated = dict(self.strikes)
        updated[third_party] = self.sources_of(third_party) | {first_party}
        return StrikeLedger(updated)

    def sources_of(self, third_party: RegistrableDomain) -> frozenset[RegistrableDomain]:
        return self.strikes.get(third_party, frozenset())

    def size_of(self, third_party: RegistrableDomain) -> int:
        return len(self.sources_of(third_party))


@dataclass(frozen=True)
class PrevalentSet:
    """Domains classified as cross-site trackers. Append-only between wipes."""

    domains: frozenset[RegistrableDomain] = frozenset()

    def with_domain(self, domain: RegistrableDomain) -> PrevalentSet:
        return PrevalentSet(self.domains | {domain})

    def __contains__(self, domain: RegistrableDomain) -> bool:
        return domain in self.domains

    def __len__(self) -> int:
        return len(self.domains)

    def __iter__(self):
        return iter(sorted(self.domains))


@dataclass(frozen=True)
class ItpState:
    config: ItpConfig
    ledger: StrikeLedger = field(default_factory=StrikeLedger)
    prevalent: PrevalentSet = field(default_factory=PrevalentSet)
    session_kind: SessionKind = SessionKind.MAIN
    # Keys the per-domain jitter draw; a private fork re-keys it.
    session_seed: int = 0

    @classmethod
    def fresh(cls, config: ItpConfig | None = None, seed: int = 0) -> ItpState:
        return cls(config=config or ItpConfig(), session_seed=seed)


def effective_threshold(state: ItpState, domain: RegistrableDomain) -> int:
    """The strike count at which ``domain`` gets classified.

    With jitter configured, a deterministic per-(domain, session) offset
    in [0, jitter] is added to the base threshold, so an attacker cannot
    rely on one globally known value.
    """
    base = state.config.prevalence_threshold
    jitter = state.config.threshold_jitter
    if not jitter:
        return base
    digest = hashlib.sha256(f"{state.session_seed}:{domain}".encode()).digest()
    return base + int.from_bytes(digest[:8], "big") % (jitter + 1)


def record_cross_site_load(
    state: ItpState,
    first_party: RegistrableDomain,
    third_party: RegistrableDomain,
    document_age: float,
) -> ItpState:
    """Account one cross-site load; classify eagerly when the threshold is met.

    Same-site loads and loads issued from documents younger than the
    short-lived window change nothing. Total over valid inputs: never
    raises.
    """
    if first_party == third_party:
        return state
    if document_age < state.config.short_lived_window:
        return state
    ledger = state.ledger.with_strike(third_party, first_party)
    prevalent = state.prevalent
    if third_party not in prevalent and ledger.size_of(third_party) >= effective_threshold(
        state, third_party
    ):
        prevalent = prevalent.with_domain(third_party)
    return replace(state, ledger=ledger, prevalent=prevalent)


def is_prevalent(state: ItpState, domain: RegistrableDomain) -> bool:
    """Ground truth for tests and reports; attack code must not call this."""
    return domain in state.prevalent


def apply_restrictions(state: ItpState, request: SimRequest) -> SimRequest:
    """Strip cookies and reduce Referer to origin on restricted requests.

    A request is restricted when its target's registrable domain is
    prevalent and the initiator's registrable domain differs. The
    referer_length_cap mitigation independently reduces any over-cap
    Referer to origin, prevalent target or not.
    """
    restricted = request.initiator_site != request.target_site and is_prevalent(
        state, request.target_site
    )
    if restricted:
        request = replace(request, referer=request.initiator_origin, cookies=())
    cap = state.config.referer_length_cap
    if cap is not None and len(request.referer) > cap:
        request = replace(request, referer=request.initiator_origin)
    return request


def clear_history(state: ItpState) -> ItpState:
    """Wipe the ledger and the entire prevalent list; config survives."""
    return replace(state, ledger=StrikeLedger(), prevalent=PrevalentSet())


def fork_private_session(state: ItpState) -> ItpState:
    """Start a private session: empty state, same config, re-keyed jitter.

    The main-session state is a value and stays untouched.
    """
    if state.session_kind is not SessionKind.MAIN:
        raise ValueError("private sessions fork from the main session only")
    return ItpState(
        config=state.config,
        session_kind=SessionKind.PRIVATE,
        session_seed=state.session_seed + 1,
    )
