"""End-to-end drivers that turn the membership side channels into exploits.

Every driver works through an AttackerView, so it only navigates
attacker-owned pages, reads attacker-owned server logs, and judges the
rest of the world by observable load behavior. None of them touch the
tracking ledger directly; writes happen through real cross-site fetches
from aged documents and reads happen through the probe channels.

Two verification styles appear below. Domains the attacker operates can
be checked server-side: a fresh cross-site fetch to one's own host shows
a reduced Referer exactly when the domain is on the list. Domains the
attacker does not operate can only be probed through whichever channels
their servers happen to expose, and a probe that has nothing to observe
reports Inconclusive rather than guessing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence
from urllib.parse import quote

from .itp_core import DEFAULT_PREVALENCE_THRESHOLD
from .psl import RegistrableDomain
from .probes import (
    ALL_CHANNELS,
    AUTH_RESOURCE,
    OVERLONG_REFERER,
    PLAINTEXT_OBSERVER,
    REDIRECT_COOKIE,
    REDIRECT_MANUAL,
    UPLOADED_REFERRER,
    AttackerView,
    ProbeVerdict,
    Verdict,
    probe_auth_resource,
    probe_overlong_referer,
    probe_plaintext_observer,
    probe_redirect_cookie,
    probe_uploaded_referrer,
)
from .web_sim import ResourceKind, SimConfigError, SimUrl, UsageError

# Verdict marker for a candidate no channel could say anything about.
NO_CHANNEL = "no-applicable-channel"

DEFAULT_FINGERPRINT_BITS = 32
DEFAULT_PIN_PARENT = "pin-pool.example"


class AttackError(Exception):
    """Base for failures the drivers can detect from the attacker's side."""


class AlreadyPrevalent(AttackError):
    """The target was on the list before the driver added any strikes."""


class Undetermined(AttackError):
    """The driver ran out of probes or first parties before concluding."""


class SaturatedPin(AttackError):
    """A fingerprint pin was prevalent before the write began."""

    def __init__(self, pin: RegistrableDomain, bit_index: int):
        super().__init__(f"pin {pin} (bit {bit_index}) is already prevalent")
        self.pin = pin
        self.bit_index = bit_index


class PreconditionViolated(AttackError):
    """The world is in a state the attack cannot calibrate against."""


# ---------------------------------------------------------------------------
# result types


def pin_pool(count: int = DEFAULT_FINGERPRINT_BITS, parent: str = DEFAULT_PIN_PARENT) -> tuple[str, ...]:
    """Registrable domains for fingerprint pins, one per bit.

    The parent sits in the private section of the suffix rules, so each
    child is its own registrable domain and collects strikes separately
    even though one operator serves them all.
    """
    return tuple(f"b{index:02d}.{parent}" for index in range(count))


@dataclass(frozen=True)
class FingerprintId:
    """An identifier encoded as list membership of dedicated pin domains.

    Bit ``i`` of ``value`` (least significant first) belongs to
    ``pin_domains[i]``; a set bit means that pin gets pushed onto the
    list, a clear bit means it is left alone.
    """

    value: int
    pin_domains: tuple[str, ...]

    def __post_init__(self):
        if not self.pin_domains:
            raise ValueError("at least one pin domain is required")
        if len(set(self.pin_domains)) != len(self.pin_domains):
            raise ValueError("pin domains must be distinct")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(f"value {self.value} does not fit in {self.width} bits")

    @property
    def width(self) -> int:
        return len(self.pin_domains)

    def bit(self, index: int) -> bool:
        return bool((self.value >> index) & 1)

    @property
    def bits(self) -> tuple[bool, ...]:
        return tuple(self.bit(i) for i in range(self.width))


@dataclass(frozen=True)
class FingerprintReadout:
    """Per-pin read result; a bit is None when its probe was inconclusive."""

    pin_domains: tuple[str, ...]
    bits: tuple[bool | None, ...]

    @property
    def complete(self) -> bool:
        return all(bit is not None for bit in self.bits)

    @property
    def unknown_bits(self) -> tuple[int, ...]:
        return tuple(i for i, bit in enumerate(self.bits) if bit is None)

    @property
    def value(self) -> int | None:
        """The decoded identifier, or None while any bit is unknown."""
        if not self.complete:
            return None
        return sum(1 << i for i, bit in enumerate(self.bits) if bit)


@dataclass(frozen=True)
class StrikeEstimate:
    """Outcome of the strike-counting attack.

    attacker_domains_spent distinct first parties were consumed before
    the target tipped over, so the target had threshold - spent strikes
    beforehand. prior_strikes records that difference using the
    threshold the attacker assumed; randomized thresholds make it wrong
    by exactly the hidden offset.
    """

    target: RegistrableDomain
    prior_strikes: int
    attacker_domains_spent: int


@dataclass(frozen=True)
class ListDisclosure:
    """Verdict per candidate from the list-disclosure attack."""

    verdicts: dict[str, ProbeVerdict]

    def _with_verdict(self, wanted: Verdict) -> tuple[str, ...]:
        return tuple(sorted(d for d, v in self.verdicts.items() if v.verdict is wanted))

    @property
    def on_list(self) -> tuple[str, ...]:
        return self._with_verdict(Verdict.ON_LIST)

    @property
    def not_on_list(self) -> tuple[str, ...]:
        return self._with_verdict(Verdict.NOT_ON_LIST)

    @property
    def inconclusive(self) -> tuple[str, ...]:
        return self._with_verdict(Verdict.INCONCLUSIVE)


# ---------------------------------------------------------------------------
# probe dispatch


def _site_of_origin(view: AttackerView, origin: str) -> RegistrableDomain:
    return view.site_of(SimUrl.parse(origin).host)


def _host_for(view: AttackerView, site: RegistrableDomain) -> str:
    hosts = view.hosts_of(site)
    if not hosts:
        raise SimConfigError(f"no registered host serves {site}")
    return hosts[0]


def _first_path_of_kind(view: AttackerView, site: RegistrableDomain, kind: ResourceKind) -> str | None:
    for host in view.hosts_of(site):
        for path in view.resource_paths(host):
            if view.resource_spec(host, path).kind is kind:
                return path
    return None


def run_channel(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    channel: str,
    non_destructive: bool = True,
) -> ProbeVerdict:
    """Run one named channel against ``target``, discovering endpoints first.

    Channels that need a particular server-side endpoint report
    Inconclusive when the target exposes none of the right kind.
    """
    if channel == OVERLONG_REFERER:
        return probe_overlong_referer(view, attacker_origin, target, non_destructive=non_destructive)
    if channel == AUTH_RESOURCE:
        path = _first_path_of_kind(view, target, ResourceKind.AUTH_REQUIRED)
        if path is None:
            return ProbeVerdict(Verdict.INCONCLUSIVE, channel)
        return probe_auth_resource(view, attacker_origin, target, path)
    if channel == REDIRECT_COOKIE:
        path = _first_path_of_kind(view, target, ResourceKind.OPEN_REDIRECT)
        if path is None:
            return ProbeVerdict(Verdict.INCONCLUSIVE, channel)
        return probe_redirect_cookie(view, attacker_origin, target, path)
    if channel == REDIRECT_MANUAL:
        path = _first_path_of_kind(view, target, ResourceKind.CONDITIONAL_REDIRECT)
        if path is None:
            return ProbeVerdict(Verdict.INCONCLUSIVE, channel)
        return probe_redirect_cookie(view, attacker_origin, target, path)
    if channel == UPLOADED_REFERRER:
        path = _first_path_of_kind(view, target, ResourceKind.UPLOAD_ECHO)
        if path is None:
            return ProbeVerdict(Verdict.INCONCLUSIVE, channel)
        return probe_uploaded_referrer(view, attacker_origin, target, path)
    if channel == PLAINTEXT_OBSERVER:
        return probe_plaintext_observer(view, attacker_origin, target)
    raise ValueError(f"unknown channel {channel!r}")


def probe_domain(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    channels: Sequence[str] = ALL_CHANNELS,
    non_destructive: bool = True,
) -> ProbeVerdict:
    """First conclusive verdict across ``channels``, tried in order."""
    destructive = False
    for channel in channels:
        verdict = run_channel(view, attacker_origin, target, channel, non_destructive=non_destructive)
        destructive = destructive or verdict.destructive
        if verdict.conclusive:
            return verdict
    return ProbeVerdict(Verdict.INCONCLUSIVE, NO_CHANNEL, destructive)


def calibrate_channels(
    view: AttackerView,
    attacker_origin: str,
    known_on: RegistrableDomain,
    known_off: RegistrableDomain,
    channels: Sequence[str] = ALL_CHANNELS,
) -> tuple[str, ...]:
    """Channels that classify both calibration domains correctly.

    known_on and known_off are attacker-operated domains whose list
    status was established server-side, so a channel that misfires here
    (for example a length probe defeated by a Referer cap) is dropped
    before it can poison real measurements.
    """
    usable = []
    for channel in channels:
        on_verdict = run_channel(view, attacker_origin, known_on, channel)
        off_verdict = run_channel(view, attacker_origin, known_off, channel)
        if on_verdict.verdict is Verdict.ON_LIST and off_verdict.verdict is Verdict.NOT_ON_LIST:
            usable.append(channel)
    return tuple(usable)


# ---------------------------------------------------------------------------
# write primitives


def _strike(view: AttackerView, first_party_host: str, target_site: RegistrableDomain) -> None:
    """One distinct-first-party strike: visit, let the page age, fetch."""
    scheme = view.server_scheme(first_party_host)
    doc = view.navigate(f"{scheme}://{first_party_host}/")
    view.advance_clock(view.strike_window())
    host = _host_for(view, target_site)
    view.fetch(doc, f"{view.server_scheme(host)}://{host}/beacon.gif")
    view.close_document(doc)


def own_domain_on_list(view: AttackerView, probe_origin: str, own_site: RegistrableDomain) -> bool:
    """Server-side membership check for a domain the attacker operates.

    A fresh cross-site fetch arrives with the probing page's full URL in
    Referer unless the browser reduced it, so the attacker's own access
    log answers the question directly. The probe URL is kept short so a
    Referer length cap cannot imitate the reduction.
    """
    if _site_of_origin(view, probe_origin) == own_site:
        raise UsageError("membership check requires a cross-site probe origin")
    own_host = _host_for(view, own_site)
    doc = view.navigate(probe_origin + "/c")
    view.fetch(doc, f"{view.server_scheme(own_host)}://{own_host}/status.gif")
    request, _ = view.received_requests(own_host)[-1]
    view.close_document(doc)
    return request.referer == doc.url.origin


def force_own_domain_onto_list(
    view: AttackerView,
    own_site: RegistrableDomain,
    first_parties: Sequence[str],
    probe_origin: str,
) -> int:
    """Add strikes to an attacker-operated domain until it is classified.

    Checking after every strike keeps the loop correct when the
    effective threshold is higher than expected (randomized thresholds).
    Returns the number of first parties spent.
    """
    spent = 0
    for first_party in first_parties:
        if own_domain_on_list(view, probe_origin, own_site):
            return spent
        _strike(view, first_party, own_site)
        spent += 1
    if own_domain_on_list(view, probe_origin, own_site):
        return spent
    raise Undetermined(f"{own_site} still unclassified after {spent} first parties")


# ---------------------------------------------------------------------------
# the five attacks


def attack1_reveal_list(
    view: AttackerView,
    attacker_origin: str,
    candidates: Iterable[RegistrableDomain],
    channels: Sequence[str] = ALL_CHANNELS,
) -> ListDisclosure:
    """Read list membership for each candidate via the first usable channel.

    Candidates nothing can be said about stay Inconclusive in the
    result; they are never coerced into a yes or no.
    """
    verdicts = {
        candidate: probe_domain(view, attacker_origin, candidate, channels)
        for candidate in candidates
    }
    return ListDisclosure(verdicts)


def attack2_count_strikes(
    view: AttackerView,
    attacker_origin: str,
    attacker_first_parties: Sequence[str],
    target: RegistrableDomain,
    prevalence_threshold: int = DEFAULT_PREVALENCE_THRESHOLD,
    channels: Sequence[str] = ALL_CHANNELS,
) -> StrikeEstimate:
    """Count how many distinct first parties have already embedded ``target``.

    Strikes are added from fresh attacker first parties one at a time,
    probing non-destructively in between; the number spent before the
    target tips over reveals its prior count. The supplied first parties
    must not already be in the target's ledger.
    """
    verdict = probe_domain(view, attacker_origin, target, channels)
    if verdict.verdict is Verdict.ON_LIST:
        raise AlreadyPrevalent(f"{target} was classified before any strike was added")
    if not verdict.conclusive:
        raise Undetermined(f"no channel can observe {target}")
    spent = 0
    for first_party in attacker_first_parties:
        _strike(view, first_party, target)
        spent += 1
        verdict = probe_domain(view, attacker_origin, target, channels)
        if verdict.verdict is Verdict.ON_LIST:
            return StrikeEstimate(
                target=target,
                prior_strikes=prevalence_threshold - spent,
                attacker_domains_spent=spent,
            )
        if not verdict.conclusive:
            raise Undetermined(f"channel went dark probing {target}")
    raise Undetermined(f"{target} not classified after {spent} first parties")


def attack3_write_fingerprint(
    view: AttackerView,
    fingerprint: FingerprintId,
    writer_first_parties: Sequence[str],
    probe_origin: str,
) -> None:
    """Store an identifier by pushing the set-bit pins onto the list.

    All pins are attacker infrastructure, so both the saturation
    pre-check and the per-strike confirmation are done server-side.
    Clear bits are left untouched; a pin that is already prevalent makes
    this identifier unwritable and raises before anything is changed.
    """
    for index, pin in enumerate(fingerprint.pin_domains):
        if own_domain_on_list(view, probe_origin, pin):
            raise SaturatedPin(pin, index)
    for index, pin in enumerate(fingerprint.pin_domains):
        if not fingerprint.bit(index):
            continue
        for first_party in writer_first_parties:
            _strike(view, first_party, pin)
            if own_domain_on_list(view, probe_origin, pin):
                break
        else:
            raise Undetermined(f"pin {pin} still unclassified after the writer pool")


def attack3_read_fingerprint(
    view: AttackerView,
    reader_origin: str,
    pin_domains: Sequence[str],
    channels: Sequence[str] = ALL_CHANNELS,
    non_destructive: bool = True,
) -> FingerprintReadout:
    """Recover the identifier by probing each pin from ``reader_origin``.

    Non-destructive reads leave the ledger as they found it, so any
    number of unrelated origins can repeat the read. A pin whose probes
    all come back Inconclusive yields an unknown bit, not a guess.
    """
    bits: list[bool | None] = []
    for pin in pin_domains:
        verdict = probe_domain(view, reader_origin, pin, channels, non_destructive=non_destructive)
        if verdict.verdict is Verdict.ON_LIST:
            bits.append(True)
        elif verdict.verdict is Verdict.NOT_ON_LIST:
            bits.append(False)
        else:
            bits.append(None)
    return FingerprintReadout(pin_domains=tuple(pin_domains), bits=tuple(bits))


def attack4_force_onto_list(
    view: AttackerView,
    attacker_first_parties: Sequence[str],
    victim: RegistrableDomain,
) -> None:
    """Push an uninvolved domain onto the list to break its embedded logins.

    The victim's classification is not observable to the attacker
    without its cooperation, so the driver simply spends every supplied
    first party; callers provide at least the effective threshold.
    """
    for first_party in attacker_first_parties:
        _strike(view, first_party, victim)


def attack5_xs_search(
    view: AttackerView,
    attacker_origin: str,
    search_host: str,
    query: str,
    pre_strike_first_parties: Sequence[str],
    channels: Sequence[str] = ALL_CHANNELS,
) -> bool:
    """Decide cross-site whether a search in the victim's session has results.

    The results page loads a resource from a dedicated media domain only
    when results are present (some deployments invert this). Parking
    that domain one strike below the threshold beforehand turns the
    conditional load into a list transition the probes can read.
    """
    app = view.search_app_of(search_host)
    if app is None:
        raise UsageError(f"{search_host} serves no search application")
    media_site = view.site_of(app.media_host)
    verdict = probe_domain(view, attacker_origin, media_site, channels)
    if verdict.verdict is Verdict.ON_LIST:
        raise PreconditionViolated(f"{media_site} is already classified")
    if not verdict.conclusive:
        raise Undetermined(f"no channel can observe {media_site}")
    for first_party in pre_strike_first_parties:
        _strike(view, first_party, media_site)
    verdict = probe_domain(view, attacker_origin, media_site, channels)
    if verdict.verdict is Verdict.ON_LIST:
        # Tipped over early: it had prior strikes and cannot calibrate.
        raise PreconditionViolated(f"{media_site} was classified by the setup strikes")
    if not verdict.conclusive:
        raise Undetermined(f"channel went dark probing {media_site}")
    scheme = view.server_scheme(search_host)
    view.open_window(f"{scheme}://{search_host}{app.results_path}?q={quote(query, safe='')}")
    view.advance_clock(view.strike_window())
    verdict = probe_domain(view, attacker_origin, media_site, channels)
    if not verdict.conclusive:
        raise Undetermined(f"channel went dark probing {media_site}")
    fetched = verdict.verdict is Verdict.ON_LIST
    return fetched != app.inverted
