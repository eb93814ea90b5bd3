"""Side-channel membership oracles.

Each probe decides whether a target registrable domain is on the
tracking-prevention list using only attacker-observable signals: load
outcomes of cross-site fetches, the attacker's own server logs, the body
of attacker-authored documents, and (for the network-observer channel)
plaintext wire inspection. Ground-truth state is unreachable through the
AttackerView wrapper, so a probe cannot cheat even accidentally.

Verdicts are OnList / NotOnList / Inconclusive. Inconclusive is a
first-class answer: a channel whose preconditions do not hold for a
given target (no suitable endpoint, no credential cookie ever set,
https-only traffic) must say so rather than guess.

Probes run from freshly opened documents by default, which keeps them
non-destructive: loads from a document younger than the strike window
are not accounted. Only the overlong-referer probe offers an explicit
destructive mode that waits the window out first.

What the attacker is allowed to know, and why:

- Server topology, resource paths, kinds and cookie names: public
  application structure.
- Browser behavior (strike window length, whether non-following fetches
  surface redirects): public platform knowledge.
- Whether the victim's jar holds a given cookie: used to recognize a
  channel's preconditions as unmet (both membership states would look
  identical), never to decide membership itself.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from itpsim.psl import RegistrableDomain
from itpsim.web_sim import (
    Document,
    LoadOutcome,
    ObservationUnavailable,
    OutcomeKind,
    Resource,
    ResourceKind,
    SimConfigError,
    SimUrl,
    UsageError,
    WireObservation,
    World,
    observe_wire,
    padded_path,
)

# Referring path used by the overlong probe: with origin and header
# overhead it exceeds the largest permitted server limit (131072), so the
# full-Referer case is rejected whatever the target's configuration.
PROBE_PATH_BYTES = 140000

OVERLONG_REFERER = "overlong-referer"
AUTH_RESOURCE = "auth-resource"
REDIRECT_COOKIE = "redirect-cookie"
REDIRECT_MANUAL = "redirect-manual"
UPLOADED_REFERRER = "uploaded-referrer"
PLAINTEXT_OBSERVER = "plaintext-observer"

ALL_CHANNELS = (
    OVERLONG_REFERER,
    AUTH_RESOURCE,
    REDIRECT_COOKIE,
    REDIRECT_MANUAL,
    UPLOADED_REFERRER,
    PLAINTEXT_OBSERVER,
)

# Landing path on the attacker's server for redirected hops; it needs no
# configured resource because servers log every delivered request.
LANDING_PATH = "/itp-landing"


class Verdict(enum.Enum):
    ON_LIST = "on_list"
    NOT_ON_LIST = "not_on_list"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ProbeVerdict:
    verdict: Verdict
    channel: str
    destructive: bool = False

    @property
    def conclusive(self) -> bool:
        return self.verdict is not Verdict.INCONCLUSIVE


def _inconclusive(channel: str, destructive: bool = False) -> ProbeVerdict:
    return ProbeVerdict(Verdict.INCONCLUSIVE, channel, destructive)


class AttackerView:
    """World access scoped to what an attacker can actually do and see.

    Documents can only be opened on attacker-owned hosts (open_window may
    point anywhere, modeling window.open of a victim page, but returns no
    handle). Server logs are readable for attacker hosts only. The
    underlying tracking state is not exposed at all.
    """

    def __init__(self, world: World, attacker_hosts):
        self._world = world
        self._hosts = frozenset(attacker_hosts)
        for host in sorted(self._hosts):
            world.server_for(host)

    @property
    def attacker_hosts(self) -> frozenset[str]:
        return self._hosts

    @property
    def itp_state(self):
        raise UsageError("attack code must not read tracking state directly")

    def _require_owned(self, host: str) -> None:
        if host not in self._hosts:
            raise UsageError(f"{host} is not attacker-controlled")

    # -- actions -----------------------------------------------------------

    def navigate(self, url: SimUrl | str) -> Document:
        url = SimUrl.parse(url) if isinstance(url, str) else url
        self._require_owned(url.host)
        return self._world.navigate(url)

    def open_window(self, url: SimUrl | str) -> None:
        """Open any URL in the victim's session; no handle comes back."""
        self._world.open_window(url)

    def fetch(self, doc: Document, target: SimUrl | str, follow_redirects: bool = True) -> LoadOutcome:
        return self._world.fetch(doc, target, follow_redirects=follow_redirects)

    def close_document(self, doc: Document) -> None:
        self._world.close_document(doc)

    def advance_clock(self, seconds: float) -> None:
        self._world.advance_clock(seconds)

    # -- attacker-owned infrastructure --------------------------------------

    def received_requests(self, host: str):
        self._require_owned(host)
        return self._world.received_requests(host)

    # -- public knowledge ----------------------------------------------------

    def hosts_of(self, site: RegistrableDomain) -> tuple[str, ...]:
        return tuple(h for h in self._world.hosts() if self._world.site_of(h) == site)

    def site_of(self, host: str) -> RegistrableDomain:
        return self._world.site_of(host)

    def server_scheme(self, host: str) -> str:
        return self._world.server_for(host).scheme

    def resource_spec(self, host: str, path: str) -> Resource | None:
        return self._world.server_for(host).resources.get(path)

    def resource_paths(self, host: str) -> tuple[str, ...]:
        return tuple(sorted(self._world.server_for(host).resources))

    def search_app_of(self, host: str):
        """The search application served by ``host``, if any; page structure is public."""
        return self._world.server_for(host).search_app

    def strike_window(self) -> float:
        return self._world.itp_state.config.short_lived_window

    def manual_redirect_enabled(self) -> bool:
        return self._world.itp_state.config.manual_redirect_enabled

    # -- out-of-band precondition knowledge ----------------------------------

    def jar_has_cookie(self, site: RegistrableDomain, name: str) -> bool:
        return self._world.jar.has_cookie(site, name)

    def jar_has_cookies(self, site: RegistrableDomain) -> bool:
        return bool(self._world.jar.cookies_for(site))

    # -- network-observer role -----------------------------------------------

    def observe_wire(self, outcome: LoadOutcome) -> WireObservation:
        return observe_wire(outcome)


def _origin_site(view: AttackerView, attacker_origin: str) -> RegistrableDomain:
    return view.site_of(SimUrl.parse(attacker_origin).host)


def _fresh_doc_destructive(view: AttackerView) -> bool:
    # An age-0 fetch only counts when the strike window is zero-length.
    return view.strike_window() <= 0


def _find_endpoint(view: AttackerView, site: RegistrableDomain, path: str, kind: ResourceKind):
    """Locate (host, resource) serving ``path`` with ``kind`` on ``site``."""
    for host in view.hosts_of(site):
        resource = view.resource_spec(host, path)
        if resource is not None and resource.kind is kind:
            return host, resource
    return None


def loadable_paths(view: AttackerView, site: RegistrableDomain) -> tuple[tuple[str, str], ...]:
    """(host, path) pairs on ``site`` that return 2xx without credentials.

    Only cookie-independent endpoints qualify; an auth-guarded resource
    would conflate "cookies stripped" with the signal under test.
    """
    pairs = []
    for host in view.hosts_of(site):
        for path in view.resource_paths(host):
            spec = view.resource_spec(host, path)
            if spec.kind in (ResourceKind.PUBLIC, ResourceKind.UPLOAD_ECHO):
                pairs.append((host, path))
    return tuple(pairs)


def probe_overlong_referer(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    non_destructive: bool = True,
) -> ProbeVerdict:
    """Fetch from a document whose URL overflows the target's request limit.

    A truncated (origin-only) Referer keeps the head small: Loaded means
    the target is on the list. A full Referer overflows any permitted
    limit: the rejection error means it is not.
    """
    channel = OVERLONG_REFERER
    destructive = not non_destructive or _fresh_doc_destructive(view)
    if _origin_site(view, attacker_origin) == target:
        return _inconclusive(channel)
    endpoints = loadable_paths(view, target)
    if not endpoints:
        return _inconclusive(channel)
    host, path = endpoints[0]
    try:
        doc = view.navigate(attacker_origin + padded_path(PROBE_PATH_BYTES, tail="/probe"))
        if destructive:
            view.advance_clock(view.strike_window())
        outcome = view.fetch(doc, f"{view.server_scheme(host)}://{host}{path}")
    except SimConfigError:
        return _inconclusive(channel, destructive)
    if outcome.kind is OutcomeKind.LOADED:
        return ProbeVerdict(Verdict.ON_LIST, channel, destructive)
    if outcome.kind is OutcomeKind.ERRORED:
        return ProbeVerdict(Verdict.NOT_ON_LIST, channel, destructive)
    return _inconclusive(channel, destructive)


def probe_auth_resource(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    resource_path: str,
) -> ProbeVerdict:
    """Fetch a credential-guarded resource; an error means the cookie was stripped."""
    channel = AUTH_RESOURCE
    destructive = _fresh_doc_destructive(view)
    if _origin_site(view, attacker_origin) == target:
        return _inconclusive(channel, destructive)
    found = _find_endpoint(view, target, resource_path, ResourceKind.AUTH_REQUIRED)
    if found is None:
        return _inconclusive(channel, destructive)
    host, resource = found
    if not view.jar_has_cookie(target, resource.cookie_name):
        # Never logged in: missing-credential errors carry no signal.
        return _inconclusive(channel, destructive)
    try:
        doc = view.navigate(attacker_origin + "/probe")
        outcome = view.fetch(doc, f"{view.server_scheme(host)}://{host}{resource_path}")
    except SimConfigError:
        return _inconclusive(channel, destructive)
    if outcome.kind is OutcomeKind.ERRORED:
        return ProbeVerdict(Verdict.ON_LIST, channel, destructive)
    if outcome.kind is OutcomeKind.LOADED:
        return ProbeVerdict(Verdict.NOT_ON_LIST, channel, destructive)
    return _inconclusive(channel, destructive)


def probe_redirect_cookie(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    redirect_path: str,
) -> ProbeVerdict:
    """Membership via redirect behavior; two variants share the entry point.

    Against an open redirector, the hop bounced to the attacker's server
    carries the names of the cookies the redirector saw, so the
    attacker's own log answers whether cookies crossed. Against a
    conditional redirect (302 only without credentials), a non-following
    fetch surfaces the redirect itself; that variant reports under the
    redirect-manual channel and is inapplicable when the browser no
    longer exposes redirects to non-following fetches.
    """
    if _origin_site(view, attacker_origin) == target:
        return _inconclusive(REDIRECT_COOKIE)
    open_redirect = _find_endpoint(view, target, redirect_path, ResourceKind.OPEN_REDIRECT)
    if open_redirect is not None:
        return _probe_open_redirect(view, attacker_origin, target, open_redirect[0], redirect_path)
    conditional = _find_endpoint(view, target, redirect_path, ResourceKind.CONDITIONAL_REDIRECT)
    if conditional is not None:
        return _probe_conditional_redirect(view, attacker_origin, target, conditional, redirect_path)
    return _inconclusive(REDIRECT_COOKIE)


def _probe_open_redirect(
    view: AttackerView, attacker_origin: str, target: RegistrableDomain, host: str, path: str
) -> ProbeVerdict:
    channel = REDIRECT_COOKIE
    destructive = _fresh_doc_destructive(view)
    if not view.jar_has_cookies(target):
        return _inconclusive(channel, destructive)
    landing_host = SimUrl.parse(attacker_origin).host
    try:
        doc = view.navigate(attacker_origin + "/probe")
        target_url = f"{view.server_scheme(host)}://{host}{path}?to={attacker_origin}{LANDING_PATH}"
        view.fetch(doc, target_url)
    except SimConfigError:
        return _inconclusive(channel, destructive)
    landed = [
        request
        for request, _ in view.received_requests(landing_host)
        if request.url.resource_path == LANDING_PATH
    ]
    if not landed:
        return _inconclusive(channel, destructive)
    forwarded = landed[-1].url.query_params().get("fwd_cookies", "")
    if forwarded:
        return ProbeVerdict(Verdict.NOT_ON_LIST, channel, destructive)
    return ProbeVerdict(Verdict.ON_LIST, channel, destructive)


def _probe_conditional_redirect(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    found: tuple[str, Resource],
    path: str,
) -> ProbeVerdict:
    channel = REDIRECT_MANUAL
    destructive = _fresh_doc_destructive(view)
    host, resource = found
    if not view.jar_has_cookie(target, resource.cookie_name):
        return _inconclusive(channel, destructive)
    if not view.manual_redirect_enabled():
        # Redirects are followed silently; this detector has nothing to see.
        return _inconclusive(channel, destructive)
    try:
        doc = view.navigate(attacker_origin + "/probe")
        outcome = view.fetch(doc, f"{view.server_scheme(host)}://{host}{path}", follow_redirects=False)
    except SimConfigError:
        return _inconclusive(channel, destructive)
    if outcome.kind is OutcomeKind.REDIRECTED:
        return ProbeVerdict(Verdict.ON_LIST, channel, destructive)
    if outcome.kind is OutcomeKind.LOADED:
        return ProbeVerdict(Verdict.NOT_ON_LIST, channel, destructive)
    return _inconclusive(channel, destructive)


def probe_uploaded_referrer(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
    upload_path: str,
) -> ProbeVerdict:
    """Load an attacker-uploaded document that reports the Referer it saw."""
    channel = UPLOADED_REFERRER
    destructive = _fresh_doc_destructive(view)
    if _origin_site(view, attacker_origin) == target:
        return _inconclusive(channel, destructive)
    found = _find_endpoint(view, target, upload_path, ResourceKind.UPLOAD_ECHO)
    if found is None:
        return _inconclusive(channel, destructive)
    host, _ = found
    try:
        doc = view.navigate(attacker_origin + "/echo-probe")
        outcome = view.fetch(doc, f"{view.server_scheme(host)}://{host}{upload_path}")
    except SimConfigError:
        return _inconclusive(channel, destructive)
    if outcome.kind is not OutcomeKind.LOADED or not outcome.body.startswith("referrer-echo:"):
        return _inconclusive(channel, destructive)
    echoed = outcome.body[len("referrer-echo:"):]
    if echoed == doc.url.full:
        return ProbeVerdict(Verdict.NOT_ON_LIST, channel, destructive)
    if echoed == doc.url.origin:
        return ProbeVerdict(Verdict.ON_LIST, channel, destructive)
    return _inconclusive(channel, destructive)


def probe_plaintext_observer(
    view: AttackerView,
    attacker_origin: str,
    target: RegistrableDomain,
) -> ProbeVerdict:
    """Watch a plaintext request on the wire; a full Referer means unrestricted."""
    channel = PLAINTEXT_OBSERVER
    destructive = _fresh_doc_destructive(view)
    if _origin_site(view, attacker_origin) == target:
        return _inconclusive(channel, destructive)
    http_hosts = [h for h in view.hosts_of(target) if view.server_scheme(h) == "http"]
    if not http_hosts:
        return _inconclusive(channel, destructive)
    host = http_hosts[0]
    try:
        doc = view.navigate(attacker_origin + "/wire-probe")
        outcome = view.fetch(doc, f"http://{host}/wire-probe.gif")
        observation = view.observe_wire(outcome)
    except (SimConfigError, ObservationUnavailable):
        return _inconclusive(channel, destructive)
    if observation.referer_full:
        return ProbeVerdict(Verdict.NOT_ON_LIST, channel, destructive)
    return ProbeVerdict(Verdict.ON_LIST, channel, destructive)
