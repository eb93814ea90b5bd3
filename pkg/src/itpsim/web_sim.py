"""Deterministic simulated web environment.

Documents, cookie jars and configurable servers, plus a fetch pipeline
that routes every request through the tracking-prevention state machine.
The observable surface is deliberately small: a fetch yields a
LoadOutcome (loaded / errored / redirected / blocked), servers keep
request logs, and plaintext requests can be observed on the wire. Those
observables are exactly what the side-channel probes build on.

Serialization of a request head is fixed so size arithmetic is
bit-exact::

    GET /favicon.ico HTTP/1.1\r\n
    Host: non-itp.example\r\n
    Referer: https://attacker.example/<...>/attack\r\n
    Cookie: NON_ITP_COOKIE=value;\r\n
    \r\n

The Referer line is omitted when empty, the Cookie line when no cookies
are sent; cookie pairs are sorted by name and joined with "; ", with one
trailing semicolon.

Modeling notes that differ from a real browser, chosen for determinism:

- Navigations never accrue strikes and bypass the server size limit;
  only subresource fetches feed the state machine.
- Strikes are recorded for every delivered request, including error
  responses, and per hop of a redirect chain; restrictions are likewise
  applied per hop, with the initiating document as the initiator of
  every hop.
- There is no DOM or script execution. A page that keeps fetching media
  while open is modeled with per-document deferred loads that fire when
  the clock passes their due age.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from urllib.parse import parse_qsl, quote, urlsplit

from itpsim import itp_core
from itpsim.psl import (
    PublicSuffixRuleSet,
    RegistrableDomain,
    embedded_rules,
    registrable_domain,
)

# Path length used by the canonical overlong-referer document; any value
# comfortably above max_request_bytes minus header overhead works.
OVERLONG_PATH_BYTES = 16000

# A redirect chain longer than this is cut off with a Blocked outcome.
MAX_REDIRECT_HOPS = 8

MIN_REQUEST_BYTES_LIMIT = 1024
MAX_REQUEST_BYTES_LIMIT = 131072


class SimConfigError(Exception):
    """The world is wired up wrong (unknown host, bad scheme, bad spec)."""


class UsageError(Exception):
    """A driver used the simulation incorrectly (e.g. fetched from a closed document)."""


class ObservationUnavailable(Exception):
    """Wire observation was requested for traffic that is not plaintext."""


@dataclass(frozen=True)
class SimUrl:
    """A scheme://host/path URL; the query string is part of the path."""

    scheme: str
    host: str
    path: str = "/"

    def __post_init__(self):
        if self.scheme not in ("http", "https"):
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if not self.host or self.host != self.host.lower() or not self.host.isascii():
            raise ValueError(f"host must be lowercase ASCII: {self.host!r}")
        if ":" in self.host:
            raise ValueError(f"ports are not modeled: {self.host!r}")
        if not self.path.startswith("/") or not self.path.isascii():
            raise ValueError(f"path must be ASCII and start with '/': {self.path[:40]!r}")

    @classmethod
    def parse(cls, text: str) -> SimUrl:
        parts = urlsplit(text)
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        return cls(parts.scheme, parts.netloc, path)

    @property
    def origin(self) -> str:
        return f"{self.scheme}://{self.host}"

    @property
    def full(self) -> str:
        return self.origin + self.path

    @property
    def resource_path(self) -> str:
        """The path without its query string; resources are keyed by this."""
        return self.path.split("?", 1)[0]

    def query_params(self) -> dict[str, str]:
        if "?" not in self.path:
            return {}
        return dict(parse_qsl(self.path.split("?", 1)[1], keep_blank_values=True))


def padded_path(byte_count: int, tail: str = "/attack") -> str:
    """A path of exactly 1 + byte_count + len(tail) bytes: "/xxx...x/attack"."""
    return "/" + "x" * byte_count + tail


class ResourceKind(Enum):
    PUBLIC = "public"
    AUTH_REQUIRED = "auth_required"
    OPEN_REDIRECT = "open_redirect"
    CONDITIONAL_REDIRECT = "conditional_redirect"
    UPLOAD_ECHO = "upload_echo"


@dataclass(frozen=True)
class Resource:
    """One server endpoint. Use the factory methods; kinds need different fields."""

    kind: ResourceKind
    cookie_name: str | None = None
    redirect_to: str | None = None

    def __post_init__(self):
        needs_cookie = self.kind in (ResourceKind.AUTH_REQUIRED, ResourceKind.CONDITIONAL_REDIRECT)
        if needs_cookie and not self.cookie_name:
            raise SimConfigError(f"{self.kind.value} resource needs a cookie_name")
        if self.kind is ResourceKind.CONDITIONAL_REDIRECT and not self.redirect_to:
            raise SimConfigError("conditional_redirect resource needs a redirect_to URL")

    @classmethod
    def public(cls) -> Resource:
        return cls(ResourceKind.PUBLIC)

    @classmethod
    def auth_required(cls, cookie_name: str) -> Resource:
        return cls(ResourceKind.AUTH_REQUIRED, cookie_name=cookie_name)

    @classmethod
    def open_redirect(cls) -> Resource:
        """302 to the URL in the "to" query parameter, forwarding seen cookie names."""
        return cls(ResourceKind.OPEN_REDIRECT)

    @classmethod
    def conditional_redirect(cls, cookie_name: str, redirect_to: str) -> Resource:
        """200 when the named cookie arrives, 302 to redirect_to when it does not."""
        return cls(ResourceKind.CONDITIONAL_REDIRECT, cookie_name=cookie_name, redirect_to=redirect_to)

    @classmethod
    def upload_echo(cls) -> Resource:
        """A stored attacker document that reports the Referer it was loaded with."""
        return cls(ResourceKind.UPLOAD_ECHO)


@dataclass(frozen=True)
class SearchApp:
    """A search page that fetches from a separate media host iff results exist.

    ``inverted`` flips the polarity: the media resource is fetched only
    when the result set is empty. The media fetch is deferred until the
    results page has been open past the strike window, modeling a page
    the victim keeps open.
    """

    store: tuple[str, ...]
    media_host: str
    media_path: str = "/media/logo.png"
    results_path: str = "/search"
    inverted: bool = False

    def results_for(self, query: str) -> tuple[str, ...]:
        needle = query.lower()
        return tuple(item for item in self.store if needle in item.lower())

    def fetches_media(self, query: str) -> bool:
        return bool(self.results_for(query)) != self.inverted


@dataclass(frozen=True)
class ServerBehavior:
    """Per-host behavior: scheme, request-head size limit, endpoints, cookies."""

    scheme: str = "https"
    max_request_bytes: int = 8192
    resources: dict[str, Resource] = field(default_factory=dict)
    cookies_on_visit: tuple[tuple[str, str], ...] = ()
    search_app: SearchApp | None = None

    def __post_init__(self):
        if self.scheme not in ("http", "https"):
            raise SimConfigError(f"unsupported scheme {self.scheme!r}")
        if not MIN_REQUEST_BYTES_LIMIT <= self.max_request_bytes <= MAX_REQUEST_BYTES_LIMIT:
            raise SimConfigError(
                f"max_request_bytes {self.max_request_bytes} outside "
                f"[{MIN_REQUEST_BYTES_LIMIT}, {MAX_REQUEST_BYTES_LIMIT}]"
            )
        for path in self.resources:
            if not path.startswith("/"):
                raise SimConfigError(f"resource path must start with '/': {path!r}")


@dataclass(frozen=True)
class SimRequest:
    """One HTTP request as delivered to a server.

    initiator_* describe the document that issued the request; the
    registrable domains are precomputed so the state machine never needs
    PSL access.
    """

    url: SimUrl
    referer: str
    cookies: tuple[tuple[str, str], ...]
    initiator_origin: str
    initiator_site: RegistrableDomain
    target_site: RegistrableDomain
    method: str = "GET"

    def cookie_header(self) -> str:
        return " ".join(f"{name}={value};" for name, value in self.cookies)

    def serialize_head(self) -> str:
        lines = [
            f"{self.method} {self.url.path} HTTP/1.1\r\n",
            f"Host: {self.url.host}\r\n",
        ]
        if self.referer:
            lines.append(f"Referer: {self.referer}\r\n")
        if self.cookies:
            lines.append(f"Cookie: {self.cookie_header()}\r\n")
        lines.append("\r\n")
        return "".join(lines)

    def head_size(self) -> int:
        """len(serialize_head()) without building the string; paths can be huge."""
        size = len(self.method) + 1 + len(self.url.path) + 11  # "M path HTTP/1.1\r\n"
        size += 6 + len(self.url.host) + 2
        if self.referer:
            size += 9 + len(self.referer) + 2
        if self.cookies:
            pairs = sum(len(n) + len(v) + 2 for n, v in self.cookies)  # "n=v;"
            size += 8 + pairs + len(self.cookies) - 1 + 2  # joined by " "
        return size + 2


@dataclass(frozen=True)
class SimResponse:
    status: int
    location: str | None = None
    body: str = ""


class OutcomeKind(Enum):
    LOADED = "loaded"
    ERRORED = "errored"
    REDIRECTED = "redirected"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class LoadOutcome:
    """What the fetching document observes, plus the final on-wire request.

    ``body`` is only meaningful to an attacker for self-authored content
    (the uploaded echo document); ``on_wire`` is only readable through
    observe_wire, which gates on plaintext transport.
    """

    kind: OutcomeKind
    status: int | None
    on_wire: SimRequest
    redirect_origin: str | None = None
    body: str = ""


@dataclass(frozen=True)
class WireObservation:
    cookies_present: bool
    referer_full: bool


def observe_wire(outcome: LoadOutcome) -> WireObservation:
    """What a network observer saw on the final request. Plaintext only."""
    request = outcome.on_wire
    if request.url.scheme != "http":
        raise ObservationUnavailable(f"{request.url.origin} traffic is not plaintext")
    return WireObservation(
        cookies_present=bool(request.cookies),
        referer_full=request.referer != request.initiator_origin,
    )


class CookieJar:
    """First-party cookies, keyed by the registrable domain that set them."""

    def __init__(self):
        self._cookies: dict[RegistrableDomain, dict[str, str]] = {}

    def set_cookie(self, site: RegistrableDomain, name: str, value: str) -> None:
        self._cookies.setdefault(site, {})[name] = value

    def cookies_for(self, site: RegistrableDomain) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self._cookies.get(site, {}).items()))

    def has_cookie(self, site: RegistrableDomain, name: str) -> bool:
        return name in self._cookies.get(site, {})

    def sites(self) -> tuple[RegistrableDomain, ...]:
        return tuple(sorted(site for site, pairs in self._cookies.items() if pairs))


@dataclass
class Document:
    """An open page. Closing it cancels its deferred loads."""

    url: SimUrl
    site: RegistrableDomain
    created_at: float
    closed: bool = False
    # (due_age, target SimUrl) pairs fired by advance_clock.
    pending_loads: list[tuple[float, SimUrl]] = field(default_factory=list)

    def age(self, now: float) -> float:
        return now - self.created_at


class World:
    """The single mutable simulation: servers, clock, jar, documents, ITP state.

    Tests and the harness may read ``itp_state`` as ground truth; attack
    code goes through the access wrapper in the probes module, which
    hides it.
    """

    def __init__(
        self,
        servers: dict[str, ServerBehavior],
        itp_config: itp_core.ItpConfig | None = None,
        rules: PublicSuffixRuleSet | None = None,
        seed: int = 0,
    ):
        self._rules = rules if rules is not None else embedded_rules()
        self._servers: dict[str, ServerBehavior] = {}
        self._sites: dict[str, RegistrableDomain] = {}
        self._state = itp_core.ItpState.fresh(itp_config, seed=seed)
        self._clock = 0.0
        self.jar = CookieJar()
        self._documents: list[Document] = []
        self._request_logs: dict[str, list[tuple[SimRequest, int]]] = {}
        for host, behavior in servers.items():
            self._register(host, behavior)
        for host, behavior in self._servers.items():
            app = behavior.search_app
            if app is not None and app.media_host not in self._servers:
                raise SimConfigError(f"search app on {host} uses unregistered {app.media_host}")

    def _register(self, host: str, behavior: ServerBehavior) -> None:
        if host != host.lower() or not host.isascii():
            raise SimConfigError(f"host must be lowercase ASCII: {host!r}")
        try:
            self._sites[host] = registrable_domain(host, self._rules)
        except ValueError as exc:
            raise SimConfigError(f"host {host!r} has no registrable domain: {exc}") from exc
        self._servers[host] = behavior
        self._request_logs[host] = []

    # -- read-only views ---------------------------------------------------

    @property
    def itp_state(self) -> itp_core.ItpState:
        """Ground truth. For tests, reports and world setup; never for attacks."""
        return self._state

    @property
    def clock(self) -> float:
        return self._clock

    @property
    def rules(self) -> PublicSuffixRuleSet:
        return self._rules

    def hosts(self) -> tuple[str, ...]:
        return tuple(sorted(self._servers))

    def server_for(self, host: str) -> ServerBehavior:
        try:
            return self._servers[host]
        except KeyError:
            raise SimConfigError(f"no server registered for host {host!r}") from None

    def site_of(self, host: str) -> RegistrableDomain:
        self.server_for(host)
        return self._sites[host]

    def received_requests(self, host: str) -> tuple[tuple[SimRequest, int], ...]:
        """Everything the host's server saw: (request as delivered, status returned)."""
        self.server_for(host)
        return tuple(self._request_logs[host])

    # -- browsing actions --------------------------------------------------

    def navigate(self, url: SimUrl | str) -> Document:
        """Open a first-party document; the server's visit cookies land in the jar."""
        url = self._resolve(url)
        behavior = self._lookup(url)
        site = self._sites[url.host]
        for name, value in behavior.cookies_on_visit:
            self.jar.set_cookie(site, name, value)
        doc = Document(url=url, site=site, created_at=self._clock)
        self._documents.append(doc)
        request = SimRequest(
            url=url,
            referer="",
            cookies=self.jar.cookies_for(site),
            initiator_origin=url.origin,
            initiator_site=site,
            target_site=site,
        )
        self._request_logs[url.host].append((request, 200))
        app = behavior.search_app
        if app is not None and url.resource_path == app.results_path:
            query = url.query_params().get("q", "")
            if app.fetches_media(query):
                media_server = self.server_for(app.media_host)
                media_url = SimUrl(media_server.scheme, app.media_host, app.media_path)
                due = self._state.config.short_lived_window
                doc.pending_loads.append((due, media_url))
        return doc

    def open_window(self, url: SimUrl | str) -> Document:
        """A cross-site window/frame open; same mechanics as navigate."""
        return self.navigate(url)

    def close_document(self, doc: Document) -> None:
        doc.closed = True
        doc.pending_loads.clear()

    def fetch(self, doc: Document, target: SimUrl | str, follow_redirects: bool = True) -> LoadOutcome:
        """Fetch a subresource from ``doc``; the one pipeline every probe rides.

        Per hop: apply restrictions, deliver (413 before resource
        dispatch), log, record the strike at the document's current age,
        then follow or surface any redirect.
        """
        if doc.closed:
            raise UsageError("fetch from a closed document")
        url = self._resolve(target)
        hops = 0
        while True:
            self._lookup(url)
            request = self._build_request(doc, url)
            request = itp_core.apply_restrictions(self._state, request)
            response = self._deliver(request)
            self._request_logs[url.host].append((request, response.status))
            self._state = itp_core.record_cross_site_load(
                self._state, request.initiator_site, request.target_site, doc.age(self._clock)
            )
            if 300 <= response.status < 400 and response.location:
                if not follow_redirects and self._state.config.manual_redirect_enabled:
                    return LoadOutcome(
                        kind=OutcomeKind.REDIRECTED,
                        status=response.status,
                        on_wire=request,
                        redirect_origin=self._resolve(response.location, base=url).origin,
                    )
                hops += 1
                if hops > MAX_REDIRECT_HOPS:
                    return LoadOutcome(kind=OutcomeKind.BLOCKED, status=None, on_wire=request)
                url = self._resolve(response.location, base=url)
                continue
            kind = OutcomeKind.LOADED if 200 <= response.status < 300 else OutcomeKind.ERRORED
            return LoadOutcome(kind=kind, status=response.status, on_wire=request, body=response.body)

    def advance_clock(self, seconds: float) -> None:
        """Move time forward and fire any deferred loads that come due."""
        if seconds < 0:
            raise UsageError("the clock only moves forward")
        self._clock += seconds
        for doc in self._documents:
            if doc.closed or not doc.pending_loads:
                continue
            due = [entry for entry in doc.pending_loads if doc.age(self._clock) >= entry[0]]
            for entry in due:
                doc.pending_loads.remove(entry)
                self.fetch(doc, entry[1])

    def clear_history(self) -> None:
        """The user clears history: all tracking state goes, cookies stay."""
        self._state = itp_core.clear_history(self._state)

    def enter_private_session(self) -> None:
        """Switch to a private session: fresh tracking state, fresh jar, no pages."""
        self._state = itp_core.fork_private_session(self._state)
        self.jar = CookieJar()
        for doc in self._documents:
            self.close_document(doc)

    # -- internals -----------------------------------------------------------

    def _resolve(self, target: SimUrl | str, base: SimUrl | None = None) -> SimUrl:
        if isinstance(target, SimUrl):
            return target
        if base is not None and target.startswith("/"):
            # Path-only redirect targets resolve against the responding URL.
            target = f"{base.origin}{target}"
        try:
            return SimUrl.parse(target)
        except ValueError as exc:
            raise SimConfigError(f"bad URL {target!r}: {exc}") from exc

    def _lookup(self, url: SimUrl) -> ServerBehavior:
        behavior = self.server_for(url.host)
        if behavior.scheme != url.scheme:
            raise SimConfigError(f"{url.host} is served over {behavior.scheme}, not {url.scheme}")
        return behavior

    def _build_request(self, doc: Document, url: SimUrl) -> SimRequest:
        target_site = self._sites[url.host]
        return SimRequest(
            url=url,
            referer=doc.url.full,
            cookies=self.jar.cookies_for(target_site),
            initiator_origin=doc.url.origin,
            initiator_site=doc.site,
            target_site=target_site,
        )

    def _deliver(self, request: SimRequest) -> SimResponse:
        behavior = self._servers[request.url.host]
        if request.head_size() > behavior.max_request_bytes:
            return SimResponse(status=413, body="Request entity too large")
        resource = behavior.resources.get(request.url.resource_path)
        if resource is None:
            return SimResponse(status=404, body="Not found")
        return self._execute(resource, request)

    def _execute(self, resource: Resource, request: SimRequest) -> SimResponse:
        sent_names = {name for name, _ in request.cookies}
        if resource.kind is ResourceKind.PUBLIC:
            return SimResponse(status=200, body="ok")
        if resource.kind is ResourceKind.AUTH_REQUIRED:
            if resource.cookie_name in sent_names:
                return SimResponse(status=200, body="ok (authenticated)")
            return SimResponse(status=403, body="Missing credentials")
        if resource.kind is ResourceKind.OPEN_REDIRECT:
            to = request.url.query_params().get("to")
            if not to:
                return SimResponse(status=400, body="Missing 'to' parameter")
            # Models redirectors that propagate identity: the names of the
            # cookies seen on the incoming hop ride along in the location.
            forwarded = quote(",".join(sorted(sent_names)), safe=",")
            separator = "&" if "?" in to else "?"
            return SimResponse(status=302, location=f"{to}{separator}fwd_cookies={forwarded}")
        if resource.kind is ResourceKind.CONDITIONAL_REDIRECT:
            if resource.cookie_name in sent_names:
                return SimResponse(status=200, body="ok (authenticated)")
            return SimResponse(status=302, location=resource.redirect_to)
        if resource.kind is ResourceKind.UPLOAD_ECHO:
            # Stands in for an uploaded attacker document that reads its own
            # document.referrer and reports it; transport back is elided.
            return SimResponse(status=200, body=f"referrer-echo:{request.referer}")
        raise AssertionError(f"unhandled resource kind {resource.kind}")
