"""Line-oriented scenario files and their deterministic runner.

A scenario file declares a world (suffix rules, tracking-prevention
configuration, servers, actor ownership) followed by a script of
actions. One line is one declaration or action; "#" starts a comment.

Declarations::

    scenario <name>
    seed <u64>
    psl embedded | psl <path>
    itp threshold <int>
    itp window <seconds>
    itp referer-cap <bytes>|none
    itp manual-redirect on|off
    itp jitter <int>|none
    server <host> [scheme=http|https] [limit=<bytes>]
    resource <host> <path> public
    resource <host> <path> auth <cookie>
    resource <host> <path> open-redirect
    resource <host> <path> conditional-redirect <cookie> <to>
    resource <host> <path> upload-echo
    visit-cookie <host> <name> <value>
    search-app <host> media=<host> [media-path=<path>] [results-path=<path>]
               [polarity=normal|inverted]
    search-item <host> <text ...>
    actor attacker|victim|pins <host> [<host> ...]
    matrix <key> <value>

Script actions::

    navigate <actor> <doc> <url>
    open-window <actor> <url>
    fetch <actor> <doc> <url> [no-follow] [expect <kind> [<status>]]
    advance <seconds>
    close <doc>
    clear-history
    fork-private
    probe <channel>|auto <origin> <target> [expect <verdict>]
    attack1 <origin> candidates=<a,b,..> [expect-on-list=<a,b,..>|none]
    attack2 <origin> target=<site> first-parties=<a,b,..> [threshold=<n>]
            [expect-prior=<n>]
    attack3-write <origin> value=<int> pins=<a,b,..> first-parties=<a,b,..>
    attack3-read <origin> pins=<a,b,..> [expect-value=<int>]
    attack4 target=<site> first-parties=<a,b,..>
    attack5 <origin> app=<host> query=<text> first-parties=<a,b>
            [expect-results=true|false]
    expect-prevalent <site> true|false
    expect-strikes <site> <int>

``<N>`` inside a URL expands to a path padded to N bytes, so fixtures
can express oversized referring documents without kilobyte lines.

Every host referenced anywhere must be declared with ``server``, and the
actor sets must partition the declared hosts. Attacker-tagged actions go
through the restricted attacker view; victim actions drive the world
directly. Reports carry every event and expectation outcome and are
byte-stable across runs of the same file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import itp_core
from .attacks import (
    AttackError,
    FingerprintId,
    attack1_reveal_list,
    attack2_count_strikes,
    attack3_read_fingerprint,
    attack3_write_fingerprint,
    attack4_force_onto_list,
    attack5_xs_search,
    probe_domain,
    run_channel,
)
from .itp_core import ItpConfig
from .probes import ALL_CHANNELS, AttackerView, Verdict
from .psl import PublicSuffixRuleSet, load_rules
from .web_sim import (
    OutcomeKind,
    Resource,
    SearchApp,
    ServerBehavior,
    SimConfigError,
    SimUrl,
    UsageError,
    World,
    padded_path,
)

ACTORS = ("attacker", "victim", "pins")

_PAD_MARKER = re.compile(r"<(\d+)>")


class ScenarioParseError(Exception):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ScenarioRunError(Exception):
    """A script action failed at run time; carries the offending line."""


@dataclass
class _ServerDraft:
    scheme: str = "https"
    limit: int = 8192
    resources: dict[str, Resource] = field(default_factory=dict)
    cookies: list[tuple[str, str]] = field(default_factory=list)
    app_media: str | None = None
    app_media_path: str = "/media/logo.png"
    app_results_path: str = "/search"
    app_inverted: bool = False
    app_items: list[str] = field(default_factory=list)

    def build(self) -> ServerBehavior:
        app = None
        if self.app_media is not None:
            app = SearchApp(
                store=tuple(self.app_items),
                media_host=self.app_media,
                media_path=self.app_media_path,
                results_path=self.app_results_path,
                inverted=self.app_inverted,
            )
        return ServerBehavior(
            scheme=self.scheme,
            max_request_bytes=self.limit,
            resources=dict(self.resources),
            cookies_on_visit=tuple(self.cookies),
            search_app=app,
        )


@dataclass(frozen=True)
class Action:
    line_no: int
    op: str
    args: dict


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    psl_source: str | None  # None means the embedded snapshot
    itp: ItpConfig
    servers: dict[str, ServerBehavior]
    actors: dict[str, tuple[str, ...]]
    matrix_params: dict[str, str]
    script: tuple[Action, ...]

    def actor_of(self, host: str) -> str:
        for actor, hosts in self.actors.items():
            if host in hosts:
                return actor
        raise KeyError(host)

    @property
    def attacker_hosts(self) -> frozenset[str]:
        """Hosts the attacker operates: attacker origins plus pin servers."""
        return frozenset(self.actors["attacker"]) | frozenset(self.actors["pins"])


def _expand_url(token: str) -> str:
    return _PAD_MARKER.sub(lambda m: padded_path(int(m.group(1))), token)


def _split_kv(tokens: list[str], line_no: int) -> dict[str, str]:
    pairs = {}
    for token in tokens:
        if "=" not in token:
            raise ScenarioParseError(line_no, f"expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        if key in pairs:
            raise ScenarioParseError(line_no, f"duplicate argument {key!r}")
        pairs[key] = value
    return pairs


def _take(pairs: dict[str, str], key: str, line_no: int) -> str:
    try:
        return pairs.pop(key)
    except KeyError:
        raise ScenarioParseError(line_no, f"missing required argument {key}=") from None


def _host_list(raw: str) -> tuple[str, ...]:
    return tuple(part for part in raw.split(",") if part)


def _no_leftovers(pairs: dict[str, str], line_no: int) -> None:
    if pairs:
        raise ScenarioParseError(line_no, f"unknown argument {sorted(pairs)[0]!r}")


class _Parser:
    def __init__(self, text: str, default_name: str):
        self.lines = text.splitlines()
        self.name = default_name
        self.seed = 0
        self.psl_source: str | None = None
        self.itp_fields: dict = {}
        self.drafts: dict[str, _ServerDraft] = {}
        self.actors: dict[str, list[str]] = {actor: [] for actor in ACTORS}
        self.matrix_params: dict[str, str] = {}
        self.script: list[Action] = []

    def parse(self) -> Scenario:
        for line_no, raw in enumerate(self.lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            handler = getattr(self, "_p_" + tokens[0].replace("-", "_"), None)
            if handler is None:
                raise ScenarioParseError(line_no, f"unknown directive {tokens[0]!r}")
            handler(tokens[1:], line_no)
        return self._finish()

    # -- declarations --------------------------------------------------------

    def _p_scenario(self, rest, line_no):
        if len(rest) != 1:
            raise ScenarioParseError(line_no, "scenario takes exactly one name")
        self.name = rest[0]

    def _p_seed(self, rest, line_no):
        try:
            (value,) = rest
            self.seed = int(value)
        except ValueError:
            raise ScenarioParseError(line_no, "seed takes one integer") from None

    def _p_psl(self, rest, line_no):
        if len(rest) != 1:
            raise ScenarioParseError(line_no, "psl takes 'embedded' or a path")
        self.psl_source = None if rest[0] == "embedded" else rest[0]

    def _p_itp(self, rest, line_no):
        if len(rest) != 2:
            raise ScenarioParseError(line_no, "itp takes a field and a value")
        key, value = rest
        try:
            if key == "threshold":
                self.itp_fields["prevalence_threshold"] = int(value)
            elif key == "window":
                self.itp_fields["short_lived_window"] = float(value)
            elif key == "referer-cap":
                self.itp_fields["referer_length_cap"] = None if value == "none" else int(value)
            elif key == "manual-redirect":
                if value not in ("on", "off"):
                    raise ScenarioParseError(line_no, "manual-redirect is on or off")
                self.itp_fields["manual_redirect_enabled"] = value == "on"
            elif key == "jitter":
                self.itp_fields["threshold_jitter"] = None if value == "none" else int(value)
            else:
                raise ScenarioParseError(line_no, f"unknown itp field {key!r}")
        except ValueError:
            raise ScenarioParseError(line_no, f"bad itp {key} value {value!r}") from None

    def _p_server(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "server needs a host")
        host = rest[0]
        if host in self.drafts:
            raise ScenarioParseError(line_no, f"server {host} declared twice")
        draft = _ServerDraft()
        pairs = _split_kv(rest[1:], line_no)
        if "scheme" in pairs:
            draft.scheme = pairs.pop("scheme")
        if "limit" in pairs:
            try:
                draft.limit = int(pairs.pop("limit"))
            except ValueError:
                raise ScenarioParseError(line_no, "limit must be an integer") from None
        _no_leftovers(pairs, line_no)
        self.drafts[host] = draft

    def _draft(self, host: str, line_no: int) -> _ServerDraft:
        try:
            return self.drafts[host]
        except KeyError:
            raise ScenarioParseError(line_no, f"host {host} has no server declaration") from None

    def _p_resource(self, rest, line_no):
        if len(rest) < 3:
            raise ScenarioParseError(line_no, "resource needs host, path and kind")
        host, path, kind, *extra = rest
        draft = self._draft(host, line_no)
        if kind == "public" and not extra:
            resource = Resource.public()
        elif kind == "auth" and len(extra) == 1:
            resource = Resource.auth_required(extra[0])
        elif kind == "open-redirect" and not extra:
            resource = Resource.open_redirect()
        elif kind == "conditional-redirect" and len(extra) == 2:
            resource = Resource.conditional_redirect(extra[0], extra[1])
        elif kind == "upload-echo" and not extra:
            resource = Resource.upload_echo()
        else:
            raise ScenarioParseError(line_no, f"bad resource kind/arguments: {kind} {extra}")
        draft.resources[path] = resource

    def _p_visit_cookie(self, rest, line_no):
        if len(rest) != 3:
            raise ScenarioParseError(line_no, "visit-cookie needs host, name and value")
        host, name, value = rest
        self._draft(host, line_no).cookies.append((name, value))

    def _p_search_app(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "search-app needs a host")
        draft = self._draft(rest[0], line_no)
        pairs = _split_kv(rest[1:], line_no)
        draft.app_media = _take(pairs, "media", line_no)
        draft.app_media_path = pairs.pop("media-path", draft.app_media_path)
        draft.app_results_path = pairs.pop("results-path", draft.app_results_path)
        polarity = pairs.pop("polarity", "normal")
        if polarity not in ("normal", "inverted"):
            raise ScenarioParseError(line_no, "polarity is normal or inverted")
        draft.app_inverted = polarity == "inverted"
        _no_leftovers(pairs, line_no)

    def _p_search_item(self, rest, line_no):
        if len(rest) < 2:
            raise ScenarioParseError(line_no, "search-item needs a host and text")
        self._draft(rest[0], line_no).app_items.append(" ".join(rest[1:]))

    def _p_actor(self, rest, line_no):
        if len(rest) < 2 or rest[0] not in ACTORS:
            raise ScenarioParseError(line_no, f"actor needs one of {ACTORS} and hosts")
        self.actors[rest[0]].extend(rest[1:])

    def _p_matrix(self, rest, line_no):
        if len(rest) != 2:
            raise ScenarioParseError(line_no, "matrix takes a key and a value")
        self.matrix_params[rest[0]] = rest[1]

    # -- script actions ------------------------------------------------------

    def _add(self, line_no, op, **args):
        self.script.append(Action(line_no, op, args))

    def _parse_url(self, token: str, line_no: int) -> SimUrl:
        try:
            return SimUrl.parse(_expand_url(token))
        except ValueError as exc:
            raise ScenarioParseError(line_no, f"bad URL {token!r}: {exc}") from None

    def _p_navigate(self, rest, line_no):
        if len(rest) != 3 or rest[0] not in ("attacker", "victim"):
            raise ScenarioParseError(line_no, "navigate takes actor, doc name and URL")
        url = self._parse_url(rest[2], line_no)
        self._add(line_no, "navigate", actor=rest[0], doc=rest[1], url=url)

    def _p_open_window(self, rest, line_no):
        if len(rest) != 2 or rest[0] not in ("attacker", "victim"):
            raise ScenarioParseError(line_no, "open-window takes actor and URL")
        self._add(line_no, "open-window", actor=rest[0], url=self._parse_url(rest[1], line_no))

    def _p_fetch(self, rest, line_no):
        if len(rest) < 3 or rest[0] not in ("attacker", "victim"):
            raise ScenarioParseError(line_no, "fetch takes actor, doc, URL")
        actor, doc, url_token, *rest = rest
        follow = True
        if rest and rest[0] == "no-follow":
            follow = False
            rest = rest[1:]
        expect = None
        if rest:
            if rest[0] != "expect" or len(rest) not in (2, 3):
                raise ScenarioParseError(line_no, "trailing fetch arguments must be: expect <kind> [<status>]")
            kinds = {k.name.lower(): k for k in OutcomeKind}
            if rest[1] not in kinds:
                raise ScenarioParseError(line_no, f"unknown outcome kind {rest[1]!r}")
            status = None
            if len(rest) == 3:
                try:
                    status = int(rest[2])
                except ValueError:
                    raise ScenarioParseError(line_no, "expected numeric status") from None
            expect = (kinds[rest[1]], status)
        self._add(
            line_no, "fetch", actor=actor, doc=doc,
            url=self._parse_url(url_token, line_no), follow=follow, expect=expect,
        )

    def _p_advance(self, rest, line_no):
        try:
            (value,) = rest
            self._add(line_no, "advance", seconds=float(value))
        except ValueError:
            raise ScenarioParseError(line_no, "advance takes one number of seconds") from None

    def _p_close(self, rest, line_no):
        if len(rest) != 1:
            raise ScenarioParseError(line_no, "close takes a doc name")
        self._add(line_no, "close", doc=rest[0])

    def _p_clear_history(self, rest, line_no):
        if rest:
            raise ScenarioParseError(line_no, "clear-history takes no arguments")
        self._add(line_no, "clear-history")

    def _p_fork_private(self, rest, line_no):
        if rest:
            raise ScenarioParseError(line_no, "fork-private takes no arguments")
        self._add(line_no, "fork-private")

    def _p_probe(self, rest, line_no):
        if len(rest) not in (3, 5):
            raise ScenarioParseError(line_no, "probe takes channel, origin, target [expect <verdict>]")
        channel, origin, target = rest[:3]
        if channel != "auto" and channel not in ALL_CHANNELS:
            raise ScenarioParseError(line_no, f"unknown channel {channel!r}")
        expect = None
        if len(rest) == 5:
            if rest[3] != "expect":
                raise ScenarioParseError(line_no, "expected: expect <verdict>")
            verdicts = {v.value.replace("_", "-"): v for v in Verdict}
            if rest[4] not in verdicts:
                raise ScenarioParseError(line_no, f"unknown verdict {rest[4]!r}")
            expect = verdicts[rest[4]]
        self._add(line_no, "probe", channel=channel, origin=origin, target=target, expect=expect)

    def _p_attack1(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "attack1 needs an origin")
        pairs = _split_kv(rest[1:], line_no)
        candidates = _host_list(_take(pairs, "candidates", line_no))
        expect_raw = pairs.pop("expect-on-list", None)
        _no_leftovers(pairs, line_no)
        expect = None
        if expect_raw is not None:
            expect = () if expect_raw == "none" else tuple(sorted(_host_list(expect_raw)))
        self._add(line_no, "attack1", origin=rest[0], candidates=candidates, expect=expect)

    def _p_attack2(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "attack2 needs an origin")
        pairs = _split_kv(rest[1:], line_no)
        target = _take(pairs, "target", line_no)
        first_parties = _host_list(_take(pairs, "first-parties", line_no))
        threshold = pairs.pop("threshold", None)
        expect_prior = pairs.pop("expect-prior", None)
        _no_leftovers(pairs, line_no)
        try:
            threshold = None if threshold is None else int(threshold)
            expect_prior = None if expect_prior is None else int(expect_prior)
        except ValueError:
            raise ScenarioParseError(line_no, "threshold and expect-prior must be integers") from None
        self._add(
            line_no, "attack2", origin=rest[0], target=target,
            first_parties=first_parties, threshold=threshold, expect_prior=expect_prior,
        )

    def _p_attack3_write(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "attack3-write needs an origin")
        pairs = _split_kv(rest[1:], line_no)
        try:
            value = int(_take(pairs, "value", line_no))
        except ValueError:
            raise ScenarioParseError(line_no, "value must be an integer") from None
        pins = _host_list(_take(pairs, "pins", line_no))
        first_parties = _host_list(_take(pairs, "first-parties", line_no))
        _no_leftovers(pairs, line_no)
        self._add(
            line_no, "attack3-write", origin=rest[0], value=value,
            pins=pins, first_parties=first_parties,
        )

    def _p_attack3_read(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "attack3-read needs an origin")
        pairs = _split_kv(rest[1:], line_no)
        pins = _host_list(_take(pairs, "pins", line_no))
        expect_value = pairs.pop("expect-value", None)
        _no_leftovers(pairs, line_no)
        try:
            expect_value = None if expect_value is None else int(expect_value)
        except ValueError:
            raise ScenarioParseError(line_no, "expect-value must be an integer") from None
        self._add(line_no, "attack3-read", origin=rest[0], pins=pins, expect_value=expect_value)

    def _p_attack4(self, rest, line_no):
        pairs = _split_kv(rest, line_no)
        target = _take(pairs, "target", line_no)
        first_parties = _host_list(_take(pairs, "first-parties", line_no))
        _no_leftovers(pairs, line_no)
        self._add(line_no, "attack4", target=target, first_parties=first_parties)

    def _p_attack5(self, rest, line_no):
        if not rest:
            raise ScenarioParseError(line_no, "attack5 needs an origin")
        pairs = _split_kv(rest[1:], line_no)
        app_host = _take(pairs, "app", line_no)
        query = _take(pairs, "query", line_no)
        first_parties = _host_list(_take(pairs, "first-parties", line_no))
        expect_raw = pairs.pop("expect-results", None)
        _no_leftovers(pairs, line_no)
        if expect_raw not in (None, "true", "false"):
            raise ScenarioParseError(line_no, "expect-results is true or false")
        self._add(
            line_no, "attack5", origin=rest[0], app=app_host, query=query,
            first_parties=first_parties,
            expect=None if expect_raw is None else expect_raw == "true",
        )

    def _p_expect_prevalent(self, rest, line_no):
        if len(rest) != 2 or rest[1] not in ("true", "false"):
            raise ScenarioParseError(line_no, "expect-prevalent takes a site and true|false")
        self._add(line_no, "expect-prevalent", site=rest[0], want=rest[1] == "true")

    def _p_expect_strikes(self, rest, line_no):
        try:
            site, count = rest
            self._add(line_no, "expect-strikes", site=site, want=int(count))
        except ValueError:
            raise ScenarioParseError(line_no, "expect-strikes takes a site and an integer") from None

    # -- validation ----------------------------------------------------------

    def _finish(self) -> Scenario:
        try:
            config = ItpConfig(**self.itp_fields)
        except ValueError as exc:
            raise ScenarioParseError(0, f"bad itp configuration: {exc}") from None
        servers = {}
        for host, draft in self.drafts.items():
            try:
                servers[host] = draft.build()
            except SimConfigError as exc:
                raise ScenarioParseError(0, f"server {host}: {exc}") from None

        tagged: dict[str, str] = {}
        for actor, hosts in self.actors.items():
            for host in hosts:
                if host not in self.drafts:
                    raise ScenarioParseError(0, f"actor {actor} lists undeclared host {host}")
                if host in tagged:
                    raise ScenarioParseError(0, f"host {host} tagged as both {tagged[host]} and {actor}")
                tagged[host] = actor
        untagged = sorted(set(self.drafts) - set(tagged))
        if untagged:
            raise ScenarioParseError(0, f"hosts belong to no actor: {', '.join(untagged)}")

        scenario = Scenario(
            name=self.name,
            seed=self.seed,
            psl_source=self.psl_source,
            itp=config,
            servers=servers,
            actors={actor: tuple(hosts) for actor, hosts in self.actors.items()},
            matrix_params=dict(self.matrix_params),
            script=tuple(self.script),
        )
        self._check_script_hosts(scenario)
        return scenario

    def _check_script_hosts(self, scenario: Scenario) -> None:
        for action in scenario.script:
            url = action.args.get("url")
            if url is None:
                continue
            if url.host not in scenario.servers:
                raise ScenarioParseError(action.line_no, f"URL references undeclared host {url.host}")
            if action.op in ("navigate", "open-window"):
                owner = scenario.actor_of(url.host)
                actor = action.args["actor"]
                allowed = ("attacker", "pins") if actor == "attacker" else ("victim",)
                # An attacker may point open-window anywhere; it models
                # triggering a navigation in the victim's session.
                if action.op == "open-window" and actor == "attacker":
                    continue
                if owner not in allowed:
                    raise ScenarioParseError(
                        action.line_no, f"{actor} cannot navigate {url.host} (owned by {owner})"
                    )


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    return _Parser(text, name).parse()


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)


# ---------------------------------------------------------------------------
# execution


def build_world(scenario: Scenario, psl_path: str | None = None, seed: int | None = None):
    """World plus attacker view for a parsed scenario, with CLI overrides."""
    source = psl_path if psl_path is not None else scenario.psl_source
    rules: PublicSuffixRuleSet | None = load_rules(source) if source is not None else None
    world = World(
        dict(scenario.servers),
        itp_config=scenario.itp,
        rules=rules,
        seed=scenario.seed if seed is None else seed,
    )
    return world, AttackerView(world, scenario.attacker_hosts)


@dataclass(frozen=True)
class Report:
    scenario: str
    seed: int
    events: tuple[dict, ...]
    expectations: tuple[dict, ...]
    final_state: dict

    @property
    def ok(self) -> bool:
        return all(entry["ok"] for entry in self.expectations)

    def to_structured(self) -> str:
        payload = {
            "scenario": self.scenario,
            "seed": self.seed,
            "ok": self.ok,
            "events": list(self.events),
            "expectations": list(self.expectations),
            "final_state": self.final_state,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"scenario {self.scenario} (seed {self.seed})"]
        for event in self.events:
            detail = {k: v for k, v in sorted(event.items()) if k not in ("line", "action")}
            lines.append(f"  line {event['line']:>3}  {event['action']}: {detail}")
        for entry in self.expectations:
            flag = "ok  " if entry["ok"] else "FAIL"
            lines.append(f"  [{flag}] line {entry['line']}: {entry['check']} (want {entry['want']!r}, got {entry['got']!r})")
        lines.append("final state:")
        lines.extend("  " + line for line in state_lines(self.final_state))
        lines.append("result: " + ("all expectations hold" if self.ok else "EXPECTATIONS FAILED"))
        return "\n".join(lines) + "\n"


def report_itp_state(world: World) -> dict:
    """Stable snapshot of the tracking state: every domain, sorted."""
    state = world.itp_state
    domains = sorted(set(state.ledger.strikes) | set(state.prevalent))
    return {
        "session": state.session_kind.value,
        "domains": [
            {
                "domain": domain,
                "strikes": state.ledger.size_of(domain),
                "sources": sorted(state.ledger.sources_of(domain)),
                "prevalent": domain in state.prevalent,
            }
            for domain in domains
        ],
    }


def state_lines(snapshot: dict) -> list[str]:
    lines = [f"session: {snapshot['session']}"]
    if not snapshot["domains"]:
        lines.append("(no tracked domains)")
    for entry in snapshot["domains"]:
        flag = "prevalent" if entry["prevalent"] else "tracked"
        sources = ", ".join(entry["sources"])
        lines.append(f"{entry['domain']}: {flag}, {entry['strikes']} strike(s) from [{sources}]")
    return lines


def _verdict_dict(verdict) -> dict:
    return {
        "verdict": verdict.verdict.value,
        "channel": verdict.channel,
        "destructive": verdict.destructive,
    }


class _Runner:
    """Executes a parsed script against a freshly built world."""

    def __init__(self, scenario: Scenario, world: World, view: AttackerView,
                 evaluate_expectations: bool = True):
        self.scenario = scenario
        self.world = world
        self.view = view
        self.evaluate = evaluate_expectations
        self.docs: dict[str, tuple] = {}
        self.events: list[dict] = []
        self.expectations: list[dict] = []

    def run(self) -> None:
        for action in self.scenario.script:
            handler = getattr(self, "_r_" + action.op.replace("-", "_"))
            try:
                handler(action)
            except (AttackError, SimConfigError, UsageError) as exc:
                raise ScenarioRunError(
                    f"line {action.line_no}: {action.op}: {exc}"
                ) from exc

    def _event(self, action: Action, **detail) -> None:
        self.events.append({"line": action.line_no, "action": action.op, **detail})

    def _expect(self, action: Action, check: str, want, got) -> None:
        if not self.evaluate:
            return
        self.expectations.append(
            {"line": action.line_no, "check": check, "want": want, "got": got, "ok": want == got}
        )

    def _doc(self, name: str, line_no: int):
        try:
            return self.docs[name]
        except KeyError:
            raise ScenarioRunError(f"line {line_no}: unknown document {name!r}") from None

    # -- world actions -------------------------------------------------------

    def _r_navigate(self, action: Action) -> None:
        actor, url = action.args["actor"], action.args["url"]
        doc = self.view.navigate(url) if actor == "attacker" else self.world.navigate(url)
        self.docs[action.args["doc"]] = (doc, actor)

    def _r_open_window(self, action: Action) -> None:
        if action.args["actor"] == "attacker":
            self.view.open_window(action.args["url"])
        else:
            self.world.open_window(action.args["url"])

    def _r_fetch(self, action: Action) -> None:
        doc, owner = self._doc(action.args["doc"], action.line_no)
        if action.args["actor"] != owner:
            raise ScenarioRunError(
                f"line {action.line_no}: document {action.args['doc']!r} belongs to {owner}"
            )
        runner = self.view if owner == "attacker" else self.world
        outcome = runner.fetch(doc, action.args["url"], follow_redirects=action.args["follow"])
        self._event(
            action, url=action.args["url"].full, kind=outcome.kind.name.lower(), status=outcome.status
        )
        if action.args["expect"] is not None:
            kind, status = action.args["expect"]
            self._expect(action, "fetch outcome", kind.name.lower(), outcome.kind.name.lower())
            if status is not None:
                self._expect(action, "fetch status", status, outcome.status)

    def _r_advance(self, action: Action) -> None:
        self.world.advance_clock(action.args["seconds"])

    def _r_close(self, action: Action) -> None:
        doc, _ = self._doc(action.args["doc"], action.line_no)
        self.world.close_document(doc)

    def _r_clear_history(self, action: Action) -> None:
        self.world.clear_history()

    def _r_fork_private(self, action: Action) -> None:
        self.world.enter_private_session()

    # -- probes and attacks ----------------------------------------------------

    def _r_probe(self, action: Action) -> None:
        channel, origin, target = action.args["channel"], action.args["origin"], action.args["target"]
        if channel == "auto":
            verdict = probe_domain(self.view, origin, target)
        else:
            verdict = run_channel(self.view, origin, target, channel)
        self._event(action, target=target, **_verdict_dict(verdict))
        if action.args["expect"] is not None:
            self._expect(action, f"probe {target}", action.args["expect"].value, verdict.verdict.value)
        truth = "on_list" if itp_core.is_prevalent(self.world.itp_state, target) else "not_on_list"
        if verdict.conclusive:
            self._expect(action, f"probe {target} ground truth", truth, verdict.verdict.value)

    def _r_attack1(self, action: Action) -> None:
        candidates = action.args["candidates"]
        truth_on = tuple(
            sorted(c for c in candidates if itp_core.is_prevalent(self.world.itp_state, c))
        )
        disclosure = attack1_reveal_list(self.view, action.args["origin"], candidates)
        self._event(
            action,
            verdicts={c: _verdict_dict(v) for c, v in sorted(disclosure.verdicts.items())},
            on_list=list(disclosure.on_list),
            inconclusive=list(disclosure.inconclusive),
        )
        conclusive_truth = tuple(d for d in truth_on if d not in disclosure.inconclusive)
        self._expect(action, "attack1 ground truth", conclusive_truth, disclosure.on_list)
        if action.args["expect"] is not None:
            self._expect(action, "attack1 on-list", action.args["expect"], disclosure.on_list)

    def _r_attack2(self, action: Action) -> None:
        target = action.args["target"]
        threshold = action.args["threshold"]
        if threshold is None:
            threshold = self.scenario.itp.prevalence_threshold
        prior_truth = self.world.itp_state.ledger.size_of(target)
        effective = itp_core.effective_threshold(self.world.itp_state, target)
        estimate = attack2_count_strikes(
            self.view, action.args["origin"], action.args["first_parties"], target,
            prevalence_threshold=threshold,
        )
        self._event(
            action, target=target, prior_strikes=estimate.prior_strikes,
            attacker_domains_spent=estimate.attacker_domains_spent,
        )
        self._expect(
            action, "attack2 ground truth", effective,
            prior_truth + estimate.attacker_domains_spent,
        )
        if action.args["expect_prior"] is not None:
            self._expect(action, "attack2 prior", action.args["expect_prior"], estimate.prior_strikes)

    def _r_attack3_write(self, action: Action) -> None:
        fingerprint = FingerprintId(action.args["value"], action.args["pins"])
        attack3_write_fingerprint(
            self.view, fingerprint, action.args["first_parties"], action.args["origin"]
        )
        state = self.world.itp_state
        written = tuple(
            itp_core.is_prevalent(state, pin) for pin in fingerprint.pin_domains
        )
        self._event(action, value=fingerprint.value, width=fingerprint.width)
        self._expect(action, "attack3 write ground truth", fingerprint.bits, written)

    def _r_attack3_read(self, action: Action) -> None:
        pins = action.args["pins"]
        before = self.world.itp_state
        readout = attack3_read_fingerprint(self.view, action.args["origin"], pins)
        truth = tuple(itp_core.is_prevalent(before, pin) for pin in pins)
        self._event(
            action, value=readout.value,
            bits=["?" if b is None else int(b) for b in readout.bits],
        )
        known = tuple(b for b in readout.bits if b is not None)
        known_truth = tuple(t for t, b in zip(truth, readout.bits) if b is not None)
        self._expect(action, "attack3 read ground truth", known_truth, known)
        self._expect(action, "attack3 read non-destructive", True, before == self.world.itp_state)
        if action.args["expect_value"] is not None:
            self._expect(action, "attack3 value", action.args["expect_value"], readout.value)

    def _r_attack4(self, action: Action) -> None:
        target = action.args["target"]
        attack4_force_onto_list(self.view, action.args["first_parties"], target)
        self._event(action, target=target)
        self._expect(
            action, "attack4 ground truth", True,
            itp_core.is_prevalent(self.world.itp_state, target),
        )

    def _r_attack5(self, action: Action) -> None:
        app_host = action.args["app"]
        app = self.scenario.servers[app_host].search_app
        if app is None:
            raise ScenarioRunError(f"line {action.line_no}: {app_host} serves no search application")
        result = attack5_xs_search(
            self.view, action.args["origin"], app_host, action.args["query"],
            action.args["first_parties"],
        )
        self._event(action, query=action.args["query"], results_present=result)
        self._expect(
            action, "attack5 ground truth", bool(app.results_for(action.args["query"])), result
        )
        if action.args["expect"] is not None:
            self._expect(action, "attack5 results", action.args["expect"], result)

    # -- direct state expectations ---------------------------------------------

    def _r_expect_prevalent(self, action: Action) -> None:
        got = itp_core.is_prevalent(self.world.itp_state, action.args["site"])
        self._expect(action, f"prevalent({action.args['site']})", action.args["want"], got)

    def _r_expect_strikes(self, action: Action) -> None:
        got = self.world.itp_state.ledger.size_of(action.args["site"])
        self._expect(action, f"strikes({action.args['site']})", action.args["want"], got)


def run_scenario(
    source: str | Path | Scenario,
    psl_path: str | None = None,
    seed: int | None = None,
) -> Report:
    """Parse (if needed), build the world, run the script, report."""
    scenario = source if isinstance(source, Scenario) else load_scenario(source)
    world, view = build_world(scenario, psl_path=psl_path, seed=seed)
    runner = _Runner(scenario, world, view)
    runner.run()
    return Report(
        scenario=scenario.name,
        seed=scenario.seed if seed is None else seed,
        events=tuple(runner.events),
        expectations=tuple(runner.expectations),
        final_state=report_itp_state(world),
    )


def run_setup(scenario: Scenario, itp_override: ItpConfig, psl_path: str | None = None,
              seed: int | None = None):
    """Build and script-initialize a world under a different configuration.

    Used by the mitigation matrix: the scenario's script is replayed as
    setup (expectations skipped) with the configuration swapped out.
    """
    adjusted = replace(scenario, itp=itp_override)
    world, view = build_world(adjusted, psl_path=psl_path, seed=seed)
    runner = _Runner(adjusted, world, view, evaluate_expectations=False)
    runner.run()
    return world, view
